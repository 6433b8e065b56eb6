#include <gtest/gtest.h>

#include "hatenorm/spanner.hpp"

using namespace hatenorm;

namespace {

std::vector<TaggedSequence> random_batch(Rng& rng, const std::vector<std::string>& words, std::size_t n) {
  std::vector<TaggedSequence> out;
  for (std::size_t k = 0; k < n; ++k) {
    TaggedSequence ex;
    const std::size_t m = 1 + rng.below(5);
    for (std::size_t i = 0; i < m; ++i) {
      ex.tokens.push_back(words[rng.below(words.size())]);
      ex.tags.push_back(tag_from_index(rng.below(kNumTags)));
    }
    out.push_back(ex);
  }
  return out;
}

const std::vector<std::string> kWords{"you", "are", "v*rmin", "#tag", "@bob", "go", "home", "2day", "!"};

void perturb(CrfModel& m, Rng& rng) {
  for (auto* p : m.params()) {
    for (double& w : p->w) w += rng.uniform(-0.5, 0.5);
  }
}

}  // namespace

TEST(Spanner, FeatureModeGradientCheck) {
  Rng rng(3);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    for (auto& f : token_features(kWords, i)) names.push_back(f);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  for (int rep = 0; rep < 3; ++rep) {
    CrfModel m = CrfModel::feature(names);
    m.init(rng, 0.5);
    const auto batch = random_batch(rng, kWords, 4);
    const auto ps = m.params();
    nn::zero_grads(ps);
    crf_nll_and_grad(m, batch, 0.25);
    const auto res = nn::check_gradients(ps, [&] { return 0.25 * crf_nll(m, batch); });
    for (const auto& r : res) EXPECT_LT(r.rel_error, 1e-4) << r.param;
  }
}

TEST(Spanner, NeuralModeGradientCheck) {
  Rng rng(4);
  nn::Vocab v;
  for (const auto& w : kWords) v.add(w);
  for (int rep = 0; rep < 3; ++rep) {
    CrfModel m = CrfModel::neural(v, 3, 3);
    m.init(rng, 0.5);
    perturb(m, rng);
    const auto batch = random_batch(rng, kWords, 3);
    const auto ps = m.params();
    nn::zero_grads(ps);
    crf_nll_and_grad(m, batch);
    const auto res = nn::check_gradients(ps, [&] { return crf_nll(m, batch); });
    for (const auto& r : res) EXPECT_LT(r.rel_error, 1e-3) << r.param;
  }
}

TEST(Spanner, ModelScoresAgreeWithCrfCore) {
  Rng rng(8);
  nn::Vocab v;
  for (const auto& w : kWords) v.add(w);
  CrfModel m = CrfModel::neural(v, 4, 3);
  m.init(rng, 1.0);
  const std::vector<std::string> toks{"you", "are", "v*rmin"};
  const auto em = m.emissions(toks);
  EXPECT_EQ(crf_log_partition(m, toks), crf::log_partition(em, m.transitions()));
  EXPECT_EQ(crf_viterbi(m, toks), crf::viterbi(em, m.transitions()));
}

TEST(Spanner, FeatureWeightsDriveTagging) {
  const std::vector<std::string> toks{"go", "v*rmin", "home"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    for (auto& f : token_features(toks, i)) names.push_back(f);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  CrfModel m = CrfModel::feature(names);
  m.feature_weight("bias", BioTag::O) = 1.0;
  m.feature_weight("shape=star", BioTag::B) = 5.0;
  EXPECT_EQ(hsi_predict_spans(m, toks), (std::vector<Span>{{1, 1}}));
}

TEST(SpanMetrics, TokenLevelMicroCounts) {
  // gold covers 1..3, prediction covers 2..4
  const auto m = span_metrics({{2, 4}}, {{1, 3}}, 6);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.exact_span_rate, 0.0);

  SpanCounts c;
  c.add({{0, 0}}, {{0, 0}}, 3);
  c.add({}, {{1, 2}}, 3);
  const auto p = c.metrics();
  EXPECT_DOUBLE_EQ(p.precision, 1.0);
  EXPECT_DOUBLE_EQ(p.recall, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(p.f1, 0.5);
  EXPECT_DOUBLE_EQ(p.exact_span_rate, 0.5);

  const auto none = span_metrics({}, {}, 4);
  EXPECT_EQ(none.f1, 1.0);
  EXPECT_EQ(none.exact_span_rate, 1.0);
  EXPECT_THROW(span_metrics({{0, 9}}, {}, 4), InvalidSpanError);
}

TEST(Spanner, FeatureTrainingFindsPlantedSpans) {
  auto sc = default_synthetic_config();
  sc.num_samples = 400;
  const auto split = split_corpus(generate_synthetic(sc, 13), {});
  HsiTrainConfig cfg;
  cfg.mode = EmissionMode::kFeature;
  cfg.epochs = 3;
  cfg.learning_rate = 0.05;  // sparse weights; the default suits the neural mode
  const CrfModel m = hsi_train(split.train, split.val, cfg);
  EXPECT_GT(evaluate_spans(m, split.test).f1, 0.8);

  const auto back = CrfModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  for (const auto& s : split.test.samples()) {
    ASSERT_EQ(crf_log_partition(back, s.tokens), crf_log_partition(m, s.tokens));
  }
  auto j = m.to_json();
  j["kind"] = "hip";
  EXPECT_THROW(CrfModel::from_json(j), ModelFormatError);
}

TEST(Spanner, NeuralJsonRoundTrip) {
  Rng rng(1);
  nn::Vocab v;
  for (const auto& w : kWords) v.add(w);
  CrfModel m = CrfModel::neural(v, 4, 5);
  m.init(rng, 0.3);
  const auto back = CrfModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.mode(), EmissionMode::kNeural);
  const std::vector<std::string> toks{"go", "unseen", "!"};
  EXPECT_EQ(back.emissions(toks), m.emissions(toks));
}
