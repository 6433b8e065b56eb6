#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "hatenorm/virality.hpp"

using namespace hatenorm;
using Tokens = std::vector<std::string>;

namespace {

const Tokens kLong{"extraordinary", "magnificent", "unbelievable", "spectacular", "tremendous"};
const Tokens kShort{"big", "nice", "fun", "odd", "cool", "happy", "sad", "great"};

Tokens random_text(Rng& rng, std::size_t n_long) {
  Tokens t;
  const std::size_t n = 4 + rng.below(8);
  for (std::size_t i = 0; i < n; ++i) t.push_back(kShort[rng.below(kShort.size())]);
  for (std::size_t i = 0; i < n_long; ++i) {
    t.insert(t.begin() + static_cast<long>(rng.below(t.size() + 1)), kLong[rng.below(kLong.size())]);
  }
  if (rng.uniform() < 0.5) t.push_back(".");
  if (rng.uniform() < 0.3) t.insert(t.begin() + static_cast<long>(rng.below(t.size())), "!");
  return t;
}

Sample sample_of(const std::string& id, const Tokens& t, std::int64_t eng = 0) {
  Sample s = Sample::make(id, join_tokens(t), 1.0);
  s.engagement = eng;
  return s;
}

// Engagement grows with the number of long words.
EngagementPredictor planted_predictor() {
  Rng rng(5);
  std::vector<Sample> train;
  for (int i = 0; i < 300; ++i) {
    const std::size_t nl = rng.below(4);
    const double y = 1.0 + 0.8 * static_cast<double>(nl) + 0.2 * rng.normal();
    train.push_back(sample_of("t" + std::to_string(i), random_text(rng, nl),
                              static_cast<std::int64_t>(std::llround(std::expm1(std::max(0.0, y))))));
  }
  return engagement_train(Corpus(train), default_lexicon());
}

}  // namespace

TEST(Features, ReadabilityHandExamples) {
  const Corpus c({Sample::make("a", "the cat sat on the mat .", 1)});
  const auto stats = CorpusStats::from_corpus(c);
  const auto f = extract_features(tokenize("the cat sat on the mat ."), stats, {});
  EXPECT_DOUBLE_EQ(f.lix, 6.0);  // 6 words, 1 sentence, no long words
  EXPECT_DOUBLE_EQ(f.rix, 0.0);
  EXPECT_DOUBLE_EQ(f.polarity, 0.0);
  // complexity: mean -ln(tf/total); "the" tf 2, others 1, total 7 tokens
  const double expect = (2 * -std::log(2.0 / 7) + 4 * -std::log(1.0 / 7)) / 6;
  EXPECT_NEAR(f.complexity, expect, 1e-12);
  EXPECT_NEAR(f.informativeness, 6.0, 1e-12);  // single doc: idf = 1 for seen words

  const auto g = extract_features(tokenize("Extraordinary people arrive ! Wonderful ."), stats, {});
  // 4 words, 2 long, 2 sentences
  EXPECT_DOUBLE_EQ(g.lix, 4.0 / 2 + 100.0 * 2 / 4);
  EXPECT_DOUBLE_EQ(g.rix, 1.0);
  // unseen words: idf = ln(2/1) + 1
  EXPECT_NEAR(g.informativeness, 4 * (std::log(2.0) + 1), 1e-12);
}

TEST(Features, WordsAndPolarity) {
  EXPECT_TRUE(is_word("v*rmin"));
  EXPECT_TRUE(is_word("#tag"));
  EXPECT_FALSE(is_word("!!"));
  EXPECT_FALSE(is_word("42"));
  EXPECT_EQ(char_count("caf\xC3\xA9"), 4u);
  const auto stats = CorpusStats::from_corpus(Corpus({Sample::make("a", "x", 1)}));
  const Lexicon lex{{"good", 0.5}, {"bad", -1.0}};
  EXPECT_DOUBLE_EQ(extract_features({"good", "bad", "meh"}, stats, lex).polarity, -0.25);
  EXPECT_DOUBLE_EQ(extract_features({"meh", "!"}, stats, lex).polarity, 0.0);
  const auto p = extract_features({"!", "?"}, stats, lex);
  EXPECT_EQ(p.lix, 0.0);
  EXPECT_EQ(p.complexity, 0.0);
  EXPECT_THROW(extract_features({}, stats, lex), EmptyInputError);
}

TEST(Lexicon, Parsing) {
  std::istringstream ok("# comment\ngood\t0.5\n\nbad\t-1\r\n");
  const auto lex = read_lexicon(ok);
  EXPECT_EQ(lex.size(), 2u);
  EXPECT_EQ(lex.at("bad"), -1.0);
  std::istringstream range("good\t1.5\n");
  EXPECT_THROW(read_lexicon(range), ParseError);
  std::istringstream junk("ok\t0.1\nbad 0.2\n");
  try {
    read_lexicon(junk);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream trailing("x\t0.1abc\n");
  EXPECT_THROW(read_lexicon(trailing), ParseError);
  EXPECT_LT(default_lexicon().at("v*rmin"), 0.0);
}

TEST(Ridge, ConstantTargetGivesFlatModel) {
  Rng rng(1);
  std::vector<EngagementFeatures> fs;
  for (int i = 0; i < 50; ++i) {
    fs.push_back({rng.uniform(), rng.uniform(0, 50), rng.uniform(0, 3), rng.uniform(0, 20), rng.uniform(-1, 1)});
  }
  const auto m = EngagementModel::fit(fs, std::vector<std::int64_t>(50, 20));
  for (double w : m.weights()) EXPECT_NEAR(w, 0.0, 1e-12);
  EXPECT_NEAR(m.predict(fs[3]), 20.0, 1e-9);
}

TEST(Ridge, RecoversLinearSignal) {
  Rng rng(2);
  std::vector<EngagementFeatures> fs;
  std::vector<double> ys;
  std::vector<std::int64_t> counts;
  const double beta[5] = {0.5, 0.02, -0.3, 0.05, 0.7};
  for (int i = 0; i < 400; ++i) {
    EngagementFeatures f{rng.uniform(0, 2), rng.uniform(0, 50), rng.uniform(0, 3), rng.uniform(0, 20),
                         rng.uniform(-1, 1)};
    const auto x = f.as_array();
    double y = 9.0;
    for (int k = 0; k < 5; ++k) y += beta[k] * x[k];
    fs.push_back(f);
    counts.push_back(std::llround(std::expm1(y)));
    ys.push_back(std::log1p(static_cast<double>(counts.back())));
  }
  const auto m = EngagementModel::fit(fs, counts, 0.0);
  for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_NEAR(m.predict_log(fs[i]), ys[i], 1e-3);

  const auto back = EngagementModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.predict_log(fs[0]), m.predict_log(fs[0]));
}

TEST(Ridge, ConstantFeatureIsNamed) {
  std::vector<EngagementFeatures> fs{{1, 2, 3, 4, 0.5}, {2, 3, 4, 5, 0.5}, {3, 1, 2, 2, 0.5}};
  try {
    EngagementModel::fit(fs, {1, 2, 3});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "polarity");
  }
  EXPECT_THROW(EngagementModel::fit(fs, {1, 2}), ValidationError);
  EXPECT_THROW(EngagementModel::fit(fs, {1, -2, 3}), ValidationError);
}

TEST(Predictor, NonNegativeAndRoundTrips) {
  const auto p = planted_predictor();
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Tokens t;
    for (std::size_t k = 1 + rng.below(5); k > 0; --k) {
      const char* pool[] = {"zz", "!", "extraordinary", "v*rmin", "...", "a"};
      t.push_back(pool[rng.below(6)]);
    }
    EXPECT_GE(p.predict(t), 0.0);
  }
  const auto back = EngagementPredictor::from_json(nlohmann::json::parse(p.to_json().dump()));
  const Tokens t{"nice", "extraordinary", "fun", "."};
  EXPECT_EQ(back.predict(t), p.predict(t));
}

TEST(Experiment, IdenticalPairsShowNoEffect) {
  const auto p = planted_predictor();
  Rng rng(4);
  std::vector<std::pair<Sample, Sample>> pairs;
  for (int i = 0; i < 120; ++i) {
    const Sample s = sample_of("p" + std::to_string(i), random_text(rng, rng.below(3)));
    pairs.emplace_back(s, s);
  }
  ViralityConfig cfg;
  cfg.k = 50;
  cfg.n_iter = 6;
  const auto r = virality_experiment(p, pairs, cfg);
  ASSERT_EQ(r.iterations.size(), 6u);
  for (double d : r.iterations) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(r.welch.t, 0.0);
  EXPECT_EQ(r.welch.p, 1.0);
  EXPECT_FALSE(r.degenerate);
  EXPECT_FALSE(r.with_replacement);

  // Every text the same: constant prediction sets.
  const Sample s = sample_of("c", {"nice", "fun"});
  const auto d = virality_experiment(p, {{s, s}, {s, s}, {s, s}}, cfg);
  EXPECT_TRUE(d.degenerate);
  EXPECT_TRUE(d.with_replacement);
  EXPECT_EQ(d.welch.p, 1.0);
  EXPECT_EQ(d.welch.dof, 4.0);
}

TEST(Experiment, PlantedEffectIsDetected) {
  const auto p = planted_predictor();
  Rng rng(6);
  std::vector<std::pair<Sample, Sample>> pairs;
  for (int i = 0; i < 400; ++i) {
    Tokens orig = random_text(rng, 2 + rng.below(2));
    Tokens norm = orig;
    for (auto& t : norm) {
      if (std::find(kLong.begin(), kLong.end(), t) != kLong.end()) t = "nice";
    }
    pairs.emplace_back(sample_of("o" + std::to_string(i), orig), sample_of("n" + std::to_string(i), norm));
  }
  ViralityConfig cfg;
  cfg.k = 300;
  const auto r = virality_experiment(p, pairs, cfg);
  EXPECT_LT(r.welch.p, 0.05);
  EXPECT_GT(r.welch.t, 0.0);
  for (double d : r.iterations) EXPECT_GT(d, 0.0);

  const auto again = virality_experiment(p, pairs, cfg);
  EXPECT_EQ(again.to_json().dump(), r.to_json().dump());
  cfg.seed = 99;
  EXPECT_NE(virality_experiment(p, pairs, cfg).to_json()["medians"].dump(), r.to_json()["medians"].dump());
}

TEST(Experiment, ReportKeyOrder) {
  ViralityReport r;
  const auto j = r.to_json();
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"iterations", "t", "dof", "p", "effect_size", "medians", "num_pairs", "k",
                                            "n_iter", "seed", "with_replacement", "degenerate"}));
}
