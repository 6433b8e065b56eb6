// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria that need trained models share one bundle trained on the
// default synthetic corpus (2800 samples, 2000/400/400).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hatenorm/hatenorm.hpp"
#include "hatenorm/service.hpp"

using namespace hatenorm;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      if (ok) detail << "failed: ";
      else detail << "; ";
      detail << what;
      ok = false;
    }
  }
};

int g_failures = 0;

void run(const std::string& name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto t0 = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  out.require(secs < budget_s, "runtime over " + std::to_string(budget_s) + " s");
  if (!out.ok) ++g_failures;
  std::printf("%s  %-26s %6.1fs  %s\n", out.ok ? "PASS" : "FAIL", name.c_str(), secs, out.detail.str().c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// Independent oracles
// ---------------------------------------------------------------------------

std::vector<TagSeq> all_sequences(std::size_t m) {
  std::vector<TagSeq> out;
  std::size_t total = 1;
  for (std::size_t i = 0; i < m; ++i) total *= kNumTags;
  for (std::size_t code = 0; code < total; ++code) {
    TagSeq t(m);
    std::size_t c = code;
    for (std::size_t i = m; i-- > 0;) {
      t[i] = tag_from_index(c % kNumTags);
      c /= kNumTags;
    }
    out.push_back(t);
  }
  return out;
}

double naive_score(const crf::EmissionMatrix& em, const crf::Transitions& tr, const TagSeq& t) {
  auto ix = [](BioTag b) { return static_cast<std::size_t>(b); };
  double s = tr.start[ix(t[0])];
  for (std::size_t i = 0; i < t.size(); ++i) {
    s += em[i][ix(t[i])];
    if (i) s += tr.trans[ix(t[i - 1])][ix(t[i])];
  }
  return s + tr.stop[ix(t.back())];
}

// Student t CDF by Simpson quadrature of the density; never touches the
// incomplete beta.
double t_cdf_quadrature(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * std::numbers::pi);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  const int n = 400000;
  const double h = std::abs(t) / n;
  double s = pdf(0) + pdf(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  const double half = s * h / 3;
  return t >= 0 ? 0.5 + half : 0.5 - half;
}

struct RefWelch {
  double t, dof, p;
};

RefWelch reference_welch(const std::vector<double>& a, const std::vector<double>& b) {
  auto mv = [](const std::vector<double>& x) {
    long double s = 0;
    for (double v : x) s += v;
    const long double mean = s / x.size();
    long double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair<double, double>{static_cast<double>(mean), static_cast<double>(ss / (x.size() - 1))};
  };
  const auto [ma, va] = mv(a);
  const auto [mb, vb] = mv(b);
  const double na = a.size(), nb = b.size();
  const double se2 = va / na + vb / nb;
  const double t = (ma - mb) / std::sqrt(se2);
  const double dof = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
  const double cdf = t_cdf_quadrature(t, dof);
  return {t, dof, 2 * std::min(cdf, 1 - cdf)};
}

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// ---------------------------------------------------------------------------
// Shared data
// ---------------------------------------------------------------------------

struct World {
  CorpusSplit split;
  PipelineConfig cfg;
  std::shared_ptr<const TrainedBundle> bundle;
};

World make_world() {
  World w;
  const Corpus corpus = generate_synthetic(default_synthetic_config(), 1);
  SplitSpec spec;
  spec.val = 1.0 / 7.0;
  spec.test = 1.0 / 7.0;
  spec.train = 1.0 - spec.val - spec.test;
  spec.seed = 1;
  w.split = split_corpus(corpus, spec);
  w.cfg.hir.tau = w.cfg.tau;
  return w;
}

std::vector<std::pair<Sample, Sample>> pipeline_pairs(const TrainedBundle& b, const Corpus& test,
                                                      const PipelineConfig& cfg) {
  std::vector<std::pair<Sample, Sample>> pairs;
  for (const Sample& s : test.samples()) {
    if (s.spans.empty()) continue;
    const auto o = analyze_tokens(b, s.tokens, cfg);
    if (!o.suggestion || tokenize(o.suggestion->text).empty()) continue;
    pairs.emplace_back(s, Sample::make(s.id + "-norm", o.suggestion->text, kMinIntensity, {}));
  }
  return pairs;
}

std::vector<std::string> dir_files(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

void crf_exactness(Outcome& o) {
  Rng rng(20241);
  const std::size_t draws = 150;
  std::size_t sequences = 0;
  double worst_z = 0, worst_mass = 0;
  bool viterbi_ok = true;
  std::vector<std::vector<TagSeq>> seqs;
  for (std::size_t m = 1; m <= 6; ++m) seqs.push_back(all_sequences(m));
  for (std::size_t d = 0; d < draws; ++d) {
    const double scale = rng.uniform(0.1, 4.0);
    crf::Transitions tr;
    for (auto& row : tr.trans) {
      for (double& v : row) v = rng.uniform(-scale, scale);
    }
    for (double& v : tr.start) v = rng.uniform(-scale, scale);
    for (double& v : tr.stop) v = rng.uniform(-scale, scale);
    crf::EmissionMatrix full(6);
    for (auto& row : full) {
      for (double& v : row) v = rng.uniform(-scale, scale);
    }
    for (std::size_t m = 1; m <= 6; ++m) {
      const crf::EmissionMatrix em(full.begin(), full.begin() + static_cast<long>(m));
      const double logz = crf::log_partition(em, tr);
      std::vector<double> scores;
      double best = -std::numeric_limits<double>::infinity();
      TagSeq arg;
      for (const auto& t : seqs[m - 1]) {
        const double s = naive_score(em, tr, t);
        scores.push_back(s);
        if (s > best) best = s, arg = t;
      }
      const double mx = *std::max_element(scores.begin(), scores.end());
      double sum = 0, mass = 0;
      for (double s : scores) sum += std::exp(s - mx), mass += std::exp(s - logz);
      worst_z = std::max(worst_z, std::abs(logz - (mx + std::log(sum))));
      worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
      if (crf::viterbi(em, tr) != arg) viterbi_ok = false;
      sequences += scores.size();
    }
  }
  o.require(viterbi_ok, "viterbi differs from brute-force argmax");
  o.require(worst_z <= 1e-8, "log Z error " + fmt(worst_z));
  o.require(worst_mass <= 1e-8, "mass error " + fmt(worst_mass));
  o.detail << draws << " models, " << sequences << " sequences scored, max |dlogZ| " << fmt(worst_z)
           << ", max |mass-1| " << fmt(worst_mass);
}

void gradient_checks(Outcome& o) {
  const std::vector<std::string> words{"you", "are", "v*rmin", "#tag", "@bob", "go", "home", "2day", "!", "k*ll"};
  auto batch_of = [&](Rng& rng, std::size_t n) {
    std::vector<TaggedSequence> out;
    for (std::size_t k = 0; k < n; ++k) {
      TaggedSequence ex;
      for (std::size_t i = 0, m = 1 + rng.below(5); i < m; ++i) {
        ex.tokens.push_back(words[rng.below(words.size())]);
        ex.tags.push_back(tag_from_index(rng.below(kNumTags)));
      }
      out.push_back(ex);
    }
    return out;
  };
  std::vector<std::string> names;
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (auto& f : token_features(words, i)) names.push_back(f);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  nn::Vocab vocab;
  for (const auto& w : words) vocab.add(w);

  double worst_feature = 0, worst_neural = 0, worst_hip = 0;
  Rng rng(77);
  for (int inst = 0; inst < 20; ++inst) {
    CrfModel m = CrfModel::feature(names);
    m.init(rng, 0.5);
    for (auto* p : m.params()) {
      for (double& w : p->w) w += rng.uniform(-0.5, 0.5);
    }
    const auto batch = batch_of(rng, 3);
    const auto ps = m.params();
    nn::zero_grads(ps);
    crf_nll_and_grad(m, batch);
    for (const auto& r : nn::check_gradients(ps, [&] { return crf_nll(m, batch); })) {
      worst_feature = std::max(worst_feature, r.rel_error);
    }
  }
  for (int inst = 0; inst < 20; ++inst) {
    CrfModel m = CrfModel::neural(vocab, 3, 3);
    m.init(rng, 0.5);
    for (auto* p : m.params()) {
      for (double& w : p->w) w += rng.uniform(-0.5, 0.5);
    }
    const auto batch = batch_of(rng, 3);
    const auto ps = m.params();
    nn::zero_grads(ps);
    crf_nll_and_grad(m, batch);
    for (const auto& r : nn::check_gradients(ps, [&] { return crf_nll(m, batch); })) {
      worst_neural = std::max(worst_neural, r.rel_error);
    }
  }
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nn::Vocab v;
    for (const char* t : {"a", "b", "c", "d", "e"}) v.add(t);
    IntensityModel m(v, 3, 3, 3);
    Rng r(seed);
    m.init(r, 2.0);
    for (auto* p : m.params()) {
      for (double& w : p->w) w += r.uniform(-0.3, 0.3);
    }
    std::vector<IntensityExample> batch;
    for (int k = 0; k < 4; ++k) {
      IntensityExample ex;
      for (std::size_t i = 0, n = 1 + r.below(5); i < n; ++i) ex.ids.push_back(r.below(v.size()));
      ex.target = r.uniform(1.0, 10.0);
      batch.push_back(ex);
    }
    const auto ps = m.params();
    nn::zero_grads(ps);
    hip_loss_and_grad(m, batch);
    for (const auto& res : nn::check_gradients(ps, [&] { return hip_loss(m, batch); })) {
      worst_hip = std::max(worst_hip, res.rel_error);
    }
  }
  o.require(worst_feature < 1e-4, "CRF feature-mode rel error " + fmt(worst_feature));
  o.require(worst_neural < 1e-4, "CRF neural-mode rel error " + fmt(worst_neural));
  o.require(worst_hip < 1e-3, "HIP rel error " + fmt(worst_hip));
  o.detail << "max rel error: crf/feature " << fmt(worst_feature) << " (20 inst), crf/neural " << fmt(worst_neural)
           << " (20 inst), hip d=h=a=3 " << fmt(worst_hip);
}

void hip_learning(Outcome& o, const World& w) {
  const IntensityModel m = hip_train(w.split.train, w.split.val, w.cfg.hip);
  std::vector<double> pred, gold;
  for (const Sample& s : w.split.test.samples()) {
    pred.push_back(m.predict(s.tokens));
    gold.push_back(s.intensity);
  }
  const auto r = hip_metrics(pred, gold);
  o.require(r.rmse <= 1.0, "rmse " + fmt(r.rmse));
  o.require(r.pearson >= 0.9, "pearson " + fmt(r.pearson));
  o.detail << "test n=" << gold.size() << " rmse " << fmt(r.rmse) << " pearson " << fmt(r.pearson)
           << " (train " << w.split.train.size() << ", val " << w.split.val.size() << ")";
}

void hsi_learning(Outcome& o, const World& w) {
  const CrfModel m = hsi_train(w.split.train, w.split.val, w.cfg.hsi);
  const auto r = evaluate_spans(m, w.split.test);
  o.require(r.f1 >= 0.90, "f1 " + fmt(r.f1));
  o.detail << "token-level p " << fmt(r.precision) << " r " << fmt(r.recall) << " f1 " << fmt(r.f1) << " (mode "
           << to_string(w.cfg.hsi.mode) << ")";
}

void end_to_end(Outcome& o, World& w) {
  w.bundle = std::make_shared<TrainedBundle>(train_all(w.split.train, w.split.val, w.cfg));
  for (EngineKind e : {EngineKind::kDict, EngineKind::kNeural}) {
    PipelineConfig cfg = w.cfg;
    cfg.engine = e;
    const auto r = evaluate_reduction(*w.bundle, w.split.test, cfg);
    const std::string tag = to_string(e);
    o.require(r.reduced_fraction >= 0.8, tag + " reduced_fraction " + fmt(r.reduced_fraction));
    o.require(r.mean_drop >= 2.0, tag + " mean_drop " + fmt(r.mean_drop));
    o.require(r.bleu >= 60.0, tag + " bleu " + fmt(r.bleu));
    o.detail << tag << ": eligible " << r.eligible << " reduced " << fmt(r.reduced_fraction) << " drop "
             << fmt(r.mean_drop) << " bleu " << fmt(r.bleu) << "; ";
  }
}

void metric_oracles(Outcome& o) {
  // All n-gram precisions are 1 on this pair, so BLEU is the brevity penalty.
  const double hand = bleu({{"the", "cat", "sat"}}, {{"the", "cat", "sat", "down"}});
  const double hand_oracle = 100.0 * std::exp(1.0 - 4.0 / 3.0);
  o.require(std::abs(hand - hand_oracle) <= 1e-6, "hand BLEU " + fmt17(hand));

  Rng rng(404);
  bool identity = true;
  for (int i = 0; i < 200; ++i) {
    std::vector<Tokens> c;
    for (std::size_t s = 0, n = 1 + rng.below(6); s < n; ++s) {
      Tokens t;
      for (std::size_t k = 1 + rng.below(12); k > 0; --k) t.push_back("w" + std::to_string(rng.below(9)));
      c.push_back(t);
    }
    if (bleu(c, c) != 100.0) identity = false;
  }
  o.require(identity, "BLEU(x,x) != 100");

  std::vector<std::string> vocab;
  for (int i = 0; i < 38; ++i) vocab.push_back("u" + std::to_string(i));
  const auto lm = NgramLm::uniform(vocab);
  const double pp = perplexity(lm, {{"u1", "u7", "u3"}, {"u0"}, {"zz", "u5"}});
  o.require(std::abs(pp - static_cast<double>(lm.vocab_size())) <= 1e-9, "uniform perplexity " + fmt17(pp));

  // 0.9, 0.6, 0.8, 0.7 are not binary fractions. The frozen value is the
  // exact rational mean of the stored doubles, rounded once to double.
  const auto dc = delta_confidence_scores({{0.9, 0.6}, {0.8, 0.7}});
  o.require(dc.m_count == 2, "hand m != 2");
  o.require(dc.delta_c == 0.20000000000000007, "hand delta_c " + fmt17(dc.delta_c) + " vs exact-rational oracle");
  o.require(std::abs(dc.delta_c - 0.2) <= 1e-15, "hand delta_c far from 0.2");
  // Same arithmetic on binary-exact confidences must be exact.
  const auto dx = delta_confidence_scores({{0.875, 0.625}, {0.75, 0.625}, {0.25, 0.9}});
  o.require(dx.delta_c == 0.1875 && dx.m_count == 2, "binary-exact delta_c " + fmt17(dx.delta_c));

  bool invariant = true;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::pair<double, double>> kept;
    for (std::size_t i = 1 + rng.below(8); i > 0; --i) kept.emplace_back(rng.uniform(0.5, 1), rng.uniform(0.5, 1));
    auto mixed = kept;
    for (std::size_t i = rng.below(8); i > 0; --i) {
      if (rng.uniform() < 0.5) mixed.emplace_back(rng.uniform(0, 0.4999), rng.uniform(0, 1));
      else mixed.emplace_back(rng.uniform(0, 1), rng.uniform(0, 0.4999));
    }
    rng.shuffle(mixed);
    const auto a = delta_confidence_scores(kept);
    const auto b = delta_confidence_scores(mixed);
    if (a.m_count != b.m_count || std::abs(a.delta_c - b.delta_c) > 1e-12) invariant = false;
  }
  o.require(invariant, "filter invariance broken");
  o.detail << "bleu hand " << fmt17(hand) << ", BLEU(x,x)=100 on 200 corpora, uniform ppl " << fmt(pp) << " |V|="
           << lm.vocab_size() << ", delta_c hand " << fmt17(dc.delta_c) << " (m=2), filter invariance 1000/1000";
}

void extrinsic_direction(Outcome& o, const World& w) {
  o.require(w.bundle && w.bundle->detector.has_value(), "bundle has no detector");
  for (EngineKind e : {EngineKind::kDict, EngineKind::kNeural}) {
    PipelineConfig cfg = w.cfg;
    cfg.engine = e;
    const auto r = evaluate_reduction(*w.bundle, w.split.test, cfg);
    const auto dc = delta_confidence(*w.bundle->detector, r.pairs);
    o.require(dc.delta_c > 0, std::string(to_string(e)) + " delta_c " + fmt(dc.delta_c));
    o.detail << to_string(e) << ": delta_c " << fmt(dc.delta_c) << " over m=" << dc.m_count << " of "
             << r.pairs.size() << " pairs; ";
  }
}

void statistics(Outcome& o, const World& w) {
  struct Case {
    std::vector<double> a, b;
    double t, p;  // frozen from scipy.stats.ttest_ind(equal_var=False)
  };
  const Case cases[] = {
      {{1, 2, 3, 4, 5}, {2, 3, 4, 5, 6}, -1.0, 0.34659350708733416},
      {{12.1, 14.3, 9.8, 11.0, 13.5, 10.2, 12.9}, {8.4, 9.9, 7.1, 10.5, 8.8}, 3.4597999813171523, 0.006257132359889277},
      {{0.5, 0.7, 0.2, 0.9, 1.4, 0.3, 0.8, 1.1, 0.6, 0.4},
       {2.5, -1.0, 3.7, 0.2, 4.1, -2.2},
       -0.49352353237057683,
       0.6420693448600598},
  };
  double worst_t = 0, worst_p = 0;
  for (const auto& c : cases) {
    const auto r = welch_t_test(c.a, c.b);
    const auto ref = reference_welch(c.a, c.b);
    worst_t = std::max({worst_t, std::abs(r.t - ref.t), std::abs(r.t - c.t)});
    worst_p = std::max({worst_p, std::abs(r.p - ref.p), std::abs(r.p - c.p)});
  }
  o.require(worst_t <= 1e-8, "welch t error " + fmt(worst_t));
  o.require(worst_p <= 1e-6, "welch p error " + fmt(worst_p));

  const auto same = welch_t_test({1.5, 4, 2, 8, 3}, {1.5, 4, 2, 8, 3});
  o.require(same.t == 0.0 && same.p == 1.0, "identical samples gave t=" + fmt17(same.t) + " p=" + fmt17(same.p));

  Rng rng(99);
  std::size_t inv_fail = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> a(2 + rng.below(30)), b(2 + rng.below(30));
    const double shift = rng.normal(0, 2);
    for (double& x : a) x = rng.normal(0, rng.uniform(0.2, 3));
    for (double& x : b) x = rng.normal(shift, rng.uniform(0.2, 3));
    const auto r = welch_t_test(a, b);
    const auto s = welch_t_test(b, a);
    const double scale = rng.uniform(0.01, 100) * (rng.uniform() < 0.5 ? -1 : 1), off = rng.normal(0, 50);
    std::vector<double> ta = a, tb = b;
    for (double& x : ta) x = scale * x + off;
    for (double& x : tb) x = scale * x + off;
    const auto u = welch_t_test(ta, tb);
    const double sign = scale > 0 ? 1 : -1;
    const bool ok = s.t == -r.t && s.p == r.p && s.dof == r.dof && close_rel(u.t, sign * r.t, 1e-8) &&
                    close_rel(u.dof, r.dof, 1e-8) && std::abs(u.p - r.p) <= 1e-8;
    if (!ok) ++inv_fail;
  }
  o.require(inv_fail == 0, std::to_string(inv_fail) + " invariance failures");

  // Planted effect: the synthetic corpus ties engagement to intensity, and the
  // pipeline's rewrites lower intensity.
  const auto predictor = engagement_train(w.split.train, default_lexicon(), w.cfg.ridge);
  const auto pairs = pipeline_pairs(*w.bundle, w.split.test, w.cfg);
  const auto planted = virality_experiment(predictor, pairs, w.cfg.virality);
  o.require(planted.welch.p < 0.05, "planted p " + fmt(planted.welch.p));

  std::vector<std::pair<Sample, Sample>> none;
  for (const auto& pr : pairs) none.emplace_back(pr.first, pr.first);
  const auto null_rep = virality_experiment(predictor, none, w.cfg.virality);
  const bool zero = std::all_of(null_rep.iterations.begin(), null_rep.iterations.end(), [](double d) { return d == 0.0; });
  o.require(zero, "no-effect iterations not all zero");

  o.detail << "3 cases max |dt| " << fmt(worst_t) << " |dp| " << fmt(worst_p) << ", identical t=0 p=1, 1000 swap/affine ok"
           << ", planted p " << fmt(planted.welch.p) << " d " << fmt(planted.welch.effect_size) << " over "
           << pairs.size() << " pairs, null medians 0 x" << null_rep.iterations.size();
}

void service_contract(Outcome& o, const World& w) {
  const auto cases = read_json_file(std::string(HATENORM_FIXTURES) + "/analyze_cases.json");
  o.require(cases.size() == 20, "fixture has " + std::to_string(cases.size()) + " cases");
  AnalyzeService svc(w.cfg);
  svc.set_bundle(w.bundle);
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) {
    o.require(false, "cannot bind");
    return;
  }
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  const std::vector<std::string> keys{"intensity", "band", "spans", "suggestion", "flag", "latency_ms"};
  const std::vector<std::string> span_keys{"start", "end", "text"}, sug_keys{"text", "intensity", "reward"};
  auto key_list = [](const nlohmann::ordered_json& j) {
    std::vector<std::string> k;
    for (auto it = j.begin(); it != j.end(); ++it) k.push_back(it.key());
    return k;
  };

  std::size_t passed = 0;
  std::vector<std::string> timed_bodies;
  for (const auto& c : cases) {
    const std::string name = c.at("name");
    std::string text, body;
    if (c.contains("body")) {
      body = c.at("body");
    } else {
      if (c.contains("repeat")) {
        for (int i = 0; i < c.at("repeat").at("count").get<int>(); ++i) {
          text += (i ? " " : "") + c.at("repeat").at("token").get<std::string>();
        }
      } else {
        text = c.at("text");
      }
      body = nlohmann::json{{"text", text}}.dump();
    }
    const auto res = cli.Post("/v1/analyze", body, "application/json");
    if (!res) {
      o.require(false, name + ": no response");
      continue;
    }
    Outcome local;
    local.require(res->status == c.at("status").get<int>(), "status " + std::to_string(res->status));
    local.require(res->get_header_value("Content-Type") == "application/json", "content type");
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(res->body);
    } catch (const std::exception&) {
      local.require(false, "body is not JSON");
    }
    // Compact canonical form: re-serializing reproduces the body exactly.
    local.require(j.dump() == res->body, "body is not canonical");
    if (res->status != 200) {
      local.require(j.is_object() && j.size() == 1 && j.contains("error") && j["error"].is_string(), "error shape");
      if (c.contains("error_contains")) {
        local.require(j.value("error", "").find(c.at("error_contains").get<std::string>()) != std::string::npos,
                      "error text");
      }
    } else {
      local.require(key_list(j) == keys, "top-level keys");
      local.require(j["intensity"].is_number_float(), "intensity type");
      local.require(j["band"].is_string() && j["spans"].is_array() && j["flag"].is_string(), "field types");
      local.require(j["latency_ms"].is_number_integer() && j["latency_ms"].get<std::int64_t>() >= 0, "latency type");
      const double phi = j["intensity"].get<double>();
      local.require(phi >= 1.0 && phi <= 10.0, "intensity range");
      local.require(j["band"] == to_string(band_of(phi, w.cfg.bands)), "band mismatch");
      const Tokens toks = tokenize(text);
      for (const auto& s : j["spans"]) {
        local.require(key_list(s) == span_keys, "span keys");
        local.require(s["start"].is_number_unsigned() && s["end"].is_number_unsigned() && s["text"].is_string(),
                      "span types");
        const auto a = s["start"].get<std::size_t>(), b = s["end"].get<std::size_t>();
        local.require(a <= b && b < toks.size(), "span bounds");
        if (a <= b && b < toks.size()) {
          local.require(s["text"] == join_tokens(Tokens(toks.begin() + static_cast<long>(a),
                                                        toks.begin() + static_cast<long>(b) + 1)),
                        "span text");
        }
      }
      if (j["suggestion"].is_null()) {
        // nothing offered, so the text stays as typed
      } else {
        local.require(key_list(j["suggestion"]) == sug_keys, "suggestion keys");
        local.require(j["suggestion"]["text"].is_string() && j["suggestion"]["intensity"].is_number_float() &&
                          j["suggestion"]["reward"].is_number_float(),
                      "suggestion types");
      }
      if (phi <= w.cfg.tau) {
        local.require(j["suggestion"].is_null() && j["spans"].empty() && j["flag"] == "none",
                      "phi <= tau must return no suggestion");
      }
      if (c.contains("band")) local.require(j["band"] == c["band"], "expected band " + c["band"].get<std::string>());
      if (c.contains("suggestion")) {
        local.require(j["suggestion"].is_null() == (c["suggestion"] == "null"), "expected suggestion " +
                                                                                  c["suggestion"].get<std::string>());
      }
      // Bit-exact against the in-process pipeline, minus latency.
      auto got = j;
      got.erase("latency_ms");
      local.require(got.dump() == outcome_to_json(analyze(*w.bundle, text, w.cfg), std::nullopt).dump(),
                    "differs from in-process outcome");
      if (toks.size() <= 64) timed_bodies.push_back(body);
    }
    if (local.ok) ++passed;
    else o.require(false, name + " (" + local.detail.str() + ")");
  }

  // Round-trip latency over every <= 64-token success case.
  std::vector<double> ms;
  for (int round = 0; round < 10; ++round) {
    for (const auto& b : timed_bodies) {
      const auto t0 = Clock::now();
      const auto r = cli.Post("/v1/analyze", b, "application/json");
      ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
      if (!r || r->status != 200) o.require(false, "latency request failed");
    }
  }
  std::sort(ms.begin(), ms.end());
  const double p95 = ms.empty() ? 0 : ms[static_cast<std::size_t>(std::ceil(0.95 * ms.size())) - 1];
  o.require(!ms.empty() && p95 < 200.0, "p95 " + fmt(p95) + " ms");

  const auto h = cli.Get("/v1/health");
  o.require(h && h->status == 200 &&
                h->body == nlohmann::ordered_json{{"status", "ok"}, {"bundle_version", w.bundle->version()}}.dump(),
            "health body");
  server.stop();
  th.join();
  o.detail << passed << "/" << cases.size() << " fixture cases, p95 " << fmt(p95) << " ms over " << ms.size()
           << " requests, health ok";
}

void determinism(Outcome& o, const World& w) {
  // The bundle from the end-to-end criterion is the first run.
  const TrainedBundle again = train_all(w.split.train, w.split.val, w.cfg);
  const fs::path root = fs::temp_directory_path() / "hatenorm_acceptance";
  fs::remove_all(root);
  save_bundle(*w.bundle, (root / "a").string());
  save_bundle(again, (root / "b").string());
  const auto files = dir_files(root / "a");
  o.require(files == dir_files(root / "b"), "bundle file lists differ");
  std::size_t same = 0;
  for (const auto& f : files) {
    if (slurp(root / "a" / f) == slurp(root / "b" / f)) ++same;
    else o.require(false, "bundle file differs: " + f);
  }
  for (EngineKind e : {EngineKind::kDict, EngineKind::kNeural}) {
    PipelineConfig cfg = w.cfg;
    cfg.engine = e;
    const auto r1 = evaluate(*w.bundle, w.split.train, w.split.test, cfg).to_json().dump();
    const auto r2 = evaluate(again, w.split.train, w.split.test, cfg).to_json().dump();
    o.require(r1 == r2, std::string("eval report differs under ") + to_string(e));
  }
  const auto p1 = engagement_train(w.split.train, default_lexicon(), w.cfg.ridge);
  const auto p2 = engagement_train(w.split.train, default_lexicon(), w.cfg.ridge);
  o.require(p1.to_json().dump() == p2.to_json().dump(), "virality model differs");
  const auto x1 = virality_experiment(p1, pipeline_pairs(*w.bundle, w.split.test, w.cfg), w.cfg.virality);
  const auto x2 = virality_experiment(p2, pipeline_pairs(again, w.split.test, w.cfg), w.cfg.virality);
  o.require(x1.to_json().dump() == x2.to_json().dump(), "experiment report differs");
  fs::remove_all(root);
  o.detail << same << "/" << files.size() << " bundle files identical (version " << again.version()
           << "), eval x2 engines, virality model and experiment identical";
}

}  // namespace

int main() {
  std::printf("acceptance: default synthetic corpus, default config\n");
  World w = make_world();

  run("crf_exactness", 10, crf_exactness);
  run("gradient_checks", 30, gradient_checks);
  run("hip_learning", 300, [&](Outcome& o) { hip_learning(o, w); });
  run("hsi_learning", 300, [&](Outcome& o) { hsi_learning(o, w); });
  run("end_to_end_reduction", 600, [&](Outcome& o) { end_to_end(o, w); });
  run("metric_oracles", 60, metric_oracles);
  if (!w.bundle) {
    std::printf("no bundle; remaining criteria cannot run\n");
    return 1;
  }
  run("extrinsic_direction", 120, [&](Outcome& o) { extrinsic_direction(o, w); });
  run("statistics", 120, [&](Outcome& o) { statistics(o, w); });
  run("service_contract", 120, [&](Outcome& o) { service_contract(o, w); });
  run("determinism", 900, [&](Outcome& o) { determinism(o, w); });

  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
