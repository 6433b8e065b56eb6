#pragma once

// Engagement side of the normalization argument: shallow text features, a
// ridge regressor on log comment counts, and a paired sampling experiment
// comparing predicted engagement of originals against their rewrites.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/rng.hpp"
#include "hatenorm/stats.hpp"

namespace hatenorm {

// ---------------------------------------------------------------------------
// Sentiment lexicon
// ---------------------------------------------------------------------------

using Lexicon = std::unordered_map<std::string, double>;

// token<TAB>score per line; blank lines and lines starting with '#' skipped.
inline Lexicon read_lexicon(std::istream& in) {
  Lexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw ParseError(lineno, "expected token<TAB>score");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "score is not a number");
    }
    if (!(score >= -1.0 && score <= 1.0)) throw ParseError(lineno, "score must lie in [-1, 1]");
    lex[line.substr(0, tab)] = score;
  }
  return lex;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon " + path);
  return read_lexicon(in);
}

// Small bundled lexicon; covers the synthetic corpus vocabulary.
inline Lexicon default_lexicon() {
  static const char* kText =
      "id*ots\t-0.6\ncl*wns\t-0.5\nl*sers\t-0.5\nv*rmin\t-0.9\nsc*m\t-0.8\np*rasites\t-0.9\n"
      "s*bhumans\t-1.0\ntr*sh\t-0.7\nfilthy\t-0.8\nr*ts\t-0.8\nk*ll\t-1.0\nwipe\t-0.6\nburn\t-0.8\n"
      "h*ng\t-1.0\nsh**t\t-1.0\nsight\t-0.1\ntired\t-0.4\ncomplaints\t-0.4\nlost\t-0.4\n"
      "shouting\t-0.3\nnobody\t-0.2\n#sendthemback\t-0.6\n#notwelcome\t-0.6\n#banthem\t-0.6\n"
      "lovely\t0.8\ngreat\t0.8\nwon\t0.6\nperfect\t0.9\nhappy\t0.9\nbest\t0.8\nfantastic\t0.9\n"
      "beautiful\t0.9\namazing\t0.9\nfresh\t0.5\nfree\t0.4\nfriends\t0.6\nfriend\t0.6\nsurprise\t0.3\n"
      "forward\t0.3\nfinally\t0.2\ndebate\t0.1\ndiscussion\t0.1\nopinion\t0.0\nneighbours\t0.2\n"
      "welcome\t0.5\n";
  std::istringstream in(kText);
  return read_lexicon(in);
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

struct CorpusStats {
  std::unordered_map<std::string, std::size_t> tf;
  std::unordered_map<std::string, std::size_t> df;
  std::size_t total = 0;
  std::size_t num_docs = 0;
  std::size_t min_tf = 1;

  static CorpusStats from_corpus(const Corpus& c) {
    if (c.empty() || c.total_tokens() == 0) throw EmptyInputError("corpus statistics need tokens");
    CorpusStats s;
    s.tf = c.term_frequency();
    s.df = c.document_frequency();
    s.total = c.total_tokens();
    s.num_docs = c.size();
    s.min_tf = std::numeric_limits<std::size_t>::max();
    for (const auto& [t, n] : s.tf) s.min_tf = std::min(s.min_tf, n);
    return s;
  }

  nlohmann::json to_json() const {
    std::map<std::string, std::size_t> stf(tf.begin(), tf.end()), sdf(df.begin(), df.end());
    return {{"tf", stf}, {"df", sdf}, {"total", total}, {"num_docs", num_docs}, {"min_tf", min_tf}};
  }

  static CorpusStats from_json(const nlohmann::json& j) {
    CorpusStats s;
    for (const auto& [k, v] : j.at("tf").items()) s.tf[k] = v.get<std::size_t>();
    for (const auto& [k, v] : j.at("df").items()) s.df[k] = v.get<std::size_t>();
    s.total = j.at("total").get<std::size_t>();
    s.num_docs = j.at("num_docs").get<std::size_t>();
    s.min_tf = j.at("min_tf").get<std::size_t>();
    if (s.total == 0 || s.min_tf == 0) throw ModelFormatError("corpus statistics are empty");
    return s;
  }
};

inline constexpr std::size_t kNumEngagementFeatures = 5;
inline constexpr std::array<const char*, kNumEngagementFeatures> kEngagementFeatureNames{
    "complexity", "lix", "rix", "informativeness", "polarity"};

struct EngagementFeatures {
  double complexity = 0.0;
  double lix = 0.0;
  double rix = 0.0;
  double informativeness = 0.0;
  double polarity = 0.0;

  std::array<double, kNumEngagementFeatures> as_array() const {
    return {complexity, lix, rix, informativeness, polarity};
  }
};

// A word is any token with at least one ASCII letter, so masked forms such
// as "id*ots" still count.
inline bool is_word(const std::string& t) {
  return std::any_of(t.begin(), t.end(), [](unsigned char c) { return std::isalpha(c) != 0; });
}

inline bool is_sentence_end(const std::string& t) { return t == "." || t == "!" || t == "?"; }

inline std::size_t char_count(const std::string& t) {
  // UTF-8 code points.
  return static_cast<std::size_t>(
      std::count_if(t.begin(), t.end(), [](unsigned char c) { return (c & 0xC0) != 0x80; }));
}

inline EngagementFeatures extract_features(const std::vector<std::string>& tokens, const CorpusStats& stats,
                                           const Lexicon& lexicon) {
  if (tokens.empty()) throw EmptyInputError("feature extraction needs tokens");
  if (stats.total == 0) throw ValidationError("corpus_stats", "empty corpus statistics");
  EngagementFeatures f;
  double words = 0.0, long_words = 0.0, sentences = 0.0;
  double rarity = 0.0, polarity_sum = 0.0, covered = 0.0;
  const double total = static_cast<double>(stats.total);
  const double n_docs = static_cast<double>(stats.num_docs);
  for (const auto& t : tokens) {
    if (is_sentence_end(t)) sentences += 1.0;
    if (!is_word(t)) continue;
    words += 1.0;
    if (char_count(t) > 6) long_words += 1.0;
    auto it = stats.tf.find(t);
    const double tf = static_cast<double>(it == stats.tf.end() ? stats.min_tf : it->second);
    rarity += -std::log(tf / total);
    auto dit = stats.df.find(t);
    const double df = dit == stats.df.end() ? 0.0 : static_cast<double>(dit->second);
    f.informativeness += std::log((n_docs + 1.0) / (df + 1.0)) + 1.0;
    auto lit = lexicon.find(t);
    if (lit != lexicon.end()) {
      polarity_sum += lit->second;
      covered += 1.0;
    }
  }
  sentences = std::max(1.0, sentences);
  if (words > 0) {
    f.complexity = rarity / words;
    f.lix = words / sentences + 100.0 * long_words / words;
  }
  f.rix = long_words / sentences;
  f.polarity = covered > 0 ? polarity_sum / covered : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Engagement regressor
// ---------------------------------------------------------------------------

namespace detail {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
template <std::size_t N>
std::array<double, N> solve(std::array<std::array<double, N>, N> a, std::array<double, N> b) {
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < N; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-300) throw Error("singular system in ridge fit");
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < N; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < N; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, N> x{};
  for (std::size_t r = N; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < N; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace detail

class EngagementModel {
 public:
  using Row = std::array<double, kNumEngagementFeatures>;

  static EngagementModel fit(const std::vector<EngagementFeatures>& features, const std::vector<std::int64_t>& counts,
                             double ridge = 1e-3) {
    if (features.size() != counts.size()) throw ValidationError("counts", "one count per feature row");
    if (features.size() < 2) throw ValidationError("features", "need at least two samples");
    if (!(ridge >= 0)) throw ValidationError("ridge", "must be non-negative");
    constexpr std::size_t K = kNumEngagementFeatures;
    const double n = static_cast<double>(features.size());
    EngagementModel m;
    m.ridge_ = ridge;
    std::vector<Row> xs;
    for (const auto& f : features) xs.push_back(f.as_array());
    for (std::size_t k = 0; k < K; ++k) {
      double mean = 0.0, var = 0.0;
      for (const auto& x : xs) mean += x[k];
      mean /= n;
      for (const auto& x : xs) var += (x[k] - mean) * (x[k] - mean);
      const double sd = std::sqrt(var / n);
      if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
        throw ValidationError(kEngagementFeatureNames[k], "feature is constant over the training set");
      }
      m.mean_[k] = mean;
      m.sd_[k] = sd;
    }
    double ybar = 0.0;
    std::vector<double> ys;
    for (auto c : counts) {
      if (c < 0) throw ValidationError("engagement", "counts must be non-negative");
      ys.push_back(std::log1p(static_cast<double>(c)));
      ybar += ys.back();
    }
    ybar /= n;
    std::array<std::array<double, K>, K> a{};
    std::array<double, K> b{};
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Row z = m.standardize(xs[i]);
      for (std::size_t r = 0; r < K; ++r) {
        b[r] += z[r] * (ys[i] - ybar);
        for (std::size_t c = 0; c < K; ++c) a[r][c] += z[r] * z[c];
      }
    }
    for (std::size_t r = 0; r < K; ++r) a[r][r] += ridge * n;
    m.w_ = detail::solve<K>(a, b);
    m.bias_ = ybar;
    return m;
  }

  // Fitted ln(1 + c).
  double predict_log(const EngagementFeatures& f) const {
    const Row z = standardize(f.as_array());
    double y = bias_;
    for (std::size_t k = 0; k < kNumEngagementFeatures; ++k) y += w_[k] * z[k];
    return y;
  }

  double predict(const EngagementFeatures& f) const { return std::max(0.0, std::expm1(predict_log(f))); }

  const Row& weights() const { return w_; }
  double bias() const { return bias_; }

  nlohmann::json to_json() const {
    return {{"format_version", nn::kFormatVersion}, {"kind", "engagement"}, {"mean", mean_}, {"sd", sd_},
            {"weights", w_}, {"bias", bias_}, {"ridge", ridge_}};
  }

  static EngagementModel from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "engagement");
    EngagementModel m;
    m.mean_ = j.at("mean").get<Row>();
    m.sd_ = j.at("sd").get<Row>();
    m.w_ = j.at("weights").get<Row>();
    m.bias_ = j.at("bias").get<double>();
    m.ridge_ = j.at("ridge").get<double>();
    for (double s : m.sd_) {
      if (!(s > 0)) throw ModelFormatError("engagement model has non-positive feature sd");
    }
    return m;
  }

 private:
  Row standardize(const Row& x) const {
    Row z{};
    for (std::size_t k = 0; k < kNumEngagementFeatures; ++k) z[k] = (x[k] - mean_[k]) / sd_[k];
    return z;
  }

  Row mean_{}, sd_{}, w_{};
  double bias_ = 0.0;
  double ridge_ = 0.0;
};

// Bundles what is needed to score raw token lists.
struct EngagementPredictor {
  EngagementModel model;
  CorpusStats stats;
  Lexicon lexicon;

  double predict(const std::vector<std::string>& tokens) const {
    return model.predict(extract_features(tokens, stats, lexicon));
  }

  nlohmann::json to_json() const {
    std::map<std::string, double> lex(lexicon.begin(), lexicon.end());
    return {{"format_version", nn::kFormatVersion}, {"kind", "virality"}, {"model", model.to_json()},
            {"stats", stats.to_json()}, {"lexicon", lex}};
  }

  static EngagementPredictor from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "virality");
    EngagementPredictor p;
    p.model = EngagementModel::from_json(j.at("model"));
    p.stats = CorpusStats::from_json(j.at("stats"));
    for (const auto& [k, v] : j.at("lexicon").items()) p.lexicon[k] = v.get<double>();
    return p;
  }
};

// Fits on every sample of `train` that carries an engagement count.
inline EngagementPredictor engagement_train(const Corpus& train, Lexicon lexicon, double ridge = 1e-3) {
  EngagementPredictor p;
  p.stats = CorpusStats::from_corpus(train);
  p.lexicon = std::move(lexicon);
  std::vector<EngagementFeatures> fs;
  std::vector<std::int64_t> counts;
  for (const Sample& s : train.samples()) {
    if (!s.engagement) continue;
    fs.push_back(extract_features(s.tokens, p.stats, p.lexicon));
    counts.push_back(*s.engagement);
  }
  p.model = EngagementModel::fit(fs, counts, ridge);
  return p;
}

// ---------------------------------------------------------------------------
// Paired experiment
// ---------------------------------------------------------------------------

struct ViralityConfig {
  std::size_t k = 300;
  std::size_t n_iter = 10;
  std::uint64_t seed = 17;
};

struct IterationMedians {
  double original = 0.0;
  double normalized = 0.0;
};

struct ViralityReport {
  std::vector<double> iterations;  // median(orig) - median(norm)
  std::vector<IterationMedians> medians;
  WelchResult welch;
  bool with_replacement = false;
  // Both prediction sets constant and equal: no test is defined, reported as
  // t = 0, p = 1, d = 0.
  bool degenerate = false;
  std::size_t num_pairs = 0;
  ViralityConfig config;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["iterations"] = iterations;
    j["t"] = welch.t;
    j["dof"] = welch.dof;
    j["p"] = welch.p;
    j["effect_size"] = welch.effect_size;
    nlohmann::ordered_json med = nlohmann::ordered_json::array();
    for (const auto& m : medians) med.push_back({{"original", m.original}, {"normalized", m.normalized}});
    j["medians"] = med;
    j["num_pairs"] = num_pairs;
    j["k"] = config.k;
    j["n_iter"] = config.n_iter;
    j["seed"] = config.seed;
    j["with_replacement"] = with_replacement;
    j["degenerate"] = degenerate;
    return j;
  }
};

inline ViralityReport virality_experiment(const EngagementPredictor& predictor,
                                          const std::vector<std::pair<Sample, Sample>>& pairs,
                                          const ViralityConfig& cfg = {}) {
  if (pairs.empty()) throw EmptyInputError("virality experiment needs pairs");
  if (cfg.k == 0 || cfg.n_iter == 0) throw ValidationError("virality", "k and n_iter must be positive");
  std::vector<double> orig, norm;
  orig.reserve(pairs.size());
  norm.reserve(pairs.size());
  for (const auto& [o, n] : pairs) {
    orig.push_back(predictor.predict(o.tokens));
    norm.push_back(predictor.predict(n.tokens));
  }
  ViralityReport rep;
  rep.config = cfg;
  rep.num_pairs = pairs.size();
  rep.with_replacement = pairs.size() < cfg.k;
  Rng rng(cfg.seed);
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    std::vector<std::size_t> pick;
    if (rep.with_replacement) {
      for (std::size_t s = 0; s < cfg.k; ++s) pick.push_back(rng.below(pairs.size()));
    } else {
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx);
      pick.assign(idx.begin(), idx.begin() + static_cast<long>(cfg.k));
    }
    std::vector<double> a, b;
    for (std::size_t i : pick) {
      a.push_back(orig[i]);
      b.push_back(norm[i]);
    }
    const IterationMedians m{median(a), median(b)};
    rep.medians.push_back(m);
    rep.iterations.push_back(m.original - m.normalized);
  }
  const SampleMoments ma = sample_moments(orig), mb = sample_moments(norm);
  if (pairs.size() >= 2 && ma.var == 0.0 && mb.var == 0.0 && ma.mean == mb.mean) {
    rep.degenerate = true;
    rep.welch = {0.0, 2.0 * static_cast<double>(pairs.size()) - 2.0, 1.0, 0.0};
  } else {
    rep.welch = welch_t_test(orig, norm);
  }
  return rep;
}

}  // namespace hatenorm
