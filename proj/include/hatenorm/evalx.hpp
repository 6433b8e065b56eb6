#pragma once

// Generation quality metrics beyond BLEU: an interpolated n-gram LM for
// perplexity, a bag-of-tokens logistic hate detector, and the confidence drop
// of that detector between original and normalized texts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/bleu.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/splice.hpp"

namespace hatenorm {

// ---------------------------------------------------------------------------
// N-gram language model
// ---------------------------------------------------------------------------

struct NgramLmConfig {
  std::size_t order = 3;
  // lambdas[j] weights the order-(j+1) estimate.
  std::vector<double> lambdas{0.1, 0.3, 0.6};
  double add_k = 0.1;

  void validate() const {
    if (order < 1) throw ValidationError("order", "must be >= 1");
    if (lambdas.size() != order) throw ValidationError("lambdas", "need one weight per order");
    double s = 0.0;
    for (double l : lambdas) {
      if (!(l >= 0.0)) throw ValidationError("lambdas", "weights must be non-negative");
      s += l;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ValidationError("lambdas", "weights must sum to 1");
    if (!(add_k > 0.0)) throw ValidationError("add_k", "must be positive");
  }
};

// p(w | h) = sum_j lambda_j q_j(w | h), with q_1 the add-k unigram and q_j the
// maximum-likelihood order-j estimate, or q_{j-1} when its context was never
// seen. Sentences are padded on the left with <s> and end with </s>; <s> is
// never predicted, so it is not part of the scored vocabulary.
class NgramLm {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  NgramLm() = default;

  static NgramLm train(const std::vector<Tokens>& sentences, const NgramLmConfig& cfg = {}) {
    cfg.validate();
    if (sentences.empty()) throw EmptyInputError("language model needs training text");
    NgramLm lm;
    lm.cfg_ = cfg;
    lm.vocab_.insert(kUnk);
    lm.vocab_.insert(kEos);
    for (const auto& s : sentences) lm.vocab_.insert(s.begin(), s.end());
    lm.vocab_.erase(kBos);
    lm.counts_.resize(cfg.order);
    lm.context_counts_.resize(cfg.order);
    for (const auto& s : sentences) {
      const Tokens padded = lm.pad(s);
      for (std::size_t i = cfg.order - 1; i < padded.size(); ++i) {
        for (std::size_t j = 0; j < cfg.order; ++j) {
          const std::string ctx = key(padded, i - j, i);
          ++lm.counts_[j][ctx + '\x1f' + padded[i]];
          ++lm.context_counts_[j][ctx];
        }
      }
    }
    return lm;
  }

  // Uniform distribution over `vocab` (plus <unk> and </s> if missing).
  static NgramLm uniform(const std::vector<std::string>& vocab) {
    NgramLm lm;
    lm.cfg_.order = 1;
    lm.cfg_.lambdas = {1.0};
    lm.cfg_.add_k = 1.0;
    lm.vocab_.insert(vocab.begin(), vocab.end());
    lm.vocab_.insert(kUnk);
    lm.vocab_.insert(kEos);
    lm.counts_.resize(1);
    lm.context_counts_.resize(1);
    return lm;
  }

  std::size_t vocab_size() const { return vocab_.size(); }
  const NgramLmConfig& config() const { return cfg_; }

  // p(word | history); `history` is the preceding tokens (unpadded) and may be
  // longer than needed. Unknown words are scored as <unk>.
  double prob(const Tokens& history, const std::string& word) const {
    Tokens h(cfg_.order > 1 ? cfg_.order - 1 : 0, kBos);
    for (const auto& t : history) h.push_back(map(t));
    h.push_back(map(word));
    return prob_at(h, h.size() - 1);
  }

  // Sum of ln p over every token of `s` and the closing </s>; `scored`
  // receives the number of scored tokens.
  double log_prob(const Tokens& s, std::size_t* scored = nullptr) const {
    const Tokens padded = pad(s);
    double lp = 0.0;
    for (std::size_t i = cfg_.order - 1; i < padded.size(); ++i) lp += std::log(prob_at(padded, i));
    if (scored) *scored = padded.size() - (cfg_.order - 1);
    return lp;
  }

 private:
  static std::string key(const Tokens& toks, std::size_t from, std::size_t to) {
    std::string k;
    for (std::size_t i = from; i < to; ++i) {
      if (i > from) k += '\x1f';
      k += toks[i];
    }
    return k;
  }

  std::string map(const std::string& t) const { return vocab_.count(t) ? t : std::string(kUnk); }

  Tokens pad(const Tokens& s) const {
    Tokens p(cfg_.order - 1, kBos);
    for (const auto& t : s) p.push_back(map(t));
    p.push_back(kEos);
    return p;
  }

  double prob_at(const Tokens& padded, std::size_t i) const {
    const std::string& w = padded[i];
    const double total = static_cast<double>(total_unigrams());
    const double v = static_cast<double>(vocab_.size());
    auto count_of = [&](const std::unordered_map<std::string, std::uint64_t>& m, const std::string& k) {
      auto it = m.find(k);
      return it == m.end() ? 0.0 : static_cast<double>(it->second);
    };
    double q = (count_of(counts_[0], std::string("\x1f") + w) + cfg_.add_k) / (total + cfg_.add_k * v);
    double p = cfg_.lambdas[0] * q;
    for (std::size_t j = 1; j < cfg_.order; ++j) {
      const std::string ctx = key(padded, i - j, i);
      const double c = count_of(context_counts_[j], ctx);
      if (c > 0) q = count_of(counts_[j], ctx + '\x1f' + w) / c;
      p += cfg_.lambdas[j] * q;
    }
    return p;
  }

  std::uint64_t total_unigrams() const {
    auto it = context_counts_[0].find("");
    return it == context_counts_[0].end() ? 0 : it->second;
  }

  NgramLmConfig cfg_;
  std::set<std::string> vocab_;
  std::vector<std::unordered_map<std::string, std::uint64_t>> counts_;
  std::vector<std::unordered_map<std::string, std::uint64_t>> context_counts_;
};

inline NgramLm lm_train(const std::vector<Tokens>& sentences, const NgramLmConfig& cfg = {}) {
  return NgramLm::train(sentences, cfg);
}

inline double perplexity(const NgramLm& lm, const std::vector<Tokens>& sentences) {
  if (sentences.empty()) throw EmptyInputError("perplexity needs at least one sentence");
  double lp = 0.0;
  std::size_t n = 0;
  for (const auto& s : sentences) {
    std::size_t k = 0;
    lp += lm.log_prob(s, &k);
    n += k;
  }
  return std::exp(-lp / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Hate detector
// ---------------------------------------------------------------------------

struct DetectorConfig {
  double l2 = 1e-3;
  double learning_rate = 0.1;
  std::size_t iterations = 300;
  std::uint64_t seed = 31;
};

struct LabeledText {
  Tokens tokens;
  int label = 0;  // 1 = hate
};

class HateDetector {
 public:
  HateDetector() = default;
  explicit HateDetector(nn::Vocab vocab)
      : vocab_(std::move(vocab)), w_("detector.w", vocab_.size(), 1), b_("detector.b", 1, 1) {}

  const nn::Vocab& vocab() const { return vocab_; }
  nn::ParamRefs params() { return {&w_, &b_}; }
  nn::ConstParamRefs params() const { return {&w_, &b_}; }

  double logit(const Tokens& tokens) const {
    double z = b_.w[0];
    for (const auto& t : tokens) z += w_.w[vocab_.id(t)];
    return z;
  }

  // Hate-class probability, kept strictly inside (0, 1).
  double predict(const Tokens& tokens) const {
    constexpr double lo = 1e-12;
    return std::clamp(nn::sigmoid(logit(tokens)), lo, 1.0 - lo);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nn::params_to_json(params());
    j["format_version"] = nn::kFormatVersion;
    j["kind"] = "detector";
    j["vocab"] = vocab_.tokens();
    return j;
  }

  static HateDetector from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "detector");
    HateDetector d(nn::Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>()));
    nn::params_from_json(j, d.params());
    return d;
  }

 private:
  nn::Vocab vocab_;
  nn::Param w_, b_;
};

// Full-batch Adam on mean log-loss + l2/2 |w|^2. Token ids are fixed by first
// appearance, so the fit is deterministic.
inline HateDetector detector_train(const std::vector<LabeledText>& data, const DetectorConfig& cfg = {}) {
  bool pos = false, neg = false;
  for (const auto& d : data) {
    if (d.label != 0 && d.label != 1) throw ValidationError("label", "must be 0 or 1");
    (d.label ? pos : neg) = true;
  }
  if (!pos || !neg) throw ValidationError("label", "detector training needs both classes");
  nn::Vocab vocab;
  for (const auto& d : data) {
    for (const auto& t : d.tokens) vocab.add(t);
  }
  HateDetector det(std::move(vocab));
  std::vector<std::vector<std::size_t>> ids;
  for (const auto& d : data) ids.push_back(det.vocab().encode(d.tokens));
  const auto ps = det.params();
  nn::Param& w = *ps[0];
  nn::Param& b = *ps[1];
  nn::Adam adam(cfg.learning_rate);
  const double inv = 1.0 / static_cast<double>(data.size());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    nn::zero_grads(ps);
    for (std::size_t i = 0; i < data.size(); ++i) {
      double z = b.w[0];
      for (std::size_t id : ids[i]) z += w.w[id];
      const double err = (nn::sigmoid(z) - data[i].label) * inv;
      b.g[0] += err;
      for (std::size_t id : ids[i]) w.g[id] += err;
    }
    for (std::size_t k = 0; k < w.w.size(); ++k) w.g[k] += cfg.l2 * w.w[k];
    adam.step(ps, 0.0);
  }
  if (!nn::all_finite(ps)) throw DivergedTrainingError("detector parameters became non-finite");
  return det;
}

// ---------------------------------------------------------------------------
// Confidence drop
// ---------------------------------------------------------------------------

struct DeltaConfidence {
  double delta_c = 0.0;
  std::size_t m_count = 0;
};

inline constexpr double kHateThreshold = 0.5;

// From precomputed (gamma(t), gamma(t')) pairs.
inline DeltaConfidence delta_confidence_scores(const std::vector<std::pair<double, double>>& gammas) {
  if (gammas.empty()) throw EmptyInputError("delta_c needs at least one pair");
  double sum = 0.0;
  std::size_t m = 0;
  for (const auto& [g, gp] : gammas) {
    if (g >= kHateThreshold && gp >= kHateThreshold) {
      sum += g - gp;
      ++m;
    }
  }
  if (m == 0) throw UndefinedMetricError("delta_c: no pair keeps both sides classified as hate");
  return {sum / static_cast<double>(m), m};
}

inline DeltaConfidence delta_confidence(const HateDetector& det, const std::vector<std::pair<Tokens, Tokens>>& pairs) {
  std::vector<std::pair<double, double>> g;
  g.reserve(pairs.size());
  for (const auto& [t, tp] : pairs) g.emplace_back(det.predict(t), det.predict(tp));
  return delta_confidence_scores(g);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EvalReport {
  double bleu = 0.0;
  double perplexity = 0.0;
  std::optional<double> delta_c;
  std::size_t m_count = 0;
  double hip_rmse = 0.0, hip_pearson = 0.0, hip_cosine = 0.0;
  double hsi_p = 0.0, hsi_r = 0.0, hsi_f1 = 0.0, hsi_exact = 0.0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["bleu"] = bleu;
    j["perplexity"] = perplexity;
    j["delta_c"] = delta_c ? nlohmann::ordered_json(*delta_c) : nlohmann::ordered_json(nullptr);
    j["m_count"] = m_count;
    j["hip"] = {{"rmse", hip_rmse}, {"pearson", hip_pearson}, {"cosine", hip_cosine}};
    j["hsi"] = {{"p", hsi_p}, {"r", hsi_r}, {"f1", hsi_f1}, {"exact_span_rate", hsi_exact}};
    return j;
  }
};

}  // namespace hatenorm
