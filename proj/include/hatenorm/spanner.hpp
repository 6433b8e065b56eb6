#pragma once

// Hate span identification: a linear-chain CRF over BIO tags whose emission
// scores come either from sparse token features (a literal linear model
// w . phi(x, s)) or from an embedding + BiLSTM + dense stack.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hatenorm/corpus.hpp"
#include "hatenorm/crf.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/rng.hpp"

namespace hatenorm {

enum class EmissionMode { kFeature, kNeural };

inline const char* to_string(EmissionMode m) { return m == EmissionMode::kFeature ? "feature" : "neural"; }

inline EmissionMode emission_mode_from_string(const std::string& s) {
  if (s == "feature") return EmissionMode::kFeature;
  if (s == "neural") return EmissionMode::kNeural;
  throw ValidationError("mode", "unknown emission mode '" + s + "'");
}

// Sparse observation features of token i.
inline std::vector<std::string> token_features(const std::vector<std::string>& tokens, std::size_t i) {
  auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  const std::string w = lower(tokens[i]);
  std::string shape;
  if (!w.empty() && w[0] == '#') shape += "hash";
  if (!w.empty() && w[0] == '@') shape += "at";
  if (w.find('*') != std::string::npos) shape += "star";
  if (std::any_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) shape += "digit";
  if (std::none_of(w.begin(), w.end(), [](unsigned char c) { return std::isalnum(c); })) shape += "punct";
  std::vector<std::string> f{"bias", "w=" + w, "p3=" + w.substr(0, 3),
                             "s3=" + (w.size() > 3 ? w.substr(w.size() - 3) : w), "shape=" + shape,
                             "w-1=" + (i > 0 ? lower(tokens[i - 1]) : std::string("<s>")),
                             "w+1=" + (i + 1 < tokens.size() ? lower(tokens[i + 1]) : std::string("</s>"))};
  return f;
}

class CrfModel {
 public:
  CrfModel() = default;

  static CrfModel feature(const std::vector<std::string>& feature_names) {
    CrfModel m;
    m.mode_ = EmissionMode::kFeature;
    for (const auto& f : feature_names) {
      if (!m.feature_index_.count(f)) {
        m.feature_index_.emplace(f, m.feature_names_.size());
        m.feature_names_.push_back(f);
      }
    }
    m.feat_w_ = nn::Param("hsi.feature.w", m.feature_names_.size(), kNumTags);
    m.init_transitions();
    return m;
  }

  static CrfModel neural(nn::Vocab vocab, std::size_t embedding_dim, std::size_t hidden) {
    CrfModel m;
    m.mode_ = EmissionMode::kNeural;
    m.vocab_ = std::move(vocab);
    m.emb_ = nn::Param("hsi.embedding", m.vocab_.size(), embedding_dim);
    m.encoder_ = nn::BiLstm("hsi.encoder", embedding_dim, hidden);
    m.dense_w_ = nn::Param("hsi.dense.w", kNumTags, 2 * hidden);
    m.dense_b_ = nn::Param("hsi.dense.b", kNumTags, 1);
    m.init_transitions();
    return m;
  }

  EmissionMode mode() const { return mode_; }
  const nn::Vocab& vocab() const { return vocab_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }

  void init(Rng& rng, double scale = 0.1) {
    trans_.init_uniform(rng, scale);
    start_.init_uniform(rng, scale);
    stop_.init_uniform(rng, scale);
    if (mode_ == EmissionMode::kFeature) {
      feat_w_.init_uniform(rng, scale);
    } else {
      emb_.init_uniform(rng, 0.1);
      encoder_.init(rng);
      dense_w_.init_glorot(rng);
      std::fill(dense_b_.w.begin(), dense_b_.w.end(), 0.0);
    }
  }

  nn::ParamRefs params() {
    nn::ParamRefs ps{&trans_, &start_, &stop_};
    if (mode_ == EmissionMode::kFeature) {
      ps.push_back(&feat_w_);
    } else {
      ps.push_back(&emb_);
      auto enc = encoder_.params();
      ps.insert(ps.end(), enc.begin(), enc.end());
      ps.insert(ps.end(), {&dense_w_, &dense_b_});
    }
    return ps;
  }
  nn::ConstParamRefs params() const { return nn::as_const(const_cast<CrfModel*>(this)->params()); }

  crf::Transitions transitions() const {
    crf::Transitions t;
    for (std::size_t a = 0; a < kNumTags; ++a) {
      t.start[a] = start_.w[a];
      t.stop[a] = stop_.w[a];
      for (std::size_t b = 0; b < kNumTags; ++b) t.trans[a][b] = trans_.at(a, b);
    }
    return t;
  }

  void set_transitions(const crf::Transitions& t) {
    for (std::size_t a = 0; a < kNumTags; ++a) {
      start_.w[a] = t.start[a];
      stop_.w[a] = t.stop[a];
      for (std::size_t b = 0; b < kNumTags; ++b) trans_.at(a, b) = t.trans[a][b];
    }
  }

  // Direct weight access in feature mode (tests and inspection).
  double& feature_weight(const std::string& feature, BioTag tag) {
    return feat_w_.at(feature_index_.at(feature), tag_index(tag));
  }

  struct Trace {
    std::vector<std::vector<std::size_t>> active;  // feature mode
    std::vector<std::size_t> ids;                  // neural mode
    nn::BiLstm::Cache enc;
    crf::EmissionMatrix emissions;
  };

  Trace trace(const std::vector<std::string>& tokens) const {
    return trace_ids(tokens, mode_ == EmissionMode::kNeural ? vocab_.encode(tokens)
                                                            : std::vector<std::size_t>{});
  }

  Trace trace_ids(const std::vector<std::string>& tokens, std::vector<std::size_t> ids) const {
    if (tokens.empty()) throw EmptyInputError("span identification needs at least one token");
    Trace tr;
    const std::size_t m = tokens.size();
    tr.emissions.assign(m, crf::TagScores{});
    if (mode_ == EmissionMode::kFeature) {
      tr.active.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (const auto& f : token_features(tokens, i)) {
          auto it = feature_index_.find(f);
          if (it == feature_index_.end()) continue;
          tr.active[i].push_back(it->second);
          for (std::size_t s = 0; s < kNumTags; ++s) tr.emissions[i][s] += feat_w_.at(it->second, s);
        }
      }
    } else {
      tr.ids = std::move(ids);
      std::vector<nn::Vec> xs;
      xs.reserve(m);
      for (std::size_t id : tr.ids) xs.emplace_back(emb_.row(id), emb_.row(id) + emb_.cols);
      tr.enc = encoder_.forward(xs);
      for (std::size_t i = 0; i < m; ++i) {
        nn::Vec e(dense_b_.w);
        nn::gemv_acc(dense_w_, tr.enc.out[i].data(), e.data());
        for (std::size_t s = 0; s < kNumTags; ++s) tr.emissions[i][s] = e[s];
      }
    }
    return tr;
  }

  crf::EmissionMatrix emissions(const std::vector<std::string>& tokens) const {
    return trace(tokens).emissions;
  }

  // Accumulates gradients given dLoss/d(emission) and dLoss/d(transitions).
  void backward(const Trace& tr, const crf::EmissionMatrix& d_em, const crf::Transitions& d_tr) {
    for (std::size_t a = 0; a < kNumTags; ++a) {
      start_.g[a] += d_tr.start[a];
      stop_.g[a] += d_tr.stop[a];
      for (std::size_t b = 0; b < kNumTags; ++b) trans_.g[a * kNumTags + b] += d_tr.trans[a][b];
    }
    const std::size_t m = d_em.size();
    if (mode_ == EmissionMode::kFeature) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t f : tr.active[i]) {
          for (std::size_t s = 0; s < kNumTags; ++s) feat_w_.g[f * kNumTags + s] += d_em[i][s];
        }
      }
      return;
    }
    std::vector<nn::Vec> d_h(m, nn::Vec(encoder_.output_dim(), 0.0));
    for (std::size_t i = 0; i < m; ++i) {
      const double dy[kNumTags] = {d_em[i][0], d_em[i][1], d_em[i][2]};
      for (std::size_t s = 0; s < kNumTags; ++s) dense_b_.g[s] += dy[s];
      nn::gemv_backward(dense_w_, tr.enc.out[i].data(), dy, d_h[i].data());
    }
    const auto d_x = encoder_.backward(tr.enc, d_h);
    for (std::size_t i = 0; i < m; ++i) {
      double* g = emb_.grad_row(tr.ids[i]);
      for (std::size_t k = 0; k < emb_.cols; ++k) g[k] += d_x[i][k];
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nn::params_to_json(params());
    j["format_version"] = nn::kFormatVersion;
    j["kind"] = "hsi";
    j["mode"] = to_string(mode_);
    if (mode_ == EmissionMode::kFeature) {
      j["features"] = feature_names_;
    } else {
      j["vocab"] = vocab_.tokens();
      j["dims"] = {{"embedding", emb_.cols}, {"hidden", encoder_.hidden()}};
    }
    return j;
  }

  static CrfModel from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "hsi");
    const EmissionMode mode = emission_mode_from_string(j.at("mode").get<std::string>());
    CrfModel m;
    if (mode == EmissionMode::kFeature) {
      m = feature(j.at("features").get<std::vector<std::string>>());
    } else {
      const auto& dims = j.at("dims");
      m = neural(nn::Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>()),
                 dims.at("embedding").get<std::size_t>(), dims.at("hidden").get<std::size_t>());
    }
    nn::params_from_json(j, m.params());
    return m;
  }

 private:
  void init_transitions() {
    trans_ = nn::Param("hsi.transitions", kNumTags, kNumTags);
    start_ = nn::Param("hsi.start", 1, kNumTags);
    stop_ = nn::Param("hsi.stop", 1, kNumTags);
  }

  EmissionMode mode_ = EmissionMode::kNeural;
  nn::Param trans_, start_, stop_;
  // feature mode
  std::vector<std::string> feature_names_;
  std::unordered_map<std::string, std::size_t> feature_index_;
  nn::Param feat_w_;
  // neural mode
  nn::Vocab vocab_;
  nn::Param emb_;
  nn::BiLstm encoder_;
  nn::Param dense_w_, dense_b_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline double crf_score(const CrfModel& model, const std::vector<std::string>& tokens, const TagSeq& tags) {
  if (tags.size() != tokens.size()) throw Error("tag sequence length does not match token count");
  return crf::sequence_score(model.emissions(tokens), model.transitions(), tags);
}

inline double crf_log_partition(const CrfModel& model, const std::vector<std::string>& tokens) {
  return crf::log_partition(model.emissions(tokens), model.transitions());
}

inline TagSeq crf_viterbi(const CrfModel& model, const std::vector<std::string>& tokens) {
  return crf::viterbi(model.emissions(tokens), model.transitions());
}

struct TaggedSequence {
  std::vector<std::string> tokens;
  TagSeq tags;
};

// Sum over the batch of (log Z - score(gold)), times `scale`. Gradients of the
// same quantity accumulate into the model.
inline double crf_nll_and_grad(CrfModel& model, const std::vector<TaggedSequence>& batch,
                               double scale = 1.0) {
  double loss = 0.0;
  const crf::Transitions tr = model.transitions();
  for (const auto& ex : batch) {
    if (ex.tags.size() != ex.tokens.size()) throw Error("gold tag sequence length does not match tokens");
    const auto trace = model.trace(ex.tokens);
    auto g = crf::nll_grad(trace.emissions, tr, ex.tags);
    loss += g.loss;
    if (scale != 1.0) {
      for (auto& row : g.d_emission) {
        for (double& x : row) x *= scale;
      }
      for (auto& row : g.d_transitions.trans) {
        for (double& x : row) x *= scale;
      }
      for (double& x : g.d_transitions.start) x *= scale;
      for (double& x : g.d_transitions.stop) x *= scale;
    }
    model.backward(trace, g.d_emission, g.d_transitions);
  }
  return loss * scale;
}

inline double crf_nll(const CrfModel& model, const std::vector<TaggedSequence>& batch) {
  double loss = 0.0;
  const crf::Transitions tr = model.transitions();
  for (const auto& ex : batch) {
    const auto em = model.emissions(ex.tokens);
    loss += crf::log_partition(em, tr) - crf::sequence_score(em, tr, ex.tags);
  }
  return loss;
}

inline std::vector<Span> hsi_predict_spans(const CrfModel& model, const std::vector<std::string>& tokens) {
  return decode_bio(crf_viterbi(model, tokens));
}

struct SpanMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double exact_span_rate = 0.0;
};

// Token-level counts pooled across a corpus (micro averaging).
struct SpanCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t exact = 0, gold_spans = 0, pred_spans = 0;

  void add(const std::vector<Span>& pred, const std::vector<Span>& gold, std::size_t n_tokens) {
    validate_spans(n_tokens, pred);
    validate_spans(n_tokens, gold);
    std::vector<char> p(n_tokens, 0), g(n_tokens, 0);
    for (const Span& s : pred) std::fill(p.begin() + static_cast<long>(s.start), p.begin() + static_cast<long>(s.end) + 1, 1);
    for (const Span& s : gold) std::fill(g.begin() + static_cast<long>(s.start), g.begin() + static_cast<long>(s.end) + 1, 1);
    for (std::size_t i = 0; i < n_tokens; ++i) {
      tp += p[i] && g[i];
      fp += p[i] && !g[i];
      fn += !p[i] && g[i];
    }
    for (const Span& s : gold) exact += std::binary_search(pred.begin(), pred.end(), s);
    gold_spans += gold.size();
    pred_spans += pred.size();
  }

  SpanMetrics metrics() const {
    SpanMetrics m;
    if (tp + fp + fn == 0) {
      m.precision = m.recall = m.f1 = 1.0;
    } else {
      m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    }
    if (gold_spans == 0) {
      m.exact_span_rate = pred_spans == 0 ? 1.0 : 0.0;
    } else {
      m.exact_span_rate = static_cast<double>(exact) / static_cast<double>(gold_spans);
    }
    return m;
  }
};

inline SpanMetrics span_metrics(const std::vector<Span>& pred, const std::vector<Span>& gold,
                                std::size_t n_tokens) {
  SpanCounts c;
  c.add(pred, gold, n_tokens);
  return c.metrics();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct HsiTrainConfig {
  EmissionMode mode = EmissionMode::kNeural;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 5e-3;
  std::size_t hidden = 32;
  std::size_t embedding_dim = 32;
  std::uint64_t seed = 11;
  // Normalized texts are added as all-O sequences.
  bool include_normalized = true;
  double unk_dropout = 0.02;
  bool verbose = false;

  void validate() const {
    if (!epochs || !batch_size || !hidden || !embedding_dim || !(learning_rate > 0)) {
      throw ValidationError("hsi", "all training hyperparameters must be positive");
    }
  }
};

inline SpanMetrics evaluate_spans(const CrfModel& model, const Corpus& corpus) {
  SpanCounts c;
  for (const Sample& s : corpus.samples()) {
    if (s.tokens.empty()) continue;
    c.add(hsi_predict_spans(model, s.tokens), s.spans, s.tokens.size());
  }
  return c.metrics();
}

// Adam on the CRF negative log-likelihood; returns the epoch snapshot with the
// best validation token-level F1.
inline CrfModel hsi_train(const Corpus& train, const Corpus& val, const HsiTrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw EmptyInputError("HSI training corpus is empty");

  std::vector<TaggedSequence> data;
  for (const Sample& s : train.samples()) {
    if (s.tokens.empty()) continue;
    data.push_back({s.tokens, encode_bio(s.tokens.size(), s.spans)});
    if (cfg.include_normalized && s.normalized_text) {
      auto toks = s.normalized_tokens();
      if (!toks.empty()) data.push_back({toks, TagSeq(toks.size(), BioTag::O)});
    }
  }
  if (data.empty()) throw EmptyInputError("HSI training corpus has no tokens");

  Rng rng(cfg.seed);
  CrfModel model;
  if (cfg.mode == EmissionMode::kFeature) {
    std::vector<std::string> names;
    std::unordered_map<std::string, bool> seen;
    for (const auto& ex : data) {
      for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
        for (auto& f : token_features(ex.tokens, i)) {
          if (seen.emplace(f, true).second) names.push_back(std::move(f));
        }
      }
    }
    model = CrfModel::feature(names);
  } else {
    nn::Vocab vocab;
    for (const auto& ex : data) {
      for (const auto& t : ex.tokens) vocab.add(t);
    }
    model = CrfModel::neural(std::move(vocab), cfg.embedding_dim, cfg.hidden);
  }
  model.init(rng, 0.01);
  const auto params = model.params();
  nn::Adam adam(cfg.learning_rate);

  const Corpus& select = val.empty() ? train : val;
  CrfModel best = model;
  double best_f1 = -1.0;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      nn::zero_grads(params);
      const double scale = 1.0 / static_cast<double>(e - b);
      for (std::size_t k = b; k < e; ++k) {
        const auto& ex = data[order[k]];
        std::vector<std::size_t> ids;
        if (cfg.mode == EmissionMode::kNeural) {
          ids = model.vocab().encode(ex.tokens);
          if (cfg.unk_dropout > 0) {
            for (auto& id : ids) {
              if (rng.uniform() < cfg.unk_dropout) id = nn::Vocab::kUnk;
            }
          }
        }
        const auto trace = model.trace_ids(ex.tokens, std::move(ids));
        auto g = crf::nll_grad(trace.emissions, model.transitions(), ex.tags);
        if (!std::isfinite(g.loss)) throw DivergedTrainingError("HSI loss became non-finite");
        epoch_loss += g.loss;
        for (auto& row : g.d_emission) {
          for (double& x : row) x *= scale;
        }
        for (auto& row : g.d_transitions.trans) {
          for (double& x : row) x *= scale;
        }
        for (double& x : g.d_transitions.start) x *= scale;
        for (double& x : g.d_transitions.stop) x *= scale;
        model.backward(trace, g.d_emission, g.d_transitions);
      }
      adam.step(params);
    }
    if (!nn::all_finite(params)) throw DivergedTrainingError("HSI parameters became non-finite");
    const double f1 = evaluate_spans(model, select).f1;
    if (cfg.verbose) {
      std::fprintf(stderr, "[hsi] epoch %zu nll %.4f val_f1 %.4f\n", epoch + 1,
                   epoch_loss / static_cast<double>(data.size()), f1);
    }
    if (f1 > best_f1) {
      best_f1 = f1;
      best = model;
    }
  }
  return best;
}

}  // namespace hatenorm
