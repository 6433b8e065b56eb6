#pragma once

// Hate intensity prediction: embedding -> BiLSTM -> additive self-attention
// pooling -> linear head. Trained unclamped on MSE, clamped to [1, 10] at
// inference.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/rng.hpp"

namespace hatenorm {

struct HipTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::size_t hidden = 32;
  std::size_t embedding_dim = 32;
  std::size_t attention_dim = 32;
  std::uint64_t seed = 7;
  // Also fit (normalized_text, normalized_intensity) pairs when present.
  bool include_normalized = true;
  // Probability of replacing a training token by <unk>, so the unknown-word
  // embedding is trained.
  double unk_dropout = 0.02;
  bool verbose = false;

  void validate() const {
    if (!epochs || !batch_size || !hidden || !embedding_dim || !attention_dim ||
        !(learning_rate > 0)) {
      throw ValidationError("hip", "all training hyperparameters must be positive");
    }
  }
};

struct RegressionMetrics {
  double rmse = 0.0;
  double pearson = 0.0;
  double cosine = 0.0;
};

class IntensityModel {
 public:
  IntensityModel() = default;
  IntensityModel(nn::Vocab vocab, std::size_t embedding_dim, std::size_t hidden,
                 std::size_t attention_dim)
      : vocab_(std::move(vocab)),
        emb_("hip.embedding", vocab_.size(), embedding_dim),
        encoder_("hip.encoder", embedding_dim, hidden),
        att_w_("hip.attention.w", attention_dim, 2 * hidden),
        att_v_("hip.attention.v", attention_dim, 1),
        head_w_("hip.head.w", 1, 2 * hidden),
        head_b_("hip.head.b", 1, 1) {}

  void init(Rng& rng, double bias = 0.0) {
    emb_.init_uniform(rng, 0.1);
    encoder_.init(rng);
    att_w_.init_glorot(rng);
    att_v_.init_glorot(rng);
    head_w_.init_glorot(rng);
    head_b_.w[0] = bias;
  }

  const nn::Vocab& vocab() const { return vocab_; }
  std::size_t embedding_dim() const { return emb_.cols; }
  std::size_t hidden() const { return encoder_.hidden(); }
  std::size_t attention_dim() const { return att_w_.rows; }

  nn::ParamRefs params() {
    nn::ParamRefs ps{&emb_};
    auto enc = encoder_.params();
    ps.insert(ps.end(), enc.begin(), enc.end());
    ps.insert(ps.end(), {&att_w_, &att_v_, &head_w_, &head_b_});
    return ps;
  }
  nn::ConstParamRefs params() const { return nn::as_const(const_cast<IntensityModel*>(this)->params()); }

  struct Trace {
    std::vector<std::size_t> ids;
    nn::BiLstm::Cache enc;
    std::vector<nn::Vec> u;  // tanh(W h_i)
    nn::Vec alpha;           // attention weights
    nn::Vec pooled;
    double raw = 0.0;        // unclamped output
  };

  Trace forward_ids(std::vector<std::size_t> ids) const {
    if (ids.empty()) throw EmptyInputError("intensity prediction needs at least one token");
    Trace tr;
    tr.ids = std::move(ids);
    std::vector<nn::Vec> xs;
    xs.reserve(tr.ids.size());
    for (std::size_t id : tr.ids) xs.emplace_back(emb_.row(id), emb_.row(id) + emb_.cols);
    tr.enc = encoder_.forward(xs);
    const std::size_t n = tr.ids.size();
    const std::size_t A = att_w_.rows, D = encoder_.output_dim();
    tr.u.assign(n, nn::Vec(A, 0.0));
    tr.alpha.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      nn::gemv_acc(att_w_, tr.enc.out[t].data(), tr.u[t].data());
      for (double& x : tr.u[t]) x = std::tanh(x);
      tr.alpha[t] = nn::dot(att_v_.w.data(), tr.u[t].data(), A);
    }
    nn::softmax(tr.alpha);
    tr.pooled.assign(D, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < D; ++k) tr.pooled[k] += tr.alpha[t] * tr.enc.out[t][k];
    }
    tr.raw = nn::dot(head_w_.w.data(), tr.pooled.data(), D) + head_b_.w[0];
    return tr;
  }

  Trace forward(const std::vector<std::string>& tokens) const {
    return forward_ids(vocab_.encode(tokens));
  }

  // Accumulates parameter gradients given dLoss/d(raw output).
  void backward(const Trace& tr, double d_raw) {
    const std::size_t n = tr.ids.size();
    const std::size_t A = att_w_.rows, D = encoder_.output_dim();
    head_b_.g[0] += d_raw;
    nn::Vec d_pooled(D);
    for (std::size_t k = 0; k < D; ++k) {
      head_w_.g[k] += d_raw * tr.pooled[k];
      d_pooled[k] = d_raw * head_w_.w[k];
    }
    std::vector<nn::Vec> d_h(n, nn::Vec(D, 0.0));
    nn::Vec d_alpha(n);
    double weighted = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      d_alpha[t] = nn::dot(d_pooled.data(), tr.enc.out[t].data(), D);
      weighted += tr.alpha[t] * d_alpha[t];
      for (std::size_t k = 0; k < D; ++k) d_h[t][k] = tr.alpha[t] * d_pooled[k];
    }
    nn::Vec d_z(A);
    for (std::size_t t = 0; t < n; ++t) {
      const double d_score = tr.alpha[t] * (d_alpha[t] - weighted);
      for (std::size_t a = 0; a < A; ++a) {
        att_v_.g[a] += d_score * tr.u[t][a];
        d_z[a] = d_score * att_v_.w[a] * (1.0 - tr.u[t][a] * tr.u[t][a]);
      }
      nn::gemv_backward(att_w_, tr.enc.out[t].data(), d_z.data(), d_h[t].data());
    }
    const auto d_x = encoder_.backward(tr.enc, d_h);
    for (std::size_t t = 0; t < n; ++t) {
      double* g = emb_.grad_row(tr.ids[t]);
      for (std::size_t k = 0; k < emb_.cols; ++k) g[k] += d_x[t][k];
    }
  }

  double predict_raw(const std::vector<std::string>& tokens) const { return forward(tokens).raw; }

  double predict(const std::vector<std::string>& tokens) const {
    return std::clamp(predict_raw(tokens), kMinIntensity, kMaxIntensity);
  }

  nn::Vec attention(const std::vector<std::string>& tokens) const { return forward(tokens).alpha; }

  nlohmann::json to_json() const {
    nlohmann::json j = nn::params_to_json(params());
    j["format_version"] = nn::kFormatVersion;
    j["kind"] = "hip";
    j["vocab"] = vocab_.tokens();
    j["dims"] = {{"embedding", embedding_dim()}, {"hidden", hidden()}, {"attention", attention_dim()}};
    return j;
  }

  static IntensityModel from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "hip");
    const auto& dims = j.at("dims");
    IntensityModel m(nn::Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>()),
                     dims.at("embedding").get<std::size_t>(), dims.at("hidden").get<std::size_t>(),
                     dims.at("attention").get<std::size_t>());
    nn::params_from_json(j, m.params());
    return m;
  }

 private:
  nn::Vocab vocab_;
  nn::Param emb_;
  nn::BiLstm encoder_;
  nn::Param att_w_, att_v_, head_w_, head_b_;
};

struct IntensityExample {
  std::vector<std::size_t> ids;
  double target = 0.0;
};

// Mean squared error over the batch; gradients accumulate into the model.
inline double hip_loss_and_grad(IntensityModel& model, const std::vector<IntensityExample>& batch) {
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const auto tr = model.forward_ids(ex.ids);
    const double err = tr.raw - ex.target;
    loss += err * err * scale;
    model.backward(tr, 2.0 * err * scale);
  }
  return loss;
}

inline double hip_loss(const IntensityModel& model, const std::vector<IntensityExample>& batch) {
  double loss = 0.0;
  for (const auto& ex : batch) {
    const double err = model.forward_ids(ex.ids).raw - ex.target;
    loss += err * err;
  }
  return loss / static_cast<double>(batch.size());
}

namespace detail {

inline std::vector<IntensityExample> intensity_examples(const Corpus& corpus, const nn::Vocab& vocab,
                                                        bool include_normalized) {
  std::vector<IntensityExample> out;
  for (const Sample& s : corpus.samples()) {
    if (!s.tokens.empty()) out.push_back({vocab.encode(s.tokens), s.intensity});
    if (include_normalized && s.normalized_text && s.normalized_intensity) {
      auto toks = s.normalized_tokens();
      if (!toks.empty()) out.push_back({vocab.encode(toks), *s.normalized_intensity});
    }
  }
  return out;
}

}  // namespace detail

inline double hip_predict(const IntensityModel& model, const std::vector<std::string>& tokens) {
  return model.predict(tokens);
}

// Adam on MSE; returns the epoch snapshot with the lowest validation MSE.
inline IntensityModel hip_train(const Corpus& train, const Corpus& val, const HipTrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw EmptyInputError("HIP training corpus is empty");

  nn::Vocab vocab;
  for (const Sample& s : train.samples()) {
    for (const auto& t : s.tokens) vocab.add(t);
    if (cfg.include_normalized && s.normalized_text) {
      for (const auto& t : s.normalized_tokens()) vocab.add(t);
    }
  }
  auto train_set = detail::intensity_examples(train, vocab, cfg.include_normalized);
  auto val_set = detail::intensity_examples(val, vocab, false);
  if (train_set.empty()) throw EmptyInputError("HIP training corpus has no tokens");

  double mean = 0.0;
  for (const auto& ex : train_set) mean += ex.target;
  mean /= static_cast<double>(train_set.size());

  Rng rng(cfg.seed);
  IntensityModel model(std::move(vocab), cfg.embedding_dim, cfg.hidden, cfg.attention_dim);
  model.init(rng, mean);
  const auto params = model.params();
  nn::Adam adam(cfg.learning_rate);

  const auto& select_set = val_set.empty() ? train_set : val_set;
  IntensityModel best = model;
  double best_loss = hip_loss(model, select_set);

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<IntensityExample> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        IntensityExample ex = train_set[order[k]];
        if (cfg.unk_dropout > 0) {
          for (auto& id : ex.ids) {
            if (rng.uniform() < cfg.unk_dropout) id = nn::Vocab::kUnk;
          }
        }
        batch.push_back(std::move(ex));
      }
      nn::zero_grads(params);
      const double loss = hip_loss_and_grad(model, batch);
      if (!std::isfinite(loss)) throw DivergedTrainingError("HIP loss became non-finite");
      epoch_loss += loss * static_cast<double>(batch.size());
      adam.step(params);
    }
    if (!nn::all_finite(params)) throw DivergedTrainingError("HIP parameters became non-finite");
    const double sel = hip_loss(model, select_set);
    if (cfg.verbose) {
      std::fprintf(stderr, "[hip] epoch %zu train_mse %.4f val_mse %.4f\n", epoch + 1,
                   epoch_loss / static_cast<double>(order.size()), sel);
    }
    if (sel < best_loss) {
      best_loss = sel;
      best = model;
    }
  }
  return best;
}

inline RegressionMetrics hip_metrics(const std::vector<double>& pred, const std::vector<double>& gold) {
  if (pred.size() != gold.size() || pred.empty()) {
    throw ValidationError("hip_metrics", "prediction and gold vectors must have equal nonzero length");
  }
  const std::size_t n = pred.size();
  double se = 0.0, mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    se += (pred[i] - gold[i]) * (pred[i] - gold[i]);
    mp += pred[i];
    mg += gold[i];
  }
  mp /= static_cast<double>(n);
  mg /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0, dot = 0.0, np = 0.0, ng = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (pred[i] - mp) * (gold[i] - mg);
    sxx += (pred[i] - mp) * (pred[i] - mp);
    syy += (gold[i] - mg) * (gold[i] - mg);
    dot += pred[i] * gold[i];
    np += pred[i] * pred[i];
    ng += gold[i] * gold[i];
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("Pearson correlation undefined: zero variance");
  if (np == 0.0 || ng == 0.0) throw UndefinedMetricError("cosine similarity undefined: zero norm");
  RegressionMetrics m;
  m.rmse = std::sqrt(se / static_cast<double>(n));
  m.pearson = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  m.cosine = std::clamp(dot / std::sqrt(np * ng), -1.0, 1.0);
  return m;
}

}  // namespace hatenorm
