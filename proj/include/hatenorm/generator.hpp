#pragma once

// Neural span rewriter. The encoder reads the whole sentence with a learned
// marker added to the tokens of the span being rewritten; the decoder starts
// from the mean encoder state over that span and attends over all encoder
// states, emitting only the replacement tokens.
//
// Training is teacher-forced cross-entropy against aligned gold replacements,
// combined with a discriminator reward R = tau - HIP(t') computed on the
// generator's own greedy rewrite t'.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/bleu.hpp"
#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/intensity.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/rng.hpp"
#include "hatenorm/splice.hpp"

namespace hatenorm {

enum class RewardMode {
  kLiteral,   // L = l + (1 - R); R is constant w.r.t. parameters
  kWeighted,  // L = l * (1 + softplus(-R))
};

inline const char* to_string(RewardMode m) { return m == RewardMode::kLiteral ? "literal" : "weighted"; }

inline RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "literal") return RewardMode::kLiteral;
  if (s == "weighted") return RewardMode::kWeighted;
  throw ValidationError("reward_mode", "unknown reward mode '" + s + "'");
}

inline double consolidated_loss(double ell, double r, RewardMode mode) {
  return mode == RewardMode::kLiteral ? ell + (1.0 - r) : ell * (1.0 + nn::softplus(-r));
}

// d(consolidated loss)/d(ell).
inline double reward_gradient_factor(double r, RewardMode mode) {
  return mode == RewardMode::kLiteral ? 1.0 : 1.0 + nn::softplus(-r);
}

struct HirTrainConfig {
  double tau = 5.0;
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  double learning_rate = 5e-3;
  std::size_t max_decode_len = 8;
  std::size_t beam_size = 3;
  RewardMode reward_mode = RewardMode::kWeighted;
  std::uint64_t seed = 23;
  std::size_t hidden = 32;
  std::size_t embedding_dim = 32;
  // Validation samples scored for snapshot selection (0 = all).
  std::size_t val_limit = 200;
  bool verbose = false;

  void validate() const {
    if (!(tau > 1.0 && tau < 10.0)) throw ValidationError("tau", "must lie in (1, 10)");
    if (beam_size < 1) throw ValidationError("beam_size", "must be >= 1");
    if (!epochs || !batch_size || !hidden || !embedding_dim || !max_decode_len || !(learning_rate > 0)) {
      throw ValidationError("hir", "all training hyperparameters must be positive");
    }
  }
};

class GeneratorModel {
 public:
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  GeneratorModel() = default;

  // `vocab` must already hold <bos> and <eos> at ids 1 and 2; see make_vocab().
  GeneratorModel(nn::Vocab vocab, std::size_t embedding_dim, std::size_t hidden)
      : vocab_(std::move(vocab)),
        emb_("hir.embedding", vocab_.size(), embedding_dim),
        marker_("hir.marker", 2, embedding_dim),
        encoder_("hir.encoder", embedding_dim, hidden),
        decoder_("hir.decoder", embedding_dim, 2 * hidden),
        att_("hir.attention", 2 * hidden, 2 * hidden),
        comb_w_("hir.combine.w", 2 * hidden, 4 * hidden),
        comb_b_("hir.combine.b", 2 * hidden, 1),
        out_w_("hir.out.w", vocab_.size(), 2 * hidden),
        out_b_("hir.out.b", vocab_.size(), 1) {
    if (vocab_.size() < 3 || vocab_.token(kBos) != "<bos>" || vocab_.token(kEos) != "<eos>") {
      throw ModelFormatError("generator vocab must start with <unk>, <bos>, <eos>");
    }
  }

  static nn::Vocab make_vocab() {
    nn::Vocab v;
    v.add("<bos>");
    v.add("<eos>");
    return v;
  }

  void init(Rng& rng) {
    emb_.init_uniform(rng, 0.1);
    marker_.init_uniform(rng, 0.5);
    encoder_.init(rng);
    decoder_.init(rng);
    att_.init_glorot(rng);
    comb_w_.init_glorot(rng);
    out_w_.init_glorot(rng);
    std::fill(comb_b_.w.begin(), comb_b_.w.end(), 0.0);
    std::fill(out_b_.w.begin(), out_b_.w.end(), 0.0);
  }

  const nn::Vocab& vocab() const { return vocab_; }
  std::size_t hidden() const { return encoder_.hidden(); }
  std::size_t embedding_dim() const { return emb_.cols; }

  nn::ParamRefs params() {
    nn::ParamRefs ps{&emb_, &marker_};
    for (auto* p : encoder_.params()) ps.push_back(p);
    for (auto* p : decoder_.params()) ps.push_back(p);
    ps.insert(ps.end(), {&att_, &comb_w_, &comb_b_, &out_w_, &out_b_});
    return ps;
  }
  nn::ConstParamRefs params() const { return nn::as_const(const_cast<GeneratorModel*>(this)->params()); }

  struct Encoded {
    std::vector<std::size_t> ids;
    Span span;
    nn::BiLstm::Cache enc;
    std::vector<nn::Vec> keys;  // attention W e_t
    nn::Vec h0;
  };

  Encoded encode(const std::vector<std::size_t>& ids, const Span& span) const {
    if (ids.empty()) throw EmptyInputError("generator input must not be empty");
    validate_spans(ids.size(), {span});
    Encoded e;
    e.ids = ids;
    e.span = span;
    const std::size_t d = emb_.cols;
    std::vector<nn::Vec> xs(ids.size(), nn::Vec(d));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      const double* m = marker_.row(t >= span.start && t <= span.end ? 1 : 0);
      const double* x = emb_.row(ids[t]);
      for (std::size_t k = 0; k < d; ++k) xs[t][k] = x[k] + m[k];
    }
    e.enc = encoder_.forward(xs);
    const std::size_t D = encoder_.output_dim();
    e.keys.assign(ids.size(), nn::Vec(D, 0.0));
    for (std::size_t t = 0; t < ids.size(); ++t) nn::gemv_acc(att_, e.enc.out[t].data(), e.keys[t].data());
    e.h0.assign(D, 0.0);
    const double inv = 1.0 / static_cast<double>(span.length());
    for (std::size_t t = span.start; t <= span.end; ++t) {
      for (std::size_t k = 0; k < D; ++k) e.h0[k] += inv * e.enc.out[t][k];
    }
    return e;
  }

  // Output-side activations of one decoder step.
  struct StepOut {
    nn::Vec alpha, context, combined, probs;
  };

  StepOut output_step(const Encoded& e, const nn::Vec& s) const {
    const std::size_t n = e.ids.size(), D = encoder_.output_dim();
    StepOut o;
    o.alpha.resize(n);
    for (std::size_t t = 0; t < n; ++t) o.alpha[t] = nn::dot(s.data(), e.keys[t].data(), D);
    nn::softmax(o.alpha);
    o.context.assign(D, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < D; ++k) o.context[k] += o.alpha[t] * e.enc.out[t][k];
    }
    nn::Vec sc(2 * D);
    std::copy(s.begin(), s.end(), sc.begin());
    std::copy(o.context.begin(), o.context.end(), sc.begin() + static_cast<long>(D));
    o.combined = comb_b_.w;
    nn::gemv_acc(comb_w_, sc.data(), o.combined.data());
    for (double& x : o.combined) x = std::tanh(x);
    o.probs = out_b_.w;
    nn::gemv_acc(out_w_, o.combined.data(), o.probs.data());
    nn::softmax(o.probs);
    return o;
  }

  // Summed cross-entropy of `target` (+ EOS) given the span; gradients of
  // `scale` times that sum accumulate into the model.
  double span_loss_and_grad(const std::vector<std::size_t>& ids, const Span& span,
                            const std::vector<std::size_t>& target, double scale) {
    const Encoded e = encode(ids, span);
    const std::size_t n = ids.size(), D = encoder_.output_dim();
    const std::size_t steps = target.size() + 1;
    std::vector<nn::Vec> xs(steps);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t in = k == 0 ? kBos : target[k - 1];
      xs[k].assign(emb_.row(in), emb_.row(in) + emb_.cols);
    }
    const auto dec = decoder_.forward(xs, false, &e.h0, nullptr);

    double loss = 0.0;
    std::vector<nn::Vec> d_enc(n, nn::Vec(D, 0.0));
    std::vector<nn::Vec> d_keys(n, nn::Vec(D, 0.0));
    std::vector<nn::Vec> d_dec(steps, nn::Vec(D, 0.0));
    nn::Vec sc(2 * D), d_sc(2 * D), d_comb(D), d_alpha(n);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t gold = k < target.size() ? target[k] : kEos;
      const nn::Vec& s = dec.h[k];
      const StepOut o = output_step(e, s);
      loss -= std::log(std::max(o.probs[gold], std::numeric_limits<double>::min()));

      nn::Vec d_logits = o.probs;
      d_logits[gold] -= 1.0;
      for (double& x : d_logits) x *= scale;
      for (std::size_t v = 0; v < d_logits.size(); ++v) out_b_.g[v] += d_logits[v];
      std::fill(d_comb.begin(), d_comb.end(), 0.0);
      nn::gemv_backward(out_w_, o.combined.data(), d_logits.data(), d_comb.data());
      for (std::size_t j = 0; j < D; ++j) d_comb[j] *= 1.0 - o.combined[j] * o.combined[j];
      for (std::size_t j = 0; j < D; ++j) comb_b_.g[j] += d_comb[j];
      std::copy(s.begin(), s.end(), sc.begin());
      std::copy(o.context.begin(), o.context.end(), sc.begin() + static_cast<long>(D));
      std::fill(d_sc.begin(), d_sc.end(), 0.0);
      nn::gemv_backward(comb_w_, sc.data(), d_comb.data(), d_sc.data());

      // d_sc = [d s ; d context]
      for (std::size_t j = 0; j < D; ++j) d_dec[k][j] += d_sc[j];
      const double* d_ctx = d_sc.data() + D;
      double weighted = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        d_alpha[t] = nn::dot(d_ctx, e.enc.out[t].data(), D);
        weighted += o.alpha[t] * d_alpha[t];
        for (std::size_t j = 0; j < D; ++j) d_enc[t][j] += o.alpha[t] * d_ctx[j];
      }
      for (std::size_t t = 0; t < n; ++t) {
        const double d_score = o.alpha[t] * (d_alpha[t] - weighted);
        for (std::size_t j = 0; j < D; ++j) {
          d_dec[k][j] += d_score * e.keys[t][j];
          d_keys[t][j] += d_score * s[j];
        }
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      nn::gemv_backward(att_, e.enc.out[t].data(), d_keys[t].data(), d_enc[t].data());
    }
    const auto dg = decoder_.backward(dec, d_dec);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t in = k == 0 ? kBos : target[k - 1];
      double* g = emb_.grad_row(in);
      for (std::size_t j = 0; j < emb_.cols; ++j) g[j] += dg.dx[k][j];
    }
    const double inv = 1.0 / static_cast<double>(span.length());
    for (std::size_t t = span.start; t <= span.end; ++t) {
      for (std::size_t j = 0; j < D; ++j) d_enc[t][j] += inv * dg.dh0[j];
    }
    const auto dx = encoder_.backward(e.enc, d_enc);
    for (std::size_t t = 0; t < n; ++t) {
      double* g = emb_.grad_row(ids[t]);
      double* gm = marker_.grad_row(t >= span.start && t <= span.end ? 1 : 0);
      for (std::size_t j = 0; j < emb_.cols; ++j) {
        g[j] += dx[t][j];
        gm[j] += dx[t][j];
      }
    }
    return loss;
  }

  double span_loss(const std::vector<std::size_t>& ids, const Span& span,
                   const std::vector<std::size_t>& target) const {
    const Encoded e = encode(ids, span);
    nn::Vec h = e.h0, c(h.size(), 0.0);
    double loss = 0.0;
    std::size_t in = kBos;
    for (std::size_t k = 0; k <= target.size(); ++k) {
      decoder_.step(embedding(in), h, c);
      const std::size_t gold = k < target.size() ? target[k] : kEos;
      loss -= std::log(std::max(output_step(e, h).probs[gold], std::numeric_limits<double>::min()));
      if (k < target.size()) in = target[k];
    }
    return loss;
  }

  // Next-token distribution after consuming `prefix` (without BOS).
  nn::Vec next_distribution(const std::vector<std::string>& tokens, const Span& span,
                            const std::vector<std::string>& prefix) const {
    const Encoded e = encode(vocab_.encode(tokens), span);
    nn::Vec h = e.h0, c(h.size(), 0.0);
    decoder_.step(embedding(kBos), h, c);
    for (const auto& p : prefix) decoder_.step(embedding(vocab_.id(p)), h, c);
    return output_step(e, h).probs;
  }

  Tokens greedy(const Tokens& tokens, const Span& span, std::size_t max_len) const {
    const Encoded e = encode(vocab_.encode(tokens), span);
    nn::Vec h = e.h0, c(h.size(), 0.0);
    Tokens out;
    std::size_t in = kBos;
    for (std::size_t k = 0; k < max_len; ++k) {
      decoder_.step(embedding(in), h, c);
      const auto probs = output_step(e, h).probs;
      const std::size_t best =
          static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      if (best == kEos) break;
      out.push_back(vocab_.token(best));
      in = best;
    }
    return out;
  }

  // Up to `k` hypotheses, best log-probability first.
  std::vector<Tokens> beam(const Tokens& tokens, const Span& span, std::size_t k, std::size_t max_len) const {
    const Encoded e = encode(vocab_.encode(tokens), span);
    struct Hyp {
      std::vector<std::size_t> toks;
      double logp = 0.0;
      nn::Vec h, c;
      bool done = false;
    };
    std::vector<Hyp> beams{{{}, 0.0, e.h0, nn::Vec(e.h0.size(), 0.0), false}};
    auto better = [](const Hyp& a, const Hyp& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      return a.toks < b.toks;
    };
    for (std::size_t step = 0; step < max_len; ++step) {
      std::vector<Hyp> cand;
      for (const Hyp& b : beams) {
        if (b.done) {
          cand.push_back(b);
          continue;
        }
        Hyp base = b;
        decoder_.step(embedding(b.toks.empty() ? kBos : b.toks.back()), base.h, base.c);
        const auto probs = output_step(e, base.h).probs;
        std::vector<std::size_t> order(probs.size());
        for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
        const std::size_t top = std::min(k, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<long>(top), order.end(),
                          [&](std::size_t a, std::size_t b2) {
                            return probs[a] != probs[b2] ? probs[a] > probs[b2] : a < b2;
                          });
        for (std::size_t r = 0; r < top; ++r) {
          Hyp nh = base;
          nh.logp += std::log(std::max(probs[order[r]], std::numeric_limits<double>::min()));
          if (order[r] == kEos) {
            nh.done = true;
          } else {
            nh.toks.push_back(order[r]);
          }
          cand.push_back(std::move(nh));
        }
      }
      std::stable_sort(cand.begin(), cand.end(), better);
      if (cand.size() > k) cand.resize(k);
      beams = std::move(cand);
      if (std::all_of(beams.begin(), beams.end(), [](const Hyp& b) { return b.done; })) break;
    }
    std::vector<Tokens> out;
    for (const Hyp& b : beams) {
      Tokens t;
      for (std::size_t id : b.toks) t.push_back(vocab_.token(id));
      out.push_back(std::move(t));
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nn::params_to_json(params());
    j["format_version"] = nn::kFormatVersion;
    j["kind"] = "hir";
    j["engine"] = "neural";
    j["vocab"] = vocab_.tokens();
    j["dims"] = {{"embedding", embedding_dim()}, {"hidden", hidden()}};
    return j;
  }

  static GeneratorModel from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "hir");
    if (j.at("engine").get<std::string>() != "neural") throw ModelFormatError("not a neural engine");
    const auto& dims = j.at("dims");
    GeneratorModel m(nn::Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>()),
                     dims.at("embedding").get<std::size_t>(), dims.at("hidden").get<std::size_t>());
    nn::params_from_json(j, m.params());
    return m;
  }

 private:
  nn::Vec embedding(std::size_t id) const { return nn::Vec(emb_.row(id), emb_.row(id) + emb_.cols); }

  nn::Vocab vocab_;
  nn::Param emb_, marker_;
  nn::BiLstm encoder_;
  nn::Lstm decoder_;
  nn::Param att_, comb_w_, comb_b_, out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GenExample {
  Tokens tokens;
  std::vector<Span> spans;
  std::vector<Tokens> replacements;
  Tokens reference;
};

struct GenEpochStats {
  double mean_ell = 0.0;
  double mean_loss = 0.0;  // consolidated
  double mean_reward = 0.0;
  double val_bleu = 0.0;
};

namespace detail {

inline std::vector<GenExample> generator_examples(const Corpus& corpus, bool require_normalized) {
  std::vector<GenExample> out;
  for (const Sample& s : corpus.samples()) {
    if (s.spans.empty()) continue;
    if (!s.normalized_text) {
      if (require_normalized) {
        throw ValidationError("normalized_text", "sample " + s.id + " has spans but no gold normalized text");
      }
      continue;
    }
    const Tokens ref = s.normalized_tokens();
    auto aligned = align_replacements(s.tokens, s.spans, ref);
    if (!aligned) continue;
    out.push_back({s.tokens, s.spans, std::move(*aligned), ref});
  }
  return out;
}

}  // namespace detail

inline Tokens generate_rewrite(const GeneratorModel& model, const Tokens& tokens,
                               const std::vector<Span>& spans, std::size_t max_len) {
  std::vector<Tokens> repl;
  repl.reserve(spans.size());
  for (const Span& sp : spans) repl.push_back(model.greedy(tokens, sp, max_len));
  return splice(tokens, spans, repl);
}

// Consolidated loss and its gradient for one sample under a fixed reward.
// Returns {ell, consolidated}; ell is mean cross-entropy per target token.
inline std::pair<double, double> generator_sample_loss_and_grad(GeneratorModel& model, const GenExample& ex,
                                                                 double r, RewardMode mode, double scale) {
  const auto ids = model.vocab().encode(ex.tokens);
  std::size_t n_targets = 0;
  for (const auto& rep : ex.replacements) n_targets += rep.size() + 1;
  const double per_token = 1.0 / static_cast<double>(n_targets);
  const double factor = reward_gradient_factor(r, mode);
  double ce = 0.0;
  for (std::size_t k = 0; k < ex.spans.size(); ++k) {
    ce += model.span_loss_and_grad(ids, ex.spans[k], model.vocab().encode(ex.replacements[k]),
                                   scale * factor * per_token);
  }
  const double ell = ce * per_token;
  return {ell, consolidated_loss(ell, r, mode)};
}

inline GeneratorModel gen_train(const Corpus& train, const Corpus& val, const IntensityModel& hip,
                                const HirTrainConfig& cfg, std::vector<GenEpochStats>* log = nullptr) {
  cfg.validate();
  auto data = detail::generator_examples(train, true);
  if (data.empty()) throw EmptyInputError("no alignable samples with spans for generator training");
  auto val_data = detail::generator_examples(val, false);
  if (cfg.val_limit && val_data.size() > cfg.val_limit) val_data.resize(cfg.val_limit);

  nn::Vocab vocab = GeneratorModel::make_vocab();
  for (const auto& ex : data) {
    for (const auto& t : ex.tokens) vocab.add(t);
    for (const auto& t : ex.reference) vocab.add(t);
  }
  Rng rng(cfg.seed);
  GeneratorModel model(std::move(vocab), cfg.embedding_dim, cfg.hidden);
  model.init(rng);
  const auto params = model.params();
  nn::Adam adam(cfg.learning_rate);

  auto score_val = [&]() {
    const auto& set = val_data.empty() ? data : val_data;
    std::vector<Tokens> hyps, refs;
    for (const auto& ex : set) {
      hyps.push_back(generate_rewrite(model, ex.tokens, ex.spans, cfg.max_decode_len));
      refs.push_back(ex.reference);
    }
    return bleu(hyps, refs);
  };

  GeneratorModel best = model;
  double best_bleu = -1.0;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    GenEpochStats st;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(e - b);
      nn::zero_grads(params);
      for (std::size_t k = b; k < e; ++k) {
        const GenExample& ex = data[order[k]];
        // Reward from the current generator's own rewrite.
        const Tokens rewritten = generate_rewrite(model, ex.tokens, ex.spans, cfg.max_decode_len);
        const double phi = rewritten.empty() ? kMinIntensity : hip.predict(rewritten);
        const double r = reward(cfg.tau, phi);
        const auto [ell, total] = generator_sample_loss_and_grad(model, ex, r, cfg.reward_mode, scale);
        if (!std::isfinite(total)) throw DivergedTrainingError("generator loss became non-finite");
        st.mean_ell += ell;
        st.mean_loss += total;
        st.mean_reward += r;
      }
      adam.step(params);
    }
    if (!nn::all_finite(params)) throw DivergedTrainingError("generator parameters became non-finite");
    const double denom = static_cast<double>(data.size());
    st.mean_ell /= denom;
    st.mean_loss /= denom;
    st.mean_reward /= denom;
    st.val_bleu = score_val();
    if (cfg.verbose) {
      std::fprintf(stderr, "[hir] epoch %zu ell %.4f L %.4f R %.3f val_bleu %.2f\n", epoch + 1, st.mean_ell,
                   st.mean_loss, st.mean_reward, st.val_bleu);
    }
    if (log) log->push_back(st);
    if (st.val_bleu > best_bleu) {
      best_bleu = st.val_bleu;
      best = model;
    }
  }
  return best;
}

}  // namespace hatenorm
