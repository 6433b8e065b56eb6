#pragma once

// Small dense building blocks shared by the trainable models: parameter
// storage, the Adam optimizer, an LSTM layer with hand-written backprop, and
// the versioned JSON envelope used for persistence.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hatenorm/error.hpp"
#include "hatenorm/rng.hpp"

namespace hatenorm::nn {

using Vec = std::vector<double>;

// Row-major matrix parameter with its gradient buffer.
struct Param {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec w;
  Vec g;

  Param() = default;
  Param(std::string n, std::size_t r, std::size_t c)
      : name(std::move(n)), rows(r), cols(c), w(r * c, 0.0), g(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return w[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return w[r * cols + c]; }
  const double* row(std::size_t r) const { return w.data() + r * cols; }
  double* grad_row(std::size_t r) { return g.data() + r * cols; }
  std::size_t size() const { return w.size(); }

  void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }

  void init_uniform(Rng& rng, double scale) {
    for (double& x : w) x = rng.uniform(-scale, scale);
  }
  // Glorot-style uniform initialisation.
  void init_glorot(Rng& rng) { init_uniform(rng, std::sqrt(6.0 / static_cast<double>(rows + cols))); }
};

using ParamRefs = std::vector<Param*>;
using ConstParamRefs = std::vector<const Param*>;

inline ConstParamRefs as_const(const ParamRefs& ps) { return {ps.begin(), ps.end()}; }

inline void zero_grads(const ParamRefs& ps) {
  for (Param* p : ps) p->zero_grad();
}

inline bool all_finite(const ParamRefs& ps) {
  for (const Param* p : ps) {
    for (double x : p->w) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

// Adam with bias correction.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamRefs& ps, double clip_norm = 5.0) {
    if (m_.empty()) {
      for (const Param* p : ps) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    double scale = 1.0;
    if (clip_norm > 0) {
      double sq = 0.0;
      for (const Param* p : ps) {
        for (double x : p->g) sq += x * x;
      }
      const double norm = std::sqrt(sq);
      if (norm > clip_norm) scale = clip_norm / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Param& p = *ps[k];
      Vec& m = m_[k];
      Vec& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.g[i] * scale;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        p.w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

// ---------------------------------------------------------------------------
// Elementwise helpers
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// In-place softmax.
inline void softmax(std::span<double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  double s = 0.0;
  for (double& x : xs) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : xs) x /= s;
}

// y += W x, W is rows x cols.
inline void gemv_acc(const Param& W, const double* x, double* y) {
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double* wr = W.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * x[c];
    y[r] += acc;
  }
}

// dx += W^T dy and dW += dy x^T.
inline void gemv_backward(Param& W, const double* x, const double* dy, double* dx) {
  for (std::size_t r = 0; r < W.rows; ++r) {
    const double d = dy[r];
    if (d == 0.0) continue;
    const double* wr = W.row(r);
    double* gr = W.grad_row(r);
    for (std::size_t c = 0; c < W.cols; ++c) {
      gr[c] += d * x[c];
      if (dx) dx[c] += d * wr[c];
    }
  }
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

// Single-direction LSTM. Gate rows are stacked as [input, forget, cell, output].
class Lstm {
 public:
  Lstm() = default;
  Lstm(std::string prefix, std::size_t input_dim, std::size_t hidden)
      : input_dim_(input_dim),
        hidden_(hidden),
        wx_(prefix + ".wx", 4 * hidden, input_dim),
        wh_(prefix + ".wh", 4 * hidden, hidden),
        b_(prefix + ".b", 4 * hidden, 1) {}

  void init(Rng& rng) {
    wx_.init_glorot(rng);
    wh_.init_glorot(rng);
    std::fill(b_.w.begin(), b_.w.end(), 0.0);
    for (std::size_t j = hidden_; j < 2 * hidden_; ++j) b_.w[j] = 1.0;
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }
  ParamRefs params() { return {&wx_, &wh_, &b_}; }

  // Per-step activations kept for the backward pass.
  struct Cache {
    std::vector<Vec> x;      // inputs
    std::vector<Vec> gates;  // post-activation i, f, g, o
    std::vector<Vec> c;      // cell after each step
    std::vector<Vec> h;      // hidden after each step
    Vec h0, c0;
    bool reverse = false;
  };

  // Runs over `xs`; with `reverse` the sequence is consumed right to left but
  // outputs stay aligned with input positions.
  Cache forward(const std::vector<Vec>& xs, bool reverse = false, const Vec* h0 = nullptr,
                const Vec* c0 = nullptr) const {
    const std::size_t n = xs.size();
    const std::size_t H = hidden_;
    Cache cache;
    cache.reverse = reverse;
    cache.x = xs;
    cache.gates.assign(n, Vec(4 * H));
    cache.c.assign(n, Vec(H));
    cache.h.assign(n, Vec(H));
    cache.h0 = h0 ? *h0 : Vec(H, 0.0);
    cache.c0 = c0 ? *c0 : Vec(H, 0.0);
    const Vec* hp = &cache.h0;
    const Vec* cp = &cache.c0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      Vec& z = cache.gates[t];
      for (std::size_t j = 0; j < 4 * H; ++j) z[j] = b_.w[j];
      gemv_acc(wx_, xs[t].data(), z.data());
      gemv_acc(wh_, hp->data(), z.data());
      for (std::size_t j = 0; j < H; ++j) {
        z[j] = sigmoid(z[j]);
        z[H + j] = sigmoid(z[H + j]);
        z[2 * H + j] = std::tanh(z[2 * H + j]);
        z[3 * H + j] = sigmoid(z[3 * H + j]);
        cache.c[t][j] = z[H + j] * (*cp)[j] + z[j] * z[2 * H + j];
        cache.h[t][j] = z[3 * H + j] * std::tanh(cache.c[t][j]);
      }
      hp = &cache.h[t];
      cp = &cache.c[t];
    }
    return cache;
  }

  // One inference step; updates h and c in place.
  void step(const Vec& x, Vec& h, Vec& c) const {
    const std::size_t H = hidden_;
    Vec z(b_.w);
    gemv_acc(wx_, x.data(), z.data());
    gemv_acc(wh_, h.data(), z.data());
    for (std::size_t j = 0; j < H; ++j) {
      const double i = sigmoid(z[j]), f = sigmoid(z[H + j]), g = std::tanh(z[2 * H + j]),
                   o = sigmoid(z[3 * H + j]);
      c[j] = f * c[j] + i * g;
      h[j] = o * std::tanh(c[j]);
    }
  }

  struct Grads {
    std::vector<Vec> dx;
    Vec dh0, dc0;
  };

  // `dh[t]` is the loss gradient w.r.t. h[t] from everything above the layer.
  Grads backward(const Cache& cache, const std::vector<Vec>& dh) {
    const std::size_t n = cache.h.size();
    const std::size_t H = hidden_;
    Grads out;
    out.dx.assign(n, Vec(input_dim_, 0.0));
    Vec dh_next(H, 0.0), dc_next(H, 0.0), dz(4 * H);
    for (std::size_t s = n; s-- > 0;) {
      const std::size_t t = cache.reverse ? n - 1 - s : s;
      const std::size_t prev = cache.reverse ? t + 1 : t - 1;
      const bool first = (s == 0);
      const Vec& hp = first ? cache.h0 : cache.h[prev];
      const Vec& cp = first ? cache.c0 : cache.c[prev];
      const Vec& z = cache.gates[t];
      for (std::size_t j = 0; j < H; ++j) {
        const double i = z[j], f = z[H + j], g = z[2 * H + j], o = z[3 * H + j];
        const double tc = std::tanh(cache.c[t][j]);
        const double dhj = dh[t][j] + dh_next[j];
        const double dc = dc_next[j] + dhj * o * (1.0 - tc * tc);
        dz[j] = dc * g * i * (1.0 - i);
        dz[H + j] = dc * cp[j] * f * (1.0 - f);
        dz[2 * H + j] = dc * i * (1.0 - g * g);
        dz[3 * H + j] = dhj * tc * o * (1.0 - o);
        dc_next[j] = dc * f;
      }
      for (std::size_t j = 0; j < 4 * H; ++j) b_.g[j] += dz[j];
      gemv_backward(wx_, cache.x[t].data(), dz.data(), out.dx[t].data());
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      gemv_backward(wh_, hp.data(), dz.data(), dh_next.data());
    }
    out.dh0 = dh_next;
    out.dc0 = dc_next;
    return out;
  }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_ = 0;
  Param wx_, wh_, b_;
};

// Forward and backward LSTMs whose states are concatenated per position.
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(const std::string& prefix, std::size_t input_dim, std::size_t hidden)
      : fwd_(prefix + ".fwd", input_dim, hidden), bwd_(prefix + ".bwd", input_dim, hidden) {}

  void init(Rng& rng) {
    fwd_.init(rng);
    bwd_.init(rng);
  }
  std::size_t output_dim() const { return 2 * fwd_.hidden(); }
  std::size_t hidden() const { return fwd_.hidden(); }
  ParamRefs params() {
    ParamRefs a = fwd_.params();
    ParamRefs b = bwd_.params();
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  struct Cache {
    Lstm::Cache f, b;
    std::vector<Vec> out;
  };

  Cache forward(const std::vector<Vec>& xs) const {
    Cache c;
    c.f = fwd_.forward(xs, false);
    c.b = bwd_.forward(xs, true);
    const std::size_t H = fwd_.hidden();
    c.out.assign(xs.size(), Vec(2 * H));
    for (std::size_t t = 0; t < xs.size(); ++t) {
      std::copy(c.f.h[t].begin(), c.f.h[t].end(), c.out[t].begin());
      std::copy(c.b.h[t].begin(), c.b.h[t].end(), c.out[t].begin() + static_cast<long>(H));
    }
    return c;
  }

  std::vector<Vec> backward(const Cache& c, const std::vector<Vec>& dout) {
    const std::size_t H = fwd_.hidden();
    const std::size_t n = dout.size();
    std::vector<Vec> df(n, Vec(H)), db(n, Vec(H));
    for (std::size_t t = 0; t < n; ++t) {
      std::copy(dout[t].begin(), dout[t].begin() + static_cast<long>(H), df[t].begin());
      std::copy(dout[t].begin() + static_cast<long>(H), dout[t].end(), db[t].begin());
    }
    auto gf = fwd_.backward(c.f, df);
    auto gb = bwd_.backward(c.b, db);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < gf.dx[t].size(); ++k) gf.dx[t][k] += gb.dx[t][k];
    }
    return std::move(gf.dx);
  }

 private:
  Lstm fwd_, bwd_;
};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// Token index with reserved leading entries (UNK at 0, then any specials).
class Vocab {
 public:
  static constexpr std::size_t kUnk = 0;

  Vocab() : tokens_{"<unk>"} { index_["<unk>"] = 0; }

  std::size_t add(const std::string& tok) {
    auto it = index_.find(tok);
    if (it != index_.end()) return it->second;
    const std::size_t id = tokens_.size();
    tokens_.push_back(tok);
    index_.emplace(tok, id);
    return id;
  }

  std::size_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& toks) const {
    std::vector<std::size_t> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(id(t));
    return ids;
  }

  static Vocab from_tokens(const std::vector<std::string>& toks) {
    if (toks.empty() || toks[0] != "<unk>") throw ModelFormatError("vocab must start with <unk>");
    Vocab v;
    for (std::size_t i = 1; i < toks.size(); ++i) {
      if (v.add(toks[i]) != i) throw ModelFormatError("duplicate vocab entry " + toks[i]);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Persistence envelope
// ---------------------------------------------------------------------------

inline constexpr int kFormatVersion = 1;

inline nlohmann::json params_to_json(const ConstParamRefs& ps) {
  nlohmann::json shapes = nlohmann::json::object();
  nlohmann::json values = nlohmann::json::object();
  for (const Param* p : ps) {
    shapes[p->name] = {p->rows, p->cols};
    values[p->name] = p->w;
  }
  return {{"shapes", shapes}, {"params", values}};
}

// Fills `ps` from an envelope, checking every shape.
inline void params_from_json(const nlohmann::json& j, const ParamRefs& ps) {
  if (!j.contains("shapes") || !j.contains("params")) {
    throw ModelFormatError("model document lacks shapes/params");
  }
  const auto& shapes = j.at("shapes");
  const auto& values = j.at("params");
  for (Param* p : ps) {
    if (!shapes.contains(p->name) || !values.contains(p->name)) {
      throw ModelFormatError("missing parameter " + p->name);
    }
    const auto shape = shapes.at(p->name).get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p->rows || shape[1] != p->cols) {
      throw ModelFormatError("shape mismatch for " + p->name);
    }
    auto w = values.at(p->name).get<Vec>();
    if (w.size() != p->size()) throw ModelFormatError("size mismatch for " + p->name);
    for (double x : w) {
      if (!std::isfinite(x)) throw ModelFormatError("non-finite value in " + p->name);
    }
    p->w = std::move(w);
  }
}

inline void check_envelope(const nlohmann::json& j, const std::string& kind) {
  if (!j.is_object() || !j.contains("format_version") || !j.contains("kind")) {
    throw ModelFormatError("not a model document");
  }
  if (j.at("format_version").get<int>() != kFormatVersion) {
    throw ModelFormatError("unsupported format_version");
  }
  if (j.at("kind").get<std::string>() != kind) {
    throw ModelFormatError("expected kind '" + kind + "', got '" + j.at("kind").get<std::string>() +
                           "'");
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  std::string param;
  double rel_error = 0.0;
};

// Compares analytic gradients (already in each Param::g) against central
// differences of `loss`. Returns the per-parameter relative error
// ||g - g_fd|| / max(||g||, ||g_fd||, 1e-8); the floor keeps groups whose
// true gradient is zero from reporting pure round-off as relative error.
inline std::vector<GradCheckResult> check_gradients(const ParamRefs& ps,
                                                    const std::function<double()>& loss,
                                                    double eps = 1e-5) {
  std::vector<GradCheckResult> out;
  for (Param* p : ps) {
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = p->w[i];
      p->w[i] = keep + eps;
      const double lp = loss();
      p->w[i] = keep - eps;
      const double lm = loss();
      p->w[i] = keep;
      const double fd = (lp - lm) / (2 * eps);
      diff += (fd - p->g[i]) * (fd - p->g[i]);
      na += p->g[i] * p->g[i];
      nf += fd * fd;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
    out.push_back({p->name, std::sqrt(diff) / denom});
  }
  return out;
}

}  // namespace hatenorm::nn
