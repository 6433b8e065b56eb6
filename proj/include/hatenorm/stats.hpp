#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hatenorm/error.hpp"

namespace hatenorm {

namespace detail {

// Continued fraction for I_x(a, b) (modified Lentz), valid for
// x < (a + 1) / (a + b + 2).
inline double betacf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw ValidationError("incomplete_beta", "a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete_beta", "x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// P(T <= t) for Student's t with `dof` degrees of freedom.
inline double student_t_cdf(double t, double dof) {
  if (!(dof > 0)) throw ValidationError("dof", "must be positive");
  if (t == 0.0) return 0.5;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

// Two-sided p-value for |T| >= |t|.
inline double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0)) throw ValidationError("dof", "must be positive");
  if (t == 0.0) return 1.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  double effect_size = 0.0;  // Cohen's d, pooled SD
};

struct SampleMoments {
  double n = 0.0, mean = 0.0, var = 0.0;
};

inline SampleMoments sample_moments(const std::vector<double>& xs) {
  SampleMoments m;
  m.n = static_cast<double>(xs.size());
  for (double x : xs) m.mean += x;
  m.mean /= m.n;
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= m.n - 1.0;
  return m;
}

inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("welch", "each sample needs at least two values");
  for (const auto* s : {&a, &b}) {
    for (double x : *s) {
      if (!std::isfinite(x)) throw ValidationError("welch", "samples must be finite");
    }
  }
  const SampleMoments ma = sample_moments(a), mb = sample_moments(b);
  if (ma.var == 0.0 && mb.var == 0.0) {
    throw UndefinedMetricError("welch: both samples have zero variance");
  }
  const double sa = ma.var / ma.n, sb = mb.var / mb.n;
  const double diff = ma.mean - mb.mean;
  WelchResult r;
  r.t = diff / std::sqrt(sa + sb);
  r.dof = (sa + sb) * (sa + sb) / (sa * sa / (ma.n - 1.0) + sb * sb / (mb.n - 1.0));
  r.p = student_t_two_sided_p(r.t, r.dof);
  const double pooled = std::sqrt(((ma.n - 1.0) * ma.var + (mb.n - 1.0) * mb.var) / (ma.n + mb.n - 2.0));
  r.effect_size = diff / pooled;
  return r;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw EmptyInputError("median of empty set");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace hatenorm
