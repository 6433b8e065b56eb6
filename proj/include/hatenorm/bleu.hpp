#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hatenorm/error.hpp"

namespace hatenorm {

// Corpus BLEU-4 on a 0-100 scale. Clipped n-gram matches and hypothesis
// n-gram counts are pooled over the corpus; orders 2..4 use add-one smoothing
// on both numerator and denominator. Brevity penalty exp(1 - r/c) when c < r.
inline double bleu(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size()) {
    throw ValidationError("bleu", "hypothesis and reference counts differ");
  }
  if (hypotheses.empty()) throw EmptyInputError("BLEU needs at least one pair");
  constexpr std::size_t kMaxOrder = 4;
  double matches[kMaxOrder + 1] = {};
  double totals[kMaxOrder + 1] = {};
  double hyp_len = 0.0, ref_len = 0.0;
  using Gram = std::vector<std::string>;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    hyp_len += static_cast<double>(hyp.size());
    ref_len += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      std::map<Gram, int> ref_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[Gram(ref.begin() + i, ref.begin() + i + n)];
      std::map<Gram, int> hyp_counts;
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[Gram(hyp.begin() + i, hyp.begin() + i + n)];
      for (const auto& [g, c] : hyp_counts) {
        auto it = ref_counts.find(g);
        if (it != ref_counts.end()) matches[n] += std::min(c, it->second);
        totals[n] += c;
      }
    }
  }
  if (matches[1] == 0.0 || totals[1] == 0.0) return 0.0;
  double log_p = std::log(matches[1] / totals[1]);
  for (std::size_t n = 2; n <= kMaxOrder; ++n) log_p += std::log((matches[n] + 1.0) / (totals[n] + 1.0));
  log_p /= static_cast<double>(kMaxOrder);
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return std::clamp(100.0 * bp * std::exp(log_p), 0.0, 100.0);
}

}  // namespace hatenorm
