#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"

namespace hatenorm {

using Tokens = std::vector<std::string>;

// Discriminator reward for a rewrite: positive when the rewritten text scores
// at or below the threshold.
inline double reward(double tau, double phi_prime) {
  if (!(phi_prime >= kMinIntensity && phi_prime <= kMaxIntensity)) {
    throw ValidationError("phi_prime", "must lie in [1, 10]");
  }
  return tau - phi_prime;
}

// Replaces each span by its replacement, left to right. Replacements may be
// shorter, longer or empty; tokens outside spans keep their order.
inline Tokens splice(const Tokens& tokens, const std::vector<Span>& spans,
                     const std::vector<Tokens>& replacements) {
  if (spans.size() != replacements.size()) {
    throw ValidationError("replacements", "need exactly one replacement per span");
  }
  validate_spans(tokens.size(), spans);
  Tokens out;
  out.reserve(tokens.size());
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    out.insert(out.end(), tokens.begin() + static_cast<long>(cursor),
               tokens.begin() + static_cast<long>(spans[k].start));
    out.insert(out.end(), replacements[k].begin(), replacements[k].end());
    cursor = spans[k].end + 1;
  }
  out.insert(out.end(), tokens.begin() + static_cast<long>(cursor), tokens.end());
  return out;
}

namespace detail {

inline bool match_at(const Tokens& hay, std::size_t pos, const Tokens& needle, std::size_t from,
                     std::size_t to) {
  if (pos + (to - from) > hay.size()) return false;
  for (std::size_t i = from; i < to; ++i) {
    if (hay[pos + i - from] != needle[i]) return false;
  }
  return true;
}

// Anchors are the untouched stretches between spans; tries each placement of
// anchor k in increasing order and recurses, so the first consistent
// alignment wins.
inline bool align_from(const Tokens& orig, const std::vector<Span>& spans, const Tokens& norm,
                       std::size_t k, std::size_t cursor, std::vector<Tokens>& out) {
  const std::size_t seg_from = spans[k].end + 1;
  if (k + 1 == spans.size()) {
    const std::size_t tail = orig.size() - seg_from;
    if (norm.size() < cursor + tail) return false;
    const std::size_t pos = norm.size() - tail;
    if (!match_at(norm, pos, orig, seg_from, orig.size())) return false;
    out[k].assign(norm.begin() + static_cast<long>(cursor), norm.begin() + static_cast<long>(pos));
    return true;
  }
  const std::size_t seg_to = spans[k + 1].start;
  for (std::size_t pos = cursor; pos + (seg_to - seg_from) <= norm.size(); ++pos) {
    if (!match_at(norm, pos, orig, seg_from, seg_to)) continue;
    out[k].assign(norm.begin() + static_cast<long>(cursor), norm.begin() + static_cast<long>(pos));
    if (align_from(orig, spans, norm, k + 1, pos + (seg_to - seg_from), out)) return true;
  }
  return false;
}

}  // namespace detail

// Recovers the replacement of every span by positional diffing of a parallel
// pair, assuming tokens outside the spans survive unchanged. Returns nullopt
// when no such alignment exists.
inline std::optional<std::vector<Tokens>> align_replacements(const Tokens& original,
                                                             const std::vector<Span>& spans,
                                                             const Tokens& normalized) {
  validate_spans(original.size(), spans);
  if (spans.empty()) return std::vector<Tokens>{};
  const std::size_t head = spans.front().start;
  if (!detail::match_at(normalized, 0, original, 0, head)) return std::nullopt;
  std::vector<Tokens> out(spans.size());
  if (!detail::align_from(original, spans, normalized, 0, head, out)) return std::nullopt;
  return out;
}

}  // namespace hatenorm
