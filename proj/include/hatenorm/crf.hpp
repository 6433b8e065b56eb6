#pragma once

// Linear-chain CRF inference over BIO tags, independent of where emission
// scores come from. All recurrences run in log space.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"

namespace hatenorm::crf {

using TagScores = std::array<double, kNumTags>;
using EmissionMatrix = std::vector<TagScores>;  // one row per token

struct Transitions {
  std::array<TagScores, kNumTags> trans{};  // trans[from][to]
  TagScores start{};
  TagScores stop{};
};

inline double lse3(double a, double b, double c) {
  const double m = std::max({a, b, c});
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m) + std::exp(c - m));
}

// start[s1] + sum_i emission_i(s_i) + sum_{i>=2} trans[s_{i-1}][s_i] + stop[s_m]
inline double sequence_score(const EmissionMatrix& em, const Transitions& tr, const TagSeq& tags) {
  if (em.size() != tags.size()) throw Error("tag sequence length does not match token count");
  if (em.empty()) throw Error("sequence must contain at least one token");
  double s = tr.start[tag_index(tags.front())] + tr.stop[tag_index(tags.back())];
  for (std::size_t i = 0; i < em.size(); ++i) {
    s += em[i][tag_index(tags[i])];
    if (i > 0) s += tr.trans[tag_index(tags[i - 1])][tag_index(tags[i])];
  }
  return s;
}

// Forward algorithm: alpha[i][s] = log-sum of prefix scores ending in s.
inline std::vector<TagScores> forward_scores(const EmissionMatrix& em, const Transitions& tr) {
  const std::size_t m = em.size();
  std::vector<TagScores> alpha(m);
  for (std::size_t s = 0; s < kNumTags; ++s) alpha[0][s] = tr.start[s] + em[0][s];
  for (std::size_t i = 1; i < m; ++i) {
    for (std::size_t s = 0; s < kNumTags; ++s) {
      alpha[i][s] = em[i][s] + lse3(alpha[i - 1][0] + tr.trans[0][s], alpha[i - 1][1] + tr.trans[1][s],
                                    alpha[i - 1][2] + tr.trans[2][s]);
    }
  }
  return alpha;
}

inline std::vector<TagScores> backward_scores(const EmissionMatrix& em, const Transitions& tr) {
  const std::size_t m = em.size();
  std::vector<TagScores> beta(m);
  beta[m - 1] = tr.stop;
  for (std::size_t i = m - 1; i-- > 0;) {
    for (std::size_t s = 0; s < kNumTags; ++s) {
      beta[i][s] = lse3(tr.trans[s][0] + em[i + 1][0] + beta[i + 1][0],
                        tr.trans[s][1] + em[i + 1][1] + beta[i + 1][1],
                        tr.trans[s][2] + em[i + 1][2] + beta[i + 1][2]);
    }
  }
  return beta;
}

inline double log_partition(const EmissionMatrix& em, const Transitions& tr) {
  if (em.empty()) throw Error("sequence must contain at least one token");
  const auto alpha = forward_scores(em, tr);
  const auto& last = alpha.back();
  return lse3(last[0] + tr.stop[0], last[1] + tr.stop[1], last[2] + tr.stop[2]);
}

struct Marginals {
  double log_z = 0.0;
  std::vector<TagScores> node;                              // P(s_i = s)
  std::vector<std::array<TagScores, kNumTags>> edge;        // P(s_i = a, s_{i+1} = b)
};

inline Marginals marginals(const EmissionMatrix& em, const Transitions& tr) {
  if (em.empty()) throw Error("sequence must contain at least one token");
  const std::size_t m = em.size();
  const auto alpha = forward_scores(em, tr);
  const auto beta = backward_scores(em, tr);
  Marginals out;
  const auto& last = alpha.back();
  out.log_z = lse3(last[0] + tr.stop[0], last[1] + tr.stop[1], last[2] + tr.stop[2]);
  out.node.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t s = 0; s < kNumTags; ++s) {
      out.node[i][s] = std::exp(alpha[i][s] + beta[i][s] - out.log_z);
    }
  }
  out.edge.resize(m > 0 ? m - 1 : 0);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    for (std::size_t a = 0; a < kNumTags; ++a) {
      for (std::size_t b = 0; b < kNumTags; ++b) {
        out.edge[i][a][b] =
            std::exp(alpha[i][a] + tr.trans[a][b] + em[i + 1][b] + beta[i + 1][b] - out.log_z);
      }
    }
  }
  return out;
}

// Gradients of (log Z - score(gold)) with respect to emissions and
// transition parameters.
struct NllGrad {
  double loss = 0.0;
  EmissionMatrix d_emission;
  Transitions d_transitions;
};

inline NllGrad nll_grad(const EmissionMatrix& em, const Transitions& tr, const TagSeq& gold) {
  if (gold.size() != em.size()) throw Error("gold tag sequence length does not match token count");
  const Marginals mg = marginals(em, tr);
  const std::size_t m = em.size();
  NllGrad g;
  g.loss = mg.log_z - sequence_score(em, tr, gold);
  g.d_emission = mg.node;
  for (std::size_t i = 0; i < m; ++i) g.d_emission[i][tag_index(gold[i])] -= 1.0;
  for (std::size_t s = 0; s < kNumTags; ++s) {
    g.d_transitions.start[s] = mg.node[0][s];
    g.d_transitions.stop[s] = mg.node[m - 1][s];
  }
  g.d_transitions.start[tag_index(gold.front())] -= 1.0;
  g.d_transitions.stop[tag_index(gold.back())] -= 1.0;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    for (std::size_t a = 0; a < kNumTags; ++a) {
      for (std::size_t b = 0; b < kNumTags; ++b) g.d_transitions.trans[a][b] += mg.edge[i][a][b];
    }
    g.d_transitions.trans[tag_index(gold[i])][tag_index(gold[i + 1])] -= 1.0;
  }
  return g;
}

// Exact max-score path. Ties go to the lowest tag index (B < I < O), both in
// backpointers and in the final state.
inline TagSeq viterbi(const EmissionMatrix& em, const Transitions& tr) {
  if (em.empty()) throw Error("sequence must contain at least one token");
  const std::size_t m = em.size();
  std::vector<TagScores> delta(m);
  std::vector<std::array<std::uint8_t, kNumTags>> back(m);
  for (std::size_t s = 0; s < kNumTags; ++s) delta[0][s] = tr.start[s] + em[0][s];
  for (std::size_t i = 1; i < m; ++i) {
    for (std::size_t s = 0; s < kNumTags; ++s) {
      std::size_t best = 0;
      double best_score = delta[i - 1][0] + tr.trans[0][s];
      for (std::size_t p = 1; p < kNumTags; ++p) {
        const double v = delta[i - 1][p] + tr.trans[p][s];
        if (v > best_score) {
          best_score = v;
          best = p;
        }
      }
      delta[i][s] = best_score + em[i][s];
      back[i][s] = static_cast<std::uint8_t>(best);
    }
  }
  std::size_t last = 0;
  double best_final = delta[m - 1][0] + tr.stop[0];
  for (std::size_t s = 1; s < kNumTags; ++s) {
    const double v = delta[m - 1][s] + tr.stop[s];
    if (v > best_final) {
      best_final = v;
      last = s;
    }
  }
  TagSeq out(m);
  out[m - 1] = tag_from_index(last);
  for (std::size_t i = m - 1; i > 0; --i) {
    last = back[i][last];
    out[i - 1] = tag_from_index(last);
  }
  return out;
}

}  // namespace hatenorm::crf
