#pragma once

// Dictionary baseline for span rewriting: every aligned (hate span,
// normalized span) pair from training becomes an entry, and a query span is
// mapped to the entry whose hate side is closest under tf-idf cosine.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/corpus.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/splice.hpp"

namespace hatenorm {

class DictionaryRewriter {
 public:
  struct Entry {
    Tokens hate;
    Tokens normalized;
  };

  DictionaryRewriter() = default;

  // idf(t) = ln((N + 1) / (df(t) + 1)) + 1 over `documents`.
  static DictionaryRewriter from_entries(std::vector<Entry> entries, const std::vector<Tokens>& documents) {
    std::unordered_map<std::string, std::size_t> df;
    for (const auto& doc : documents) {
      std::unordered_set<std::string> seen(doc.begin(), doc.end());
      for (const auto& t : seen) ++df[t];
    }
    return from_entries(std::move(entries), df, documents.size());
  }

  static DictionaryRewriter from_entries(std::vector<Entry> entries,
                                         const std::unordered_map<std::string, std::size_t>& df,
                                         std::size_t num_docs) {
    if (entries.empty()) throw ValidationError("entries", "dictionary needs at least one entry");
    DictionaryRewriter d;
    d.num_docs_ = num_docs;
    for (const auto& [t, c] : df) {
      d.idf_[t] = std::log((static_cast<double>(num_docs) + 1.0) / (static_cast<double>(c) + 1.0)) + 1.0;
    }
    d.entries_ = std::move(entries);
    d.index();
    return d;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  const std::unordered_map<std::string, double>& idf() const { return idf_; }

  double idf(const std::string& t) const {
    auto it = idf_.find(t);
    return it == idf_.end() ? 0.0 : it->second;
  }

  // Entry indices with positive cosine, best first; equal scores keep build
  // order. Identical (hate, normalized) pairs collapse to their first entry.
  std::vector<std::pair<std::size_t, double>> ranked(const Tokens& query) const {
    if (entries_.empty()) throw Error("dictionary rewriter is empty");
    const SparseVec q = vectorize(query);
    std::vector<std::pair<std::size_t, double>> out;
    if (q.norm == 0.0) return out;
    for (std::size_t u = 0; u < unique_.size(); ++u) {
      const SparseVec& v = vectors_[u];
      if (v.norm == 0.0) continue;
      double dot = 0.0;
      for (const auto& [term, w] : q.weights) {
        auto it = v.weights.find(term);
        if (it != v.weights.end()) dot += w * it->second;
      }
      if (dot <= 0.0) continue;
      out.emplace_back(unique_[u], dot / (q.norm * v.norm));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
  }

  // Normalized side of the closest entry; empty (a deletion) when nothing
  // shares a known token with the query.
  Tokens rewrite(const Tokens& query) const {
    if (query.empty()) throw ValidationError("span", "query span must not be empty");
    const auto r = ranked(query);
    return r.empty() ? Tokens{} : entries_[r.front().first].normalized;
  }

  // Up to `k` distinct replacements in rank order, the first equal to
  // rewrite(query).
  std::vector<Tokens> alternatives(const Tokens& query, std::size_t k) const {
    if (query.empty()) throw ValidationError("span", "query span must not be empty");
    std::vector<Tokens> out;
    for (const auto& [idx, score] : ranked(query)) {
      const Tokens& cand = entries_[idx].normalized;
      if (std::find(out.begin(), out.end(), cand) == out.end()) out.push_back(cand);
      if (out.size() == k) break;
    }
    if (out.empty()) out.push_back({});
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    // explicit array: two 2-token sides would otherwise read as an object
    for (const auto& e : entries_) entries.push_back(nlohmann::json::array({e.hate, e.normalized}));
    std::map<std::string, double> sorted_idf(idf_.begin(), idf_.end());
    return {{"format_version", nn::kFormatVersion}, {"kind", "hir"},     {"engine", "dict"},
            {"num_docs", num_docs_},               {"entries", entries}, {"idf", sorted_idf}};
  }

  static DictionaryRewriter from_json(const nlohmann::json& j) {
    nn::check_envelope(j, "hir");
    if (j.at("engine").get<std::string>() != "dict") throw ModelFormatError("not a dictionary engine");
    DictionaryRewriter d;
    d.num_docs_ = j.at("num_docs").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      d.entries_.push_back({e.at(0).get<Tokens>(), e.at(1).get<Tokens>()});
    }
    if (d.entries_.empty()) throw ModelFormatError("dictionary has no entries");
    for (const auto& [t, v] : j.at("idf").items()) {
      const double x = v.get<double>();
      if (!std::isfinite(x) || x < 0) throw ModelFormatError("invalid idf for " + t);
      d.idf_[t] = x;
    }
    d.index();
    return d;
  }

 private:
  struct SparseVec {
    std::unordered_map<std::string, double> weights;
    double norm = 0.0;
  };

  SparseVec vectorize(const Tokens& toks) const {
    SparseVec v;
    for (const auto& t : toks) {
      const double w = idf(t);
      if (w > 0) v.weights[t] += w;
    }
    for (const auto& [t, w] : v.weights) v.norm += w * w;
    v.norm = std::sqrt(v.norm);
    return v;
  }

  void index() {
    unique_.clear();
    vectors_.clear();
    std::map<std::pair<Tokens, Tokens>, std::size_t> seen;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (seen.emplace(std::make_pair(entries_[i].hate, entries_[i].normalized), i).second) {
        unique_.push_back(i);
        vectors_.push_back(vectorize(entries_[i].hate));
      }
    }
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, double> idf_;
  std::size_t num_docs_ = 0;
  std::vector<std::size_t> unique_;
  std::vector<SparseVec> vectors_;
};

// One entry per span of every training sample whose normalized text aligns
// positionally with the original.
inline DictionaryRewriter dict_build(const Corpus& train) {
  std::vector<DictionaryRewriter::Entry> entries;
  for (const Sample& s : train.samples()) {
    if (s.spans.empty() || !s.normalized_text) continue;
    const auto aligned = align_replacements(s.tokens, s.spans, s.normalized_tokens());
    if (!aligned) continue;
    for (std::size_t k = 0; k < s.spans.size(); ++k) {
      const Span& sp = s.spans[k];
      entries.push_back({Tokens(s.tokens.begin() + static_cast<long>(sp.start),
                                s.tokens.begin() + static_cast<long>(sp.end) + 1),
                         (*aligned)[k]});
    }
  }
  if (entries.empty()) throw EmptyInputError("no alignable (span, normalized span) pairs in corpus");
  return DictionaryRewriter::from_entries(std::move(entries), train.document_frequency(), train.size());
}

inline Tokens dict_rewrite(const DictionaryRewriter& rewriter, const Tokens& span_tokens) {
  return rewriter.rewrite(span_tokens);
}

}  // namespace hatenorm
