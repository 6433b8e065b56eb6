#pragma once

// Span rewriting front end shared by both engines: rewrite every span, splice,
// score the result with the intensity model and fall back to alternates when
// the rewrite is still above the threshold.

#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "hatenorm/corpus.hpp"
#include "hatenorm/dictionary.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/generator.hpp"
#include "hatenorm/intensity.hpp"
#include "hatenorm/splice.hpp"

namespace hatenorm {

enum class EngineKind { kDict, kNeural };

inline const char* to_string(EngineKind e) { return e == EngineKind::kDict ? "dict" : "neural"; }

inline EngineKind engine_kind_from_string(const std::string& s) {
  if (s == "dict") return EngineKind::kDict;
  if (s == "neural") return EngineKind::kNeural;
  throw ValidationError("engine", "unknown engine '" + s + "'");
}

using RewriteEngine = std::variant<DictionaryRewriter, GeneratorModel>;

inline EngineKind engine_kind(const RewriteEngine& e) {
  return std::holds_alternative<DictionaryRewriter>(e) ? EngineKind::kDict : EngineKind::kNeural;
}

struct Replacement {
  Span span;
  Tokens tokens;
};

struct RewriteResult {
  Tokens normalized_tokens;
  std::string normalized_text;
  std::vector<Replacement> replacements;
  double discriminator_intensity = 0.0;
  double reward = 0.0;
  EngineKind engine = EngineKind::kDict;
};

struct RewriteOptions {
  double tau = 5.0;
  std::size_t beam_size = 3;
  std::size_t max_decode_len = 8;
};

namespace detail {

// Candidate replacements per span, best first. Candidate j of the sample uses
// the j-th alternative of every span (or that span's last one if it has fewer).
inline std::vector<std::vector<Tokens>> span_alternatives(const RewriteEngine& engine, const Tokens& tokens,
                                                          const std::vector<Span>& spans,
                                                          const RewriteOptions& opt) {
  std::vector<std::vector<Tokens>> out;
  out.reserve(spans.size());
  for (const Span& sp : spans) {
    if (const auto* dict = std::get_if<DictionaryRewriter>(&engine)) {
      const Tokens query(tokens.begin() + static_cast<long>(sp.start), tokens.begin() + static_cast<long>(sp.end) + 1);
      out.push_back(dict->alternatives(query, opt.beam_size));
    } else {
      const auto& gen = std::get<GeneratorModel>(engine);
      std::vector<Tokens> alts{gen.greedy(tokens, sp, opt.max_decode_len)};
      if (opt.beam_size > 1) {
        for (auto& hyp : gen.beam(tokens, sp, opt.beam_size, opt.max_decode_len)) {
          if (std::find(alts.begin(), alts.end(), hyp) == alts.end()) alts.push_back(std::move(hyp));
        }
      }
      out.push_back(std::move(alts));
    }
  }
  return out;
}

}  // namespace detail

inline RewriteResult rewrite_sample(const RewriteEngine& engine, const IntensityModel& hip, const Tokens& tokens,
                                    const std::vector<Span>& spans, const RewriteOptions& opt = {}) {
  if (spans.empty()) throw ValidationError("spans", "rewrite needs at least one span");
  if (opt.beam_size < 1) throw ValidationError("beam_size", "must be >= 1");
  validate_spans(tokens.size(), spans);
  const auto alts = detail::span_alternatives(engine, tokens, spans, opt);
  std::size_t widest = 0;
  for (const auto& a : alts) widest = std::max(widest, a.size());

  RewriteResult best;
  bool have = false;
  std::vector<Tokens> seen;
  for (std::size_t j = 0; j < std::min(widest, opt.beam_size); ++j) {
    std::vector<Tokens> repl;
    for (const auto& a : alts) repl.push_back(a[std::min(j, a.size() - 1)]);
    Tokens out = splice(tokens, spans, repl);
    if (std::find(seen.begin(), seen.end(), out) != seen.end()) continue;
    seen.push_back(out);
    // An all-deleted rewrite has nothing left to score; treat it as benign.
    const double phi = out.empty() ? static_cast<double>(kMinIntensity) : hip.predict(out);
    if (!have || phi < best.discriminator_intensity) {
      have = true;
      best.normalized_tokens = std::move(out);
      best.discriminator_intensity = phi;
      best.replacements.clear();
      for (std::size_t k = 0; k < spans.size(); ++k) best.replacements.push_back({spans[k], repl[k]});
    }
    if (best.discriminator_intensity <= opt.tau) break;
  }
  best.normalized_text = join_tokens(best.normalized_tokens);
  best.reward = reward(opt.tau, best.discriminator_intensity);
  best.engine = engine_kind(engine);
  return best;
}

inline nlohmann::json engine_to_json(const RewriteEngine& engine) {
  return std::visit([](const auto& e) { return e.to_json(); }, engine);
}

inline RewriteEngine engine_from_json(const nlohmann::json& j) {
  nn::check_envelope(j, "hir");
  const auto kind = engine_kind_from_string(j.at("engine").get<std::string>());
  if (kind == EngineKind::kDict) return DictionaryRewriter::from_json(j);
  return GeneratorModel::from_json(j);
}

}  // namespace hatenorm
