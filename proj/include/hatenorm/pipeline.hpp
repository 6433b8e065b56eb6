#pragma once

// Training order and inference path of the full system: intensity gate,
// span tagging, span rewriting and verification of the rewrite.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hatenorm/bleu.hpp"
#include "hatenorm/corpus.hpp"
#include "hatenorm/dictionary.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/evalx.hpp"
#include "hatenorm/generator.hpp"
#include "hatenorm/intensity.hpp"
#include "hatenorm/rewriter.hpp"
#include "hatenorm/spanner.hpp"
#include "hatenorm/virality.hpp"

namespace hatenorm {

// A training stage failed; what() starts with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Bands and config
// ---------------------------------------------------------------------------

enum class Band { kNoHate, kLow, kMild, kExtreme };

inline const char* to_string(Band b) {
  switch (b) {
    case Band::kNoHate: return "no_hate";
    case Band::kLow: return "low";
    case Band::kMild: return "mild";
    case Band::kExtreme: return "extreme";
  }
  return "extreme";
}

struct Bands {
  double no_hate_below = 2.0;  // no_hate: phi < this
  double low_max = 5.0;        // low: phi <= this
  double mild_max = 7.0;       // mild: phi <= this, extreme above

  void validate() const {
    if (!(kMinIntensity < no_hate_below && no_hate_below < low_max && low_max < mild_max &&
          mild_max < kMaxIntensity)) {
      throw ValidationError("bands", "thresholds must be strictly increasing inside (1, 10)");
    }
  }
};

enum class Flag { kNone, kImplicitHateNoSpans, kUnreducedAboveThreshold };

inline const char* to_string(Flag f) {
  switch (f) {
    case Flag::kNone: return "none";
    case Flag::kImplicitHateNoSpans: return "implicit_hate_no_spans";
    case Flag::kUnreducedAboveThreshold: return "unreduced_above_threshold";
  }
  return "none";
}

struct PipelineConfig {
  double tau = 5.0;
  Bands bands;
  EngineKind engine = EngineKind::kNeural;
  std::size_t retry_k = 3;
  std::size_t max_decode_len = 8;
  std::string bundle_dir = "bundle";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_tokens = 512;

  HipTrainConfig hip;
  HsiTrainConfig hsi;
  HirTrainConfig hir;
  DetectorConfig detector;
  // Empty lexicon path selects the bundled default.
  std::string lexicon;
  double ridge = 1e-3;
  ViralityConfig virality;

  void validate() const {
    if (!(tau > kMinIntensity && tau < kMaxIntensity)) throw ValidationError("tau", "must lie in (1, 10)");
    bands.validate();
    if (retry_k < 1) throw ValidationError("retry_k", "must be >= 1");
    if (max_tokens < 1) throw ValidationError("max_tokens", "must be >= 1");
    if (port < 0 || port > 65535) throw ValidationError("port", "out of range");
    hip.validate();
    hsi.validate();
    hir.validate();
    if (!(ridge >= 0)) throw ValidationError("ridge", "must be non-negative");
    if (!virality.k || !virality.n_iter) throw ValidationError("virality", "k and n_iter must be positive");
  }

  RewriteOptions rewrite_options() const { return {tau, retry_k, max_decode_len}; }
};

inline Band band_of(double phi, const Bands& bands = {}) {
  if (!(phi >= kMinIntensity && phi <= kMaxIntensity)) throw ValidationError("intensity", "must lie in [1, 10]");
  if (phi < bands.no_hate_below) return Band::kNoHate;
  if (phi <= bands.low_max) return Band::kLow;
  if (phi <= bands.mild_max) return Band::kMild;
  return Band::kExtreme;
}

inline nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["tau"] = c.tau;
  j["bands"] = {{"no_hate_below", c.bands.no_hate_below}, {"low_max", c.bands.low_max}, {"mild_max", c.bands.mild_max}};
  j["engine"] = to_string(c.engine);
  j["retry_k"] = c.retry_k;
  j["max_decode_len"] = c.max_decode_len;
  j["bundle_dir"] = c.bundle_dir;
  j["host"] = c.host;
  j["port"] = c.port;
  j["max_tokens"] = c.max_tokens;
  j["hip"] = {{"epochs", c.hip.epochs},
              {"batch_size", c.hip.batch_size},
              {"learning_rate", c.hip.learning_rate},
              {"hidden", c.hip.hidden},
              {"embedding_dim", c.hip.embedding_dim},
              {"attention_dim", c.hip.attention_dim},
              {"seed", c.hip.seed},
              {"include_normalized", c.hip.include_normalized},
              {"unk_dropout", c.hip.unk_dropout}};
  j["hsi"] = {{"mode", to_string(c.hsi.mode)},
              {"epochs", c.hsi.epochs},
              {"batch_size", c.hsi.batch_size},
              {"learning_rate", c.hsi.learning_rate},
              {"hidden", c.hsi.hidden},
              {"embedding_dim", c.hsi.embedding_dim},
              {"seed", c.hsi.seed},
              {"include_normalized", c.hsi.include_normalized},
              {"unk_dropout", c.hsi.unk_dropout}};
  j["hir"] = {{"epochs", c.hir.epochs},
              {"batch_size", c.hir.batch_size},
              {"learning_rate", c.hir.learning_rate},
              {"max_decode_len", c.hir.max_decode_len},
              {"beam_size", c.hir.beam_size},
              {"reward_mode", to_string(c.hir.reward_mode)},
              {"seed", c.hir.seed},
              {"hidden", c.hir.hidden},
              {"embedding_dim", c.hir.embedding_dim},
              {"val_limit", c.hir.val_limit}};
  j["detector"] = {{"l2", c.detector.l2},
                   {"learning_rate", c.detector.learning_rate},
                   {"iterations", c.detector.iterations},
                   {"seed", c.detector.seed}};
  j["lexicon"] = c.lexicon;
  j["ridge"] = c.ridge;
  j["virality"] = {{"k", c.virality.k}, {"n_iter", c.virality.n_iter}, {"seed", c.virality.seed}};
  return j;
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + key, "has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where.empty() ? "config" : where, "must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ValidationError(where + k, "unknown config key");
  }
}

}  // namespace detail

// Overlays `j` onto `base`; absent keys keep their value, unknown keys are
// rejected so typos surface.
inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using detail::read_key;
  detail::reject_unknown(j, {"tau", "bands", "engine", "retry_k", "max_decode_len", "bundle_dir", "host", "port",
                             "max_tokens", "hip", "hsi", "hir", "detector", "lexicon", "ridge", "virality"},
                         "");
  read_key(j, "tau", c.tau, "");
  if (j.contains("bands")) {
    const auto& b = j.at("bands");
    detail::reject_unknown(b, {"no_hate_below", "low_max", "mild_max"}, "bands.");
    read_key(b, "no_hate_below", c.bands.no_hate_below, "bands.");
    read_key(b, "low_max", c.bands.low_max, "bands.");
    read_key(b, "mild_max", c.bands.mild_max, "bands.");
  }
  if (j.contains("engine")) {
    std::string e;
    read_key(j, "engine", e, "");
    c.engine = engine_kind_from_string(e);
  }
  read_key(j, "retry_k", c.retry_k, "");
  read_key(j, "max_decode_len", c.max_decode_len, "");
  read_key(j, "bundle_dir", c.bundle_dir, "");
  read_key(j, "host", c.host, "");
  read_key(j, "port", c.port, "");
  read_key(j, "max_tokens", c.max_tokens, "");
  if (j.contains("hip")) {
    const auto& h = j.at("hip");
    detail::reject_unknown(h, {"epochs", "batch_size", "learning_rate", "hidden", "embedding_dim", "attention_dim",
                               "seed", "include_normalized", "unk_dropout"},
                           "hip.");
    read_key(h, "epochs", c.hip.epochs, "hip.");
    read_key(h, "batch_size", c.hip.batch_size, "hip.");
    read_key(h, "learning_rate", c.hip.learning_rate, "hip.");
    read_key(h, "hidden", c.hip.hidden, "hip.");
    read_key(h, "embedding_dim", c.hip.embedding_dim, "hip.");
    read_key(h, "attention_dim", c.hip.attention_dim, "hip.");
    read_key(h, "seed", c.hip.seed, "hip.");
    read_key(h, "include_normalized", c.hip.include_normalized, "hip.");
    read_key(h, "unk_dropout", c.hip.unk_dropout, "hip.");
  }
  if (j.contains("hsi")) {
    const auto& h = j.at("hsi");
    detail::reject_unknown(h, {"mode", "epochs", "batch_size", "learning_rate", "hidden", "embedding_dim", "seed",
                               "include_normalized", "unk_dropout"},
                           "hsi.");
    if (h.contains("mode")) {
      std::string m;
      read_key(h, "mode", m, "hsi.");
      c.hsi.mode = emission_mode_from_string(m);
    }
    read_key(h, "epochs", c.hsi.epochs, "hsi.");
    read_key(h, "batch_size", c.hsi.batch_size, "hsi.");
    read_key(h, "learning_rate", c.hsi.learning_rate, "hsi.");
    read_key(h, "hidden", c.hsi.hidden, "hsi.");
    read_key(h, "embedding_dim", c.hsi.embedding_dim, "hsi.");
    read_key(h, "seed", c.hsi.seed, "hsi.");
    read_key(h, "include_normalized", c.hsi.include_normalized, "hsi.");
    read_key(h, "unk_dropout", c.hsi.unk_dropout, "hsi.");
  }
  if (j.contains("hir")) {
    const auto& h = j.at("hir");
    detail::reject_unknown(h, {"epochs", "batch_size", "learning_rate", "max_decode_len", "beam_size", "reward_mode",
                               "seed", "hidden", "embedding_dim", "val_limit"},
                           "hir.");
    read_key(h, "epochs", c.hir.epochs, "hir.");
    read_key(h, "batch_size", c.hir.batch_size, "hir.");
    read_key(h, "learning_rate", c.hir.learning_rate, "hir.");
    read_key(h, "max_decode_len", c.hir.max_decode_len, "hir.");
    read_key(h, "beam_size", c.hir.beam_size, "hir.");
    if (h.contains("reward_mode")) {
      std::string m;
      read_key(h, "reward_mode", m, "hir.");
      c.hir.reward_mode = reward_mode_from_string(m);
    }
    read_key(h, "seed", c.hir.seed, "hir.");
    read_key(h, "hidden", c.hir.hidden, "hir.");
    read_key(h, "embedding_dim", c.hir.embedding_dim, "hir.");
    read_key(h, "val_limit", c.hir.val_limit, "hir.");
  }
  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    detail::reject_unknown(d, {"l2", "learning_rate", "iterations", "seed"}, "detector.");
    read_key(d, "l2", c.detector.l2, "detector.");
    read_key(d, "learning_rate", c.detector.learning_rate, "detector.");
    read_key(d, "iterations", c.detector.iterations, "detector.");
    read_key(d, "seed", c.detector.seed, "detector.");
  }
  read_key(j, "lexicon", c.lexicon, "");
  read_key(j, "ridge", c.ridge, "");
  if (j.contains("virality")) {
    const auto& v = j.at("virality");
    detail::reject_unknown(v, {"k", "n_iter", "seed"}, "virality.");
    read_key(v, "k", c.virality.k, "virality.");
    read_key(v, "n_iter", c.virality.n_iter, "virality.");
    read_key(v, "seed", c.virality.seed, "virality.");
  }
  c.hir.tau = c.tau;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

struct TrainedBundle {
  IntensityModel hip;
  CrfModel hsi;
  std::optional<DictionaryRewriter> dict;
  std::optional<GeneratorModel> neural;
  std::optional<HateDetector> detector;
  nlohmann::ordered_json manifest;

  std::string version() const { return manifest.value("bundle_version", std::string("unversioned")); }

  // The configured engine, or the other one if only that was trained.
  RewriteEngine engine(EngineKind kind) const {
    if (kind == EngineKind::kNeural && neural) return *neural;
    if (kind == EngineKind::kDict && dict) return *dict;
    throw Error(std::string("bundle has no ") + to_string(kind) + " rewrite engine");
  }
};

namespace detail {

// FNV-1a over the serialized components, so the version changes with any
// parameter.
inline std::string content_hash(const std::vector<std::string>& parts) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : parts) {
    for (unsigned char c : p) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json component_json(const TrainedBundle& b, const std::string& name) {
  if (name == "hip") return b.hip.to_json();
  if (name == "hsi") return b.hsi.to_json();
  if (name == "hir_dict") return b.dict->to_json();
  if (name == "hir_neural") return b.neural->to_json();
  return b.detector->to_json();
}

inline std::vector<std::string> component_names(const TrainedBundle& b) {
  std::vector<std::string> names{"hip", "hsi"};
  if (b.dict) names.push_back("hir_dict");
  if (b.neural) names.push_back("hir_neural");
  if (b.detector) names.push_back("detector");
  return names;
}

}  // namespace detail

// Fills in bundle_version and the component list of the manifest.
inline void stamp_manifest(TrainedBundle& b, const PipelineConfig& cfg) {
  std::vector<std::string> dumps;
  const auto names = detail::component_names(b);
  for (const auto& n : names) dumps.push_back(detail::component_json(b, n).dump());
  nlohmann::ordered_json m;
  m["format_version"] = nn::kFormatVersion;
  m["bundle_version"] = "v" + std::to_string(nn::kFormatVersion) + "-" + detail::content_hash(dumps);
  m["components"] = names;
  m["config"] = config_to_json(cfg);
  m["seeds"] = {{"hip", cfg.hip.seed}, {"hsi", cfg.hsi.seed}, {"hir", cfg.hir.seed}, {"detector", cfg.detector.seed}};
  b.manifest = std::move(m);
}

inline void save_bundle(const TrainedBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [&](const std::string& file, const std::string& text) {
    std::ofstream out(fs::path(dir) / file, std::ios::binary);
    if (!out) throw Error("cannot write " + (fs::path(dir) / file).string());
    out << text << '\n';
  };
  for (const auto& n : detail::component_names(b)) write(n + ".json", detail::component_json(b, n).dump());
  write("manifest.json", b.manifest.dump(2));
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelFormatError(path + ": " + e.what());
  }
}

inline TrainedBundle load_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto path = [&](const std::string& f) { return (fs::path(dir) / f).string(); };
  TrainedBundle b;
  b.manifest = nlohmann::ordered_json::parse(read_json_file(path("manifest.json")).dump());
  b.hip = IntensityModel::from_json(read_json_file(path("hip.json")));
  b.hsi = CrfModel::from_json(read_json_file(path("hsi.json")));
  for (const auto& n : b.manifest.at("components")) {
    const auto name = n.get<std::string>();
    if (name == "hir_dict") b.dict = DictionaryRewriter::from_json(read_json_file(path(name + ".json")));
    if (name == "hir_neural") b.neural = GeneratorModel::from_json(read_json_file(path(name + ".json")));
    if (name == "detector") b.detector = HateDetector::from_json(read_json_file(path(name + ".json")));
  }
  if (!b.dict && !b.neural) throw ModelFormatError("bundle has no rewrite engine");
  return b;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Hateful originals (with spans) against span-free samples at or below the
// no-hate band.
inline std::vector<LabeledText> detector_data(const Corpus& corpus, const Bands& bands = {}) {
  std::vector<LabeledText> out;
  for (const Sample& s : corpus.samples()) {
    if (s.tokens.empty()) continue;
    if (!s.spans.empty()) {
      out.push_back({s.tokens, 1});
    } else if (s.intensity < bands.no_hate_below) {
      out.push_back({s.tokens, 0});
    }
  }
  return out;
}

struct TrainStages {
  bool hip = true, hsi = true, dict = true, neural = true, detector = true;
};

inline TrainedBundle train_all(const Corpus& train, const Corpus& val, const PipelineConfig& cfg,
                               const TrainStages& stages = {}) {
  cfg.validate();
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };
  TrainedBundle b;
  b.hip = stage("hip", [&] { return hip_train(train, val, cfg.hip); });
  b.hsi = stage("hsi", [&] { return hsi_train(train, val, cfg.hsi); });
  HirTrainConfig hir = cfg.hir;
  hir.tau = cfg.tau;
  if (stages.dict) b.dict = stage("hir", [&] { return dict_build(train); });
  if (stages.neural) b.neural = stage("hir", [&] { return gen_train(train, val, b.hip, hir); });
  if (stages.detector) {
    const auto data = detector_data(train, cfg.bands);
    bool pos = false, neg = false;
    for (const auto& d : data) (d.label ? pos : neg) = true;
    if (pos && neg) b.detector = stage("detector", [&] { return detector_train(data, cfg.detector); });
  }
  stamp_manifest(b, cfg);
  return b;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct SpanView {
  Span span;
  std::string text;
};

struct Suggestion {
  std::string text;
  double intensity = 0.0;
  double reward = 0.0;
};

struct NormalizationOutcome {
  double intensity = 0.0;
  Band band = Band::kNoHate;
  std::vector<SpanView> spans;
  std::optional<Suggestion> suggestion;
  Flag flag = Flag::kNone;
};

inline NormalizationOutcome analyze_tokens(const TrainedBundle& bundle, const Tokens& tokens,
                                           const PipelineConfig& cfg) {
  if (tokens.empty()) throw EmptyInputError("text must contain at least one token");
  NormalizationOutcome out;
  out.intensity = bundle.hip.predict(tokens);
  out.band = band_of(out.intensity, cfg.bands);
  if (out.intensity <= cfg.tau) return out;
  const auto spans = hsi_predict_spans(bundle.hsi, tokens);
  for (const Span& s : spans) {
    out.spans.push_back({s, join_tokens(Tokens(tokens.begin() + static_cast<long>(s.start),
                                               tokens.begin() + static_cast<long>(s.end) + 1))});
  }
  if (spans.empty()) {
    out.flag = Flag::kImplicitHateNoSpans;
    return out;
  }
  const RewriteResult r = rewrite_sample(bundle.engine(cfg.engine), bundle.hip, tokens, spans, cfg.rewrite_options());
  out.suggestion = Suggestion{r.normalized_text, r.discriminator_intensity, r.reward};
  if (r.discriminator_intensity > cfg.tau) out.flag = Flag::kUnreducedAboveThreshold;
  return out;
}

inline NormalizationOutcome analyze(const TrainedBundle& bundle, const std::string& text, const PipelineConfig& cfg) {
  return analyze_tokens(bundle, tokenize(text), cfg);
}

// Wire form; key order is part of the contract.
inline nlohmann::ordered_json outcome_to_json(const NormalizationOutcome& o, std::optional<std::int64_t> latency_ms) {
  nlohmann::ordered_json j;
  j["intensity"] = o.intensity;
  j["band"] = to_string(o.band);
  auto spans = nlohmann::ordered_json::array();
  for (const auto& s : o.spans) {
    nlohmann::ordered_json sj;
    sj["start"] = s.span.start;
    sj["end"] = s.span.end;
    sj["text"] = s.text;
    spans.push_back(std::move(sj));
  }
  j["spans"] = std::move(spans);
  if (o.suggestion) {
    nlohmann::ordered_json sj;
    sj["text"] = o.suggestion->text;
    sj["intensity"] = o.suggestion->intensity;
    sj["reward"] = o.suggestion->reward;
    j["suggestion"] = std::move(sj);
  } else {
    j["suggestion"] = nullptr;
  }
  j["flag"] = to_string(o.flag);
  if (latency_ms) j["latency_ms"] = *latency_ms;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ReductionReport {
  std::size_t eligible = 0;          // samples with gold intensity above tau
  std::size_t reduced = 0;           // of those, final intensity <= tau
  double reduced_fraction = 0.0;
  double mean_drop = 0.0;            // mean(phi_t - phi_t')
  double bleu = 0.0;                 // outputs against gold normalized text
  std::vector<std::pair<Tokens, Tokens>> pairs;  // (t, t') for suggested rewrites

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["eligible"] = eligible;
    j["reduced"] = reduced;
    j["reduced_fraction"] = reduced_fraction;
    j["mean_drop"] = mean_drop;
    j["bleu"] = bleu;
    return j;
  }
};

// Runs the pipeline on every test sample whose gold intensity exceeds tau. A
// sample without a suggestion keeps phi_t' = phi_t and its original text.
inline ReductionReport evaluate_reduction(const TrainedBundle& bundle, const Corpus& test, const PipelineConfig& cfg) {
  ReductionReport r;
  std::vector<Tokens> hyps, refs;
  double drop = 0.0;
  for (const Sample& s : test.samples()) {
    if (!(s.intensity > cfg.tau) || s.tokens.empty()) continue;
    const auto o = analyze_tokens(bundle, s.tokens, cfg);
    const double after = o.suggestion ? o.suggestion->intensity : o.intensity;
    ++r.eligible;
    if (after <= cfg.tau) ++r.reduced;
    drop += o.intensity - after;
    const Tokens out = o.suggestion ? tokenize(o.suggestion->text) : s.tokens;
    if (o.suggestion) r.pairs.emplace_back(s.tokens, out);
    if (s.normalized_text) {
      hyps.push_back(out);
      refs.push_back(s.normalized_tokens());
    }
  }
  if (r.eligible == 0) throw UndefinedMetricError("no test sample above the threshold");
  r.reduced_fraction = static_cast<double>(r.reduced) / static_cast<double>(r.eligible);
  r.mean_drop = drop / static_cast<double>(r.eligible);
  r.bleu = hyps.empty() ? 0.0 : bleu(hyps, refs);
  return r;
}

// Full report: generation metrics over the reduction set, an LM fitted on the
// training corpus' gold normalized texts, HIP and HSI on the test corpus.
inline EvalReport evaluate(const TrainedBundle& bundle, const Corpus& train, const Corpus& test,
                           const PipelineConfig& cfg) {
  EvalReport rep;
  const ReductionReport red = evaluate_reduction(bundle, test, cfg);
  rep.bleu = red.bleu;

  std::vector<Tokens> lm_text;
  for (const Sample& s : train.samples()) {
    if (s.normalized_text) {
      auto t = s.normalized_tokens();
      if (!t.empty()) lm_text.push_back(std::move(t));
    }
  }
  if (!lm_text.empty() && !red.pairs.empty()) {
    const NgramLm lm = lm_train(lm_text);
    std::vector<Tokens> outs;
    for (const auto& p : red.pairs) outs.push_back(p.second);
    rep.perplexity = perplexity(lm, outs);
  }
  if (bundle.detector && !red.pairs.empty()) {
    try {
      const auto dc = delta_confidence(*bundle.detector, red.pairs);
      rep.delta_c = dc.delta_c;
      rep.m_count = dc.m_count;
    } catch (const UndefinedMetricError&) {
      rep.delta_c.reset();
      rep.m_count = 0;
    }
  }

  std::vector<double> pred, gold;
  for (const Sample& s : test.samples()) {
    if (s.tokens.empty()) continue;
    pred.push_back(bundle.hip.predict(s.tokens));
    gold.push_back(s.intensity);
  }
  const auto hm = hip_metrics(pred, gold);
  rep.hip_rmse = hm.rmse;
  rep.hip_pearson = hm.pearson;
  rep.hip_cosine = hm.cosine;
  const auto sm = evaluate_spans(bundle.hsi, test);
  rep.hsi_p = sm.precision;
  rep.hsi_r = sm.recall;
  rep.hsi_f1 = sm.f1;
  rep.hsi_exact = sm.exact_span_rate;
  return rep;
}

}  // namespace hatenorm
