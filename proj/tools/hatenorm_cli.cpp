// hatenorm command line: corpus generation, training, evaluation, single-text
// normalization, the engagement experiment and the HTTP service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hatenorm/hatenorm.hpp"
#include "hatenorm/service.hpp"

namespace fs = std::filesystem;
using namespace hatenorm;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file");
  app->add_option("--seed", c.seed, "Base seed; overrides every seed in the config");
  app->add_flag("-v,--verbose", c.verbose, "Log training progress to stderr");
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) cfg = config_from_json(read_json_file(c.config_path));
  if (c.seed) {
    const std::uint64_t s = *c.seed;
    cfg.hip.seed = s;
    cfg.hsi.seed = s + 1;
    cfg.hir.seed = s + 2;
    cfg.detector.seed = s + 3;
    cfg.virality.seed = s + 4;
  }
  cfg.hip.verbose = cfg.hsi.verbose = cfg.hir.verbose = c.verbose;
  cfg.hir.tau = cfg.tau;
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text << '\n';
}

Lexicon lexicon_for(const PipelineConfig& cfg) {
  return cfg.lexicon.empty() ? default_lexicon() : load_lexicon(cfg.lexicon);
}

std::string component_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / (name + ".json")).string();
}

void save_component(const std::string& dir, const std::string& name, const nlohmann::json& j) {
  fs::create_directories(dir);
  write_text(component_path(dir, name), j.dump());
}

// Re-stamps the manifest once hip, hsi and one rewrite engine are present.
void refresh_manifest(const std::string& dir, const PipelineConfig& cfg) {
  auto has = [&](const char* n) { return fs::exists(component_path(dir, n)); };
  if (!has("hip") || !has("hsi") || !(has("hir_dict") || has("hir_neural"))) return;
  TrainedBundle b;
  b.hip = IntensityModel::from_json(read_json_file(component_path(dir, "hip")));
  b.hsi = CrfModel::from_json(read_json_file(component_path(dir, "hsi")));
  if (has("hir_dict")) b.dict = DictionaryRewriter::from_json(read_json_file(component_path(dir, "hir_dict")));
  if (has("hir_neural")) b.neural = GeneratorModel::from_json(read_json_file(component_path(dir, "hir_neural")));
  if (has("detector")) b.detector = HateDetector::from_json(read_json_file(component_path(dir, "detector")));
  stamp_manifest(b, cfg);
  save_bundle(b, dir);
}

std::atomic<bool> g_stop{false};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hate speech intensity reduction toolkit"};
  app.require_subcommand(1);

  // gen-corpus
  Common gen_common;
  std::string gen_out = "corpus.jsonl";
  std::string gen_split_dir;
  std::size_t gen_n = default_synthetic_config().num_samples;
  double gen_benign = default_synthetic_config().benign_fraction;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic parallel corpus as JSONL");
  add_common(gen, gen_common);
  gen->add_option("-o,--out", gen_out, "Output JSONL path");
  gen->add_option("-n,--num-samples", gen_n, "Number of samples");
  gen->add_option("--benign-fraction", gen_benign, "Share of span-free benign samples");
  gen->add_option("--split-dir", gen_split_dir, "Also write train/val/test.jsonl here");
  double split_val = 0.15, split_test = 0.15;
  gen->add_option("--val", split_val, "Validation share for --split-dir");
  gen->add_option("--test", split_test, "Test share for --split-dir");

  // train
  Common train_common;
  std::string train_stage = "all", train_path = "train.jsonl", val_path = "val.jsonl", train_bundle;
  std::string train_reward_mode;
  auto* train = app.add_subcommand("train", "Train one stage or the whole pipeline");
  add_common(train, train_common);
  train->add_option("stage", train_stage, "hip | hsi | hir | detector | virality | all")
      ->check(CLI::IsMember({"hip", "hsi", "hir", "detector", "virality", "all"}));
  train->add_option("--train", train_path, "Training corpus (JSONL)");
  train->add_option("--val", val_path, "Validation corpus (JSONL)");
  train->add_option("--bundle", train_bundle, "Output bundle directory");
  train->add_option("--reward-mode", train_reward_mode, "literal | weighted");

  // eval
  Common eval_common;
  std::string eval_bundle, eval_train = "train.jsonl", eval_test = "test.jsonl", eval_out, eval_engine;
  auto* eval = app.add_subcommand("eval", "Evaluate a bundle on a test corpus");
  add_common(eval, eval_common);
  eval->add_option("--bundle", eval_bundle, "Bundle directory");
  eval->add_option("--train", eval_train, "Training corpus (for the perplexity LM)");
  eval->add_option("--test", eval_test, "Test corpus");
  eval->add_option("-o,--out", eval_out, "Report path (default stdout)");
  eval->add_option("--engine", eval_engine, "dict | neural");

  // normalize
  Common norm_common;
  std::string norm_bundle, norm_text, norm_file, norm_engine;
  auto* norm = app.add_subcommand("normalize", "Analyze and rewrite text");
  add_common(norm, norm_common);
  norm->add_option("--bundle", norm_bundle, "Bundle directory");
  auto* text_opt = norm->add_option("--text", norm_text, "Text to analyze");
  auto* file_opt = norm->add_option("--file", norm_file, "File with one text per line");
  text_opt->excludes(file_opt);
  norm->add_option("--engine", norm_engine, "dict | neural");

  // experiment virality
  Common exp_common;
  std::string exp_bundle, exp_test = "test.jsonl", exp_out, exp_pairs = "pipeline";
  std::optional<std::size_t> exp_k, exp_iter;
  auto* experiment = app.add_subcommand("experiment", "Run an experiment");
  experiment->require_subcommand(1);
  auto* vir = experiment->add_subcommand("virality", "Paired engagement experiment");
  add_common(vir, exp_common);
  vir->add_option("--bundle", exp_bundle, "Bundle directory (needs virality.json)");
  vir->add_option("--test", exp_test, "Corpus providing the original samples");
  vir->add_option("--pairs", exp_pairs, "Source of the normalized side: pipeline | gold")
      ->check(CLI::IsMember({"pipeline", "gold"}));
  vir->add_option("-k", exp_k, "Pairs per iteration");
  vir->add_option("--iterations", exp_iter, "Number of iterations");
  vir->add_option("-o,--out", exp_out, "Report path (default stdout)");

  // serve
  Common serve_common;
  std::string serve_bundle, serve_host;
  std::optional<int> serve_port;
  double reload_seconds = 2.0;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  add_common(serve, serve_common);
  serve->add_option("--bundle", serve_bundle, "Bundle directory");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port");
  serve->add_option("--reload-interval", reload_seconds, "Seconds between bundle change checks (0 disables)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      PipelineConfig cfg = load_config(gen_common);
      (void)cfg;
      SyntheticConfig sc = default_synthetic_config();
      sc.num_samples = gen_n;
      sc.benign_fraction = gen_benign;
      const std::uint64_t seed = gen_common.seed.value_or(1);
      const Corpus corpus = generate_synthetic(sc, seed);
      save_corpus(corpus, gen_out);
      if (!gen_split_dir.empty()) {
        SplitSpec spec;
        spec.val = split_val;
        spec.test = split_test;
        spec.train = 1.0 - split_val - split_test;
        spec.seed = seed;
        const auto split = split_corpus(corpus, spec);
        fs::create_directories(gen_split_dir);
        save_corpus(split.train, (fs::path(gen_split_dir) / "train.jsonl").string());
        save_corpus(split.val, (fs::path(gen_split_dir) / "val.jsonl").string());
        save_corpus(split.test, (fs::path(gen_split_dir) / "test.jsonl").string());
      }
      return 0;
    }

    if (train->parsed()) {
      PipelineConfig cfg = load_config(train_common);
      if (!train_reward_mode.empty()) cfg.hir.reward_mode = reward_mode_from_string(train_reward_mode);
      const std::string dir = train_bundle.empty() ? cfg.bundle_dir : train_bundle;
      const Corpus tr = load_corpus(train_path);
      auto val = [&] { return load_corpus(val_path); };
      if (train_stage == "all") {
        const TrainedBundle b = train_all(tr, val(), cfg);
        save_bundle(b, dir);
        return 0;
      }
      if (train_stage == "hip") {
        save_component(dir, "hip", hip_train(tr, val(), cfg.hip).to_json());
      } else if (train_stage == "hsi") {
        save_component(dir, "hsi", hsi_train(tr, val(), cfg.hsi).to_json());
      } else if (train_stage == "hir") {
        const auto hip = IntensityModel::from_json(read_json_file(component_path(dir, "hip")));
        save_component(dir, "hir_dict", dict_build(tr).to_json());
        save_component(dir, "hir_neural", gen_train(tr, val(), hip, cfg.hir).to_json());
      } else if (train_stage == "detector") {
        save_component(dir, "detector", detector_train(detector_data(tr, cfg.bands), cfg.detector).to_json());
      } else if (train_stage == "virality") {
        save_component(dir, "virality", engagement_train(tr, lexicon_for(cfg), cfg.ridge).to_json());
        return 0;
      }
      refresh_manifest(dir, cfg);
      return 0;
    }

    if (eval->parsed()) {
      PipelineConfig cfg = load_config(eval_common);
      if (!eval_engine.empty()) cfg.engine = engine_kind_from_string(eval_engine);
      const TrainedBundle b = load_bundle(eval_bundle.empty() ? cfg.bundle_dir : eval_bundle);
      const EvalReport rep = evaluate(b, load_corpus(eval_train), load_corpus(eval_test), cfg);
      write_text(eval_out, rep.to_json().dump(2));
      return 0;
    }

    if (norm->parsed()) {
      PipelineConfig cfg = load_config(norm_common);
      if (!norm_engine.empty()) cfg.engine = engine_kind_from_string(norm_engine);
      const TrainedBundle b = load_bundle(norm_bundle.empty() ? cfg.bundle_dir : norm_bundle);
      if (!norm_file.empty()) {
        std::ifstream in(norm_file);
        if (!in) throw Error("cannot open " + norm_file);
        std::string line;
        while (std::getline(in, line)) {
          if (tokenize(line).empty()) continue;
          std::cout << outcome_to_json(analyze(b, line, cfg), std::nullopt).dump() << '\n';
        }
      } else {
        if (norm_text.empty()) throw ValidationError("text", "pass --text or --file");
        std::cout << outcome_to_json(analyze(b, norm_text, cfg), std::nullopt).dump(2) << '\n';
      }
      return 0;
    }

    if (vir->parsed()) {
      PipelineConfig cfg = load_config(exp_common);
      if (exp_k) cfg.virality.k = *exp_k;
      if (exp_iter) cfg.virality.n_iter = *exp_iter;
      const std::string dir = exp_bundle.empty() ? cfg.bundle_dir : exp_bundle;
      const auto predictor = EngagementPredictor::from_json(read_json_file(component_path(dir, "virality")));
      const Corpus test = load_corpus(exp_test);
      std::vector<std::pair<Sample, Sample>> pairs;
      std::optional<TrainedBundle> bundle;
      if (exp_pairs == "pipeline") bundle = load_bundle(dir);
      for (const Sample& s : test.samples()) {
        if (s.spans.empty()) continue;
        std::string text;
        if (bundle) {
          const auto o = analyze_tokens(*bundle, s.tokens, cfg);
          if (!o.suggestion) continue;
          text = o.suggestion->text;
        } else {
          if (!s.normalized_text) continue;
          text = *s.normalized_text;
        }
        if (tokenize(text).empty()) continue;
        pairs.emplace_back(s, Sample::make(s.id + "-norm", text, kMinIntensity, {}));
      }
      const auto rep = virality_experiment(predictor, pairs, cfg.virality);
      write_text(exp_out, rep.to_json().dump(2));
      return 0;
    }

    if (serve->parsed()) {
      PipelineConfig cfg = load_config(serve_common);
      if (!serve_host.empty()) cfg.host = serve_host;
      if (serve_port) cfg.port = *serve_port;
      const std::string dir = serve_bundle.empty() ? cfg.bundle_dir : serve_bundle;
      AnalyzeService service(cfg);
      std::string loaded_version;
      auto try_load = [&] {
        try {
          auto b = std::make_shared<const TrainedBundle>(load_bundle(dir));
          if (b->version() != loaded_version) {
            loaded_version = b->version();
            service.set_bundle(std::move(b));
            std::fprintf(stderr, "loaded bundle %s\n", loaded_version.c_str());
          }
        } catch (const std::exception& e) {
          if (loaded_version.empty()) std::fprintf(stderr, "bundle not loaded: %s\n", e.what());
        }
      };
      try_load();
      httplib::Server server;
      service.mount(server);
      std::thread watcher;
      if (reload_seconds > 0) {
        watcher = std::thread([&] {
          while (!g_stop.load()) {
            std::this_thread::sleep_for(std::chrono::duration<double>(reload_seconds));
            if (!g_stop.load()) try_load();
          }
        });
      }
      std::fprintf(stderr, "listening on %s:%d\n", cfg.host.c_str(), cfg.port);
      const bool ok = server.listen(cfg.host, cfg.port);
      g_stop = true;
      if (watcher.joinable()) watcher.join();
      if (!ok) throw Error("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
