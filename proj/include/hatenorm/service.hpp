#pragma once

// HTTP front end. Handlers are plain functions over a request body so they
// can be exercised without a socket; mount() wires them into an httplib
// server.

#include <chrono>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "hatenorm/pipeline.hpp"

namespace hatenorm {

struct HttpReply {
  int status = 200;
  std::string body;
};

class AnalyzeService {
 public:
  explicit AnalyzeService(PipelineConfig cfg) : cfg_(std::move(cfg)) {}

  // Readers holding the previous snapshot keep it alive until they finish.
  void set_bundle(std::shared_ptr<const TrainedBundle> b) {
    std::lock_guard<std::mutex> lock(mu_);
    bundle_ = std::move(b);
  }

  std::shared_ptr<const TrainedBundle> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return bundle_;
  }

  const PipelineConfig& config() const { return cfg_; }

  HttpReply analyze(const std::string& body) const {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
      return error(400, "request body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("text") || !req.at("text").is_string()) {
      return error(400, "request needs a string field 'text'");
    }
    const auto bundle = snapshot();
    if (!bundle) return error(503, "no model bundle loaded");
    const Tokens tokens = tokenize(req.at("text").get<std::string>());
    if (tokens.empty()) return error(400, "text is empty");
    if (tokens.size() > cfg_.max_tokens) {
      return error(400, "text has " + std::to_string(tokens.size()) + " tokens; the limit is " +
                            std::to_string(cfg_.max_tokens));
    }
    NormalizationOutcome out;
    try {
      out = analyze_tokens(*bundle, tokens, cfg_);
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {200, outcome_to_json(out, static_cast<std::int64_t>(std::llround(ms))).dump()};
  }

  HttpReply health() const {
    const auto bundle = snapshot();
    nlohmann::ordered_json j;
    if (!bundle) {
      j["status"] = "unavailable";
      j["bundle_version"] = nullptr;
      return {503, j.dump()};
    }
    j["status"] = "ok";
    j["bundle_version"] = bundle->version();
    return {200, j.dump()};
  }

  void mount(httplib::Server& server) const {
    server.Post("/v1/analyze", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, analyze(req.body));
    });
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  }

 private:
  static HttpReply error(int status, const std::string& msg) {
    nlohmann::ordered_json j;
    j["error"] = msg;
    return {status, j.dump()};
  }

  static void send(httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  }

  PipelineConfig cfg_;
  mutable std::mutex mu_;
  std::shared_ptr<const TrainedBundle> bundle_;
};

}  // namespace hatenorm
