#include <gtest/gtest.h>

#include <thread>

#include "hatenorm/service.hpp"

using namespace hatenorm;

namespace {

// Hand-built bundle: no training, so the HTTP contract is tested in
// isolation from model quality.
std::shared_ptr<const TrainedBundle> hand_bundle() {
  auto b = std::make_shared<TrainedBundle>();
  nn::Vocab v;
  for (const char* t : {"you", "v*rmin", "nice", "day"}) v.add(t);
  b->hip = IntensityModel(v, 3, 3, 3);
  Rng rng(1);
  b->hip.init(rng, 9.0);  // everything scores far above the threshold
  std::vector<std::string> names;
  const Tokens probe{"you", "v*rmin", "nice"};
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (auto& f : token_features(probe, i)) names.push_back(f);
  }
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  b->hsi = CrfModel::feature(names);
  b->hsi.feature_weight("bias", BioTag::O) = 1.0;
  b->hsi.feature_weight("shape=star", BioTag::B) = 5.0;
  b->dict = DictionaryRewriter::from_entries({{{"v*rmin"}, {"people"}}}, std::vector<Tokens>{{"v*rmin"}});
  PipelineConfig cfg;
  stamp_manifest(*b, cfg);
  return b;
}

PipelineConfig dict_config() {
  PipelineConfig cfg;
  cfg.engine = EngineKind::kDict;
  cfg.max_tokens = 8;
  return cfg;
}

}  // namespace

TEST(Service, UnavailableWithoutBundle) {
  AnalyzeService svc(dict_config());
  const auto h = svc.health();
  EXPECT_EQ(h.status, 503);
  EXPECT_EQ(h.body, R"({"status":"unavailable","bundle_version":null})");
  EXPECT_EQ(svc.analyze(R"({"text":"hello"})").status, 503);
  // Malformed requests are rejected before the bundle is consulted.
  EXPECT_EQ(svc.analyze("{not json").status, 400);
}

TEST(Service, RequestValidation) {
  AnalyzeService svc(dict_config());
  svc.set_bundle(hand_bundle());
  EXPECT_EQ(svc.analyze("").status, 400);
  EXPECT_EQ(svc.analyze("[1,2]").status, 400);
  EXPECT_EQ(svc.analyze(R"({"txt":"a"})").status, 400);
  EXPECT_EQ(svc.analyze(R"({"text":5})").status, 400);
  EXPECT_EQ(svc.analyze(R"({"text":"  \t "})").status, 400);
  const auto big = svc.analyze(R"({"text":"a b c d e f g h i"})");
  EXPECT_EQ(big.status, 400);
  EXPECT_NE(big.body.find("limit is 8"), std::string::npos);
  EXPECT_TRUE(nlohmann::json::parse(big.body).contains("error"));
}

TEST(Service, AnalyzeResponseSchema) {
  AnalyzeService svc(dict_config());
  const auto b = hand_bundle();
  svc.set_bundle(b);
  const auto r = svc.analyze(R"({"text":"you v*rmin"})");
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = nlohmann::ordered_json::parse(r.body);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"intensity", "band", "spans", "suggestion", "flag", "latency_ms"}));
  EXPECT_TRUE(j["latency_ms"].is_number_integer());
  EXPECT_EQ(j["spans"].dump(), R"([{"start":1,"end":1,"text":"v*rmin"}])");
  EXPECT_EQ(j["suggestion"]["text"], "you people");
  // Same as the in-process pipeline, apart from latency.
  auto expect = outcome_to_json(analyze(*b, "you v*rmin", dict_config()), std::nullopt);
  auto got = j;
  got.erase("latency_ms");
  EXPECT_EQ(got.dump(), expect.dump());

  const auto h = svc.health();
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(nlohmann::json::parse(h.body)["bundle_version"], b->version());
}

TEST(Service, ServesOverHttp) {
  AnalyzeService svc(dict_config());
  svc.set_bundle(hand_bundle());
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  const auto h = cli.Get("/v1/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  const auto a = cli.Post("/v1/analyze", R"({"text":"nice day"})", "application/json");
  ASSERT_TRUE(a);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->get_header_value("Content-Type"), "application/json");
  const auto bad = cli.Post("/v1/analyze", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  server.stop();
  th.join();
}
