#include "support.hpp"

#include "trialsum/service.hpp"

#include <doctest.h>
#include <httplib.h>

#include <thread>

using namespace trialsum;
using namespace trialsum::testing;
using nlohmann::json;

namespace {

std::shared_ptr<const Checkpoint> checkpoint(const Vocabulary& vocab, Architecture arch) {
  auto c = tiny_config(arch, static_cast<int>(vocab.size()), 16);
  c.max_src_len = 96;
  c.max_tgt_len = 64;
  return std::make_shared<const Checkpoint>(Checkpoint{vocab, SummaryModel<float>(c, init_params<float>(c, 3)), {}});
}

struct Fixture {
  SynthFixture fx{0, 6, 3};
  std::shared_ptr<const Checkpoint> multihead = checkpoint(fx.vocab, Architecture::multihead);
  std::shared_ptr<const Checkpoint> baseline = checkpoint(fx.vocab, Architecture::baseline);

  ServiceCore core(std::size_t cache = 128) const {
    ServiceConfig sc;
    sc.cache_size = cache;
    sc.decode = DecodeConfig{2, 2, 12, 0.0};
    return ServiceCore(fx.store, multihead, baseline, builtin_templates(), sc);
  }
  std::string ids(std::size_t topic) const {
    json a = json::array();
    for (const auto& r : fx.examples[topic].records) a.push_back(r.id);
    return a.dump();
  }
};

/// Serves one core over HTTP on an ephemeral port for the fixture's lifetime.
struct Served {
  HttpServer server;
  int port;
  std::thread thread;
  explicit Served(ServiceCore& core) : server(core), port(server.bind("127.0.0.1", 0)) {
    thread = std::thread([this] { server.listen(); });
  }
  ~Served() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json body_of(const Response& r) { return json::parse(r.body); }

}  // namespace

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("lru cache evicts the least recently used entry") {
  LruCache<int> c(2);
  c.put("a", std::make_shared<const int>(1));
  c.put("b", std::make_shared<const int>(2));
  CHECK(*c.get("a") == 1);
  c.put("c", std::make_shared<const int>(3));
  CHECK(c.get("b") == nullptr);
  CHECK(*c.get("a") == 1);
  CHECK(*c.get("c") == 3);
  c.put("a", std::make_shared<const int>(4));
  CHECK(*c.get("a") == 4);
  CHECK(c.size() == 2);
  LruCache<int> none(0);
  none.put("a", std::make_shared<const int>(1));
  CHECK(none.get("a") == nullptr);
}

TEST_CASE("summaries carry the warning and are reproducible") {
  const Fixture f;
  auto core = f.core();
  auto fresh = f.core();
  for (const char* model : {"multihead", "baseline"}) {
    const std::string req = R"({"trial_ids": )" + f.ids(0) + R"(, "model": ")" + model + R"("})";
    const auto a = core.summarize(req);
    REQUIRE(a.status == 200);
    const auto j = body_of(a);
    CHECK(j["warning"] == std::string(kWarning));
    CHECK(j["model"] == model);
    CHECK(j["trial_ids"] == json::parse(f.ids(0)));
    CHECK(j["request_hash"].get<std::string>().size() == 16);
    CHECK(core.summarize(req).body == a.body);
    CHECK(fresh.summarize(req).body == a.body);
    std::string joined;
    for (const auto& t : j["tokens"]) {
      joined += (joined.empty() ? "" : " ") + t["text"].get<std::string>();
      if (std::string(model) == "baseline") {
        CHECK(t["aspect"].is_null());
        CHECK(t["confidence"].is_null());
      } else {
        CHECK(t["aspect"].is_string());
        CHECK(t["confidence"].get<double>() >= 0.25);
      }
    }
    CHECK(joined == j["summary"]);
  }
  CHECK(core.cache_entries() == 2);
}

TEST_CASE("query-based requests resolve through retrieval") {
  const Fixture f;
  auto core = f.core();
  const auto& r0 = f.fx.examples[0].records[0];
  const json q{{"query", {{"intervention", r0.i_mesh[0]}, {"outcome", r0.o_mesh[0]}}}, {"k", 2}};
  const auto a = core.summarize(q.dump());
  REQUIRE(a.status == 200);
  CHECK(body_of(a)["trial_ids"].size() <= 2);
  const auto s = core.search({{"intervention", r0.i_mesh[0]}});
  REQUIRE(s.status == 200);
  CHECK(body_of(s)["k"] == 5);
  CHECK(body_of(s)["results"].size() <= 5);
  const auto s1 = core.search({{"intervention", r0.i_mesh[0]}, {"k", "1"}});
  CHECK(body_of(s1)["results"].size() == 1);
}

TEST_CASE("status codes") {
  const Fixture f;
  auto core = f.core();
  const std::multimap<std::string, std::string> none;
  CHECK(core.handle("POST", "/summarize", none, "{").status == 400);
  CHECK(core.handle("POST", "/summarize", none, "[]").status == 400);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": ["x"], "colour": 1})").status == 400);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": ["nope"]})").status == 404);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": []})").status == 422);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": ["s0-t0-r0"], "model": "giant"})").status == 400);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": ["s0-t0-r0"], "decode": {"beam_size": 40}})").status ==
        400);
  CHECK(core.handle("POST", "/summarize", none, R"({"trial_ids": ["s0-t0-r0"], "decode": {"max_len": 65}})").status ==
        400);
  CHECK(core.handle("GET", "/summarize", none, "").status == 405);
  CHECK(core.handle("GET", "/nowhere", none, "").status == 404);
  CHECK(core.handle("GET", "/search", none, "").status == 400);
  CHECK(core.handle("GET", "/search", {{"k", "0"}, {"outcome", "pain"}}, "").status == 400);
  CHECK(core.handle("GET", "/search", {{"colour", "red"}}, "").status == 400);
  CHECK(core.handle("GET", "/trials/s0-t0-r0", none, "").status == 200);
  CHECK(core.handle("GET", "/trials/missing", none, "").status == 404);
  CHECK(core.handle("DELETE", "/trials/s0-t0-r0", none, "").status == 405);
  CHECK(core.handle("POST", "/infill", none, R"({"template_id": "nope", "trial_ids": ["s0-t0-r0"]})").status == 404);
  CHECK(core.handle("POST", "/infill", none, R"({"template_id": "effective", "trial_ids": ["s0-t0-r0"], "model": "baseline"})")
            .status == 422);
  CHECK(core.handle("POST", "/provenance", none, R"({"request_hash": "0000000000000000", "token_index": 0})").status ==
        404);
  CHECK(core.handle("POST", "/provenance", none, R"({"request_hash": 5, "token_index": 0})").status == 400);
  const auto err = body_of(core.handle("GET", "/trials/missing", none, ""));
  CHECK(err["error"].get<std::string>().find("missing") != std::string::npos);

  ServiceCore partial(f.fx.store, f.multihead, nullptr, builtin_templates());
  CHECK(partial.summarize(R"({"trial_ids": ["s0-t0-r0"], "model": "baseline"})").status == 400);
}

TEST_CASE("infill and provenance") {
  const Fixture f;
  auto core = f.core();
  const auto r = core.infill(R"({"template_id": "no_effect", "trial_ids": )" + f.ids(1) + "}");
  REQUIRE(r.status == 200);
  const auto j = body_of(r);
  CHECK(j["warning"] == std::string(kWarning));
  CHECK(j["direction"] == "no_effect");
  const auto hash = j["request_hash"].get<std::string>();
  std::size_t literal = j["tokens"].size(), generated = j["tokens"].size();
  for (std::size_t i = 0; i < j["tokens"].size(); ++i) {
    if (j["tokens"][i]["literal"]) literal = std::min(literal, i);
    else generated = std::min(generated, i);
  }
  REQUIRE(literal < j["tokens"].size());
  REQUIRE(generated < j["tokens"].size());

  auto prov = [&](std::size_t i) {
    return core.provenance(json{{"request_hash", hash}, {"token_index", i}}.dump());
  };
  const auto lit = body_of(prov(literal));
  CHECK(lit["literal"] == true);
  CHECK(lit["aspect"].is_null());
  CHECK(lit["note"] == std::string(kLiteralProvenance));
  const auto gen = body_of(prov(generated));
  CHECK(gen["literal"] == false);
  CHECK(gen["aspect"] == j["tokens"][generated]["aspect"]);
  REQUIRE(gen["snippets"].size() == f.fx.examples[1].records.size());
  for (std::size_t k = 0; k < gen["snippets"].size(); ++k) {
    const auto& rec = f.fx.examples[1].records[k];
    CHECK(gen["snippets"][k]["trial_id"] == rec.id);
    CHECK(rec.abstract.find(gen["snippets"][k]["text"].get<std::string>()) != std::string::npos);
  }
  CHECK(prov(j["tokens"].size()).status == 422);

  const auto base = body_of(core.summarize(R"({"trial_ids": )" + f.ids(1) + R"(, "model": "baseline"})"));
  const auto none = body_of(core.provenance(json{{"request_hash", base["request_hash"]}, {"token_index", 0}}.dump()));
  CHECK(none["aspect"].is_null());
  CHECK(none["note"] == std::string(kNoProvenance));
}

TEST_CASE("provenance expires with the cache entry") {
  const Fixture f;
  auto core = f.core(1);
  const auto a = body_of(core.summarize(R"({"trial_ids": )" + f.ids(0) + "}"));
  core.summarize(R"({"trial_ids": )" + f.ids(1) + "}");
  CHECK(core.cache_entries() == 1);
  CHECK(core.provenance(json{{"request_hash", a["request_hash"]}, {"token_index", 0}}.dump()).status == 404);
}

TEST_CASE("http responses equal the core's bytes") {
  const Fixture f;
  auto served_core = f.core();
  auto direct = f.core();
  const Served s(served_core);
  REQUIRE(s.port > 0);
  auto cli = s.client();

  const std::string sum = R"({"trial_ids": )" + f.ids(2) + "}";
  auto res = cli.Post("/summarize", sum, "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == direct.summarize(sum).body);
  CHECK(res->get_header_value("Content-Type").starts_with("application/json"));

  const std::string inf = R"({"template_id": "effective", "trial_ids": )" + f.ids(3) + "}";
  res = cli.Post("/infill", inf, "application/json");
  REQUIRE(res);
  CHECK(res->body == direct.infill(inf).body);

  const auto& r0 = f.fx.examples[0].records[0];
  res = cli.Get("/search?intervention=" + httplib::detail::encode_url(r0.i_mesh[0]) + "&k=3");
  REQUIRE(res);
  CHECK(res->body == direct.search({{"intervention", r0.i_mesh[0]}, {"k", "3"}}).body);

  res = cli.Get("/templates");
  REQUIRE(res);
  CHECK(res->body == direct.templates().body);
  res = cli.Get("/trials/" + r0.id);
  REQUIRE(res);
  CHECK(res->body == direct.trial(r0.id).body);

  res = cli.Get("/trials/none");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = cli.Put("/summarize", sum, "application/json");
  REQUIRE(res);
  CHECK(res->status == 405);
  res = cli.Post("/summarize", "{", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
}
