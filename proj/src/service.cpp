#include "trialsum/service.hpp"

#include "trialsum/errors.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdio>
#include <set>

namespace trialsum {

namespace {

using json = nlohmann::json;

// Carries an HTTP status out of request handling.
struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void fail(int status, std::string message) { throw HttpError{status, std::move(message)}; }

Response reply(int status, const json& body) { return {status, body.dump()}; }

Response error_reply(int status, std::string_view message) { return reply(status, json{{"error", message}}); }

json parse_body(std::string_view body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) fail(400, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail(400, std::string("malformed JSON: ") + e.what());
  }
}

void check_fields(const json& j, const std::set<std::string>& allowed) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) fail(400, "unknown field \"" + key + "\"");
  }
}

std::vector<std::string> split_terms(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find(',', pos);
    if (end == std::string_view::npos) end = s.size();
    auto t = normalize_term(s.substr(pos, end - pos));
    if (!t.empty()) out.push_back(std::move(t));
    pos = end + 1;
  }
  return out;
}

// A JSON string (comma separated) or array of strings.
std::vector<std::string> json_terms(const json& j, const char* field) {
  if (!j.contains(field)) return {};
  const auto& v = j.at(field);
  if (v.is_string()) return split_terms(v.get<std::string>());
  if (!v.is_array()) fail(400, std::string("field \"") + field + "\": expected string or array of strings");
  std::vector<std::string> out;
  for (const auto& t : v) {
    if (!t.is_string()) fail(400, std::string("field \"") + field + "\": expected strings");
    auto n = normalize_term(t.get<std::string>());
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

int parse_k(const json& v) {
  if (!v.is_number_integer()) fail(400, "field \"k\": expected integer");
  const int k = v.get<int>();
  if (k < 1) fail(400, "field \"k\": must be >= 1");
  return k;
}

json record_summary(const RankedResult& r) {
  const auto& t = r.record;
  return {{"id", t.id},
          {"title", t.title},
          {"score", r.score},
          {"sample_size", t.sample_size},
          {"rob", t.rob},
          {"population", t.population},
          {"interventions", t.interventions},
          {"outcomes", t.outcomes},
          {"punchline", t.punchline}};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Architecture parse_model(const json& j) {
  if (!j.contains("model")) return Architecture::multihead;
  if (!j.at("model").is_string()) fail(400, "field \"model\": expected string");
  const auto a = parse_architecture(j.at("model").get<std::string>());
  if (!a) fail(400, "field \"model\": expected \"multihead\" or \"baseline\"");
  return *a;
}

json decode_json(const DecodeConfig& c) {
  return {{"beam_size", c.beam_size}, {"min_len", c.min_len}, {"max_len", c.max_len}, {"alpha", c.alpha}};
}

json trial_ids_json(std::span<const TrialRecord> records) {
  json ids = json::array();
  for (const auto& r : records) ids.push_back(r.id);
  return ids;
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ServiceCore::Cached {
  std::string body;
  std::vector<TrialRecord> records;
  std::vector<std::string> texts;
  std::vector<std::optional<TokenAttribution>> attributions;  // empty optional: none available
  std::vector<bool> literal;
  bool has_provenance = false;
};

ServiceCore::ServiceCore(TrialStore store, std::shared_ptr<const Checkpoint> multihead,
                         std::shared_ptr<const Checkpoint> baseline, std::vector<Template> catalog, ServiceConfig config)
    : store_(std::move(store)),
      multihead_(std::move(multihead)),
      baseline_(std::move(baseline)),
      catalog_(std::move(catalog)),
      config_(config),
      cache_(config.cache_size) {
  config_.decode.validate();
  if (multihead_ && multihead_->model.architecture() != Architecture::multihead) {
    throw InputError("the multihead checkpoint holds a baseline model");
  }
  if (baseline_ && baseline_->model.architecture() != Architecture::baseline) {
    throw InputError("the baseline checkpoint holds a multihead model");
  }
}

std::shared_ptr<const Checkpoint> ServiceCore::model_for(Architecture a) const {
  auto m = a == Architecture::multihead ? multihead_ : baseline_;
  if (!m) fail(400, "model \"" + std::string(architecture_name(a)) + "\" is not loaded");
  return m;
}

std::vector<TrialRecord> ServiceCore::resolve_records(const json& j) const {
  const bool has_ids = j.contains("trial_ids");
  const bool has_query = j.contains("query");
  if (has_ids == has_query) fail(400, "exactly one of \"trial_ids\" and \"query\" is required");
  if (j.contains("k") && !has_query) fail(400, "field \"k\" is only valid with \"query\"");
  std::vector<TrialRecord> out;
  if (has_ids) {
    const auto& ids = j.at("trial_ids");
    if (!ids.is_array()) fail(400, "field \"trial_ids\": expected array of strings");
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (!id.is_string()) fail(400, "field \"trial_ids\": expected array of strings");
      const auto s = id.get<std::string>();
      if (!seen.insert(s).second) fail(400, "duplicate trial id \"" + s + "\"");
      const auto* r = store_.find(s);
      if (!r) fail(404, "unknown trial id \"" + s + "\"");
      out.push_back(*r);
    }
    return out;
  }
  const auto& q = j.at("query");
  if (!q.is_object()) fail(400, "field \"query\": expected object");
  check_fields(q, {"population", "intervention", "outcome"});
  Query query{json_terms(q, "population"), json_terms(q, "intervention"), json_terms(q, "outcome")};
  if (query.empty()) fail(400, "query needs at least one term");
  RetrievalConfig rc;
  if (j.contains("k")) rc.k = parse_k(j.at("k"));
  for (auto& r : store_.search(query, rc)) out.push_back(std::move(r.record));
  return out;
}

Response ServiceCore::search(const std::multimap<std::string, std::string>& params) const {
  try {
    static const std::set<std::string> allowed = {"population", "intervention", "outcome", "k"};
    Query q;
    RetrievalConfig rc;
    for (const auto& [key, value] : params) {
      if (!allowed.contains(key)) fail(400, "unknown parameter \"" + key + "\"");
      auto terms = split_terms(value);
      if (key == "population") q.population_terms.insert(q.population_terms.end(), terms.begin(), terms.end());
      if (key == "intervention") q.intervention_terms.insert(q.intervention_terms.end(), terms.begin(), terms.end());
      if (key == "outcome") q.outcome_terms.insert(q.outcome_terms.end(), terms.begin(), terms.end());
      if (key == "k") {
        int k = 0;
        const auto* end = value.data() + value.size();
        const auto [p, ec] = std::from_chars(value.data(), end, k);
        if (ec != std::errc() || p != end || k < 1) fail(400, "parameter \"k\" must be a positive integer");
        rc.k = k;
      }
    }
    if (q.empty()) fail(400, "query needs at least one term");
    json results = json::array();
    for (const auto& r : store_.search(q, rc)) results.push_back(record_summary(r));
    return reply(200, json{{"k", rc.k}, {"results", results}});
  } catch (const HttpError& e) {
    return error_reply(e.status, e.message);
  } catch (const InputError& e) {
    return error_reply(400, e.what());
  }
}

Response ServiceCore::summarize(std::string_view body) {
  try {
    const auto j = parse_body(body);
    check_fields(j, {"trial_ids", "query", "k", "model", "decode"});
    const Architecture arch = parse_model(j);
    const auto ckpt = model_for(arch);
    auto records = resolve_records(j);

    DecodeConfig dc = config_.decode;
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      if (!d.is_object()) fail(400, "field \"decode\": expected object");
      check_fields(d, {"beam_size", "min_len", "max_len", "alpha"});
      try {
        if (d.contains("beam_size")) dc.beam_size = d.at("beam_size").get<int>();
        if (d.contains("min_len")) dc.min_len = d.at("min_len").get<int>();
        if (d.contains("max_len")) dc.max_len = d.at("max_len").get<int>();
        if (d.contains("alpha")) dc.alpha = d.at("alpha").get<double>();
      } catch (const json::exception&) {
        fail(400, "field \"decode\": expected numeric settings");
      }
    }
    dc.validate();
    if (dc.max_len > ckpt->model.config().max_tgt_len) fail(400, "max_len exceeds the model's max_tgt_len");

    const json key{{"endpoint", "summarize"},
                   {"model", architecture_name(arch)},
                   {"trial_ids", trial_ids_json(records)},
                   {"decode", decode_json(dc)}};
    const std::string hash = hex64(fnv1a(key.dump()));
    if (auto hit = cache_.get(hash)) return {200, hit->body};

    if (records.empty()) fail(422, "no trials to summarize");
    const auto bundle = make_bundle(ckpt->vocab, records, ckpt->model.config().max_src_len);
    if (bundle.empty()) fail(422, "empty aspect bundle");
    const ModelSession<float> session(ckpt->model, bundle);
    const auto result = beam_search(session, dc);

    auto cached = std::make_shared<Cached>();
    cached->records = std::move(records);
    cached->has_provenance = arch == Architecture::multihead;
    json tokens = json::array();
    std::string summary;
    for (std::size_t i = 0; i < result.tokens.size(); ++i) {
      const TokenId id = result.tokens[i];
      if (special::is_special(id) && id != special::unk) continue;
      const auto& text = ckpt->vocab.token(id);
      std::optional<TokenAttribution> at;
      if (cached->has_provenance) at = attribute(result.trace[i]);
      tokens.push_back({{"text", text},
                        {"aspect", at ? json(aspect_name(at->aspect)) : json(nullptr)},
                        {"confidence", nullable(at ? std::optional(at->confidence) : std::nullopt)}});
      if (!summary.empty()) summary.push_back(' ');
      summary += text;
      cached->texts.push_back(text);
      cached->attributions.push_back(std::move(at));
      cached->literal.push_back(false);
    }
    const json out{{"summary", summary},
                   {"tokens", tokens},
                   {"trial_ids", trial_ids_json(cached->records)},
                   {"model", architecture_name(arch)},
                   {"warning", kWarning},
                   {"request_hash", hash}};
    cached->body = out.dump();
    cache_.put(hash, cached);
    return {200, cached->body};
  } catch (const HttpError& e) {
    return error_reply(e.status, e.message);
  } catch (const NotFound& e) {
    return error_reply(404, e.what());
  } catch (const InputError& e) {
    return error_reply(400, e.what());
  }
}

Response ServiceCore::infill(std::string_view body) {
  try {
    const auto j = parse_body(body);
    check_fields(j, {"template_id", "trial_ids", "query", "k", "model"});
    if (!j.contains("template_id") || !j.at("template_id").is_string()) {
      fail(400, "field \"template_id\": expected string");
    }
    const auto tid = j.at("template_id").get<std::string>();
    const Template* tmpl = find_template(catalog_, tid);
    if (!tmpl) fail(404, "unknown template \"" + tid + "\"");
    const Architecture arch = parse_model(j);
    if (arch != Architecture::multihead) fail(422, "template in-filling needs the multihead model");
    const auto ckpt = model_for(arch);
    auto records = resolve_records(j);

    const json key{{"endpoint", "infill"},
                   {"model", architecture_name(arch)},
                   {"template_id", tid},
                   {"trial_ids", trial_ids_json(records)},
                   {"min_blank_len", config_.infill.min_blank_len},
                   {"blank_cap", config_.infill.blank_cap}};
    const std::string hash = hex64(fnv1a(key.dump()));
    if (auto hit = cache_.get(hash)) return {200, hit->body};

    if (records.empty()) fail(422, "no trials to summarize");
    const auto bundle = make_bundle(ckpt->vocab, records, ckpt->model.config().max_src_len);
    if (bundle.empty()) fail(422, "empty aspect bundle");
    const ModelSession<float> session(ckpt->model, bundle);
    InfillResult result;
    try {
      result = trialsum::infill(*tmpl, session, bundle, ckpt->vocab, config_.infill);
    } catch (const InputError& e) {
      fail(422, e.what());
    }

    auto cached = std::make_shared<Cached>();
    cached->records = std::move(records);
    cached->has_provenance = true;
    json tokens = json::array();
    for (std::size_t i = 0; i < result.tokens.size(); ++i) {
      const bool lit = result.literal[i];
      std::optional<TokenAttribution> at;
      if (!lit) at = attribute(result.trace[i]);
      tokens.push_back({{"text", result.texts[i]},
                        {"aspect", at ? json(aspect_name(at->aspect)) : json(nullptr)},
                        {"confidence", nullable(at ? std::optional(at->confidence) : std::nullopt)},
                        {"literal", lit}});
      cached->texts.push_back(result.texts[i]);
      cached->attributions.push_back(std::move(at));
      cached->literal.push_back(lit);
    }
    json spans = json::array();
    for (const auto& s : result.spans) {
      spans.push_back({{"begin", s.begin}, {"end", s.end}, {"aspect", aspect_name(s.aspect)}, {"truncated", s.truncated}});
    }
    const json out{{"summary", result.text},
                   {"tokens", tokens},
                   {"spans", spans},
                   {"template_id", tid},
                   {"direction", direction_name(tmpl->direction)},
                   {"trial_ids", trial_ids_json(cached->records)},
                   {"model", architecture_name(arch)},
                   {"warning", kWarning},
                   {"request_hash", hash}};
    cached->body = out.dump();
    cache_.put(hash, cached);
    return {200, cached->body};
  } catch (const HttpError& e) {
    return error_reply(e.status, e.message);
  } catch (const NotFound& e) {
    return error_reply(404, e.what());
  } catch (const Unsupported& e) {
    return error_reply(422, e.what());
  } catch (const InputError& e) {
    return error_reply(400, e.what());
  }
}

Response ServiceCore::templates() const {
  json list = json::array();
  for (const auto& t : catalog_) list.push_back(template_to_json(t));
  return reply(200, json{{"templates", list}});
}

Response ServiceCore::trial(std::string_view id) const {
  const auto* r = store_.find(id);
  if (!r) return error_reply(404, "unknown trial id \"" + std::string(id) + "\"");
  return reply(200, record_to_json(*r));
}

Response ServiceCore::provenance(std::string_view body) {
  try {
    const auto j = parse_body(body);
    check_fields(j, {"request_hash", "token_index"});
    if (!j.contains("request_hash") || !j.at("request_hash").is_string()) {
      fail(400, "field \"request_hash\": expected string");
    }
    if (!j.contains("token_index") || !j.at("token_index").is_number_integer()) {
      fail(400, "field \"token_index\": expected integer");
    }
    const auto cached = cache_.get(j.at("request_hash").get<std::string>());
    if (!cached) fail(404, "unknown or expired request_hash");
    const auto index = j.at("token_index").get<long long>();
    if (index < 0 || static_cast<std::size_t>(index) >= cached->texts.size()) {
      fail(422, "token_index " + std::to_string(index) + " out of range for " + std::to_string(cached->texts.size()) +
                    " tokens");
    }
    const auto i = static_cast<std::size_t>(index);
    ProvenanceView view;
    if (cached->literal[i]) {
      view = no_provenance(cached->texts[i], kLiteralProvenance);
      view.literal = true;
    } else if (!cached->has_provenance) {
      view = no_provenance(cached->texts[i]);
    } else {
      const TokenAttribution& at = *cached->attributions[i];
      view = snippets_for_token(0, std::span(&cached->texts[i], 1), std::span(&at, 1), cached->records);
    }
    return reply(200, to_json(view));
  } catch (const HttpError& e) {
    return error_reply(e.status, e.message);
  } catch (const InputError& e) {
    return error_reply(400, e.what());
  }
}

Response ServiceCore::handle(std::string_view method, std::string_view path,
                             const std::multimap<std::string, std::string>& params, std::string_view body) {
  auto expect = [&](std::string_view m) { return method == m; };
  if (path == "/search") return expect("GET") ? search(params) : error_reply(405, "method not allowed");
  if (path == "/summarize") return expect("POST") ? summarize(body) : error_reply(405, "method not allowed");
  if (path == "/infill") return expect("POST") ? infill(body) : error_reply(405, "method not allowed");
  if (path == "/templates") return expect("GET") ? templates() : error_reply(405, "method not allowed");
  if (path == "/provenance") return expect("POST") ? provenance(body) : error_reply(405, "method not allowed");
  constexpr std::string_view trials = "/trials/";
  if (path.starts_with(trials) && path.size() > trials.size()) {
    return expect("GET") ? trial(path.substr(trials.size())) : error_reply(405, "method not allowed");
  }
  return error_reply(404, "no such endpoint");
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(ServiceCore& core, const std::string& static_dir) : impl_(std::make_unique<Impl>()) {
  auto& s = impl_->server;
  if (!static_dir.empty() && !s.set_mount_point("/ui", static_dir)) {
    throw InputError("static directory " + static_dir + " does not exist");
  }
  auto handler = [&core](const httplib::Request& req, httplib::Response& res) {
    std::multimap<std::string, std::string> params(req.params.begin(), req.params.end());
    const auto r = core.handle(req.method, req.path, params, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json; charset=utf-8");
  };
  s.Get(R"(/.*)", handler);
  s.Post(R"(/.*)", handler);
  s.Put(R"(/.*)", handler);
  s.Delete(R"(/.*)", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& s = impl_->server;
  if (port == 0) return s.bind_to_any_port(host);
  return s.bind_to_port(host, port) ? port : -1;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace trialsum
