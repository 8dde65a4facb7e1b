#include "trialsum/trial_store.hpp"

#include "trialsum/errors.hpp"
#include "trialsum/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace trialsum {

namespace {

const std::set<std::string> kRecordFields = {
    "id",     "title",  "abstract", "population",  "interventions", "outcomes",
    "punchline", "p_mesh", "i_mesh", "o_mesh", "sample_size", "rob"};

std::string field_error(std::string_view field, std::string_view what) {
  return "field \"" + std::string(field) + "\": " + std::string(what);
}

const nlohmann::json& require(const nlohmann::json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw InputError(field_error(field, "missing"));
  return *it;
}

std::string require_string(const nlohmann::json& j, const char* field) {
  const auto& v = require(j, field);
  if (!v.is_string()) throw InputError(field_error(field, "expected string"));
  return v.get<std::string>();
}

std::vector<std::string> require_terms(const nlohmann::json& j, const char* field) {
  const auto& v = require(j, field);
  if (!v.is_array()) throw InputError(field_error(field, "expected array of strings"));
  std::vector<std::string> out;
  for (const auto& t : v) {
    if (!t.is_string()) throw InputError(field_error(field, "expected array of strings"));
    auto n = normalize_term(t.get<std::string>());
    if (!n.empty()) out.push_back(std::move(n));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::string& TrialRecord::aspect_text(Aspect a) const {
  switch (a) {
    case Aspect::population: return population;
    case Aspect::interventions: return interventions;
    case Aspect::outcomes: return outcomes;
    case Aspect::punchline: return punchline;
  }
  return punchline;
}

std::string normalize_term(std::string_view term) {
  std::string out = trim(term);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

TrialRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("record is not a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kRecordFields.contains(key)) throw InputError(field_error(key, "unknown field"));
  }
  TrialRecord r;
  r.id = require_string(j, "id");
  if (trim(r.id).empty()) throw InputError(field_error("id", "empty"));
  r.title = require_string(j, "title");
  r.abstract = require_string(j, "abstract");
  r.population = require_string(j, "population");
  r.interventions = require_string(j, "interventions");
  r.outcomes = require_string(j, "outcomes");
  r.punchline = require_string(j, "punchline");
  for (Aspect a : kAllAspects) {
    if (normalize(r.aspect_text(a)).empty()) {
      throw InputError(field_error(aspect_name(a), "empty after normalization"));
    }
  }
  r.p_mesh = require_terms(j, "p_mesh");
  r.i_mesh = require_terms(j, "i_mesh");
  r.o_mesh = require_terms(j, "o_mesh");

  const auto& s = require(j, "sample_size");
  if (!s.is_number_integer()) throw InputError(field_error("sample_size", "expected integer"));
  r.sample_size = s.get<long>();
  if (r.sample_size < 1) throw InputError(field_error("sample_size", "must be >= 1"));

  const auto& rob = require(j, "rob");
  if (!rob.is_number()) throw InputError(field_error("rob", "expected number"));
  r.rob = rob.get<double>();
  if (!(r.rob > 0.0)) throw InputError(field_error("rob", "must be > 0"));
  return r;
}

nlohmann::json record_to_json(const TrialRecord& r) {
  return nlohmann::json{{"id", r.id},
                        {"title", r.title},
                        {"abstract", r.abstract},
                        {"population", r.population},
                        {"interventions", r.interventions},
                        {"outcomes", r.outcomes},
                        {"punchline", r.punchline},
                        {"p_mesh", r.p_mesh},
                        {"i_mesh", r.i_mesh},
                        {"o_mesh", r.o_mesh},
                        {"sample_size", r.sample_size},
                        {"rob", r.rob}};
}

bool ranks_before(const TrialRecord& a, const TrialRecord& b) {
  const double sa = score(a);
  const double sb = score(b);
  if (sa != sb) return sa > sb;
  if (a.sample_size != b.sample_size) return a.sample_size > b.sample_size;
  return a.id < b.id;
}

TrialStore TrialStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open trial record file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

TrialStore TrialStore::parse(std::string_view jsonl) {
  std::vector<TrialRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const std::string line = trim(jsonl.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return from_records(std::move(records));
}

TrialStore TrialStore::from_records(std::vector<TrialRecord> records) {
  TrialStore store;
  store.records_ = std::move(records);
  store.index();
  return store;
}

void TrialStore::index() {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!by_id_.emplace(r.id, i).second) throw InputError("duplicate record id \"" + r.id + "\"");
    for (const auto& t : r.p_mesh) p_index_[t].push_back(i);
    for (const auto& t : r.i_mesh) i_index_[t].push_back(i);
    for (const auto& t : r.o_mesh) o_index_[t].push_back(i);
  }
}

const TrialRecord* TrialStore::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const TrialRecord& TrialStore::at(std::string_view id) const {
  if (const auto* r = find(id)) return *r;
  throw NotFound("unknown trial id \"" + std::string(id) + "\"");
}

std::vector<RankedResult> TrialStore::search(const Query& query, const RetrievalConfig& config) const {
  if (query.empty()) throw InputError("query needs at least one term");
  if (config.k < 1) throw InputError("k must be >= 1");

  // Union of postings for one axis; nullopt when the axis is unconstrained.
  auto axis = [](const Postings& idx, const std::vector<std::string>& terms) -> std::optional<std::vector<std::size_t>> {
    if (terms.empty()) return std::nullopt;
    std::vector<std::size_t> ids;
    for (const auto& raw : terms) {
      auto it = idx.find(normalize_term(raw));
      if (it != idx.end()) ids.insert(ids.end(), it->second.begin(), it->second.end());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  };

  std::optional<std::vector<std::size_t>> hits;
  for (auto&& part : {axis(p_index_, query.population_terms), axis(i_index_, query.intervention_terms),
                      axis(o_index_, query.outcome_terms)}) {
    if (!part) continue;
    if (!hits) {
      hits = *part;
      continue;
    }
    std::vector<std::size_t> both;
    std::set_intersection(hits->begin(), hits->end(), part->begin(), part->end(), std::back_inserter(both));
    hits = std::move(both);
  }

  std::vector<std::size_t> ids = std::move(*hits);
  const auto k = std::min(ids.size(), static_cast<std::size_t>(config.k));
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::size_t a, std::size_t b) { return ranks_before(records_[a], records_[b]); });
  std::vector<RankedResult> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({records_[ids[i]], score(records_[ids[i]])});
  return out;
}

}  // namespace trialsum
