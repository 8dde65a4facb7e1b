#pragma once

#include "trialsum/aspect.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trialsum {

struct TrialRecord {
  std::string id;
  std::string title;
  std::string abstract;
  std::string population;
  std::string interventions;
  std::string outcomes;
  std::string punchline;
  // normalised (lowercase, trimmed), sorted, unique
  std::vector<std::string> p_mesh;
  std::vector<std::string> i_mesh;
  std::vector<std::string> o_mesh;
  long sample_size = 1;
  double rob = 1.0;

  const std::string& aspect_text(Aspect a) const;
};

/// Parses one record object; throws InputError naming the offending field.
TrialRecord record_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const TrialRecord& r);

/// Lowercased and trimmed.
std::string normalize_term(std::string_view term);

struct Query {
  std::vector<std::string> population_terms;
  std::vector<std::string> intervention_terms;
  std::vector<std::string> outcome_terms;

  bool empty() const {
    return population_terms.empty() && intervention_terms.empty() && outcome_terms.empty();
  }
};

struct RetrievalConfig {
  int k = 5;
};

struct RankedResult {
  TrialRecord record;
  double score = 0.0;
};

/// Ranking score: sample size over risk-of-bias (larger, more reliable trials first).
inline double score(const TrialRecord& r) { return static_cast<double>(r.sample_size) / r.rob; }

/// Strict weak order used by search: score desc, sample_size desc, id asc.
bool ranks_before(const TrialRecord& a, const TrialRecord& b);

/// Immutable, in-memory set of trial records indexed by id and MeSH term.
class TrialStore {
 public:
  TrialStore() = default;

  /// Reads JSON-lines; throws InputError with line number and field on bad input.
  static TrialStore load(const std::filesystem::path& path);
  static TrialStore parse(std::string_view jsonl);
  static TrialStore from_records(std::vector<TrialRecord> records);

  std::size_t size() const { return records_.size(); }
  std::span<const TrialRecord> records() const { return records_; }

  const TrialRecord* find(std::string_view id) const;
  /// Throws NotFound.
  const TrialRecord& at(std::string_view id) const;

  /// Records whose MeSH sets intersect every non-empty query axis, best first, at most k.
  std::vector<RankedResult> search(const Query& query, const RetrievalConfig& config = {}) const;

 private:
  using Postings = std::map<std::string, std::vector<std::size_t>, std::less<>>;

  void index();

  std::vector<TrialRecord> records_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
  Postings p_index_, i_index_, o_index_;
};

}  // namespace trialsum
