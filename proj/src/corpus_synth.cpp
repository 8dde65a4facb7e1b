#include "trialsum/corpus_synth.hpp"

#include "embedded_data.hpp"
#include "trialsum/errors.hpp"
#include "trialsum/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

namespace trialsum {

namespace {

std::vector<PhraseBanks::Term> read_terms(const nlohmann::json& j, const char* key) {
  std::vector<PhraseBanks::Term> out;
  for (const auto& t : j.at(key)) out.push_back({t.at("text").get<std::string>(), t.at("mesh").get<std::string>()});
  if (out.empty()) throw InputError(std::string("phrase bank '") + key + "' is empty");
  return out;
}

std::vector<std::string> read_frames(const nlohmann::json& j) {
  auto out = j.get<std::vector<std::string>>();
  if (out.empty()) throw InputError("phrase bank frame list is empty");
  return out;
}

std::map<Direction, std::vector<std::string>> read_directional(const nlohmann::json& j) {
  std::map<Direction, std::vector<std::string>> out;
  for (Direction d : {Direction::effective, Direction::no_effect, Direction::inconclusive}) {
    out[d] = read_frames(j.at(std::string(direction_name(d))));
  }
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string fill(std::string frame, const std::string& p, const std::string& i, const std::string& o) {
  frame = replace_all(std::move(frame), "{P}", p);
  frame = replace_all(std::move(frame), "{I}", i);
  return replace_all(std::move(frame), "{O}", o);
}

// rng() % n keeps the corpus identical across standard libraries.
std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
const T& choose(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[pick(rng, v.size())];
}

}  // namespace

PhraseBanks PhraseBanks::from_json(const nlohmann::json& j) {
  try {
    PhraseBanks b;
    b.populations = read_terms(j, "populations");
    b.interventions = read_terms(j, "interventions");
    b.outcomes = read_terms(j, "outcomes");
    b.population_frames = read_frames(j.at("population_frames"));
    b.intervention_frames = read_frames(j.at("intervention_frames"));
    b.outcome_frames = read_frames(j.at("outcome_frames"));
    b.title_frames = read_frames(j.at("title_frames"));
    b.punchline_frames = read_directional(j.at("punchline_frames"));
    b.target_frames = read_directional(j.at("target_frames"));
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed phrase banks: ") + e.what());
  }
}

const PhraseBanks& PhraseBanks::builtin() {
  static const PhraseBanks banks = from_json(nlohmann::json::parse(embedded::phrase_banks()));
  return banks;
}

std::string render_target_frame(std::string_view frame, std::string_view intervention, std::string_view outcome,
                                std::string_view population) {
  const Aspect punch = Aspect::punchline;
  const auto& tags = special::strings();
  auto open = [&](Aspect a) { return tags[static_cast<std::size_t>(special::open_tag(a))]; };
  auto close = [&](Aspect a) { return tags[static_cast<std::size_t>(special::close_tag(a))]; };

  std::string out;
  bool in_literal = false;
  auto emit = [&](std::string_view s) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  };
  std::istringstream words{std::string(frame)};
  std::string w;
  while (words >> w) {
    std::optional<std::pair<Aspect, std::string_view>> slot;
    if (w == "[I]") slot = {{Aspect::interventions, intervention}};
    if (w == "[O]") slot = {{Aspect::outcomes, outcome}};
    if (w == "[P]") slot = {{Aspect::population, population}};
    if (slot) {
      if (in_literal) emit(close(punch));
      in_literal = false;
      emit(open(slot->first));
      emit(slot->second);
      emit(close(slot->first));
    } else {
      if (!in_literal) emit(open(punch));
      in_literal = true;
      emit(w);
    }
  }
  if (in_literal) emit(close(punch));
  return out;
}

std::vector<SynthExample> generate(const SynthSpec& spec, const PhraseBanks& banks) {
  if (spec.n_topics < 1 || spec.trials_per_topic < 1) throw InputError("n_topics and trials_per_topic must be >= 1");
  if (!spec.directions.empty() && spec.directions.size() != static_cast<std::size_t>(spec.n_topics)) {
    throw InputError("directions must be empty or have one entry per topic");
  }
  std::mt19937_64 rng(spec.seed);
  const Direction all[] = {Direction::effective, Direction::no_effect, Direction::inconclusive};

  std::vector<SynthExample> out;
  for (int t = 0; t < spec.n_topics; ++t) {
    const auto& pop = choose(rng, banks.populations);
    const auto& itv = choose(rng, banks.interventions);
    const auto& oc = choose(rng, banks.outcomes);
    const Direction dir = spec.directions.empty() ? all[pick(rng, 3)] : spec.directions[static_cast<std::size_t>(t)];

    SynthExample ex;
    ex.topic_id = "s" + std::to_string(spec.seed) + "-t" + std::to_string(t);
    ex.direction = dir;
    ex.target = render_target_frame(choose(rng, banks.target_frames.at(dir)), itv.text, oc.text, pop.text);

    for (int r = 0; r < spec.trials_per_topic; ++r) {
      TrialRecord rec;
      rec.id = ex.topic_id + "-r" + std::to_string(r);
      rec.population = fill(choose(rng, banks.population_frames), pop.text, itv.text, oc.text);
      rec.interventions = fill(choose(rng, banks.intervention_frames), pop.text, itv.text, oc.text);
      rec.outcomes = fill(choose(rng, banks.outcome_frames), pop.text, itv.text, oc.text);
      rec.punchline = fill(choose(rng, banks.punchline_frames.at(dir)), pop.text, itv.text, oc.text);
      rec.title = fill(choose(rng, banks.title_frames), pop.text, itv.text, oc.text);
      rec.abstract = rec.population + ". " + rec.interventions + ". " + rec.outcomes + ". " + rec.punchline + ".";
      rec.p_mesh = {normalize_term(pop.mesh), "humans"};
      std::sort(rec.p_mesh.begin(), rec.p_mesh.end());
      rec.p_mesh.erase(std::unique(rec.p_mesh.begin(), rec.p_mesh.end()), rec.p_mesh.end());
      rec.i_mesh = {normalize_term(itv.mesh)};
      rec.o_mesh = {normalize_term(oc.mesh)};
      rec.sample_size = 20 + static_cast<long>(pick(rng, 1981));
      rec.rob = static_cast<double>(1 + pick(rng, 1000)) / 1000.0;
      ex.records.push_back(std::move(rec));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::string> lexicon(const PhraseBanks& banks) {
  std::vector<std::string> out;
  for (const auto* terms : {&banks.populations, &banks.interventions, &banks.outcomes}) {
    for (const auto& t : *terms) out.push_back(t.text);
  }
  auto strip = [](std::string s) {
    for (std::string_view slot : {"{P}", "{I}", "{O}", "[P]", "[I]", "[O]"}) s = replace_all(std::move(s), slot, " ");
    return s;
  };
  for (const auto* frames :
       {&banks.population_frames, &banks.intervention_frames, &banks.outcome_frames, &banks.title_frames}) {
    for (const auto& f : *frames) out.push_back(strip(f));
  }
  for (const auto* m : {&banks.punchline_frames, &banks.target_frames}) {
    for (const auto& [_, frames] : *m) {
      for (const auto& f : frames) out.push_back(strip(f));
    }
  }
  return out;
}

Vocabulary training_vocabulary(std::span<const SynthExample> examples, const PhraseBanks& banks) {
  std::vector<std::string> corpus = lexicon(banks);
  for (const auto& ex : examples) {
    corpus.push_back(ex.target);
    for (const auto& r : ex.records) {
      for (Aspect a : kAllAspects) corpus.push_back(r.aspect_text(a));
    }
  }
  return Vocabulary::build(corpus);
}

std::string strip_tags(std::string_view tagged) {
  std::string out;
  for (const auto& t : split_tokens(tagged)) {
    if (t.size() > 2 && t.front() == '<' && t.back() == '>') continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::string records_jsonl(const std::vector<SynthExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    for (const auto& r : ex.records) {
      out += record_to_json(r).dump();
      out.push_back('\n');
    }
  }
  return out;
}

std::string targets_jsonl(const std::vector<SynthExample>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& r : ex.records) ids.push_back(r.id);
    nlohmann::json j{{"topic_id", ex.topic_id},
                     {"trial_ids", ids},
                     {"target", ex.target},
                     {"direction", direction_name(ex.direction)}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<SynthExample> parse_examples(const TrialStore& store, std::string_view text) {
  std::vector<SynthExample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SynthExample ex;
      ex.topic_id = j.at("topic_id").get<std::string>();
      ex.target = j.at("target").get<std::string>();
      const auto dir = parse_direction(j.at("direction").get<std::string>());
      if (!dir) throw InputError("field \"direction\": unknown direction");
      ex.direction = *dir;
      for (const auto& id : j.at("trial_ids")) ex.records.push_back(store.at(id.get<std::string>()));
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("targets line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw InputError("targets line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SynthExample> load_examples(const TrialStore& store, const std::filesystem::path& targets_path) {
  std::ifstream in(targets_path, std::ios::binary);
  if (!in) throw InputError("cannot open targets file " + targets_path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_examples(store, ss.str());
}

}  // namespace trialsum
