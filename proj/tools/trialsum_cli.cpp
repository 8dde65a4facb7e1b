// trialsum command line: corpus generation, training, evaluation, search,
// summarization, in-filling, gradient checks and the HTTP server. All data
// paths resolve against --data-dir.

#include "trialsum/checkpoint.hpp"
#include "trialsum/corpus_synth.hpp"
#include "trialsum/errors.hpp"
#include "trialsum/evaluation.hpp"
#include "trialsum/service.hpp"
#include "trialsum/template_engine.hpp"
#include "trialsum/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace trialsum;

namespace {

constexpr const char* kRecordsFile = "records.jsonl";
constexpr double kGradCheckTolerance = 1e-4;

struct Common {
  std::string data_dir = ".";
  bool json_out = false;
  std::string multihead_ckpt = "multihead.ckpt";
  std::string baseline_ckpt = "baseline.ckpt";
  std::string templates_file;
  std::size_t cache_size = 128;

  fs::path path(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : fs::path(data_dir) / q;
  }
};

struct QueryOpts {
  std::vector<std::string> ids;
  std::vector<std::string> population, intervention, outcome;
  std::optional<int> k;
};

struct DecodeOpts {
  std::optional<int> beam_size, min_len, max_len;
  std::optional<double> alpha;

  DecodeConfig apply(DecodeConfig c) const {
    if (beam_size) c.beam_size = *beam_size;
    if (min_len) c.min_len = *min_len;
    if (max_len) c.max_len = *max_len;
    if (alpha) c.alpha = *alpha;
    return c;
  }

  json to_json() const {
    json d = json::object();
    if (beam_size) d["beam_size"] = *beam_size;
    if (min_len) d["min_len"] = *min_len;
    if (max_len) d["max_len"] = *max_len;
    if (alpha) d["alpha"] = *alpha;
    return d;
  }
};

void add_query_options(CLI::App* cmd, QueryOpts& q) {
  cmd->add_option("--ids", q.ids, "Trial ids (comma separated)")->delimiter(',');
  cmd->add_option("--population", q.population, "Population MeSH terms")->delimiter(',');
  cmd->add_option("--intervention", q.intervention, "Intervention MeSH terms")->delimiter(',');
  cmd->add_option("--outcome", q.outcome, "Outcome MeSH terms")->delimiter(',');
  cmd->add_option("-k", q.k, "Number of trials retrieved for a query")->check(CLI::PositiveNumber);
}

void add_decode_options(CLI::App* cmd, DecodeOpts& d) {
  cmd->add_option("--beam-size", d.beam_size, "Beam width (default 3)");
  cmd->add_option("--min-len", d.min_len, "Minimum output length (default 10)");
  cmd->add_option("--max-len", d.max_len, "Maximum output length including EOS (default 300)");
  cmd->add_option("--alpha", d.alpha, "Length penalty exponent (default 0)");
}

// The request body the equivalent HTTP call would carry.
json request_body(const QueryOpts& q) {
  json body = json::object();
  if (!q.ids.empty()) body["trial_ids"] = q.ids;
  const bool has_query = !q.population.empty() || !q.intervention.empty() || !q.outcome.empty();
  if (has_query) {
    json query = json::object();
    if (!q.population.empty()) query["population"] = q.population;
    if (!q.intervention.empty()) query["intervention"] = q.intervention;
    if (!q.outcome.empty()) query["outcome"] = q.outcome;
    body["query"] = query;
  }
  if (q.k) body["k"] = *q.k;
  return body;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("failed writing " + p.string());
}

TrialStore load_store(const Common& c) { return TrialStore::load(c.path(kRecordsFile)); }

std::vector<SynthExample> load_split(const Common& c, const TrialStore& store, const std::string& split) {
  return load_examples(store, c.path(split + ".jsonl"));
}

std::shared_ptr<const Checkpoint> load_model(const Common& c, Architecture a, bool required) {
  const auto p = c.path(a == Architecture::multihead ? c.multihead_ckpt : c.baseline_ckpt);
  if (!fs::exists(p)) {
    if (required) throw InputError("checkpoint " + p.string() + " not found");
    return nullptr;
  }
  return std::make_shared<const Checkpoint>(load_checkpoint(p));
}

std::vector<Template> catalog(const Common& c) {
  return load_catalog(c.templates_file.empty() ? fs::path{} : c.path(c.templates_file));
}

Architecture architecture_of(const std::string& name) {
  const auto a = parse_architecture(name);
  if (!a) throw InputError("unknown model \"" + name + "\"");
  return *a;
}

// Prints a service response; a non-200 status becomes a one-line diagnostic.
int emit(const Response& r) {
  if (r.status == 200) {
    std::cout << r.body << "\n";
    return 0;
  }
  std::string message = r.body;
  try {
    message = json::parse(r.body).at("error").get<std::string>();
  } catch (const json::exception&) {
  }
  std::cerr << "trialsum: error (" << r.status << "): " << message << "\n";
  return 1;
}

// --- subcommands ------------------------------------------------------------

struct GenCorpusOpts {
  std::uint64_t seed = 0;
  int topics = 20;
  int trials = 5;
};

int gen_corpus(const Common& c, const GenCorpusOpts& o) {
  const std::vector<std::pair<std::string, std::uint64_t>> splits = {
      {"train", o.seed}, {"dev", o.seed + 1}, {"test", o.seed + 2}};
  std::vector<SynthExample> all;
  json summary = json::object();
  for (const auto& [name, seed] : splits) {
    SynthSpec spec;
    spec.seed = seed;
    spec.n_topics = o.topics;
    spec.trials_per_topic = o.trials;
    auto examples = generate(spec);
    write_file(c.path(name + ".jsonl"), targets_jsonl(examples));
    summary[name] = {{"seed", seed}, {"topics", examples.size()}};
    all.insert(all.end(), examples.begin(), examples.end());
  }
  write_file(c.path(kRecordsFile), records_jsonl(all));
  std::size_t n_records = 0;
  for (const auto& ex : all) n_records += ex.records.size();
  summary["records"] = n_records;
  if (c.json_out) {
    std::cout << summary.dump() << "\n";
  } else {
    std::cout << "wrote " << n_records << " records and " << all.size() << " topics to " << c.data_dir << "\n";
  }
  return 0;
}

int ingest_check(const Common& c, const std::vector<std::string>& splits) {
  const auto store = load_store(c);
  json report{{"records", store.size()}, {"splits", json::object()}};
  for (const auto& split : splits) {
    const auto examples = load_split(c, store, split);
    const auto vocab = training_vocabulary(examples);
    for (auto arch : {Architecture::multihead, Architecture::baseline}) {
      ModelConfig mc;
      mc.architecture = arch;
      mc.vocab_size = static_cast<int>(vocab.size());
      make_training_set(vocab, examples, mc);
    }
    report["splits"][split] = examples.size();
  }
  if (c.json_out) {
    std::cout << report.dump() << "\n";
  } else {
    std::cout << "ok: " << store.size() << " records";
    for (const auto& split : splits) std::cout << ", " << split << " " << report["splits"][split].get<std::size_t>();
    std::cout << "\n";
  }
  return 0;
}

struct TrainOpts {
  std::string model = "multihead";
  std::string preset = "toy";
  std::string split = "train";
  std::string out;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<double> target_loss;
  std::optional<int> width;
};

int train_cmd(const Common& c, const TrainOpts& o) {
  const auto arch = architecture_of(o.model);
  TrainConfig tc;
  if (o.preset == "toy") {
    tc = TrainConfig::toy();
  } else if (o.preset == "finetune") {
    tc = TrainConfig::finetune();
  } else {
    throw InputError("unknown preset \"" + o.preset + "\"");
  }
  tc.seed = o.seed;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.learning_rate) tc.learning_rate = *o.learning_rate;
  if (o.target_loss) tc.target_loss = *o.target_loss;

  const auto store = load_store(c);
  const auto examples = load_split(c, store, o.split);
  const auto vocab = training_vocabulary(examples);
  ModelConfig mc;
  mc.architecture = arch;
  mc.vocab_size = static_cast<int>(vocab.size());
  if (o.width) mc.width = *o.width;
  mc.validate();
  const auto data = make_training_set(vocab, examples, mc);
  SummaryModel<float> model(mc, init_params<float>(mc, o.init_seed));

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(model, data, tc, [&](const EpochStats& s) {
    if (c.json_out) return;
    std::printf("epoch %4d  loss %.6f  nll %.6f  aux %.6f\n", s.epoch, s.loss, s.nll, s.aux);
    std::fflush(stdout);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto& last = result.epochs.back();
  const json meta{{"preset", o.preset},
                  {"split", o.split},
                  {"seed", o.seed},
                  {"init_seed", o.init_seed},
                  {"epochs", last.epoch},
                  {"steps", result.steps},
                  {"final_loss", last.loss},
                  {"reached_target", result.reached_target}};
  const auto out = c.path(o.out.empty() ? o.model + ".ckpt" : o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, model, vocab, meta);

  if (c.json_out) {
    json epochs = json::array();
    for (const auto& s : result.epochs) {
      epochs.push_back({{"epoch", s.epoch}, {"loss", s.loss}, {"nll", s.nll}, {"aux", s.aux}});
    }
    json r = meta;
    r["checkpoint"] = out.string();
    r["parameters"] = parameter_count(model.params());
    r["seconds"] = seconds;
    r["history"] = epochs;
    std::cout << r.dump() << "\n";
  } else {
    std::printf("saved %s (%zu parameters, %d epochs, %.1f s)\n", out.string().c_str(),
                parameter_count(model.params()), last.epoch, seconds);
  }
  return 0;
}

struct EvalOpts {
  std::string model = "multihead";
  std::vector<std::string> splits = {"dev", "test"};
  DecodeOpts decode;
};

int eval_cmd(const Common& c, const EvalOpts& o) {
  const auto arch = architecture_of(o.model);
  const auto ckpt = load_model(c, arch, true);
  const auto store = load_store(c);
  const auto dc = o.decode.apply(DecodeConfig{});
  dc.validate();
  std::vector<EvalReport> reports;
  for (const auto& split : o.splits) {
    const auto examples = load_split(c, store, split);
    reports.push_back(evaluate_split(ckpt->model, ckpt->vocab, examples, dc, split));
  }
  if (c.json_out) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(to_json(r));
    std::cout << json{{"model", o.model}, {"reports", arr}}.dump() << "\n";
  } else {
    std::cout << format_table(reports);
  }
  return 0;
}

int search_cmd(const Common& c, const QueryOpts& q) {
  if (!q.ids.empty()) throw InputError("search takes MeSH terms, not --ids");
  std::multimap<std::string, std::string> params;
  auto add = [&](const char* key, const std::vector<std::string>& terms) {
    for (const auto& t : terms) params.emplace(key, t);
  };
  add("population", q.population);
  add("intervention", q.intervention);
  add("outcome", q.outcome);
  if (q.k) params.emplace("k", std::to_string(*q.k));
  const ServiceCore core(load_store(c), nullptr, nullptr, {});
  return emit(core.search(params));
}

int summarize_cmd(const Common& c, const std::string& model, const QueryOpts& q, const DecodeOpts& d) {
  const auto arch = architecture_of(model);
  json body = request_body(q);
  body["model"] = model;
  if (const auto dj = d.to_json(); !dj.empty()) body["decode"] = dj;
  ServiceConfig sc;
  sc.cache_size = c.cache_size;
  ServiceCore core(load_store(c), arch == Architecture::multihead ? load_model(c, arch, true) : nullptr,
                   arch == Architecture::baseline ? load_model(c, arch, true) : nullptr, catalog(c), sc);
  return emit(core.summarize(body.dump()));
}

int infill_cmd(const Common& c, const std::string& template_id, const QueryOpts& q) {
  json body = request_body(q);
  body["template_id"] = template_id;
  ServiceConfig sc;
  sc.cache_size = c.cache_size;
  ServiceCore core(load_store(c), load_model(c, Architecture::multihead, true), nullptr, catalog(c), sc);
  return emit(core.infill(body.dump()));
}

struct GradCheckOpts {
  std::string model = "both";
  std::size_t coordinates = 256;
  std::uint64_t seed = 0;
};

// Small double-precision model on one synthetic topic.
GradCheckResult run_gradcheck(Architecture arch, const GradCheckOpts& o) {
  SynthSpec spec;
  spec.seed = o.seed;
  spec.n_topics = 1;
  spec.trials_per_topic = 2;
  const auto examples = generate(spec);
  const auto vocab = training_vocabulary(examples);
  ModelConfig mc;
  mc.architecture = arch;
  mc.vocab_size = static_cast<int>(vocab.size());
  mc.width = 16;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 2;
  mc.n_aspect_layers = 1;
  const auto example = make_training_example(vocab, examples.front().records, examples.front().target, mc);
  SummaryModel<double> model(mc, init_params<double>(mc, o.seed));
  GradCheckConfig gc;
  gc.coordinates = o.coordinates;
  gc.seed = o.seed;
  return gradient_check(model, example, gc);
}

int gradcheck_cmd(const Common& c, const GradCheckOpts& o) {
  std::vector<Architecture> archs;
  if (o.model == "both") {
    archs = {Architecture::multihead, Architecture::baseline};
  } else {
    archs = {architecture_of(o.model)};
  }
  bool ok = true;
  json results = json::array();
  for (auto a : archs) {
    const auto r = run_gradcheck(a, o);
    const bool pass = r.max_rel_error < kGradCheckTolerance;
    ok = ok && pass;
    if (c.json_out) {
      results.push_back({{"model", architecture_name(a)},
                         {"max_rel_error", r.max_rel_error},
                         {"max_abs_error", r.max_abs_error},
                         {"coordinates", r.coordinates},
                         {"gate_coordinates", r.gate_coordinates},
                         {"pass", pass}});
    } else {
      std::printf("%-9s max_rel_error %.3e  max_abs_error %.3e  coordinates %zu (gate %zu)  %s\n",
                  std::string(architecture_name(a)).c_str(), r.max_rel_error, r.max_abs_error, r.coordinates,
                  r.gate_coordinates, pass ? "PASS" : "FAIL");
    }
  }
  if (c.json_out) std::cout << json{{"tolerance", kGradCheckTolerance}, {"results", results}}.dump() << "\n";
  if (!ok) std::cerr << "trialsum: error: gradient check exceeded tolerance " << kGradCheckTolerance << "\n";
  return ok ? 0 : 1;
}

struct ServeOpts {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
};

int serve_cmd(const Common& c, const ServeOpts& o) {
  ServiceConfig sc;
  sc.cache_size = c.cache_size;
  ServiceCore core(load_store(c), load_model(c, Architecture::multihead, false),
                   load_model(c, Architecture::baseline, false), catalog(c), sc);
  HttpServer server(core, o.static_dir.empty() ? std::string{} : c.path(o.static_dir).string());
  const int port = server.bind(o.host, o.port);
  if (port < 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));
  std::cout << "listening on http://" << o.host << ":" << port << "\n" << std::flush;
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aspect-structured summaries of clinical trial records"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Optional TOML/INI file with option values; flags override it");

  Common c;
  app.add_option("--data-dir", c.data_dir, "Root for all data paths")->envname("TRIALSUM_DATA_DIR");
  app.add_flag("--json", c.json_out, "Machine-readable output");
  app.add_option("--multihead-ckpt", c.multihead_ckpt, "Multi-head checkpoint")->envname("TRIALSUM_MULTIHEAD_CKPT");
  app.add_option("--baseline-ckpt", c.baseline_ckpt, "Baseline checkpoint")->envname("TRIALSUM_BASELINE_CKPT");
  app.add_option("--templates", c.templates_file, "Extra template catalog (JSON array)");
  app.add_option("--cache-size", c.cache_size, "Summary cache entries")->envname("TRIALSUM_CACHE_SIZE");

  GenCorpusOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic corpus (train, dev and test splits)");
  gen_cmd->add_option("--seed", gen.seed, "Seed of the train split; dev and test use seed+1 and seed+2");
  gen_cmd->add_option("--topics", gen.topics, "Topics per split")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--trials", gen.trials, "Trials per topic")->check(CLI::PositiveNumber);

  std::vector<std::string> check_splits = {"train", "dev", "test"};
  auto* check_cmd = app.add_subcommand("ingest-check", "Validate the records and target files");
  check_cmd->add_option("--splits", check_splits, "Splits to check")->delimiter(',');

  TrainOpts tr;
  auto* train_sub = app.add_subcommand("train", "Train a model and write its checkpoint");
  train_sub->add_option("--model", tr.model, "multihead or baseline");
  train_sub->add_option("--preset", tr.preset, "toy or finetune");
  train_sub->add_option("--split", tr.split, "Training split");
  train_sub->add_option("--out", tr.out, "Checkpoint path (default <model>.ckpt)");
  train_sub->add_option("--seed", tr.seed, "Shuffling seed");
  train_sub->add_option("--init-seed", tr.init_seed, "Parameter initialisation seed");
  train_sub->add_option("--epochs", tr.epochs, "Maximum epochs");
  train_sub->add_option("--lr", tr.learning_rate, "Learning rate");
  train_sub->add_option("--target-loss", tr.target_loss, "Stop below this mean epoch loss (0 disables)");
  train_sub->add_option("--width", tr.width, "Model width");

  EvalOpts ev;
  auto* eval_sub = app.add_subcommand("eval", "ROUGE-L and directionality on held-out splits");
  eval_sub->add_option("--model", ev.model, "multihead or baseline");
  eval_sub->add_option("--splits", ev.splits, "Splits to evaluate")->delimiter(',');
  add_decode_options(eval_sub, ev.decode);

  QueryOpts search_q;
  auto* search_sub = app.add_subcommand("search", "Rank trials for a MeSH query");
  add_query_options(search_sub, search_q);

  QueryOpts sum_q;
  DecodeOpts sum_d;
  std::string sum_model = "multihead";
  auto* sum_sub = app.add_subcommand("summarize", "Summarize trials; prints the /summarize response");
  sum_sub->add_option("--model", sum_model, "multihead or baseline");
  add_query_options(sum_sub, sum_q);
  add_decode_options(sum_sub, sum_d);

  QueryOpts inf_q;
  std::string template_id;
  auto* inf_sub = app.add_subcommand("infill", "Fill a template; prints the /infill response");
  inf_sub->add_option("--template", template_id, "Template id")->required();
  add_query_options(inf_sub, inf_q);

  GradCheckOpts gc;
  auto* gc_sub = app.add_subcommand("gradcheck", "Analytic against finite-difference gradients");
  gc_sub->add_option("--model", gc.model, "multihead, baseline or both");
  gc_sub->add_option("--coordinates", gc.coordinates, "Sampled coordinates besides the gate");
  gc_sub->add_option("--seed", gc.seed, "Seed for data, initialisation and sampling");

  ServeOpts sv;
  auto* serve_sub = app.add_subcommand("serve", "Serve the JSON API over HTTP");
  serve_sub->add_option("--host", sv.host, "Bind address");
  serve_sub->add_option("--port", sv.port, "Port (0 picks a free one)")->envname("TRIALSUM_PORT");
  serve_sub->add_option("--static-dir", sv.static_dir, "Directory served under /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "trialsum: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) return gen_corpus(c, gen);
    if (*check_cmd) return ingest_check(c, check_splits);
    if (*train_sub) return train_cmd(c, tr);
    if (*eval_sub) return eval_cmd(c, ev);
    if (*search_sub) return search_cmd(c, search_q);
    if (*sum_sub) return summarize_cmd(c, sum_model, sum_q, sum_d);
    if (*inf_sub) return infill_cmd(c, template_id, inf_q);
    if (*gc_sub) return gradcheck_cmd(c, gc);
    if (*serve_sub) return serve_cmd(c, sv);
  } catch (const std::exception& e) {
    std::cerr << "trialsum: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
