#include "rax/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "rax/config.hpp"
#include "rax/error.hpp"
#include "rax/matrix.hpp"
#include "rax/metrics.hpp"
#include "rax/model.hpp"
#include "rax/parallel.hpp"
#include "rax/shap.hpp"
#include "rax/time.hpp"

namespace rax {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Flags shared by every subcommand. Empty/unset values leave the config alone.
struct CommonFlags {
  std::string config;
  std::optional<unsigned> threads;
  std::optional<std::uint64_t> seed;
  std::string store;
  std::string model;
  std::string reports;
};

struct Flags {
  CommonFlags common;
  // ingest
  std::string crashes, persons, vehicles;
  // split
  std::optional<std::size_t> n_test, n_train;
  // train
  std::string model_kind, strategy;
  std::optional<int> rounds;
  // shap / explain
  std::size_t limit = 1000;
  bool jsonl = false;
  std::string backend, url;
  std::optional<double> threshold;
  // align
  std::string narratives;
  // ablate / synth
  std::optional<std::size_t> events;
  std::string raw_dir;
  std::vector<std::string> strategies;
  // score
  std::string source = "test";
};

struct Context {
  PipelineConfig cfg;
  unsigned threads = 1;
  std::ostream* out = nullptr;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("unwritable_file", "cannot write " + path.string());
    f << text;
    if (!f) throw DataError("unwritable_file", "cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path report(const Context& c, const std::string& name) { return c.cfg.paths.reports / name; }

void check_config_schema(const PipelineConfig& cfg) {
  if (cfg.schema_hash && *cfg.schema_hash != canonical_schema().hash()) {
    throw DataError("schema_mismatch", "config schema " + hash_hex(*cfg.schema_hash) + " does not match " +
                                           hash_hex(canonical_schema().hash()));
  }
}

FeatureStore open_store(const Context& c, bool must_exist) {
  check_config_schema(c.cfg);
  if (must_exist && !fs::exists(c.cfg.paths.store / "manifest.json"))
    throw DataError("missing_store", "no feature store at " + c.cfg.paths.store.string());
  return FeatureStore(c.cfg.paths.store);
}

Model load_model(const Context& c) {
  check_config_schema(c.cfg);
  if (!fs::exists(c.cfg.paths.model)) throw DataError("missing_model", "no model file at " + c.cfg.paths.model.string());
  auto m = Model::load(c.cfg.paths.model);
  m.check_schema(canonical_schema().hash());
  return m;
}

std::vector<EventFeatureRow> select_ids(const std::vector<EventFeatureRow>& all, const Json& ids) {
  std::unordered_map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < all.size(); ++i) index[all[i].collision_id] = i;
  std::vector<EventFeatureRow> out;
  for (const auto& id : ids) {
    auto it = index.find(id.get<std::int64_t>());
    if (it == index.end()) throw DataError("stale_split", "split lists an id missing from the store; rerun split");
    out.push_back(all[it->second]);
  }
  return out;
}

// The materialized split when present, otherwise a fresh temporal split.
TemporalSplit load_split(const Context& c, const FeatureStore& store) {
  const auto path = report(c, "split.json");
  if (!fs::exists(path)) return store.temporal_split(c.cfg.split);
  std::ifstream in(path);
  const auto j = Json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("train_ids") || !j.contains("test_ids"))
    throw DataError("bad_split", "split file " + path.string() + " is malformed");
  const auto all = store.all_rows();
  return {select_ids(all, j["train_ids"]), select_ids(all, j["test_ids"])};
}

Json run_ingest(Context& c, const Flags&) {
  const auto& p = c.cfg.paths;
  for (const auto& [what, path] : {std::pair{"crashes", p.crashes}, {"persons", p.persons}, {"vehicles", p.vehicles}}) {
    if (path.empty()) throw ConfigError("missing_input", std::string("no input path for ") + what);
    if (!fs::exists(path)) throw ConfigError("missing_input", std::string(what) + " file not found: " + path.string());
  }
  auto store = open_store(c, false);
  const auto crashes = parse_crash_table(p.crashes, c.cfg.crash_columns);
  const auto persons = parse_person_table(p.persons, c.cfg.person_columns);
  const auto vehicles = parse_vehicle_table(p.vehicles, c.cfg.vehicle_columns);
  const auto joined = join_tables(crashes.records, persons.records, vehicles.records);
  store.write_rows(joined.rows);
  const Json rep = {{"crashes", crashes.report.to_json()},
                    {"persons", persons.report.to_json()},
                    {"vehicles", vehicles.report.to_json()},
                    {"events", joined.rows.size()},
                    {"duplicate_crashes", joined.duplicate_crashes},
                    {"unmatched_persons", joined.unmatched_persons},
                    {"unmatched_vehicles", joined.unmatched_vehicles},
                    {"partitions", store.manifest().partitions.size()}};
  write_json(report(c, "ingest.json"), rep);
  return rep;
}

Json run_split(Context& c, const Flags&) {
  const auto store = open_store(c, true);
  const auto split = store.temporal_split(c.cfg.split);
  Json train_ids = Json::array(), test_ids = Json::array();
  for (const auto& r : split.train) train_ids.push_back(r.collision_id);
  for (const auto& r : split.test) test_ids.push_back(r.collision_id);
  const Json j = {{"n_train", split.train.size()},
                  {"n_test", split.test.size()},
                  {"train_end", format_timestamp(split.train.back().timestamp)},
                  {"test_start", format_timestamp(split.test.front().timestamp)},
                  {"train_ids", train_ids},
                  {"test_ids", test_ids}};
  write_json(report(c, "split.json"), j);
  return {{"n_train", split.train.size()}, {"n_test", split.test.size()}};
}

Json run_train(Context& c, const Flags&) {
  const auto store = open_store(c, true);
  const auto split = load_split(c, store);
  const auto prepared = apply_strategy(c.cfg.imbalance, split.train, c.cfg.seed);
  const auto x = FeatureMatrix::from_rows(prepared.rows);
  const auto y = labels_of(prepared.rows);
  const auto start = std::chrono::steady_clock::now();
  Json extra = Json::object();
  std::optional<Model> model;
  switch (c.cfg.model.kind) {
    case ModelKindName::Boosted: {
      auto b = c.cfg.model.boost;
      b.class_weights = prepared.class_weights;
      b.seed = c.cfg.seed;
      BoostTrace trace;
      model.emplace(fit_gradient_boosting(x, y, *prepared.objective, b, &trace));
      extra = {{"initial_loss", trace.loss.front()}, {"final_loss", trace.loss.back()}};
      break;
    }
    case ModelKindName::Forest: {
      auto f = c.cfg.model.forest;
      f.class_weights = prepared.class_weights;
      f.seed = c.cfg.seed;
      f.threads = c.threads;
      model.emplace(fit_random_forest(x, y, f));
      break;
    }
    case ModelKindName::Logistic: {
      auto l = c.cfg.model.logistic;
      l.class_weights = prepared.class_weights;
      const auto lm = fit_logistic(x, y, l);
      extra = {{"converged", lm.converged}, {"iterations", lm.iterations}};
      model.emplace(lm);
      break;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  model->save(c.cfg.paths.model);
  Json j = {{"model", to_string(c.cfg.model.kind)},
            {"strategy", c.cfg.imbalance.name()},
            {"n_train", split.train.size()},
            {"augmentation", prepared.report.to_json()},
            {"class_weights", prepared.class_weights},
            {"model_file", c.cfg.paths.model.string()},
            {"fit_seconds", seconds}};
  j.update(extra);
  write_json(report(c, "train.json"), j);
  return j;
}

Json run_evaluate(Context& c, const Flags&) {
  const auto model = load_model(c);
  const auto store = open_store(c, true);
  const auto split = load_split(c, store);
  const auto pred = predict_class(model, split.test);
  const auto rep = evaluate(labels_of(split.test), pred);
  // Label the metrics with what train actually fitted when its report is available.
  std::string kind(to_string(c.cfg.model.kind)), strategy = c.cfg.imbalance.name();
  if (std::ifstream in(report(c, "train.json")); in) {
    const auto t = Json::parse(in, nullptr, false);
    if (!t.is_discarded()) {
      kind = t.value("model", kind);
      strategy = t.value("strategy", strategy);
    }
  }
  const auto j = metrics_json(rep, kind, strategy);
  write_json(report(c, "metrics.json"), j);
  write_text(report(c, "correlation.csv"), correlation_matrix(split.train, numeric_features()).to_csv());
  return j;
}

std::vector<EventFeatureRow> first_n(std::vector<EventFeatureRow> rows, std::size_t limit) {
  if (limit > 0 && rows.size() > limit) rows.resize(limit);
  return rows;
}

Json run_shap(Context& c, const Flags& f) {
  const auto model = load_model(c);
  const auto store = open_store(c, true);
  const auto rows = first_n(load_split(c, store).test, f.limit);
  const ShapExplainer explainer(model);
  const auto attrs = explainer.explain_rows(rows, canonical_schema(), c.threads);
  const auto ranking = global_importance(attrs);
  write_text(report(c, "shap_importance.csv"), importance_csv(ranking));
  if (f.jsonl) {
    std::string lines;
    for (const auto& a : attrs) lines += attribution_json(a, explainer.scale()).dump() + "\n";
    write_text(report(c, "shap_events.jsonl"), lines);
  }
  Json top = Json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(5, ranking.size()); ++i)
    top.push_back({{"feature", ranking[i].name}, {"mean_abs_shap", ranking[i].mean_abs_shap}});
  return {{"events", attrs.size()}, {"scale", explainer.scale()}, {"top5", top}};
}

Json run_explain(Context& c, const Flags&) {
  const auto model = load_model(c);
  const auto store = open_store(c, true);
  const auto test = load_split(c, store).test;
  const auto proba = predict_proba(model, test);
  std::vector<EventFeatureRow> gated;
  std::vector<ClassVector> gated_p;
  for (std::size_t i = 0; i < test.size() && gated.size() < c.cfg.narrative.max_events; ++i) {
    if (gate(proba[i], c.cfg.gating)) {
      gated.push_back(test[i]);
      gated_p.push_back(proba[i]);
    }
  }
  const ShapExplainer explainer(model);
  const auto attrs = explainer.explain_rows(gated, canonical_schema(), c.threads);
  std::vector<NarrativeRequest> requests;
  for (std::size_t i = 0; i < gated.size(); ++i) {
    NarrativeRequest r;
    r.collision_id = gated[i].collision_id;
    r.prompt = make_prompt(gated[i]);
    augment_with_probs(r.prompt, gated_p[i]);
    r.proba = gated_p[i];
    r.shap_top = top_features(attrs[i], c.cfg.narrative.top_k);
    requests.push_back(std::move(r));
  }
  std::unique_ptr<NarrativeBackend> backend;
  unsigned in_flight = c.threads;
  if (c.cfg.narrative.backend == "http") {
    backend = std::make_unique<HttpBackend>(c.cfg.narrative.http);
    in_flight = c.cfg.narrative.http.max_in_flight;
  } else {
    backend = std::make_unique<TemplateBackend>(c.cfg.narrative.lexicon);
  }
  const auto results = generate_narratives(*backend, requests, in_flight);
  std::string lines;
  double latency = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto j = results[i].to_json();
    j["shap_top"] = requests[i].shap_top;
    j["proba"] = requests[i].proba;
    lines += j.dump() + "\n";
    latency += results[i].latency.count();
  }
  write_text(report(c, "narratives.jsonl"), lines);
  return {{"test_events", test.size()},
          {"gated", gated.size()},
          {"backend", backend->id()},
          {"mean_latency_ms", results.empty() ? 0.0 : 1000.0 * latency / static_cast<double>(results.size())}};
}

Json run_align(Context& c, const Flags& f) {
  const fs::path path = f.narratives.empty() ? report(c, "narratives.jsonl") : fs::path(f.narratives);
  std::ifstream in(path);
  if (!in) throw DataError("missing_narratives", "cannot read narratives from " + path.string());
  std::vector<EventAlignment> events;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("shap_top")) throw DataError("bad_narratives", "malformed narrative line in " + path.string());
    EventAlignment e;
    e.collision_id = j.value("collision_id", std::int64_t{0});
    e.shap_top = j["shap_top"].get<std::vector<std::string>>();
    const auto text = j.value("explanation", std::string()) + "\n" + j.value("policy_suggestion", std::string());
    e.result = align(e.shap_top, text, c.cfg.narrative.lexicon, c.cfg.narrative.top_k);
    events.push_back(std::move(e));
  }
  const auto rep = AlignmentReport::from_events(std::move(events));
  write_json(report(c, "alignment.json"), rep.to_json());
  return {{"events", rep.events.size()},
          {"mean_recall", rep.mean_recall},
          {"mean_precision", rep.mean_precision},
          {"alignment_score", rep.alignment_score},
          {"aligned_fraction", rep.aligned_fraction}};
}

Json run_ablate(Context& c, const Flags& f) {
  AblationConfig a;
  a.data = c.cfg.synth;
  a.split = c.cfg.split;
  a.boost = c.cfg.model.boost;
  a.threads = c.threads;
  std::vector<ImbalanceStrategy> strategies;
  for (const auto& s : f.strategies) strategies.push_back(ImbalanceStrategy::parse(s));
  if (strategies.empty()) strategies = default_ablation_strategies();
  const auto rows = run_ablation(strategies, a);
  write_text(report(c, "ablation.csv"), ablation_csv(rows));
  Json j = Json::array();
  for (const auto& r : rows)
    j.push_back({{"strategy", r.strategy}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"recall_fatal", r.recall_fatal}});
  return {{"rows", j}};
}

Json run_synth(Context& c, const Flags& f) {
  auto store = open_store(c, false);
  if (f.raw_dir.empty()) {
    const auto rows = generate(c.cfg.synth, c.threads);
    store.write_rows(rows);
    return {{"events", rows.size()}, {"partitions", store.manifest().partitions.size()}};
  }
  const auto tables = generate_tables(c.cfg.synth, c.threads);
  write_tables_csv(tables, f.raw_dir);
  const auto rows = join_tables(tables.crashes, tables.persons, tables.vehicles).rows;
  store.write_rows(rows);
  return {{"events", rows.size()}, {"partitions", store.manifest().partitions.size()}, {"raw_dir", f.raw_dir}};
}

Json run_score(Context& c, const Flags& f) {
  const auto model = load_model(c);
  const auto store = open_store(c, true);
  std::vector<EventFeatureRow> rows;
  if (f.source == "test") rows = load_split(c, store).test;
  else if (f.source == "all") rows = store.all_rows();
  else throw ConfigError("bad_flag", "--rows must be test or all");
  const auto x = FeatureMatrix::from_rows(rows);
  const auto res = score_batch(model, x, c.threads);
  std::ostringstream csv;
  csv << "collision_id,predicted,p_no_injury,p_injury,p_fatal\n" << std::setprecision(6) << std::fixed;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << rows[i].collision_id << ',' << to_string(static_cast<SeverityLabel>(res.labels[i]));
    for (double p : res.proba[i]) csv << ',' << p;
    csv << '\n';
  }
  write_text(report(c, "predictions.csv"), csv.str());
  const Json j = {{"rows", rows.size()}, {"seconds", res.seconds}, {"rows_per_second", res.rows_per_second}, {"threads", c.threads}};
  write_json(report(c, "score.json"), j);
  return j;
}

void apply_flags(PipelineConfig& cfg, const std::string& command, const Flags& f) {
  const auto& cf = f.common;
  if (cf.threads) cfg.threads = *cf.threads;
  if (cf.seed) {
    cfg.seed = *cf.seed;
    cfg.synth.seed = *cf.seed;
  }
  if (!cf.store.empty()) cfg.paths.store = cf.store;
  if (!cf.model.empty()) cfg.paths.model = cf.model;
  if (!cf.reports.empty()) cfg.paths.reports = cf.reports;
  if (!f.crashes.empty()) cfg.paths.crashes = f.crashes;
  if (!f.persons.empty()) cfg.paths.persons = f.persons;
  if (!f.vehicles.empty()) cfg.paths.vehicles = f.vehicles;
  if (f.n_test) cfg.split.n_test = *f.n_test;
  if (f.n_train) cfg.split.n_train = *f.n_train;
  if (!f.model_kind.empty()) cfg.model.kind = parse_model_kind(f.model_kind);
  if (!f.strategy.empty()) cfg.imbalance = ImbalanceStrategy::parse(f.strategy);
  if (f.rounds) cfg.model.boost.n_rounds = *f.rounds;
  if (!f.backend.empty()) cfg.narrative.backend = f.backend;
  if (command == "explain") cfg.narrative.http.apply_env();
  if (!f.url.empty()) cfg.narrative.http.base_url = f.url;
  if (f.threshold) cfg.gating.threshold = *f.threshold;
  if (f.events) cfg.synth.n_events = *f.events;
  if (cfg.narrative.backend != "template" && cfg.narrative.backend != "http")
    throw ConfigError("bad_flag", "--backend must be template or http");
  cfg.gating.validate();
  cfg.narrative.http.validate();
  cfg.synth.validate();
  cfg.imbalance.validate();
}

Json run_manifest(const std::string& command, const PipelineConfig& cfg, int argc, const char* const* argv) {
  Json args = Json::array();
  for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
  return {{"command", command},
          {"args", args},
          {"config_hash", hash_hex(cfg.hash())},
          {"seeds", {{"pipeline", cfg.seed}, {"synth", cfg.synth.seed}}},
          {"schema_hash", hash_hex(canonical_schema().hash())},
          {"versions", {{"raxcrash", kVersion}, {"raxm", 1}, {"raxf", 1}}},
          {"started_at", std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch()).count()}};
}

std::string_view kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Backend: return "backend";
  }
  return "unknown";
}

int report_error(std::ostream& err, ErrorKind kind, const std::string& code, const std::string& message) {
  err << Json{{"error", {{"kind", kind_name(kind)}, {"code", code}, {"message", message}}}}.dump() << "\n";
  return static_cast<int>(kind);
}

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Pipeline config JSON (default: $RAX_CONFIG)");
  sub->add_option("--threads", f.threads, "Worker threads (default: available cores)");
  sub->add_option("--seed", f.seed, "Seed for training, sampling and synthetic data");
  sub->add_option("--store", f.store, "Feature store directory");
  sub->add_option("--model", f.model, "Model file (RAXM)");
  sub->add_option("--reports", f.reports, "Report output directory");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"raxcrash: crash severity pipeline from raw tables to explained predictions"};
  app.require_subcommand(1);
  Flags f;
  using Runner = Json (*)(Context&, const Flags&);
  std::map<std::string, Runner> runners;
  auto sub = [&](const std::string& name, const std::string& help, Runner run) {
    auto* s = app.add_subcommand(name, help);
    add_common(s, f.common);
    runners[name] = run;
    return s;
  };

  auto* ingest = sub("ingest", "Parse crash/person/vehicle CSVs, join them and write the feature store", run_ingest);
  ingest->add_option("--crashes", f.crashes, "Crash table CSV");
  ingest->add_option("--persons", f.persons, "Person table CSV");
  ingest->add_option("--vehicles", f.vehicles, "Vehicle table CSV");

  auto* split = sub("split", "Write the temporal train/test id lists", run_split);
  split->add_option("--n-test", f.n_test, "Rows in the test window");
  split->add_option("--n-train", f.n_train, "Rows in the train window");

  auto* train = sub("train", "Fit the configured model and write it as RAXM", run_train);
  train->add_option("--model-kind", f.model_kind, "boosted, forest or logistic");
  train->add_option("--strategy", f.strategy, "baseline, weighted, oversample, smote or focal");
  train->add_option("--rounds", f.rounds, "Boosting rounds");

  sub("evaluate", "Score the test split and write metrics and the correlation matrix", run_evaluate);

  auto* shap = sub("shap", "Write the global SHAP ranking for the test split", run_shap);
  shap->add_option("--limit", f.limit, "Explain at most this many test events (0 = all)");
  shap->add_flag("--jsonl", f.jsonl, "Also write per-event attributions as JSON lines");

  auto* explain = sub("explain", "Gate test events and generate narratives", run_explain);
  explain->add_option("--backend", f.backend, "template or http");
  explain->add_option("--url", f.url, "HTTP backend base URL (overrides $RAX_NARRATIVE_URL)");
  explain->add_option("--threshold", f.threshold, "Gating threshold");

  auto* alignc = sub("align", "Compare narratives with SHAP top features", run_align);
  alignc->add_option("--narratives", f.narratives, "Narratives JSONL (default: reports/narratives.jsonl)");

  auto* ablate = sub("ablate", "Run the imbalance ablation on synthetic data", run_ablate);
  ablate->add_option("--events", f.events, "Synthetic events");
  ablate->add_option("--rounds", f.rounds, "Boosting rounds");
  ablate->add_option("--strategies", f.strategies, "Strategies in output order");

  auto* synth = sub("synth", "Generate synthetic events into the feature store", run_synth);
  synth->add_option("--events", f.events, "Synthetic events");
  synth->add_option("--raw-dir", f.raw_dir, "Also write raw crash/person/vehicle CSVs here");

  auto* score = sub("score", "Batch-score rows and report throughput", run_score);
  score->add_option("--rows", f.source, "test or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help(e.get_name() == "--help-all" ? "" : "");
    for (auto* s : app.get_subcommands()) out << s->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    return report_error(err, ErrorKind::Config, "usage", e.what());
  }

  auto* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    std::string config_path = f.common.config;
    if (config_path.empty()) {
      if (const char* env = std::getenv("RAX_CONFIG"); env && *env) config_path = env;
    }
    Context ctx;
    ctx.cfg = config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
    apply_flags(ctx.cfg, command, f);
    ctx.threads = resolve_threads(ctx.cfg.threads);
    ctx.out = &out;
    const auto manifest = run_manifest(command, ctx.cfg, argc, argv);
    const auto summary = runners.at(command)(ctx, f);
    write_json(ctx.cfg.paths.reports / "runs" / (command + ".json"), manifest);
    out << summary.dump() << "\n";
    return 0;
  } catch (const Error& e) {
    return report_error(err, e.kind(), e.code(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(err, ErrorKind::Data, "filesystem", e.what());
  } catch (const Json::exception& e) {
    return report_error(err, ErrorKind::Data, "bad_json", e.what());
  } catch (const std::exception& e) {
    return report_error(err, ErrorKind::Data, "internal", e.what());
  }
}

}  // namespace rax
