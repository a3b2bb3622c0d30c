#include "rax/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "rax/error.hpp"

namespace rax {
namespace {

using Json = nlohmann::json;
using Handler = std::function<void(const Json&)>;

// Dispatches each key of `j` to its handler; unknown keys are rejected.
void read_object(const Json& j, const std::string& where, const std::map<std::string, Handler>& handlers) {
  if (!j.is_object()) throw ConfigError("bad_config", where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown_key", "unknown config key: " + where + "." + key);
    try {
      it->second(value);
    } catch (const Json::exception& e) {
      throw ConfigError("bad_config", where + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
Handler set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

Handler set_path(std::filesystem::path& field) {
  return [&field](const Json& v) { field = v.get<std::string>(); };
}

}  // namespace

std::string_view to_string(ModelKindName kind) {
  switch (kind) {
    case ModelKindName::Boosted: return "boosted";
    case ModelKindName::Forest: return "forest";
    case ModelKindName::Logistic: return "logistic";
  }
  return "?";
}

ModelKindName parse_model_kind(std::string_view text) {
  if (text == "boosted" || text == "xgboost" || text == "gbdt") return ModelKindName::Boosted;
  if (text == "forest" || text == "random_forest") return ModelKindName::Forest;
  if (text == "logistic" || text == "linear") return ModelKindName::Logistic;
  throw ConfigError("bad_model_kind", "unknown model kind '" + std::string(text) + "'");
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  PipelineConfig c;
  auto& b = c.model.boost;
  auto& f = c.model.forest;
  auto& l = c.model.logistic;
  read_object(j, "config", {
      {"schema_hash",
       [&c](const Json& v) {
         try {
           c.schema_hash = parse_hash_hex(v.get<std::string>());
         } catch (const DataError& e) {
           throw ConfigError("bad_hash", e.what());
         }
       }},
      {"paths", [&c](const Json& v) {
         read_object(v, "paths", {{"crashes", set_path(c.paths.crashes)},
                                  {"persons", set_path(c.paths.persons)},
                                  {"vehicles", set_path(c.paths.vehicles)},
                                  {"store", set_path(c.paths.store)},
                                  {"model", set_path(c.paths.model)},
                                  {"reports", set_path(c.paths.reports)}});
       }},
      {"columns", [&c](const Json& v) {
         read_object(v, "columns", {
             {"crash", [&c](const Json& m) { c.crash_columns = ColumnMapping::from_json(TableKind::Crash, m); }},
             {"person", [&c](const Json& m) { c.person_columns = ColumnMapping::from_json(TableKind::Person, m); }},
             {"vehicle", [&c](const Json& m) { c.vehicle_columns = ColumnMapping::from_json(TableKind::Vehicle, m); }}});
       }},
      {"model", [&](const Json& v) {
         read_object(v, "model", {
             {"kind", [&c](const Json& k) { c.model.kind = parse_model_kind(k.get<std::string>()); }},
             {"n_rounds", set(b.n_rounds)},
             {"max_depth", [&](const Json& d) { b.max_depth = f.max_depth = d.get<int>(); }},
             {"learning_rate", set(b.learning_rate)},
             {"row_subsample", set(b.row_subsample)},
             {"col_subsample", set(b.col_subsample)},
             {"lambda", set(b.lambda)},
             {"min_leaf_weight", set(b.min_leaf_weight)},
             {"n_trees", set(f.n_trees)},
             {"min_leaf", set(f.min_leaf)},
             {"l2", set(l.l2)},
             {"max_iter", set(l.max_iter)},
             {"tol", set(l.tol)}});
       }},
      {"imbalance", [&c](const Json& v) { c.imbalance = ImbalanceStrategy::from_json(v); }},
      {"split", [&c](const Json& v) {
         read_object(v, "split", {{"n_test", set(c.split.n_test)}, {"n_train", set(c.split.n_train)}});
       }},
      {"gating", [&c](const Json& v) { c.gating = GatingConfig::from_json(v); }},
      {"narrative", [&c](const Json& v) {
         read_object(v, "narrative", {
             {"backend", set(c.narrative.backend)},
             {"http", [&c](const Json& h) { c.narrative.http = HttpBackendConfig::from_json(h); }},
             {"lexicon", [&c](const Json& x) { c.narrative.lexicon = Lexicon::from_json(x); }},
             {"top_k", set(c.narrative.top_k)},
             {"max_events", set(c.narrative.max_events)}});
       }},
      {"synth", [&c](const Json& v) { c.synth = SynthConfig::from_json(v); }},
      {"seed", set(c.seed)},
      {"threads", set(c.threads)},
  });
  if (c.narrative.backend != "template" && c.narrative.backend != "http")
    throw ConfigError("bad_config", "narrative.backend must be template or http");
  if (c.narrative.top_k < 1) throw ConfigError("bad_config", "narrative.top_k must be at least 1");
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("missing_config", "cannot read config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("bad_config", "config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

Json PipelineConfig::to_json() const {
  const auto& b = model.boost;
  Json j = {
      {"paths", {{"crashes", paths.crashes.string()},
                 {"persons", paths.persons.string()},
                 {"vehicles", paths.vehicles.string()},
                 {"store", paths.store.string()},
                 {"model", paths.model.string()},
                 {"reports", paths.reports.string()}}},
      {"columns", {{"crash", crash_columns.to_json()}, {"person", person_columns.to_json()}, {"vehicle", vehicle_columns.to_json()}}},
      {"model", {{"kind", to_string(model.kind)},
                 {"n_rounds", b.n_rounds},
                 {"max_depth", model.kind == ModelKindName::Forest ? model.forest.max_depth : b.max_depth},
                 {"learning_rate", b.learning_rate},
                 {"row_subsample", b.row_subsample},
                 {"col_subsample", b.col_subsample},
                 {"lambda", b.lambda},
                 {"min_leaf_weight", b.min_leaf_weight},
                 {"n_trees", model.forest.n_trees},
                 {"min_leaf", model.forest.min_leaf},
                 {"l2", model.logistic.l2},
                 {"max_iter", model.logistic.max_iter},
                 {"tol", model.logistic.tol}}},
      {"imbalance", imbalance.to_json()},
      {"split", {{"n_test", split.n_test}, {"n_train", split.n_train}}},
      {"gating", gating.to_json()},
      {"narrative", {{"backend", narrative.backend},
                     {"http", narrative.http.to_json()},
                     {"lexicon", narrative.lexicon.to_json()},
                     {"top_k", narrative.top_k},
                     {"max_events", narrative.max_events}}},
      {"synth", synth.to_json()},
      {"seed", seed},
      {"threads", threads}};
  if (schema_hash) j["schema_hash"] = hash_hex(*schema_hash);
  return j;
}

std::uint64_t PipelineConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rax
