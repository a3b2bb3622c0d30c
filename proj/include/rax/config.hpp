#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "rax/imbalance.hpp"
#include "rax/ingest.hpp"
#include "rax/models.hpp"
#include "rax/narrative.hpp"
#include "rax/store.hpp"
#include "rax/synth.hpp"

namespace rax {

inline constexpr const char* kVersion = "1.0.0";

enum class ModelKindName { Boosted, Forest, Logistic };

struct PathsConfig {
  std::filesystem::path crashes;
  std::filesystem::path persons;
  std::filesystem::path vehicles;
  std::filesystem::path store = "store";
  std::filesystem::path model = "model.raxm";
  std::filesystem::path reports = "reports";
};

struct ModelConfig {
  ModelKindName kind = ModelKindName::Boosted;
  BoostConfig boost;
  ForestConfig forest;
  LogisticConfig logistic;
};

struct NarrativeConfig {
  std::string backend = "template";  // "template" or "http"
  HttpBackendConfig http;
  Lexicon lexicon = Lexicon::defaults();
  std::size_t top_k = 3;
  std::size_t max_events = 200;
};

// One JSON document drives every subcommand. Unknown keys are rejected at
// every level; absent keys keep their defaults.
struct PipelineConfig {
  std::optional<std::uint64_t> schema_hash;
  PathsConfig paths;
  ColumnMapping crash_columns = ColumnMapping::nyc_default(TableKind::Crash);
  ColumnMapping person_columns = ColumnMapping::nyc_default(TableKind::Person);
  ColumnMapping vehicle_columns = ColumnMapping::nyc_default(TableKind::Vehicle);
  ModelConfig model;
  ImbalanceStrategy imbalance = ImbalanceStrategy::baseline();
  SplitSpec split;
  GatingConfig gating;
  NarrativeConfig narrative;
  SynthConfig synth;
  std::uint64_t seed = 42;
  unsigned threads = 0;

  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;
};

std::string_view to_string(ModelKindName kind);
ModelKindName parse_model_kind(std::string_view text);

}  // namespace rax
