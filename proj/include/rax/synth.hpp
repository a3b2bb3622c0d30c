#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/imbalance.hpp"
#include "rax/metrics.hpp"
#include "rax/models.hpp"
#include "rax/schema.hpp"
#include "rax/store.hpp"

namespace rax {

// Severity comes from a latent ordinal logit
//   y* = eta(x) + logistic noise,
//   eta = b_ejected * PCT_EJECTED + b_pedestrian * ROLE_PEDESTRIAN + b_night * night
//       + b_safety * PCT_WITH_SAFETY_EQUIPMENT + b_night_pedestrian * night * ROLE_PEDESTRIAN
// where night means CRASH_HOUR < 6 or >= 21. The two cut points are the
// empirical quantiles of y* that reproduce class_prior exactly.
struct SynthConfig {
  std::size_t n_events = 25000;
  std::uint64_t seed = 7;
  std::array<double, 3> class_prior{0.72, 0.27, 0.01};
  double beta_ejected = 6.0;
  double beta_pedestrian = 3.0;
  double beta_night = 1.5;
  double beta_safety = -2.5;
  double beta_night_pedestrian = 2.0;
  int start_year = 2024;
  int start_month = 11;
  int n_months = 12;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthTables {
  std::vector<RawCrashRecord> crashes;
  std::vector<RawPersonRecord> persons;
  std::vector<RawVehicleRecord> vehicles;
};

// Raw NYC-style tables whose injured/killed counts carry the sampled labels.
SynthTables generate_tables(const SynthConfig& config, unsigned threads = 1);
// Joined rows in the canonical schema, ordered by collision_id.
std::vector<EventFeatureRow> generate(const SynthConfig& config, unsigned threads = 1);
// Writes crashes.csv, persons.csv and vehicles.csv with NYC default headers.
void write_tables_csv(const SynthTables& tables, const std::filesystem::path& dir);

// Latent linear predictor for one row.
double synth_eta(const EventFeatureRow& row, const SynthConfig& config);

struct AblationConfig {
  SynthConfig data;
  SplitSpec split;
  BoostConfig boost;
  unsigned threads = 1;
};

struct AblationRow {
  std::string strategy;
  double accuracy = 0;
  double macro_f1 = 0;
  double recall_fatal = 0;
};

// Boosted models trained under each strategy on one temporal split of the
// synthetic data. One output row per strategy, in input order.
std::vector<AblationRow> run_ablation(std::span<const ImbalanceStrategy> strategies,
                                      const AblationConfig& config);
// "strategy,accuracy,macro_f1,recall_fatal"
std::string ablation_csv(std::span<const AblationRow> rows);

// Baseline, Weighted, SMOTE, FocalLoss.
std::vector<ImbalanceStrategy> default_ablation_strategies();

}  // namespace rax
