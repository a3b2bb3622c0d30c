#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/objective.hpp"
#include "rax/schema.hpp"

namespace rax {

enum class StrategyKind { Baseline, Weighted, Oversample, Smote, Focal };

struct ImbalanceStrategy {
  StrategyKind kind = StrategyKind::Baseline;
  double target_fatal_share = 0.05;  // Oversample, Smote
  int k_neighbors = 5;               // Smote
  double gamma = 2.0;                // Focal

  static ImbalanceStrategy baseline() { return {}; }
  static ImbalanceStrategy weighted() { return {StrategyKind::Weighted}; }
  static ImbalanceStrategy oversample(double share = 0.05) { return {StrategyKind::Oversample, share}; }
  static ImbalanceStrategy smote(int k = 5, double share = 0.05) {
    return {StrategyKind::Smote, share, k};
  }
  static ImbalanceStrategy focal(double gamma = 2.0) { return {StrategyKind::Focal, 0.05, 5, gamma}; }

  // "Baseline", "Weighted", "Oversample", "SMOTE", "FocalLoss"
  std::string name() const;
  // Accepts the names above, case-insensitively, plus "focal" and "smote".
  static ImbalanceStrategy parse(const std::string& name);
  // Throws ConfigError.
  void validate() const;

  nlohmann::json to_json() const;
  static ImbalanceStrategy from_json(const nlohmann::json& j);
};

// w_c = N / (3 n_c). Throws DataError when a class is empty.
ClassVector compute_class_weights(const std::array<std::size_t, 3>& counts);
std::array<std::size_t, 3> label_counts(std::span<const EventFeatureRow> rows);

struct AugmentReport {
  std::array<std::size_t, 3> original{};
  std::array<std::size_t, 3> added{};
  double achieved_fatal_share = 0;

  nlohmann::json to_json() const;
};

struct Augmented {
  std::vector<EventFeatureRow> rows;  // originals in input order, then additions
  AugmentReport report;
};

// Smallest a >= 0 with (fatal + a) / (total + a) >= target.
std::size_t minimal_additions(std::size_t fatal, std::size_t total, double target);

// Appends copies of Fatal rows drawn with replacement.
Augmented random_oversample(std::span<const EventFeatureRow> rows, double target_fatal_share,
                            std::uint64_t seed);

// Appends synthetic Fatal rows interpolated between a Fatal row and one of its
// k nearest Fatal neighbors in z-scored numeric-feature space. Synthetic rows
// get collision_id = -1, -2, ...
Augmented smote(std::span<const EventFeatureRow> rows, int k_neighbors, double target_fatal_share,
                std::uint64_t seed, const FeatureSchema& schema = canonical_schema());

// Training set, per-class weights and objective implied by a strategy.
struct PreparedTraining {
  std::vector<EventFeatureRow> rows;
  ClassVector class_weights{1, 1, 1};
  std::shared_ptr<const Objective> objective;
  AugmentReport report;
};

PreparedTraining apply_strategy(const ImbalanceStrategy& strategy,
                                std::span<const EventFeatureRow> train, std::uint64_t seed);

}  // namespace rax
