#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rax/matrix.hpp"
#include "rax/objective.hpp"
#include "rax/tree.hpp"

namespace rax {

struct ForestConfig {
  int n_trees = 300;
  int max_depth = 12;
  int min_leaf = 20;
  ClassVector class_weights{1, 1, 1};
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

// Prediction is the mean of the per-tree leaf class distributions.
struct ForestModel {
  std::vector<Tree> trees;  // three outputs per node
  ClassVector class_weights{1, 1, 1};
  std::size_t n_features = kNumFeatures;
  std::uint64_t schema_hash = 0;

  bool operator==(const ForestModel&) const = default;
};

ForestModel fit_random_forest(const FeatureMatrix& x, std::span<const int> labels,
                              const ForestConfig& config);

struct BoostConfig {
  int n_rounds = 400;
  int max_depth = 8;
  double learning_rate = 0.05;
  double row_subsample = 0.8;
  double col_subsample = 0.8;
  double lambda = 1.0;
  double min_leaf_weight = 1.0;
  ClassVector class_weights{1, 1, 1};
  std::uint64_t seed = 42;
};

// margin(x, c) = base_score[c] + learning_rate * sum of class-c tree outputs.
struct BoostedModel {
  std::vector<Tree> trees;  // round-major: trees[3 * r + c]
  double learning_rate = 0.05;
  double lambda = 1.0;
  ClassVector base_score{};
  ClassVector class_weights{1, 1, 1};
  std::string objective = "softmax";
  double gamma = 0;
  std::size_t n_features = kNumFeatures;
  std::uint64_t schema_hash = 0;

  std::size_t n_rounds() const { return trees.size() / 3; }
  bool operator==(const BoostedModel&) const = default;
};

// Per-round diagnostics. loss[0] is the loss of the base score alone and
// loss[r] the loss after round r, both the weighted mean over all training rows.
struct BoostTrace {
  std::vector<double> loss;
};

BoostedModel fit_gradient_boosting(const FeatureMatrix& x, std::span<const int> labels,
                                   const Objective& objective, const BoostConfig& config,
                                   BoostTrace* trace = nullptr);

// Mean objective loss of a margin matrix (n x 3, row-major).
double weighted_mean_loss(std::span<const double> margins, std::span<const int> labels,
                          const Objective& objective, const ClassVector& class_weights);

struct LogisticConfig {
  double l2 = 1.0;
  int max_iter = 500;
  double tol = 1e-6;
  ClassVector class_weights{1, 1, 1};
};

// Scores s_c = bias[c] + weights[c] . z with z the standardized input
// (missing -> 0). A class absent from training gets bias -inf.
struct LinearModel {
  std::vector<double> means;
  std::vector<double> scales;
  std::vector<double> weights;  // 3 x n_features, row-major by class
  ClassVector bias{};
  double l2 = 1.0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0;
  std::size_t n_features = kNumFeatures;
  std::uint64_t schema_hash = 0;

  ClassVector scores(std::span<const double> x) const;
  bool operator==(const LinearModel&) const = default;
};

// Minimizes sum_i w_i CE_i + (l2 / 2) ||W||^2 by damped Newton iterations.
LinearModel fit_logistic(const FeatureMatrix& x, std::span<const int> labels,
                         const LogisticConfig& config);

// Objective value minimized by fit_logistic, evaluated at `model`.
double logistic_objective(const LinearModel& model, const FeatureMatrix& x,
                          std::span<const int> labels, const LogisticConfig& config);

std::array<std::size_t, 3> class_counts(std::span<const int> labels);

}  // namespace rax
