#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/schema.hpp"

namespace rax {

// Rows are true classes, columns predicted classes.
using ConfusionMatrix = std::array<std::array<std::size_t, 3>, 3>;

struct EvalReport {
  double accuracy = 0;
  double kappa = 0;
  double macro_f1 = 0;
  std::array<double, 3> recall{};
  std::array<double, 3> precision{};
  std::array<double, 3> f1{};
  ConfusionMatrix confusion{};
  std::size_t total = 0;

  double recall_fatal() const { return recall[2]; }
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted);
EvalReport evaluate(const ConfusionMatrix& confusion);
// Throws DataError on length mismatch or empty input.
EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted);

// {model, strategy, accuracy, kappa, macro_f1, recall_per_class, confusion}
nlohmann::json metrics_json(const EvalReport& r, const std::string& model, const std::string& strategy);

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<double> values;  // names.size() squared, row-major

  double at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
  std::string to_csv() const;
};

// Pairwise Pearson correlation over rows where both features are observed.
// Zero-variance pairs are 0 off the diagonal; the diagonal is 1.
CorrelationMatrix correlation_matrix(std::span<const EventFeatureRow> rows,
                                     std::span<const std::size_t> features,
                                     const FeatureSchema& schema = canonical_schema());

// The numeric features of the schema.
std::vector<std::size_t> numeric_features(const FeatureSchema& schema = canonical_schema());

}  // namespace rax
