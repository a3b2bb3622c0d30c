#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/model.hpp"

namespace rax {

// Attributions for one tree output vector. phi is feature-major:
// phi[j * n_outputs + c].
struct TreeShapValues {
  std::size_t n_features = 0;
  int n_outputs = 1;
  std::vector<double> phi;
  std::vector<double> base;  // cover-weighted mean leaf value per output

  double at(std::size_t j, int c = 0) const { return phi[j * n_outputs + c]; }
};

// Exact path-dependent TreeSHAP. Throws DataError for a tree with zero root cover.
TreeShapValues tree_shap(const Tree& tree, std::span<const double> x);
// Shapley values by enumerating every subset of the first `x.size()` features,
// with absent features marginalized by cover proportions. Refuses d > 20.
TreeShapValues brute_force_shap(const Tree& tree, std::span<const double> x);
// Cover-weighted expectation of the tree output with the features in `mask`
// fixed to x (bit j set = feature j known).
std::vector<double> conditional_expectation(const Tree& tree, std::span<const double> x,
                                            std::uint64_t mask);

// Per-class attribution on the model's margin scale (log-odds for boosting,
// probability for the forest).
struct ShapAttribution {
  std::int64_t collision_id = 0;
  std::array<std::vector<double>, 3> phi;
  ClassVector base{};

  // Sum of phi plus base for class c; equals the model margin.
  double output(int c) const;
};

class ShapExplainer {
 public:
  // Throws ConfigError for models without trees.
  explicit ShapExplainer(const Model& model);

  std::string_view scale() const;  // "log_odds" or "probability"
  ShapAttribution explain(std::span<const double> x, std::int64_t collision_id = 0) const;
  std::vector<ShapAttribution> explain(const FeatureMatrix& x, std::span<const std::int64_t> ids,
                                       unsigned threads = 1) const;
  // Checks the model schema against `schema` first.
  std::vector<ShapAttribution> explain_rows(std::span<const EventFeatureRow> rows,
                                            const FeatureSchema& schema = canonical_schema(),
                                            unsigned threads = 1) const;

 private:
  const Model& model_;
  std::vector<std::vector<double>> tree_base_;
};

struct FeatureImportance {
  std::string name;
  double mean_abs_shap = 0;
};

// Mean |phi| per feature, sorted descending, ties alphabetical. With no class
// given, |phi| is averaged over the three classes first.
std::vector<FeatureImportance> global_importance(std::span<const ShapAttribution> attributions,
                                                 const FeatureSchema& schema = canonical_schema(),
                                                 std::optional<int> target_class = std::nullopt);

// Top-k features of one event by cross-class mean |phi|, ties alphabetical.
std::vector<std::string> top_features(const ShapAttribution& a, std::size_t k = 3,
                                      const FeatureSchema& schema = canonical_schema());

// "feature,mean_abs_shap" rows.
std::string importance_csv(const std::vector<FeatureImportance>& ranking);
nlohmann::json attribution_json(const ShapAttribution& a, std::string_view scale,
                                const FeatureSchema& schema = canonical_schema());

}  // namespace rax
