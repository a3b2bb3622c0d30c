#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "rax/matrix.hpp"

namespace rax {

// Routing rule shared by training, scoring and SHAP: left iff x < threshold.
// NaN compares false, so missing values always go left.
inline bool goes_left(double x, double threshold) { return !(x >= threshold); }

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double cover = 0;  // summed hessian (boosting) or sample weight (forest)

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

// Flat node table. Every node, internal ones included, carries an
// n_outputs-wide value vector; node 0 is the root.
class Tree {
 public:
  Tree() = default;
  explicit Tree(int n_outputs) : n_outputs_(n_outputs) {}

  int n_outputs() const { return n_outputs_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  TreeNode& node(std::size_t i) { return nodes_[i]; }
  std::span<const double> value(std::size_t i) const {
    return {values_.data() + i * n_outputs_, static_cast<std::size_t>(n_outputs_)};
  }
  std::span<double> value(std::size_t i) {
    return {values_.data() + i * n_outputs_, static_cast<std::size_t>(n_outputs_)};
  }

  std::int32_t add_node(const TreeNode& node, std::span<const double> value);

  std::size_t leaf_index(std::span<const double> x) const;
  std::span<const double> predict(std::span<const double> x) const { return value(leaf_index(x)); }

  int depth() const;
  std::size_t n_leaves() const;
  // Structural checks: child indices, feature range, cover additivity.
  // Throws DataError.
  void validate(std::size_t n_features) const;

  bool operator==(const Tree&) const = default;

 private:
  int n_outputs_ = 1;
  std::vector<TreeNode> nodes_;
  std::vector<double> values_;
};

// Per-feature quantile cut points. Bin 0 holds missing values; a value v
// falls in bin 1 + #{cuts <= v}, so at most 255 bins carry observed values.
class FeatureBins {
 public:
  static constexpr std::size_t kMaxCuts = 254;

  static FeatureBins fit(const FeatureMatrix& x);

  std::size_t n_features() const { return cuts_.size(); }
  std::span<const double> cuts(std::size_t j) const { return cuts_[j]; }
  std::uint8_t bin(std::size_t j, double v) const;
  // Left side of the split "bin <= b" is exactly {x : goes_left(x, threshold(j, b))}.
  double threshold(std::size_t j, int b) const {
    return b == 0 ? -std::numeric_limits<double>::infinity() : cuts_[j][b - 1];
  }

 private:
  std::vector<std::vector<double>> cuts_;
};

class BinnedMatrix {
 public:
  BinnedMatrix(const FeatureMatrix& x, FeatureBins bins);
  explicit BinnedMatrix(const FeatureMatrix& x) : BinnedMatrix(x, FeatureBins::fit(x)) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const std::uint8_t* row(std::size_t i) const { return data_.data() + i * cols_; }
  const FeatureBins& bins() const { return bins_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  FeatureBins bins_;
  std::vector<std::uint8_t> data_;
};

// Nodes with more rows than this use histogram split search; smaller nodes
// enumerate every midpoint between distinct observed values.
inline constexpr std::size_t kExactSplitMaxRows = 64;

// Midpoint used as an exact-split threshold between observed values a < b.
double split_midpoint(double a, double b);

struct TreeConfig {
  int max_depth = 8;
  double min_leaf_weight = 1.0;
  double col_subsample = 1.0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
};

// Second-order regression tree on per-row gradients and hessians. `grad` and
// `hess` are indexed by row of `x`; `rows` selects the training rows.
Tree fit_tree(const FeatureMatrix& x, const BinnedMatrix& binned, std::span<const std::uint32_t> rows,
              std::span<const double> grad, std::span<const double> hess, const TreeConfig& config);
// Convenience overload: all rows, bins fitted on `x`.
Tree fit_tree(const FeatureMatrix& x, std::span<const double> grad, std::span<const double> hess,
              const TreeConfig& config);

double split_gain(double gl, double hl, double gr, double hr, double lambda);

struct GiniTreeConfig {
  int max_depth = 12;
  int min_leaf = 20;
  int features_per_node = 0;  // 0 = ceil(sqrt(d))
  std::uint64_t seed = 0;
};

// Classification tree with weighted Gini impurity. `multiplicity[i]` is the
// number of bootstrap draws of rows[i]; `sample_weight` is indexed by row.
Tree fit_gini_tree(const FeatureMatrix& x, const BinnedMatrix& binned,
                   std::span<const std::uint32_t> rows, std::span<const double> multiplicity,
                   std::span<const int> labels, std::span<const double> sample_weight,
                   const GiniTreeConfig& config);

// Deterministic seed derivation for per-tree and per-round streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace rax
