#include "rax/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rax/error.hpp"

namespace rax {

std::int32_t Tree::add_node(const TreeNode& node, std::span<const double> value) {
  if (value.size() != static_cast<std::size_t>(n_outputs_))
    throw DataError("bad_tree", "node value width does not match tree outputs");
  nodes_.push_back(node);
  values_.insert(values_.end(), value.begin(), value.end());
  return static_cast<std::int32_t>(nodes_.size() - 1);
}

std::size_t Tree::leaf_index(std::span<const double> x) const {
  std::size_t i = 0;
  while (!nodes_[i].is_leaf()) {
    const auto& n = nodes_[i];
    i = static_cast<std::size_t>(goes_left(x[n.feature], n.threshold) ? n.left : n.right);
  }
  return i;
}

int Tree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes_[i].is_leaf()) d[nodes_[i].left] = d[nodes_[i].right] = d[i] + 1;
  }
  return best;
}

std::size_t Tree::n_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

void Tree::validate(std::size_t n_features) const {
  if (nodes_.empty()) throw DataError("bad_tree", "tree has no nodes");
  std::vector<int> parents(nodes_.size(), 0);
  const auto n = static_cast<std::int32_t>(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    if (node.is_leaf()) continue;
    if (static_cast<std::size_t>(node.feature) >= n_features)
      throw DataError("bad_tree", "split feature index out of range");
    for (auto c : {node.left, node.right}) {
      if (c <= static_cast<std::int32_t>(i) || c >= n)
        throw DataError("bad_tree", "child index out of range");
      ++parents[c];
    }
    const double sum = nodes_[node.left].cover + nodes_[node.right].cover;
    if (std::abs(sum - node.cover) > 1e-9 * std::max(1.0, std::abs(node.cover)))
      throw DataError("bad_tree", "node cover differs from the sum of its children");
  }
  for (std::size_t i = 1; i < parents.size(); ++i)
    if (parents[i] != 1) throw DataError("bad_tree", "node is not reachable exactly once");
}

double split_midpoint(double a, double b) {
  const double m = a + (b - a) / 2;
  return m > a ? m : b;
}

// ---------------------------------------------------------------------------
// Binning

FeatureBins FeatureBins::fit(const FeatureMatrix& x) {
  FeatureBins out;
  out.cuts_.resize(x.cols());
  std::vector<double> v;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    v.clear();
    for (std::size_t i = 0; i < x.rows(); ++i)
      if (!std::isnan(x(i, j))) v.push_back(x(i, j));
    std::sort(v.begin(), v.end());
    auto& cuts = out.cuts_[j];
    std::vector<double> uniq(v.begin(), v.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() <= kMaxCuts + 1) {
      for (std::size_t k = 1; k < uniq.size(); ++k) cuts.push_back(split_midpoint(uniq[k - 1], uniq[k]));
      continue;
    }
    const std::size_t n = v.size();
    for (std::size_t k = 1; k <= kMaxCuts; ++k) {
      std::size_t i = k * n / (kMaxCuts + 1);
      if (i == 0) continue;
      // Move past a run of equal values so the cut separates distinct values.
      while (i < n && v[i] == v[i - 1]) ++i;
      if (i >= n) break;
      cuts.push_back(split_midpoint(v[i - 1], v[i]));
    }
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  }
  return out;
}

std::uint8_t FeatureBins::bin(std::size_t j, double v) const {
  if (std::isnan(v)) return 0;
  const auto& c = cuts_[j];
  return static_cast<std::uint8_t>(1 + (std::upper_bound(c.begin(), c.end(), v) - c.begin()));
}

BinnedMatrix::BinnedMatrix(const FeatureMatrix& x, FeatureBins bins)
    : rows_(x.rows()), cols_(x.cols()), bins_(std::move(bins)), data_(rows_ * cols_) {
  if (bins_.n_features() != cols_) throw DataError("bad_bins", "bin table width mismatch");
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) data_[i * cols_ + j] = bins_.bin(j, x(i, j));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double split_gain(double gl, double hl, double gr, double hr, double lambda) {
  const double g = gl + gr, h = hl + hr;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda));
}

// ---------------------------------------------------------------------------
// Generic greedy grower. A policy supplies the per-row statistics (the last
// one is always a row count), the gain, admissibility and leaf values.

namespace {

constexpr int kBins = 256;

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

struct NewtonPolicy {
  static constexpr int K = 3;  // grad, hess, count
  double lambda;
  double min_leaf_weight;

  double gain(const double* l, const double* r) const {
    return split_gain(l[0], l[1], r[0], r[1], lambda);
  }
  double min_gain(const double*) const { return 0.0; }
  bool admissible(const double* l, const double* r) const {
    return l[2] > 0 && r[2] > 0 && l[1] >= min_leaf_weight && r[1] >= min_leaf_weight;
  }
  bool can_split(const double* p) const { return p[2] >= 2 && p[1] >= 2 * min_leaf_weight; }
  void leaf(const double* p, double* out) const { out[0] = -p[0] / (p[1] + lambda); }
  double cover(const double* p) const { return p[1]; }
  int outputs() const { return 1; }
};

struct GiniPolicy {
  static constexpr int K = 4;  // weighted class mass x3, draw count
  double min_leaf;

  static double score(const double* s) {
    const double w = s[0] + s[1] + s[2];
    return w > 0 ? (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) / w : 0.0;
  }
  // Weighted impurity decrease W*gini(P) - WL*gini(L) - WR*gini(R), which
  // reduces to score(L) + score(R) - score(P).
  double gain(const double* l, const double* r) const {
    double p[K];
    for (int k = 0; k < K; ++k) p[k] = l[k] + r[k];
    return score(l) + score(r) - score(p);
  }
  double min_gain(const double* p) const { return 1e-12 * (p[0] + p[1] + p[2]); }
  bool admissible(const double* l, const double* r) const {
    return l[3] >= min_leaf && r[3] >= min_leaf;
  }
  bool can_split(const double* p) const {
    const int nonzero = (p[0] > 0) + (p[1] > 0) + (p[2] > 0);
    return p[3] >= 2 * min_leaf && nonzero > 1;
  }
  void leaf(const double* p, double* out) const {
    const double w = p[0] + p[1] + p[2];
    for (int c = 0; c < 3; ++c) out[c] = w > 0 ? p[c] / w : 1.0 / 3.0;
  }
  double cover(const double* p) const { return p[0] + p[1] + p[2]; }
  int outputs() const { return 3; }
};

template <typename Policy>
class Grower {
  static constexpr int K = Policy::K;

 public:
  Grower(const FeatureMatrix& x, const BinnedMatrix& binned, std::vector<std::uint32_t> rows,
         std::vector<double> stats, Policy policy, int max_depth, std::vector<int> features,
         int features_per_node, std::uint64_t seed)
      : x_(x),
        binned_(binned),
        rows_(std::move(rows)),
        stats_(std::move(stats)),
        policy_(policy),
        max_depth_(max_depth),
        features_(std::move(features)),
        per_node_(features_per_node),
        rng_(seed),
        tree_(policy.outputs()) {
    scratch_.resize(rows_.size());
  }

  Tree grow() {
    build(0, rows_.size(), 0, {});
    return std::move(tree_);
  }

 private:
  using Hist = std::vector<double>;  // [feature slot][bin][K]

  const double* stat(std::size_t entry) const { return stats_.data() + entry * K; }

  std::vector<int> node_features() {
    if (per_node_ <= 0 || per_node_ >= static_cast<int>(features_.size())) return features_;
    std::vector<int> pool = features_;
    std::vector<int> picked;
    for (int k = 0; k < per_node_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const std::size_t i = pick(rng_);
      picked.push_back(pool[i]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
  }

  Hist build_hist(std::size_t begin, std::size_t end, const std::vector<int>& feats) const {
    Hist h(feats.size() * kBins * K, 0.0);
    for (std::size_t e = begin; e < end; ++e) {
      const std::uint8_t* b = binned_.row(rows_[e]);
      const double* s = stat(e);
      for (std::size_t f = 0; f < feats.size(); ++f) {
        double* cell = h.data() + (f * kBins + b[feats[f]]) * K;
        for (int k = 0; k < K; ++k) cell[k] += s[k];
      }
    }
    return h;
  }

  void consider(Split& best, int feature, double threshold, const double* l, const double* p) const {
    double r[K];
    for (int k = 0; k < K; ++k) r[k] = p[k] - l[k];
    if (!policy_.admissible(l, r)) return;
    const double g = policy_.gain(l, r);
    if (g > best.gain) best = {feature, threshold, g};
  }

  void search_hist(Split& best, const Hist& h, const std::vector<int>& feats, const double* p) const {
    const auto& bins = binned_.bins();
    for (std::size_t f = 0; f < feats.size(); ++f) {
      double l[K] = {};
      const double* base = h.data() + f * kBins * K;
      for (int b = 0; b < kBins; ++b) {
        const double* cell = base + b * K;
        if (cell[K - 1] == 0 && b > 0) continue;  // empty bin: same partition as b - 1
        for (int k = 0; k < K; ++k) l[k] += cell[k];
        if (l[K - 1] == 0) continue;
        if (l[K - 1] >= p[K - 1]) break;
        consider(best, feats[f], bins.threshold(feats[f], b), l, p);
      }
    }
  }

  void search_exact(Split& best, std::size_t begin, std::size_t end, const std::vector<int>& feats,
                    const double* p) const {
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(end - begin);
    for (int f : feats) {
      order.clear();
      for (std::size_t e = begin; e < end; ++e) order.emplace_back(x_(rows_[e], f), e);
      std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        const bool na = std::isnan(a.first), nb = std::isnan(b.first);
        if (na || nb) return na && !nb;
        return a.first < b.first;
      });
      double l[K] = {};
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const double* s = stat(order[i].second);
        for (int k = 0; k < K; ++k) l[k] += s[k];
        const double a = order[i].first, b = order[i + 1].first;
        if (std::isnan(b)) continue;
        if (std::isnan(a)) {
          consider(best, f, -std::numeric_limits<double>::infinity(), l, p);
        } else if (a < b) {
          consider(best, f, split_midpoint(a, b), l, p);
        }
      }
    }
  }

  // Stable partition of [begin, end) by the routing rule; returns the split point.
  std::size_t partition(std::size_t begin, std::size_t end, const Split& s) {
    std::size_t nl = 0, nr = 0;
    const std::size_t n = end - begin;
    std::vector<double> right_stats;
    right_stats.reserve(n * K);
    std::vector<double> left_stats;
    left_stats.reserve(n * K);
    std::vector<std::uint32_t> right_rows;
    right_rows.reserve(n);
    for (std::size_t e = begin; e < end; ++e) {
      const double* st = stat(e);
      if (goes_left(x_(rows_[e], s.feature), s.threshold)) {
        scratch_[begin + nl++] = rows_[e];
        left_stats.insert(left_stats.end(), st, st + K);
      } else {
        right_rows.push_back(rows_[e]);
        right_stats.insert(right_stats.end(), st, st + K);
        ++nr;
      }
    }
    std::copy(scratch_.begin() + static_cast<std::ptrdiff_t>(begin),
              scratch_.begin() + static_cast<std::ptrdiff_t>(begin + nl),
              rows_.begin() + static_cast<std::ptrdiff_t>(begin));
    std::copy(right_rows.begin(), right_rows.end(),
              rows_.begin() + static_cast<std::ptrdiff_t>(begin + nl));
    std::copy(left_stats.begin(), left_stats.end(), stats_.begin() + static_cast<std::ptrdiff_t>(begin * K));
    std::copy(right_stats.begin(), right_stats.end(),
              stats_.begin() + static_cast<std::ptrdiff_t>((begin + nl) * K));
    return begin + nl;
  }

  std::int32_t build(std::size_t begin, std::size_t end, int depth, Hist hist) {
    double p[K] = {};
    for (std::size_t e = begin; e < end; ++e) {
      const double* s = stat(e);
      for (int k = 0; k < K; ++k) p[k] += s[k];
    }
    double value[3] = {};
    policy_.leaf(p, value);
    TreeNode node;
    node.cover = policy_.cover(p);
    const auto id = tree_.add_node(node, {value, static_cast<std::size_t>(policy_.outputs())});
    if (depth >= max_depth_ || !policy_.can_split(p)) return id;

    const bool shared = per_node_ <= 0;  // same feature set at every node
    const auto feats = node_features();
    const bool use_hist = end - begin > kExactSplitMaxRows;
    Split best;
    best.gain = policy_.min_gain(p);
    if (use_hist) {
      if (hist.empty()) hist = build_hist(begin, end, feats);
      search_hist(best, hist, feats, p);
    } else {
      search_exact(best, begin, end, feats, p);
    }
    if (best.feature < 0) return id;

    const std::size_t mid = partition(begin, end, best);
    Hist left_hist, right_hist;
    if (use_hist && shared) {
      const std::size_t nl = mid - begin, nr = end - mid;
      const bool left_small = nl <= nr;
      const std::size_t large_n = left_small ? nr : nl;
      if (large_n > kExactSplitMaxRows) {
        Hist small = left_small ? build_hist(begin, mid, feats) : build_hist(mid, end, feats);
        for (std::size_t i = 0; i < hist.size(); ++i) hist[i] -= small[i];
        (left_small ? right_hist : left_hist) = std::move(hist);
        if ((left_small ? nl : nr) > kExactSplitMaxRows) (left_small ? left_hist : right_hist) = std::move(small);
      }
    }
    hist = Hist{};

    const auto left = build(begin, mid, depth + 1, std::move(left_hist));
    const auto right = build(mid, end, depth + 1, std::move(right_hist));
    auto& n = tree_.node(id);
    n.feature = best.feature;
    n.threshold = best.threshold;
    n.left = left;
    n.right = right;
    // Keep cover additive exactly.
    n.cover = tree_.node(left).cover + tree_.node(right).cover;
    return id;
  }

  const FeatureMatrix& x_;
  const BinnedMatrix& binned_;
  std::vector<std::uint32_t> rows_;
  std::vector<double> stats_;  // aligned with rows_
  Policy policy_;
  int max_depth_;
  std::vector<int> features_;
  int per_node_;
  std::mt19937_64 rng_;
  Tree tree_;
  std::vector<std::uint32_t> scratch_;
};

std::vector<int> sample_columns(std::size_t d, double fraction, std::mt19937_64& rng) {
  std::vector<int> all(d);
  std::iota(all.begin(), all.end(), 0);
  if (fraction >= 1.0) return all;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * d)));
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(k, d));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

Tree fit_tree(const FeatureMatrix& x, const BinnedMatrix& binned, std::span<const std::uint32_t> rows,
              std::span<const double> grad, std::span<const double> hess, const TreeConfig& config) {
  if (grad.size() != x.rows() || hess.size() != x.rows())
    throw DataError("bad_input", "gradient/hessian length does not match the row count");
  if (config.max_depth < 0 || config.lambda < 0 || config.min_leaf_weight < 0 ||
      !(config.col_subsample > 0 && config.col_subsample <= 1))
    throw ConfigError("bad_tree_config", "invalid tree configuration");
  if (rows.empty()) {
    Tree t(1);
    const double zero = 0;
    t.add_node(TreeNode{}, {&zero, 1});
    return t;
  }
  std::mt19937_64 rng(config.seed);
  auto features = sample_columns(x.cols(), config.col_subsample, rng);
  std::vector<double> stats(rows.size() * 3);
  for (std::size_t e = 0; e < rows.size(); ++e) {
    stats[e * 3] = grad[rows[e]];
    stats[e * 3 + 1] = hess[rows[e]];
    stats[e * 3 + 2] = 1;
  }
  Grower<NewtonPolicy> grower(x, binned, {rows.begin(), rows.end()}, std::move(stats),
                              NewtonPolicy{config.lambda, config.min_leaf_weight}, config.max_depth,
                              std::move(features), 0, rng());
  return grower.grow();
}

Tree fit_tree(const FeatureMatrix& x, std::span<const double> grad, std::span<const double> hess,
              const TreeConfig& config) {
  BinnedMatrix binned(x);
  std::vector<std::uint32_t> rows(x.rows());
  std::iota(rows.begin(), rows.end(), 0u);
  return fit_tree(x, binned, rows, grad, hess, config);
}

Tree fit_gini_tree(const FeatureMatrix& x, const BinnedMatrix& binned,
                   std::span<const std::uint32_t> rows, std::span<const double> multiplicity,
                   std::span<const int> labels, std::span<const double> sample_weight,
                   const GiniTreeConfig& config) {
  if (multiplicity.size() != rows.size())
    throw DataError("bad_input", "multiplicity length does not match rows");
  if (labels.size() != x.rows() || sample_weight.size() != x.rows())
    throw DataError("bad_input", "label/weight length does not match the row count");
  std::vector<double> stats(rows.size() * 4, 0.0);
  for (std::size_t e = 0; e < rows.size(); ++e) {
    const int y = labels[rows[e]];
    if (y < 0 || y > 2) throw DataError("bad_label", "label must be 0, 1 or 2");
    stats[e * 4 + y] = multiplicity[e] * sample_weight[rows[e]];
    stats[e * 4 + 3] = multiplicity[e];
  }
  int per_node = config.features_per_node;
  if (per_node <= 0) per_node = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(x.cols()))));
  std::vector<int> features(x.cols());
  std::iota(features.begin(), features.end(), 0);
  if (rows.empty()) {
    Tree t(3);
    const double uniform[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    t.add_node(TreeNode{}, uniform);
    return t;
  }
  Grower<GiniPolicy> grower(x, binned, {rows.begin(), rows.end()}, std::move(stats),
                            GiniPolicy{static_cast<double>(config.min_leaf)}, config.max_depth,
                            std::move(features), per_node, config.seed);
  return grower.grow();
}

}  // namespace rax
