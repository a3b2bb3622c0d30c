#include "rax/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "rax/error.hpp"
#include "rax/parallel.hpp"

namespace rax {
namespace {

struct PathElement {
  int feature;
  double zero_fraction;
  double one_fraction;
  double pweight;
};

void extend_path(PathElement* path, int depth, double zero, double one, int feature) {
  path[depth] = {feature, zero, one, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].pweight * zero * (depth - i) / static_cast<double>(depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

// Total permutation weight of the path with element `index` removed.
double unwound_path_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  double total = 0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = next * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next = path[i].pweight - tmp * zero * (depth - i) / static_cast<double>(depth + 1);
    } else if (zero != 0) {
      total += path[i].pweight / zero / ((depth - i) / static_cast<double>(depth + 1));
    }
  }
  return total;
}

class TreeShapRunner {
 public:
  TreeShapRunner(const Tree& tree, std::span<const double> x, double scale, double* phi,
                 int out_offset, int out_stride)
      : tree_(tree), x_(x), scale_(scale), phi_(phi), offset_(out_offset), stride_(out_stride) {
    const int max_depth = tree.depth() + 2;
    buffer_.resize(static_cast<std::size_t>((max_depth * (max_depth + 1)) / 2 + max_depth + 1));
  }

  void run() { recurse(0, buffer_.data(), 0, 1.0, 1.0, -1); }

 private:
  void recurse(std::size_t node, PathElement* parent, int depth, double zero, double one, int feature) {
    PathElement* path = parent + depth + 1;
    std::copy(parent, parent + depth + 1, path);
    extend_path(path, depth, zero, one, feature);
    const auto& n = tree_.node(node);
    if (n.is_leaf()) {
      const auto v = tree_.value(node);
      for (int i = 1; i <= depth; ++i) {
        const double w = unwound_path_sum(path, depth, i);
        const auto& el = path[i];
        const double d = w * (el.one_fraction - el.zero_fraction) * scale_;
        double* out = phi_ + static_cast<std::size_t>(el.feature) * stride_ + offset_;
        for (int c = 0; c < tree_.n_outputs(); ++c) out[c] += d * v[c];
      }
      return;
    }
    if (!(n.cover > 0)) throw DataError("bad_tree", "SHAP needs positive node covers");
    const bool left = goes_left(x_[n.feature], n.threshold);
    const auto hot = static_cast<std::size_t>(left ? n.left : n.right);
    const auto cold = static_cast<std::size_t>(left ? n.right : n.left);
    const double hot_zero = tree_.node(hot).cover / n.cover;
    const double cold_zero = tree_.node(cold).cover / n.cover;
    double in_zero = 1, in_one = 1;
    int k = 0;
    for (; k <= depth; ++k)
      if (path[k].feature == n.feature) break;
    if (k != depth + 1) {
      in_zero = path[k].zero_fraction;
      in_one = path[k].one_fraction;
      unwind_path(path, depth, k);
      --depth;
    }
    recurse(hot, path, depth + 1, hot_zero * in_zero, in_one, n.feature);
    recurse(cold, path, depth + 1, cold_zero * in_zero, 0.0, n.feature);
  }

  const Tree& tree_;
  std::span<const double> x_;
  double scale_;
  double* phi_;
  int offset_;
  int stride_;
  std::vector<PathElement> buffer_;
};

std::vector<double> expected_value(const Tree& tree) {
  const double root = tree.node(0).cover;
  if (!(root > 0)) throw DataError("untrained_tree", "tree root has zero cover");
  std::vector<double> base(static_cast<std::size_t>(tree.n_outputs()), 0.0);
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (!tree.node(i).is_leaf()) continue;
    const double w = tree.node(i).cover / root;
    const auto v = tree.value(i);
    for (int c = 0; c < tree.n_outputs(); ++c) base[c] += w * v[c];
  }
  return base;
}

double expectation_rec(const Tree& t, std::size_t node, std::span<const double> x, std::uint64_t mask,
                       int c) {
  const auto& n = t.node(node);
  if (n.is_leaf()) return t.value(node)[c];
  if ((mask >> n.feature) & 1ULL) {
    return expectation_rec(t, static_cast<std::size_t>(goes_left(x[n.feature], n.threshold) ? n.left : n.right),
                           x, mask, c);
  }
  const double l = t.node(n.left).cover, r = t.node(n.right).cover;
  return (l * expectation_rec(t, n.left, x, mask, c) + r * expectation_rec(t, n.right, x, mask, c)) / (l + r);
}

}  // namespace

TreeShapValues tree_shap(const Tree& tree, std::span<const double> x) {
  TreeShapValues out;
  out.n_features = x.size();
  out.n_outputs = tree.n_outputs();
  out.base = expected_value(tree);
  out.phi.assign(x.size() * tree.n_outputs(), 0.0);
  TreeShapRunner(tree, x, 1.0, out.phi.data(), 0, tree.n_outputs()).run();
  return out;
}

std::vector<double> conditional_expectation(const Tree& tree, std::span<const double> x,
                                            std::uint64_t mask) {
  std::vector<double> v(static_cast<std::size_t>(tree.n_outputs()));
  for (int c = 0; c < tree.n_outputs(); ++c) v[c] = expectation_rec(tree, 0, x, mask, c);
  return v;
}

TreeShapValues brute_force_shap(const Tree& tree, std::span<const double> x) {
  const std::size_t d = x.size();
  if (d > 20) throw ConfigError("too_many_features", "brute-force SHAP supports at most 20 features");
  if (!(tree.node(0).cover > 0)) throw DataError("untrained_tree", "tree root has zero cover");
  const int k = tree.n_outputs();
  const std::uint64_t subsets = 1ULL << d;
  std::vector<double> v(subsets * k);
  for (std::uint64_t s = 0; s < subsets; ++s) {
    const auto e = conditional_expectation(tree, x, s);
    std::copy(e.begin(), e.end(), v.begin() + static_cast<std::ptrdiff_t>(s * k));
  }
  // w(s) = s! (d - 1 - s)! / d!
  std::vector<double> weight(d, 0.0);
  for (std::size_t s = 0; s < d; ++s)
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(d - s)) - std::lgamma(d + 1.0));
  TreeShapValues out;
  out.n_features = d;
  out.n_outputs = k;
  out.phi.assign(d * k, 0.0);
  out.base.assign(v.begin(), v.begin() + k);
  for (std::size_t j = 0; j < d; ++j) {
    const std::uint64_t bit = 1ULL << j;
    for (std::uint64_t s = 0; s < subsets; ++s) {
      if (s & bit) continue;
      const double w = weight[static_cast<std::size_t>(std::popcount(s))];
      for (int c = 0; c < k; ++c) out.phi[j * k + c] += w * (v[(s | bit) * k + c] - v[s * k + c]);
    }
  }
  return out;
}

double ShapAttribution::output(int c) const {
  double s = base[c];
  for (double p : phi[c]) s += p;
  return s;
}

ShapExplainer::ShapExplainer(const Model& model) : model_(model) {
  const std::vector<Tree>* trees = nullptr;
  if (const auto* b = model.boosted()) trees = &b->trees;
  if (const auto* f = model.forest()) trees = &f->trees;
  if (!trees) throw ConfigError("unsupported_model", "SHAP attribution needs a tree ensemble");
  for (const auto& t : *trees) tree_base_.push_back(expected_value(t));
}

std::string_view ShapExplainer::scale() const {
  return model_.kind() == ModelKind::Boosted ? "log_odds" : "probability";
}

ShapAttribution ShapExplainer::explain(std::span<const double> x, std::int64_t collision_id) const {
  const std::size_t d = model_.n_features();
  if (x.size() != d) throw DataError("bad_input", "feature count does not match the model");
  ShapAttribution a;
  a.collision_id = collision_id;
  std::vector<double> phi(d * 3, 0.0);  // feature-major, three classes
  if (const auto* b = model_.boosted()) {
    a.base = b->base_score;
    for (std::size_t t = 0; t < b->trees.size(); ++t) {
      const int c = static_cast<int>(t % 3);
      TreeShapRunner(b->trees[t], x, b->learning_rate, phi.data(), c, 3).run();
      a.base[c] += b->learning_rate * tree_base_[t][0];
    }
  } else {
    const auto& trees = model_.forest()->trees;
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(1, trees.size()));
    for (std::size_t t = 0; t < trees.size(); ++t) {
      TreeShapRunner(trees[t], x, inv, phi.data(), 0, 3).run();
      for (int c = 0; c < 3; ++c) a.base[c] += inv * tree_base_[t][c];
    }
  }
  for (int c = 0; c < 3; ++c) {
    a.phi[c].resize(d);
    for (std::size_t j = 0; j < d; ++j) a.phi[c][j] = phi[j * 3 + c];
  }
  return a;
}

std::vector<ShapAttribution> ShapExplainer::explain(const FeatureMatrix& x,
                                                    std::span<const std::int64_t> ids,
                                                    unsigned threads) const {
  if (!ids.empty() && ids.size() != x.rows())
    throw DataError("bad_input", "id count does not match row count");
  std::vector<ShapAttribution> out(x.rows());
  parallel_for(x.rows(), threads, [&](std::size_t i) {
    out[i] = explain(x.row(i), ids.empty() ? 0 : ids[i]);
  });
  return out;
}

std::vector<ShapAttribution> ShapExplainer::explain_rows(std::span<const EventFeatureRow> rows,
                                                         const FeatureSchema& schema,
                                                         unsigned threads) const {
  model_.check_schema(schema.hash());
  std::vector<std::int64_t> ids;
  for (const auto& r : rows) ids.push_back(r.collision_id);
  return explain(FeatureMatrix::from_rows(rows), ids, threads);
}

namespace {

std::vector<FeatureImportance> rank(std::vector<FeatureImportance> v) {
  std::sort(v.begin(), v.end(), [](const FeatureImportance& a, const FeatureImportance& b) {
    if (a.mean_abs_shap != b.mean_abs_shap) return a.mean_abs_shap > b.mean_abs_shap;
    return a.name < b.name;
  });
  return v;
}

}  // namespace

std::vector<FeatureImportance> global_importance(std::span<const ShapAttribution> attributions,
                                                 const FeatureSchema& schema,
                                                 std::optional<int> target_class) {
  if (attributions.empty()) throw DataError("empty_input", "no attributions to aggregate");
  if (target_class && (*target_class < 0 || *target_class > 2))
    throw ConfigError("bad_class", "target class must be 0, 1 or 2");
  const std::size_t d = schema.size();
  std::vector<double> sum(d, 0.0);
  for (const auto& a : attributions) {
    if (a.phi[0].size() != d) throw DataError("bad_input", "attribution width does not match schema");
    for (std::size_t j = 0; j < d; ++j) {
      if (target_class) {
        sum[j] += std::abs(a.phi[*target_class][j]);
      } else {
        sum[j] += (std::abs(a.phi[0][j]) + std::abs(a.phi[1][j]) + std::abs(a.phi[2][j])) / 3.0;
      }
    }
  }
  std::vector<FeatureImportance> out(d);
  for (std::size_t j = 0; j < d; ++j)
    out[j] = {schema[j].name, sum[j] / static_cast<double>(attributions.size())};
  return rank(std::move(out));
}

std::vector<std::string> top_features(const ShapAttribution& a, std::size_t k,
                                      const FeatureSchema& schema) {
  std::vector<FeatureImportance> v(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j)
    v[j] = {schema[j].name, (std::abs(a.phi[0][j]) + std::abs(a.phi[1][j]) + std::abs(a.phi[2][j])) / 3.0};
  v = rank(std::move(v));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, v.size()); ++i) out.push_back(v[i].name);
  return out;
}

std::string importance_csv(const std::vector<FeatureImportance>& ranking) {
  std::ostringstream out;
  out << "feature,mean_abs_shap\n" << std::setprecision(10);
  for (const auto& f : ranking) out << f.name << ',' << f.mean_abs_shap << '\n';
  return out.str();
}

nlohmann::json attribution_json(const ShapAttribution& a, std::string_view scale,
                                const FeatureSchema& schema) {
  nlohmann::json classes = nlohmann::json::array();
  for (int c = 0; c < 3; ++c) {
    nlohmann::json phi = nlohmann::json::object();
    for (std::size_t j = 0; j < schema.size(); ++j) phi[schema[j].name] = a.phi[c][j];
    classes.push_back({{"class", to_string(static_cast<SeverityLabel>(c))}, {"base", a.base[c]}, {"phi", phi}});
  }
  return {{"collision_id", a.collision_id}, {"scale", scale}, {"classes", classes}};
}

}  // namespace rax
