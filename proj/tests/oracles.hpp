#pragma once

// Independent reference implementations used as test oracles. They favor
// directness over speed and share no code paths with the library beyond the
// public data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "rax/matrix.hpp"
#include "rax/tree.hpp"
#include "rax/objective.hpp"

namespace oracle {

// Relative error with an absolute floor on the denominator.
inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double softmax_ce(std::array<double, 3> m, int label) {
  const double mx = std::max({m[0], m[1], m[2]});
  double s = 0;
  for (double v : m) s += std::exp(v - mx);
  return -(m[label] - mx - std::log(s));
}

inline double focal_loss(std::array<double, 3> m, int label, double gamma) {
  const double lp = -softmax_ce(m, label);
  const double pt = std::exp(lp);
  return -std::pow(1.0 - pt, gamma) * lp;
}

// Central first and second differences of f along coordinate c.
inline double fd_grad(const std::function<double(std::array<double, 3>)>& f, std::array<double, 3> m,
                      int c, double h) {
  auto a = m, b = m;
  a[c] += h;
  b[c] -= h;
  return (f(a) - f(b)) / (2 * h);
}

inline double fd_hess(const std::function<double(std::array<double, 3>)>& f, std::array<double, 3> m,
                      int c, double h) {
  auto a = m, b = m;
  a[c] += h;
  b[c] -= h;
  return (f(a) - 2 * f(m) + f(b)) / (h * h);
}

// Exhaustive single split: every feature, every threshold that separates
// distinct observed values (midpoints) plus the missing-only split.
struct BruteSplit {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

inline double midpoint(double a, double b) {
  const double m = a + (b - a) / 2;
  return m > a ? m : b;
}

inline double split_gain_of(const rax::FeatureMatrix& x, std::span<const double> g,
                            std::span<const double> h, double lambda, int feature, double t) {
  double G = 0, H = 0, gl = 0, hl = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    G += g[i], H += h[i];
    if (!(x(i, feature) >= t)) gl += g[i], hl += h[i];
  }
  const double gr = G - gl, hr = H - hl;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - G * G / (H + lambda));
}

inline BruteSplit brute_force_split(const rax::FeatureMatrix& x, std::span<const double> g,
                                    std::span<const double> h, double lambda, double min_leaf_weight,
                                    const std::vector<std::vector<double>>* thresholds = nullptr) {
  BruteSplit best;
  const std::size_t n = x.rows();
  double G = 0, H = 0;
  for (std::size_t i = 0; i < n; ++i) G += g[i], H += h[i];
  for (std::size_t j = 0; j < x.cols(); ++j) {
    std::vector<double> cand;
    if (thresholds) {
      cand = (*thresholds)[j];
      cand.insert(cand.begin(), -std::numeric_limits<double>::infinity());
    } else {
      std::vector<double> vals;
      bool any_nan = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(x(i, j))) any_nan = true;
        else vals.push_back(x(i, j));
      }
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      if (any_nan) cand.push_back(-std::numeric_limits<double>::infinity());
      for (std::size_t k = 1; k < vals.size(); ++k) cand.push_back(midpoint(vals[k - 1], vals[k]));
    }
    for (double t : cand) {
      double gl = 0, hl = 0;
      std::size_t nl = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!(x(i, j) >= t)) gl += g[i], hl += h[i], ++nl;
      }
      if (nl == 0 || nl == n) continue;
      const double gr = G - gl, hr = H - hl;
      if (hl < min_leaf_weight || hr < min_leaf_weight) continue;
      const double gain =
          0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - G * G / (H + lambda));
      if (gain > best.gain) best = {static_cast<int>(j), t, gain};
    }
  }
  return best;
}

// Metrics computed straight from the label sequences.
struct NaiveMetrics {
  double accuracy, kappa, macro_f1;
  std::array<double, 3> recall;
};

inline NaiveMetrics naive_metrics(const std::vector<int>& t, const std::vector<int>& p) {
  const double n = static_cast<double>(t.size());
  auto count = [&](auto pred) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < t.size(); ++i) k += pred(t[i], p[i]) ? 1 : 0;
    return static_cast<double>(k);
  };
  NaiveMetrics m{};
  m.accuracy = count([](int a, int b) { return a == b; }) / n;
  double pe = 0;
  double f1sum = 0;
  for (int c = 0; c < 3; ++c) {
    const double tc = count([c](int a, int) { return a == c; });
    const double pc = count([c](int, int b) { return b == c; });
    const double tp = count([c](int a, int b) { return a == c && b == c; });
    pe += (tc / n) * (pc / n);
    const double rec = tc == 0 ? 0.0 : tp / tc;
    const double prec = pc == 0 ? 0.0 : tp / pc;
    m.recall[c] = rec;
    f1sum += (prec + rec == 0) ? 0.0 : 2 * prec * rec / (prec + rec);
  }
  m.kappa = pe == 1.0 ? 0.0 : (m.accuracy - pe) / (1.0 - pe);
  m.macro_f1 = f1sum / 3.0;
  return m;
}

// Exact Shapley values of a single tree output by subset enumeration, with
// absent features averaged over children in proportion to cover.
inline double cover_expectation(const rax::Tree& t, std::size_t node, std::span<const double> x,
                                const std::vector<bool>& known, int c) {
  const auto& n = t.node(node);
  if (n.feature < 0) return t.value(node)[c];
  if (known[n.feature]) {
    const bool left = !(x[n.feature] >= n.threshold);
    return cover_expectation(t, static_cast<std::size_t>(left ? n.left : n.right), x, known, c);
  }
  const double wl = t.node(n.left).cover, wr = t.node(n.right).cover;
  return (wl * cover_expectation(t, n.left, x, known, c) + wr * cover_expectation(t, n.right, x, known, c)) /
         (wl + wr);
}

inline std::vector<double> shapley_by_subsets(const rax::Tree& t, std::span<const double> x, int c) {
  const std::size_t d = x.size();
  std::vector<double> fact(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> phi(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::uint64_t s = 0; s < (1ULL << d); ++s) {
      if ((s >> j) & 1ULL) continue;
      std::vector<bool> known(d);
      std::size_t size = 0;
      for (std::size_t k = 0; k < d; ++k) {
        known[k] = (s >> k) & 1ULL;
        size += known[k];
      }
      const double without = cover_expectation(t, 0, x, known, c);
      known[j] = true;
      const double with = cover_expectation(t, 0, x, known, c);
      phi[j] += fact[size] * fact[d - size - 1] / fact[d] * (with - without);
    }
  }
  return phi;
}

// Random tree over d features with repeated features along paths, random
// thresholds and additive covers.
struct RandomTreeBuilder {
  std::mt19937_64& rng;
  std::size_t d;
  int max_depth;
  rax::Tree tree{3};

  double build(std::int32_t index, int depth) {
    std::uniform_real_distribution<double> u(0, 1);
    if (depth == max_depth || (depth > 0 && u(rng) < 0.2)) {
      const double cover = u(rng) < 0.1 ? 1e-3 : 1 + 50 * u(rng);
      tree.node(index).cover = cover;
      for (int c = 0; c < 3; ++c) tree.value(index)[c] = 4 * u(rng) - 2;
      return cover;
    }
    std::uniform_int_distribution<int> f(0, static_cast<int>(d) - 1);
    std::uniform_int_distribution<int> t(-3, 3);
    const std::array<double, 3> zero{};
    const auto l = tree.add_node({}, zero);
    const auto r = tree.add_node({}, zero);
    auto& n = tree.node(index);
    n.feature = f(rng);
    n.threshold = t(rng) * 0.5;
    n.left = l;
    n.right = r;
    const double cover = build(l, depth + 1) + build(r, depth + 1);
    tree.node(index).cover = cover;
    return cover;
  }
};

inline rax::Tree random_tree(std::mt19937_64& rng, std::size_t d, int max_depth) {
  RandomTreeBuilder b{rng, d, max_depth};
  b.tree.add_node({}, std::array<double, 3>{});
  b.build(0, 0);
  return b.tree;
}

inline std::vector<double> random_point(std::mt19937_64& rng, std::size_t d) {
  std::uniform_int_distribution<int> t(-4, 4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> x(d);
  for (auto& v : x) v = u(rng) < 0.1 ? std::numeric_limits<double>::quiet_NaN() : t(rng) * 0.5 + 0.25;
  return x;
}

}  // namespace oracle
