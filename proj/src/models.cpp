#include "rax/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rax/error.hpp"
#include "rax/parallel.hpp"

namespace rax {

namespace {

// Models fitted on canonical-width matrices carry the canonical schema hash.
std::uint64_t fitted_schema_hash(const FeatureMatrix& x) {
  return x.cols() == kNumFeatures ? canonical_schema().hash() : 0;
}

}  // namespace

namespace {

void check_labels(const FeatureMatrix& x, std::span<const int> labels) {
  if (labels.size() != x.rows())
    throw DataError("bad_input", "label count " + std::to_string(labels.size()) +
                                     " does not match row count " + std::to_string(x.rows()));
  for (int y : labels)
    if (y < 0 || y > 2) throw DataError("bad_label", "labels must be 0, 1 or 2");
}

}  // namespace

std::array<std::size_t, 3> class_counts(std::span<const int> labels) {
  std::array<std::size_t, 3> n{};
  for (int y : labels) ++n.at(static_cast<std::size_t>(y));
  return n;
}

// ---------------------------------------------------------------------------
// Random forest

ForestModel fit_random_forest(const FeatureMatrix& x, std::span<const int> labels,
                              const ForestConfig& config) {
  check_labels(x, labels);
  if (config.n_trees < 0 || config.max_depth < 0 || config.min_leaf < 1)
    throw ConfigError("bad_forest_config", "invalid forest configuration");
  const std::size_t n = x.rows();
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = config.class_weights[labels[i]];

  const BinnedMatrix binned(x);
  ForestModel model;
  model.class_weights = config.class_weights;
  model.n_features = x.cols();
  model.schema_hash = fitted_schema_hash(x);
  model.trees.resize(static_cast<std::size_t>(config.n_trees));

  parallel_for(model.trees.size(), config.threads, [&](std::size_t t) {
    std::mt19937_64 rng(derive_seed(config.seed, t));
    std::vector<std::uint32_t> draws(n, 0);
    if (n > 0) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t k = 0; k < n; ++k) ++draws[pick(rng)];
    }
    std::vector<std::uint32_t> rows;
    std::vector<double> mult;
    for (std::size_t i = 0; i < n; ++i) {
      if (draws[i] == 0) continue;
      rows.push_back(static_cast<std::uint32_t>(i));
      mult.push_back(draws[i]);
    }
    GiniTreeConfig tc;
    tc.max_depth = config.max_depth;
    tc.min_leaf = config.min_leaf;
    tc.seed = rng();
    model.trees[t] = fit_gini_tree(x, binned, rows, mult, labels, weight, tc);
  });
  return model;
}

// ---------------------------------------------------------------------------
// Gradient boosting

double weighted_mean_loss(std::span<const double> margins, std::span<const int> labels,
                          const Objective& objective, const ClassVector& class_weights) {
  double total = 0, wsum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double w = class_weights[labels[i]];
    total += objective.loss(std::span<const double, 3>(margins.data() + 3 * i, 3), labels[i], w);
    wsum += w;
  }
  return wsum > 0 ? total / wsum : 0.0;
}

BoostedModel fit_gradient_boosting(const FeatureMatrix& x, std::span<const int> labels,
                                   const Objective& objective, const BoostConfig& config,
                                   BoostTrace* trace) {
  check_labels(x, labels);
  if (config.n_rounds < 0 || !(config.learning_rate > 0) || !(config.row_subsample > 0) ||
      config.row_subsample > 1 || !(config.col_subsample > 0) || config.col_subsample > 1 ||
      config.lambda < 0)
    throw ConfigError("bad_boost_config", "invalid boosting configuration");
  for (double w : config.class_weights)
    if (!(w > 0)) throw ConfigError("bad_class_weights", "class weights must be positive");

  const std::size_t n = x.rows();
  BoostedModel model;
  model.learning_rate = config.learning_rate;
  model.lambda = config.lambda;
  model.class_weights = config.class_weights;
  model.objective = objective.name();
  if (const auto* focal = dynamic_cast<const FocalObjective*>(&objective)) model.gamma = focal->gamma();
  model.n_features = x.cols();
  model.schema_hash = fitted_schema_hash(x);

  const auto counts = class_counts(labels);
  for (int c = 0; c < 3; ++c) {
    const double prior = n > 0 ? static_cast<double>(counts[c]) / static_cast<double>(n) : 1.0 / 3;
    model.base_score[c] = std::log(std::max(prior, 1e-12));
  }

  std::vector<double> margins(n * 3);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(model.base_score.begin(), model.base_score.end(), margins.begin() + 3 * i);
  if (trace) {
    trace->loss.clear();
    trace->loss.push_back(weighted_mean_loss(margins, labels, objective, config.class_weights));
  }
  if (config.n_rounds == 0 || n == 0) return model;

  const BinnedMatrix binned(x);
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  const auto sample_size = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(config.row_subsample * static_cast<double>(n))), 1, n);

  std::array<std::vector<double>, 3> grad, hess;
  for (int c = 0; c < 3; ++c) {
    grad[c].assign(n, 0.0);
    hess[c].assign(n, 0.0);
  }
  model.trees.reserve(static_cast<std::size_t>(config.n_rounds) * 3);

  for (int r = 0; r < config.n_rounds; ++r) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(r)));
    std::vector<std::uint32_t> sample = all;
    if (sample_size < n) {
      std::shuffle(sample.begin(), sample.end(), rng);
      sample.resize(sample_size);
      std::sort(sample.begin(), sample.end());
    }
    for (auto i : sample) {
      const auto gh = objective.grad_hess(std::span<const double, 3>(margins.data() + 3 * i, 3),
                                          labels[i], config.class_weights[labels[i]]);
      for (int c = 0; c < 3; ++c) {
        grad[c][i] = gh.grad[c];
        hess[c][i] = gh.hess[c];
      }
    }
    for (int c = 0; c < 3; ++c) {
      TreeConfig tc;
      tc.max_depth = config.max_depth;
      tc.min_leaf_weight = config.min_leaf_weight;
      tc.col_subsample = config.col_subsample;
      tc.lambda = config.lambda;
      tc.seed = rng();
      model.trees.push_back(fit_tree(x, binned, sample, grad[c], hess[c], tc));
    }
    const Tree* round = &model.trees[model.trees.size() - 3];
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        margins[3 * i + c] += config.learning_rate * round[c].predict(x.row(i))[0];
    if (trace)
      trace->loss.push_back(weighted_mean_loss(margins, labels, objective, config.class_weights));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression

ClassVector LinearModel::scores(std::span<const double> x) const {
  ClassVector s = bias;
  for (std::size_t j = 0; j < n_features; ++j) {
    if (std::isnan(x[j])) continue;
    const double z = (x[j] - means[j]) / scales[j];
    for (int c = 0; c < 3; ++c) s[c] += weights[c * n_features + j] * z;
  }
  return s;
}

namespace {

struct LogisticProblem {
  Eigen::MatrixXd z;  // n x (d + 1), last column is the intercept
  Eigen::VectorXd w;
  std::vector<int> y;        // class slot in [0, P)
  std::vector<int> present;  // slot -> class
  double l2 = 0;

  Eigen::Index d() const { return z.cols() - 1; }
  Eigen::Index slots() const { return static_cast<Eigen::Index>(present.size()); }
  // Parameters: slot weights first, then biases of slots 1..P-1.
  Eigen::Index n_params() const { return slots() * d() + slots() - 1; }

  Eigen::MatrixXd coef(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(d() + 1, slots());
    for (Eigen::Index k = 0; k < slots(); ++k) {
      b.col(k).head(d()) = theta.segment(k * d(), d());
      if (k > 0) b(d(), k) = theta(slots() * d() + k - 1);
    }
    return b;
  }

  // Row-wise softmax probabilities and the objective value.
  double evaluate(const Eigen::VectorXd& theta, Eigen::MatrixXd* prob) const {
    const Eigen::MatrixXd s = z * coef(theta);
    double loss = 0;
    if (prob) prob->resize(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (s.row(i).array() - mx).exp();
      const double sum = e.sum();
      loss += w(i) * (mx + std::log(sum) - s(i, y[static_cast<std::size_t>(i)]));
      if (prob) prob->row(i) = e / sum;
    }
    double reg = 0;
    for (Eigen::Index k = 0; k < slots(); ++k) reg += theta.segment(k * d(), d()).squaredNorm();
    return loss + 0.5 * l2 * reg;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const Eigen::MatrixXd& prob) const {
    Eigen::VectorXd g(n_params());
    for (Eigen::Index k = 0; k < slots(); ++k) {
      Eigen::VectorXd r = prob.col(k);
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        if (y[static_cast<std::size_t>(i)] == k) r(i) -= 1.0;
        r(i) *= w(i);
      }
      const Eigen::VectorXd gk = z.transpose() * r;
      g.segment(k * d(), d()) = gk.head(d()) + l2 * theta.segment(k * d(), d());
      if (k > 0) g(slots() * d() + k - 1) = gk(d());
    }
    return g;
  }

  Eigen::MatrixXd hessian(const Eigen::MatrixXd& prob) const {
    const Eigen::Index m = d() + 1, p = slots();
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(p * m, p * m);
    for (Eigen::Index k = 0; k < p; ++k) {
      for (Eigen::Index l = k; l < p; ++l) {
        Eigen::VectorXd c(z.rows());
        for (Eigen::Index i = 0; i < z.rows(); ++i)
          c(i) = w(i) * prob(i, k) * ((k == l ? 1.0 : 0.0) - prob(i, l));
        const Eigen::MatrixXd block = z.transpose() * c.asDiagonal() * z;
        full.block(k * m, l * m, m, m) = block;
        if (l != k) full.block(l * m, k * m, m, m) = block.transpose();
      }
    }
    // Map full (weights + bias per slot) onto the parameter layout.
    std::vector<Eigen::Index> index(static_cast<std::size_t>(p * m), -1);
    for (Eigen::Index k = 0; k < p; ++k) {
      for (Eigen::Index j = 0; j < d(); ++j) index[static_cast<std::size_t>(k * m + j)] = k * d() + j;
      if (k > 0) index[static_cast<std::size_t>(k * m + d())] = p * d() + k - 1;
    }
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n_params(), n_params());
    for (Eigen::Index a = 0; a < p * m; ++a) {
      const auto ia = index[static_cast<std::size_t>(a)];
      if (ia < 0) continue;
      for (Eigen::Index b = 0; b < p * m; ++b) {
        const auto ib = index[static_cast<std::size_t>(b)];
        if (ib >= 0) h(ia, ib) = full(a, b);
      }
    }
    for (Eigen::Index j = 0; j < p * d(); ++j) h(j, j) += l2;
    return h;
  }
};

void standardize(const FeatureMatrix& x, LinearModel& model) {
  const std::size_t d = x.cols();
  model.means.assign(d, 0.0);
  model.scales.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      if (!std::isnan(x(i, j))) sum += x(i, j), ++cnt;
    if (cnt == 0) continue;
    const double mean = sum / static_cast<double>(cnt);
    double ss = 0;
    for (std::size_t i = 0; i < x.rows(); ++i)
      if (!std::isnan(x(i, j))) ss += (x(i, j) - mean) * (x(i, j) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(cnt));
    model.means[j] = mean;
    model.scales[j] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  }
}

LogisticProblem make_problem(const FeatureMatrix& x, std::span<const int> labels,
                             const LinearModel& model, const LogisticConfig& config) {
  LogisticProblem prob;
  const auto counts = class_counts(labels);
  std::array<int, 3> slot{-1, -1, -1};
  for (int c = 0; c < 3; ++c) {
    if (counts[c] == 0) continue;
    slot[c] = static_cast<int>(prob.present.size());
    prob.present.push_back(c);
  }
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto d = static_cast<Eigen::Index>(x.cols());
  prob.z.resize(n, d + 1);
  prob.w.resize(n);
  prob.y.resize(x.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = x(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      prob.z(i, j) = std::isnan(v) ? 0.0 : (v - model.means[j]) / model.scales[j];
    }
    prob.z(i, d) = 1.0;
    const int y = labels[static_cast<std::size_t>(i)];
    prob.y[static_cast<std::size_t>(i)] = slot[y];
    prob.w(i) = config.class_weights[y];
  }
  prob.l2 = config.l2;
  return prob;
}

}  // namespace

LinearModel fit_logistic(const FeatureMatrix& x, std::span<const int> labels,
                         const LogisticConfig& config) {
  check_labels(x, labels);
  if (config.l2 < 0 || config.max_iter < 0 || !(config.tol > 0))
    throw ConfigError("bad_logistic_config", "invalid logistic configuration");
  LinearModel model;
  model.l2 = config.l2;
  model.n_features = x.cols();
  model.schema_hash = fitted_schema_hash(x);
  standardize(x, model);

  const auto prob = make_problem(x, labels, model, config);
  if (prob.present.size() < 2)
    throw DataError("insufficient_classes", "logistic regression needs at least two classes");

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(prob.n_params());
  Eigen::MatrixXd p;
  double loss = prob.evaluate(theta, &p);
  Eigen::VectorXd g = prob.gradient(theta, p);
  int it = 0;
  for (; it < config.max_iter && g.norm() > config.tol; ++it) {
    Eigen::MatrixXd h = prob.hessian(p);
    h.diagonal().array() += 1e-12;
    Eigen::VectorXd step = h.ldlt().solve(-g);
    double slope = g.dot(step);
    if (!step.allFinite() || slope >= 0) {
      step = -g;
      slope = -g.squaredNorm();
    }
    double t = 1.0;
    Eigen::VectorXd next;
    double next_loss = loss;
    Eigen::MatrixXd next_p;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      next = theta + t * step;
      next_loss = prob.evaluate(next, &next_p);
      if (next_loss <= loss + 1e-4 * t * slope) break;
    }
    if (!(next_loss <= loss)) break;  // no further progress in floating point
    theta = std::move(next);
    loss = next_loss;
    p = std::move(next_p);
    g = prob.gradient(theta, p);
  }
  model.iterations = it;
  model.grad_norm = g.norm();
  model.converged = model.grad_norm <= config.tol;

  const auto d = x.cols();
  model.weights.assign(3 * d, 0.0);
  model.bias.fill(-std::numeric_limits<double>::infinity());
  const Eigen::MatrixXd coef = prob.coef(theta);
  for (std::size_t k = 0; k < prob.present.size(); ++k) {
    const int c = prob.present[k];
    for (std::size_t j = 0; j < d; ++j)
      model.weights[c * d + j] = coef(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    model.bias[c] = coef(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  }
  return model;
}

double logistic_objective(const LinearModel& model, const FeatureMatrix& x,
                          std::span<const int> labels, const LogisticConfig& config) {
  check_labels(x, labels);
  double loss = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto s = model.scores(x.row(i));
    const double mx = std::max({s[0], s[1], s[2]});
    double sum = 0;
    for (double v : s) sum += std::exp(v - mx);
    loss += config.class_weights[labels[i]] * (mx + std::log(sum) - s[labels[i]]);
  }
  double reg = 0;
  for (double v : model.weights) reg += v * v;
  return loss + 0.5 * config.l2 * reg;
}

}  // namespace rax
