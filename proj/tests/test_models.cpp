#include <doctest.h>

#include <filesystem>
#include <random>

#include "rax/error.hpp"
#include "rax/model.hpp"

using namespace rax;

namespace {

struct Toy {
  FeatureMatrix x;
  std::vector<int> y;
};

// Three classes driven by feature 0 with noise elsewhere.
Toy planted(std::size_t n, std::uint64_t seed, std::size_t d = 5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Toy t{FeatureMatrix(n, d), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) t.x(i, j) = nd(rng);
    if (u(rng) < 0.05) t.x(i, 3) = std::numeric_limits<double>::quiet_NaN();
    const double s = 1.5 * t.x(i, 0) + 0.5 * t.x(i, 1) + 0.3 * nd(rng);
    t.y[i] = s < 0.3 ? 0 : (s < 2.2 ? 1 : 2);
  }
  return t;
}

ClassVector prior_of(const std::vector<int>& y) {
  const auto c = class_counts(y);
  const double n = static_cast<double>(y.size());
  return {c[0] / n, c[1] / n, c[2] / n};
}

}  // namespace

TEST_CASE("prior-only boosted model predicts the empirical prior") {
  auto toy = planted(500, 1);
  BoostConfig cfg;
  cfg.n_rounds = 0;
  const Model m(fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg));
  const auto prior = prior_of(toy.y);
  for (const auto& p : m.predict_proba(toy.x))
    for (int c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(prior[c]).epsilon(1e-12));
}

TEST_CASE("one boosting round applies the learning rate to the routed leaf") {
  auto toy = planted(400, 2);
  BoostConfig cfg;
  cfg.n_rounds = 1;
  const auto bm = fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg);
  REQUIRE(bm.trees.size() == 3);
  const Model m(bm);
  std::vector<double> margins(3 * toy.x.rows());
  m.margins(toy.x, margins);
  for (std::size_t i = 0; i < toy.x.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(margins[3 * i + c] ==
            doctest::Approx(bm.base_score[c] + 0.05 * bm.trees[c].predict(toy.x.row(i))[0]).epsilon(1e-14));
}

TEST_CASE("boosting loss is non-increasing and the model learns") {
  auto toy = planted(3000, 3);
  for (int focal = 0; focal < 2; ++focal) {
    BoostConfig cfg;
    cfg.n_rounds = 60;
    cfg.max_depth = 4;
    cfg.learning_rate = 0.1;
    cfg.class_weights = {0.7, 1.0, 3.0};
    BoostTrace trace;
    std::unique_ptr<Objective> obj;
    if (focal) obj = std::make_unique<FocalObjective>(2.0);
    else obj = std::make_unique<SoftmaxObjective>();
    const auto bm = fit_gradient_boosting(toy.x, toy.y, *obj, cfg, &trace);
    REQUIRE(trace.loss.size() == 61);
    for (std::size_t r = 1; r < trace.loss.size(); ++r) CHECK(trace.loss[r] <= trace.loss[r - 1] + 1e-9);
    CHECK(trace.loss.back() < 0.6 * trace.loss.front());
    for (const auto& t : bm.trees) t.validate(toy.x.cols());
  }
}

TEST_CASE("boosting is deterministic under a fixed seed") {
  auto toy = planted(1500, 4);
  BoostConfig cfg;
  cfg.n_rounds = 10;
  const auto a = fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg);
  const auto b = fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg);
  CHECK(a == b);
  cfg.seed = 7;
  CHECK_FALSE(fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg) == a);
}

TEST_CASE("random forest: single class, determinism, separable data") {
  auto toy = planted(600, 5);
  std::vector<int> zeros(toy.y.size(), 0);
  ForestConfig cfg;
  cfg.n_trees = 5;
  const Model single(fit_random_forest(toy.x, zeros, cfg));
  for (const auto& p : single.predict_proba(toy.x)) {
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);
    CHECK(p[2] == 0.0);
  }

  cfg.n_trees = 20;
  cfg.threads = 2;
  const auto a = fit_random_forest(toy.x, toy.y, cfg);
  cfg.threads = 1;
  const auto b = fit_random_forest(toy.x, toy.y, cfg);
  CHECK(a == b);
  for (const auto& t : a.trees) {
    t.validate(toy.x.cols());
    CHECK(t.depth() <= cfg.max_depth);
  }

  // Planted separable set: class given by which third of feature 0 a row lies in.
  FeatureMatrix x(600, 2);
  std::vector<int> y(600);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < 600; ++i) {
    y[i] = static_cast<int>(i % 3);
    x(i, 0) = 3.0 * y[i] + u(rng);
    x(i, 1) = u(rng);
  }
  ForestConfig sep;
  sep.n_trees = 30;
  const Model forest(fit_random_forest(x, y, sep));
  CHECK(forest.predict_class(x) == y);
}

TEST_CASE("forest class weights shift predictions toward the weighted class") {
  auto toy = planted(2000, 9);
  ForestConfig cfg;
  cfg.n_trees = 20;
  const Model plain(fit_random_forest(toy.x, toy.y, cfg));
  cfg.class_weights = {1, 1, 20};
  const Model weighted(fit_random_forest(toy.x, toy.y, cfg));
  auto count2 = [](const std::vector<int>& v) { return std::count(v.begin(), v.end(), 2); };
  CHECK(count2(weighted.predict_class(toy.x)) > count2(plain.predict_class(toy.x)));
}

TEST_CASE("logistic regression converges and respects the l2 limit") {
  auto toy = planted(2000, 10);
  LogisticConfig cfg;
  const auto lm = fit_logistic(toy.x, toy.y, cfg);
  CHECK(lm.converged);
  CHECK(lm.grad_norm <= 1e-6);
  for (double s : lm.scales) CHECK(s > 0);
  const Model m(lm);
  const auto pred = m.predict_class(toy.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == toy.y[i];
  CHECK(correct > 0.8 * pred.size());

  cfg.l2 = 1e12;
  const auto flat = fit_logistic(toy.x, toy.y, cfg);
  for (double w : flat.weights) CHECK(std::abs(w) < 1e-6);
  const auto prior = prior_of(toy.y);
  for (const auto& p : Model(flat).predict_proba(toy.x))
    for (int c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(prior[c]).epsilon(1e-5));
}

TEST_CASE("logistic matches an independent two-parameter minimizer") {
  // Two classes, one feature, separable. With classes {0, 1} the model's
  // optimum has W0 = -W1, so it reduces to binary logistic regression in
  // (w = W1 - W0, b) with penalty (l2 / 4) w^2.
  const std::vector<double> xs{-3, -2, -1.5, -1, 1, 1.2, 2, 3.5};
  const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
  FeatureMatrix x(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) x(i, 0) = xs[i];
  LogisticConfig cfg;
  cfg.l2 = 1.0;
  const auto lm = fit_logistic(x, y, cfg);
  CHECK(lm.converged);
  CHECK(std::isinf(lm.bias[2]));

  double mean = 0;
  for (double v : xs) mean += v;
  mean /= xs.size();
  double var = 0;
  for (double v : xs) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / xs.size());
  auto f = [&](double w, double b) {
    double l = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double s = w * (xs[i] - mean) / sd + b;
      l += y[i] == 1 ? std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    }
    return l + 0.25 * cfg.l2 * w * w;
  };
  // Plain gradient descent with central-difference gradients.
  double w = 0, b = 0, step = 0.05;
  for (int it = 0; it < 200000; ++it) {
    const double e = 1e-7;
    const double gw = (f(w + e, b) - f(w - e, b)) / (2 * e);
    const double gb = (f(w, b + e) - f(w, b - e)) / (2 * e);
    if (std::hypot(gw, gb) < 1e-9) break;
    w -= step * gw;
    b -= step * gb;
  }
  CHECK(logistic_objective(lm, x, y, cfg) == doctest::Approx(f(w, b)).epsilon(1e-6));
  CHECK(std::abs(logistic_objective(lm, x, y, cfg) - f(w, b)) <= 1e-6);
}

TEST_CASE("logistic needs two classes") {
  auto toy = planted(100, 12);
  std::vector<int> ones(100, 1);
  CHECK_THROWS_AS(fit_logistic(toy.x, ones, {}), DataError);
}

TEST_CASE("scoring: batch equals scalar path, probabilities sum to one") {
  auto toy = planted(700, 13, kNumFeatures);
  BoostConfig cfg;
  cfg.n_rounds = 20;
  ForestConfig fc;
  fc.n_trees = 10;
  std::vector<Model> models{Model(fit_gradient_boosting(toy.x, toy.y, SoftmaxObjective{}, cfg)),
                            Model(fit_random_forest(toy.x, toy.y, fc)),
                            Model(fit_logistic(toy.x, toy.y, {}))};
  for (const auto& m : models) {
    const auto batch = score_batch(m, toy.x, 3);
    CHECK(batch.rows_per_second > 0);
    for (std::size_t i = 0; i < toy.x.rows(); i += 7) {
      FeatureMatrix one(1, toy.x.cols());
      std::copy(toy.x.row(i).begin(), toy.x.row(i).end(), one.row(0).begin());
      const auto p = m.predict_proba(one)[0];
      CHECK(p == batch.proba[i]);
      CHECK(m.predict_class(one)[0] == batch.labels[i]);
      CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  CHECK(argmax_class(std::array<double, 3>{0.4, 0.4, 0.2}) == 0);
  CHECK(argmax_class(std::array<double, 3>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax_class(std::array<double, 3>{1.0 / 3, 1.0 / 3, 1.0 / 3}) == 0);
}

TEST_CASE("RAXM round trip, corruption and schema checks") {
  auto toy = planted(500, 14, kNumFeatures);
  BoostConfig cfg;
  cfg.n_rounds = 5;
  auto bm = fit_gradient_boosting(toy.x, toy.y, FocalObjective(2.0), cfg);
  bm.schema_hash = canonical_schema().hash();
  ForestConfig fc;
  fc.n_trees = 3;
  auto fm = fit_random_forest(toy.x, toy.y, fc);
  fm.schema_hash = canonical_schema().hash();
  auto lm = fit_logistic(toy.x, toy.y, {});
  lm.schema_hash = canonical_schema().hash();

  const auto dir = std::filesystem::temp_directory_path() / "rax_model_test";
  std::filesystem::create_directories(dir);
  for (const Model& m : {Model(bm), Model(fm), Model(lm)}) {
    const auto bytes = m.serialize();
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RAXM");
    CHECK(bytes[6] == static_cast<std::uint8_t>(m.kind()));
    const auto back = Model::deserialize(bytes);
    CHECK(back == m);
    CHECK(back.predict_proba(toy.x) == m.predict_proba(toy.x));
    m.save(dir / "m.raxm");
    CHECK(Model::load(dir / "m.raxm") == m);

    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(Model::deserialize(bad), DataError);
    CHECK_THROWS_AS(Model::deserialize(std::span(bytes).first(bytes.size() - 9)), DataError);
  }
  std::filesystem::remove_all(dir);

  const Model m(bm);
  CHECK_NOTHROW(m.check_schema(canonical_schema().hash()));
  try {
    m.check_schema(0x1234);
    FAIL("expected schema mismatch");
  } catch (const DataError& e) {
    CHECK(e.code() == "schema_mismatch");
    CHECK(std::string(e.what()).find(hash_hex(canonical_schema().hash())) != std::string::npos);
    CHECK(std::string(e.what()).find("0000000000001234") != std::string::npos);
  }
}
