#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "rax/error.hpp"
#include "rax/metrics.hpp"

using namespace rax;

TEST_CASE("perfect predictions") {
  const std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
  const auto r = evaluate(y, y);
  CHECK(r.accuracy == 1.0);
  CHECK(r.kappa == 1.0);
  CHECK(r.macro_f1 == 1.0);
}

TEST_CASE("binary-style confusion embedded in three classes") {
  // [[3,1],[1,3]]: p_o = 0.75, p_e = 0.5, kappa = 0.5
  const std::vector<int> t{0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> p{0, 0, 0, 1, 1, 1, 1, 0};
  const auto r = evaluate(t, p);
  CHECK(r.accuracy == 0.75);
  CHECK(r.kappa == doctest::Approx(0.5));
  CHECK(r.f1[2] == 0.0);
  CHECK(r.macro_f1 == doctest::Approx((0.75 + 0.75 + 0.0) / 3));
}

TEST_CASE("majority-class predictor") {
  std::vector<int> t;
  t.insert(t.end(), 720, 0);
  t.insert(t.end(), 270, 1);
  t.insert(t.end(), 10, 2);
  const std::vector<int> p(t.size(), 0);
  const auto r = evaluate(t, p);
  CHECK(r.accuracy == doctest::Approx(0.72));
  CHECK(r.recall_fatal() == 0.0);
  CHECK(r.kappa == 0.0);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(evaluate(std::vector<int>{0, 1}, std::vector<int>{0}), DataError);
  CHECK_THROWS_AS(evaluate(std::vector<int>{}, std::vector<int>{}), DataError);
}

TEST_CASE("evaluate matches the naive oracle, including degenerate cases") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> t(n), p(n);
    const int mode = trial % 5;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 3);
      p[i] = mode == 0 ? 1 : (mode == 1 ? t[i] : static_cast<int>(rng() % 3));
      if (mode == 2) t[i] = 0;
    }
    const auto r = evaluate(t, p);
    const auto o = oracle::naive_metrics(t, p);
    CHECK(r.accuracy == o.accuracy);
    CHECK(r.kappa == o.kappa);
    CHECK(r.macro_f1 == o.macro_f1);
    CHECK(r.recall == o.recall);
    if (mode == 0) CHECK(r.kappa == 0.0);
  }
}

TEST_CASE("metrics are invariant to joint permutation and consistent relabeling") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(40), p(40);
    for (int i = 0; i < 40; ++i) t[i] = rng() % 3, p[i] = rng() % 3;
    const auto a = evaluate(t, p);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> t2(40), p2(40);
    for (int i = 0; i < 40; ++i) t2[i] = t[perm[i]], p2[i] = p[perm[i]];
    const auto b = evaluate(t2, p2);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.kappa == doctest::Approx(b.kappa).epsilon(1e-14));
    CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-14));

    const int relabel[3] = {2, 0, 1};
    for (int i = 0; i < 40; ++i) t2[i] = relabel[t[i]], p2[i] = relabel[p[i]];
    CHECK(evaluate(t2, p2).macro_f1 == doctest::Approx(a.macro_f1).epsilon(1e-14));
  }
}

TEST_CASE("kappa is one exactly for diagonal confusion") {
  ConfusionMatrix m{};
  m[0][0] = 5;
  m[2][2] = 1;
  CHECK(evaluate(m).kappa == 1.0);
  m[0][1] = 1;
  CHECK(evaluate(m).kappa < 1.0);
}

TEST_CASE("correlation matrix") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<EventFeatureRow> rows(10000);
  for (auto& r : rows) {
    r.values[feat::AVG_AGE] = u(rng);
    r.values[feat::PCT_EJECTED] = u(rng);
    r.values[feat::PCT_YOUTH] = 1.0 - r.values[feat::AVG_AGE];
    r.values[feat::TAXI] = 0.25;  // constant
  }
  rows[3].missing[feat::PCT_EJECTED] = 1;
  const std::vector<std::size_t> f{feat::AVG_AGE, feat::PCT_EJECTED, feat::PCT_YOUTH, feat::TAXI};
  const auto m = correlation_matrix(rows, f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(m.at(i, i) == 1.0);
  CHECK(m.at(0, 2) == doctest::Approx(-1.0));
  CHECK(std::abs(m.at(0, 1)) < 0.05);
  CHECK(m.at(0, 3) == 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(m.at(i, j) == m.at(j, i));
      CHECK(std::abs(m.at(i, j)) <= 1.0);
    }
  CHECK(m.to_csv().rfind("feature,AVG_AGE,PCT_EJECTED,PCT_YOUTH,TAXI\n", 0) == 0);
  CHECK_THROWS_AS(correlation_matrix(rows, std::vector<std::size_t>{}), ConfigError);
}
