#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "rax/error.hpp"
#include "rax/objective.hpp"

using namespace rax;

namespace {
std::span<const double, 3> view(const std::array<double, 3>& a) { return std::span<const double, 3>(a); }
}  // namespace

TEST_CASE("softmax objective at uniform margins") {
  const std::array<double, 3> m{0, 0, 0};
  const auto gh = weighted_softmax_objective(view(m), 0, {1, 1, 1});
  CHECK(gh.grad[0] == doctest::Approx(-2.0 / 3));
  CHECK(gh.grad[1] == doctest::Approx(1.0 / 3));
  CHECK(gh.grad[2] == doctest::Approx(1.0 / 3));
  for (double h : gh.hess) CHECK(h == doctest::Approx(2.0 / 9));
}

TEST_CASE("doubling the label weight doubles grad and hess") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 100; ++t) {
    const std::array<double, 3> m{u(rng), u(rng), u(rng)};
    const int label = t % 3;
    ClassVector w{1, 1, 1};
    const auto a = weighted_softmax_objective(view(m), label, w);
    w[label] = 2;
    const auto b = weighted_softmax_objective(view(m), label, w);
    for (int c = 0; c < 3; ++c) {
      CHECK(b.grad[c] == 2 * a.grad[c]);
      CHECK(b.hess[c] == 2 * a.hess[c]);
    }
  }
}

TEST_CASE("analytic derivatives match finite differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-4, 4), uw(0.1, 5), ug(0, 4);
  int checked = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::array<double, 3> m{u(rng), u(rng), u(rng)};
    const int label = static_cast<int>(rng() % 3);
    const double w = uw(rng);
    const double gamma = t % 4 == 0 ? 2.0 : ug(rng);

    const SoftmaxObjective ce;
    const FocalObjective focal(gamma);
    const std::function<double(std::array<double, 3>)> f_ce = [&](std::array<double, 3> z) {
      return w * oracle::softmax_ce(z, label);
    };
    const std::function<double(std::array<double, 3>)> f_fl = [&](std::array<double, 3> z) {
      return w * oracle::focal_loss(z, label, gamma);
    };
    CHECK(ce.loss(view(m), label, w) == doctest::Approx(f_ce(m)).epsilon(1e-12));
    CHECK(focal.loss(view(m), label, w) == doctest::Approx(f_fl(m)).epsilon(1e-10));

    const auto a = ce.raw_grad_hess(view(m), label, w);
    const auto b = focal.raw_grad_hess(view(m), label, w);
    for (int c = 0; c < 3; ++c) {
      CHECK(oracle::rel_err(a.grad[c], oracle::fd_grad(f_ce, m, c, 1e-5), 1e-6) <= 1e-4);
      CHECK(oracle::rel_err(b.grad[c], oracle::fd_grad(f_fl, m, c, 1e-5), 1e-6) <= 1e-4);
      CHECK(oracle::rel_err(a.hess[c], oracle::fd_hess(f_ce, m, c, 1e-3), 1e-4) <= 1e-3);
      CHECK(oracle::rel_err(b.hess[c], oracle::fd_hess(f_fl, m, c, 1e-3), 1e-4) <= 1e-3);
      ++checked;
    }
  }
  CHECK(checked == 3000);
}

TEST_CASE("focal with gamma 0 equals weighted softmax") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-6, 6), uw(0.1, 40);
  for (int t = 0; t < 1000; ++t) {
    const std::array<double, 3> m{u(rng), u(rng), u(rng)};
    const int label = t % 3;
    const ClassVector cw{uw(rng), uw(rng), uw(rng)};
    const auto a = weighted_softmax_objective(view(m), label, cw);
    const auto b = focal_objective(view(m), label, 0.0, cw);
    for (int c = 0; c < 3; ++c) {
      CHECK(std::abs(a.grad[c] - b.grad[c]) <= 1e-12);
      CHECK(std::abs(a.hess[c] - b.hess[c]) <= 1e-12);
    }
  }
}

TEST_CASE("focal loss vanishes for confident correct predictions") {
  const FocalObjective focal(2.0);
  for (double big : {10.0, 20.0, 40.0, 800.0}) {
    const std::array<double, 3> m{big, 0, 0};
    const auto gh = focal.grad_hess(view(m), 0, 1.0);
    CHECK(focal.loss(view(m), 0, 1.0) < 1e-8);
    for (double g : gh.grad) CHECK(std::abs(g) < 1e-8);
    for (double h : gh.hess) {
      CHECK(h >= kHessianFloor);
      CHECK(std::isfinite(h));
    }
  }
}

TEST_CASE("hessians are floored and finite for extreme margins") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-200, 200), ug(0, 5);
  for (int t = 0; t < 500; ++t) {
    const std::array<double, 3> m{u(rng), u(rng), u(rng)};
    const FocalObjective focal(ug(rng));
    const auto gh = focal.grad_hess(view(m), t % 3, 2.5);
    for (int c = 0; c < 3; ++c) {
      CHECK(std::isfinite(gh.grad[c]));
      CHECK(gh.hess[c] >= kHessianFloor);
    }
  }
  CHECK_THROWS_AS(FocalObjective(-1.0), ConfigError);
}

TEST_CASE("softmax is shift invariant") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 100; ++t) {
    const std::array<double, 3> m{u(rng), u(rng), u(rng)};
    const double k = u(rng) * 100;
    const std::array<double, 3> s{m[0] + k, m[1] + k, m[2] + k};
    const auto p = softmax(view(m)), q = softmax(view(s));
    for (int c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(q[c]).epsilon(1e-9));
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) <= 1e-12);
  }
}
