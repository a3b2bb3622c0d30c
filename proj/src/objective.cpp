#include "rax/objective.hpp"

#include <algorithm>
#include <cmath>

#include "rax/error.hpp"

namespace rax {
namespace {

struct SoftmaxState {
  ClassVector p{};
  double log_pt = 0;
  double q = 0;  // 1 - p_t, summed from the other classes to keep precision
};

SoftmaxState softmax_state(std::span<const double, 3> m, int label) {
  const double mx = std::max({m[0], m[1], m[2]});
  ClassVector e{};
  double sum = 0;
  for (int c = 0; c < 3; ++c) sum += e[c] = std::exp(m[c] - mx);
  SoftmaxState s;
  for (int c = 0; c < 3; ++c) s.p[c] = e[c] / sum;
  s.log_pt = m[label] - mx - std::log(sum);
  for (int c = 0; c < 3; ++c)
    if (c != label) s.q += s.p[c];
  return s;
}

void check_label(int label) {
  if (label < 0 || label > 2) throw DataError("bad_label", "label must be 0, 1 or 2");
}

}  // namespace

ClassVector softmax(std::span<const double, 3> margins) { return softmax_state(margins, 0).p; }

GradHess Objective::grad_hess(std::span<const double, 3> margins, int label, double weight) const {
  auto gh = raw_grad_hess(margins, label, weight);
  for (auto& h : gh.hess) h = std::max(h, kHessianFloor);
  return gh;
}

double SoftmaxObjective::loss(std::span<const double, 3> margins, int label, double weight) const {
  check_label(label);
  return -weight * softmax_state(margins, label).log_pt;
}

GradHess SoftmaxObjective::raw_grad_hess(std::span<const double, 3> margins, int label,
                                         double weight) const {
  check_label(label);
  const auto s = softmax_state(margins, label);
  GradHess out;
  for (int c = 0; c < 3; ++c) {
    const double one_minus = c == label ? s.q : 1.0 - s.p[c];
    out.grad[c] = c == label ? -weight * s.q : weight * s.p[c];
    out.hess[c] = weight * s.p[c] * one_minus;
  }
  return out;
}

FocalObjective::FocalObjective(double gamma) : gamma_(gamma) {
  if (!(gamma >= 0) || !std::isfinite(gamma))
    throw ConfigError("bad_gamma", "focal gamma must be a finite non-negative number");
}

double FocalObjective::loss(std::span<const double, 3> margins, int label, double weight) const {
  check_label(label);
  const auto s = softmax_state(margins, label);
  if (gamma_ == 0) return -weight * s.log_pt;
  return -weight * std::pow(s.q, gamma_) * s.log_pt;
}

// With L = -w (1-p)^g log p and dp_t/dz_c = p_t (d_c - p_c), write
//   G(p)  = p dFL/dp = g (1-p)^(g-1) p log p - (1-p)^g
//   G'(p) = -g (g-1) (1-p)^(g-2) p log p + g (1-p)^(g-1) (log p + 2)
// so grad_c = w G(p_t) (d_c - p_c) and
//    hess_c = w [G'(p_t) p_t (d_c - p_c)^2 - G(p_t) p_c (1 - p_c)].
GradHess FocalObjective::raw_grad_hess(std::span<const double, 3> margins, int label,
                                       double weight) const {
  check_label(label);
  const auto s = softmax_state(margins, label);
  const double g = gamma_;
  const double pt = s.p[label];
  const double q = s.q;
  const double lp = s.log_pt;

  GradHess out;
  if (q <= 0 && g > 0) return out;  // p_t == 1: loss is flat

  double G = -std::pow(q, g);
  double dG = 0;
  if (g > 0) {
    G += g * std::pow(q, g - 1) * pt * lp;
    dG += g * std::pow(q, g - 1) * (lp + 2);
    if (g != 1) dG -= g * (g - 1) * std::pow(q, g - 2) * pt * lp;
  }
  for (int c = 0; c < 3; ++c) {
    const double delta = c == label ? q : -s.p[c];  // d_c - p_c
    const double one_minus = c == label ? q : 1.0 - s.p[c];
    out.grad[c] = weight * G * delta;
    out.hess[c] = weight * (dG * pt * delta * delta - G * s.p[c] * one_minus);
  }
  return out;
}

GradHess weighted_softmax_objective(std::span<const double, 3> margins, int label,
                                    const ClassVector& class_weights) {
  check_label(label);
  return SoftmaxObjective{}.grad_hess(margins, label, class_weights[label]);
}

GradHess focal_objective(std::span<const double, 3> margins, int label, double gamma,
                         const ClassVector& class_weights) {
  check_label(label);
  return FocalObjective{gamma}.grad_hess(margins, label, class_weights[label]);
}

}  // namespace rax
