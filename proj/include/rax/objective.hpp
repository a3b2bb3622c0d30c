#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>

namespace rax {

using ClassVector = std::array<double, 3>;

inline constexpr double kHessianFloor = 1e-16;

struct GradHess {
  ClassVector grad{};
  ClassVector hess{};
};

ClassVector softmax(std::span<const double, 3> margins);

// Second-order multiclass objective over per-class margins. `weight` is the
// per-sample multiplier (the class weight of the label).
class Objective {
 public:
  virtual ~Objective() = default;

  virtual std::string name() const = 0;
  virtual double loss(std::span<const double, 3> margins, int label, double weight) const = 0;
  // Hessians are floored at kHessianFloor.
  virtual GradHess grad_hess(std::span<const double, 3> margins, int label, double weight) const;
  // Exact diagonal second derivatives, without the floor.
  virtual GradHess raw_grad_hess(std::span<const double, 3> margins, int label,
                                 double weight) const = 0;
};

// w * -log p_label
class SoftmaxObjective final : public Objective {
 public:
  std::string name() const override { return "softmax"; }
  double loss(std::span<const double, 3> margins, int label, double weight) const override;
  GradHess raw_grad_hess(std::span<const double, 3> margins, int label,
                         double weight) const override;
};

// w * -(1 - p_t)^gamma * log p_t
class FocalObjective final : public Objective {
 public:
  explicit FocalObjective(double gamma);

  double gamma() const { return gamma_; }
  std::string name() const override { return "focal"; }
  double loss(std::span<const double, 3> margins, int label, double weight) const override;
  GradHess raw_grad_hess(std::span<const double, 3> margins, int label,
                         double weight) const override;

 private:
  double gamma_;
};

GradHess weighted_softmax_objective(std::span<const double, 3> margins, int label,
                                    const ClassVector& class_weights);
GradHess focal_objective(std::span<const double, 3> margins, int label, double gamma,
                         const ClassVector& class_weights);

}  // namespace rax
