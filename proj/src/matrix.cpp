#include "rax/matrix.hpp"

#include <limits>

namespace rax {

FeatureMatrix FeatureMatrix::from_rows(std::span<const EventFeatureRow> rows) {
  FeatureMatrix m(rows.size(), kNumFeatures);
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto out = m.row(i);
    for (std::size_t j = 0; j < kNumFeatures; ++j)
      out[j] = rows[i].missing[j] ? nan : rows[i].values[j];
  }
  return m;
}

std::vector<int> labels_of(std::span<const EventFeatureRow> rows) {
  std::vector<int> y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = static_cast<int>(rows[i].label);
  return y;
}

}  // namespace rax
