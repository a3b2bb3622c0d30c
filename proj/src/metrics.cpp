#include "rax/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rax/error.hpp"

namespace rax {

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size())
    throw DataError("length_mismatch", "truth and prediction lengths differ");
  if (truth.empty()) throw DataError("empty_input", "cannot evaluate zero predictions");
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] > 2 || predicted[i] < 0 || predicted[i] > 2)
      throw DataError("bad_label", "labels must be 0, 1 or 2");
    ++m[truth[i]][predicted[i]];
  }
  return m;
}

EvalReport evaluate(const ConfusionMatrix& confusion) {
  EvalReport r;
  r.confusion = confusion;
  std::array<double, 3> row{}, col{};
  double diag = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const auto v = static_cast<double>(confusion[i][j]);
      row[i] += v;
      col[j] += v;
      r.total += confusion[i][j];
      if (i == j) diag += v;
    }
  if (r.total == 0) throw DataError("empty_input", "cannot evaluate zero predictions");
  const double n = static_cast<double>(r.total);
  r.accuracy = diag / n;
  double pe = 0;
  for (int c = 0; c < 3; ++c) pe += (row[c] / n) * (col[c] / n);
  r.kappa = pe == 1.0 ? 0.0 : (r.accuracy - pe) / (1.0 - pe);
  for (int c = 0; c < 3; ++c) {
    const auto tp = static_cast<double>(confusion[c][c]);
    r.recall[c] = row[c] > 0 ? tp / row[c] : 0.0;
    r.precision[c] = col[c] > 0 ? tp / col[c] : 0.0;
    const double s = r.precision[c] + r.recall[c];
    r.f1[c] = s > 0 ? 2 * r.precision[c] * r.recall[c] / s : 0.0;
  }
  r.macro_f1 = (r.f1[0] + r.f1[1] + r.f1[2]) / 3.0;
  return r;
}

EvalReport evaluate(std::span<const int> truth, std::span<const int> predicted) {
  return evaluate(confusion_matrix(truth, predicted));
}

nlohmann::json metrics_json(const EvalReport& r, const std::string& model, const std::string& strategy) {
  nlohmann::json confusion = nlohmann::json::array();
  for (const auto& row : r.confusion) confusion.push_back(row);
  return {{"model", model},
          {"strategy", strategy},
          {"accuracy", r.accuracy},
          {"kappa", r.kappa},
          {"macro_f1", r.macro_f1},
          {"recall_per_class", r.recall},
          {"precision_per_class", r.precision},
          {"f1_per_class", r.f1},
          {"confusion", confusion},
          {"n", r.total}};
}

std::vector<std::size_t> numeric_features(const FeatureSchema& schema) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].kind == FeatureKind::Numeric) out.push_back(j);
  return out;
}

CorrelationMatrix correlation_matrix(std::span<const EventFeatureRow> rows,
                                     std::span<const std::size_t> features,
                                     const FeatureSchema& schema) {
  if (features.empty()) throw ConfigError("empty_features", "correlation needs at least one feature");
  if (rows.size() < 2) throw DataError("insufficient_rows", "correlation needs at least two rows");
  for (auto j : features)
    if (j >= schema.size()) throw ConfigError("bad_feature", "feature index out of range");
  CorrelationMatrix m;
  const std::size_t k = features.size();
  for (auto j : features) m.names.push_back(schema[j].name);
  m.values.assign(k * k, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    m.values[a * k + a] = 1.0;
    for (std::size_t b = a + 1; b < k; ++b) {
      const auto fa = features[a], fb = features[b];
      double sa = 0, sb = 0;
      std::size_t n = 0;
      for (const auto& r : rows) {
        if (r.missing[fa] || r.missing[fb]) continue;
        sa += r.values[fa];
        sb += r.values[fb];
        ++n;
      }
      double corr = 0;
      if (n >= 2) {
        const double ma = sa / n, mb = sb / n;
        double cov = 0, va = 0, vb = 0;
        for (const auto& r : rows) {
          if (r.missing[fa] || r.missing[fb]) continue;
          const double da = r.values[fa] - ma, db = r.values[fb] - mb;
          cov += da * db;
          va += da * da;
          vb += db * db;
        }
        if (va > 0 && vb > 0) corr = std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
      }
      m.values[a * k + b] = m.values[b * k + a] = corr;
    }
  }
  return m;
}

std::string CorrelationMatrix::to_csv() const {
  std::ostringstream out;
  out << "feature";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  out.precision(10);
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    for (std::size_t j = 0; j < names.size(); ++j) out << ',' << at(i, j);
    out << '\n';
  }
  return out.str();
}

}  // namespace rax
