#include "rax/imbalance.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>

#include "rax/error.hpp"

namespace rax {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

constexpr int kFatal = static_cast<int>(SeverityLabel::Fatal);

}  // namespace

std::string ImbalanceStrategy::name() const {
  switch (kind) {
    case StrategyKind::Baseline: return "Baseline";
    case StrategyKind::Weighted: return "Weighted";
    case StrategyKind::Oversample: return "Oversample";
    case StrategyKind::Smote: return "SMOTE";
    case StrategyKind::Focal: return "FocalLoss";
  }
  return "Baseline";
}

ImbalanceStrategy ImbalanceStrategy::parse(const std::string& name) {
  const auto n = lower(name);
  if (n == "baseline") return baseline();
  if (n == "weighted") return weighted();
  if (n == "oversample") return oversample();
  if (n == "smote") return smote();
  if (n == "focal" || n == "focalloss") return focal();
  throw ConfigError("bad_strategy", "unknown imbalance strategy '" + name + "'");
}

void ImbalanceStrategy::validate() const {
  if (kind == StrategyKind::Oversample || kind == StrategyKind::Smote) {
    if (!(target_fatal_share > 0 && target_fatal_share < 0.5))
      throw ConfigError("bad_strategy", "target_fatal_share must lie in (0, 0.5)");
  }
  if (kind == StrategyKind::Smote && k_neighbors < 1)
    throw ConfigError("bad_strategy", "k_neighbors must be at least 1");
  if (kind == StrategyKind::Focal && !(gamma >= 0 && std::isfinite(gamma)))
    throw ConfigError("bad_strategy", "gamma must be non-negative");
}

nlohmann::json ImbalanceStrategy::to_json() const {
  nlohmann::json j{{"kind", name()}};
  if (kind == StrategyKind::Oversample || kind == StrategyKind::Smote)
    j["target_fatal_share"] = target_fatal_share;
  if (kind == StrategyKind::Smote) j["k_neighbors"] = k_neighbors;
  if (kind == StrategyKind::Focal) j["gamma"] = gamma;
  return j;
}

ImbalanceStrategy ImbalanceStrategy::from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse(j.get<std::string>());
  if (!j.is_object()) throw ConfigError("bad_strategy", "strategy must be a string or an object");
  auto s = parse(j.value("kind", std::string("Baseline")));
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    if (!value.is_number()) throw ConfigError("bad_strategy", "strategy field '" + key + "' must be numeric");
    if (key == "target_fatal_share") s.target_fatal_share = value.get<double>();
    else if (key == "k_neighbors") s.k_neighbors = value.get<int>();
    else if (key == "gamma") s.gamma = value.get<double>();
    else throw ConfigError("unknown_key", "unknown strategy field '" + key + "'");
  }
  s.validate();
  return s;
}

ClassVector compute_class_weights(const std::array<std::size_t, 3>& counts) {
  double total = 0;
  for (auto c : counts) {
    if (c == 0)
      throw DataError("empty_class", "class weights need at least one row of every class");
    total += static_cast<double>(c);
  }
  ClassVector w{};
  for (int c = 0; c < 3; ++c) w[c] = total / (3.0 * static_cast<double>(counts[c]));
  return w;
}

std::array<std::size_t, 3> label_counts(std::span<const EventFeatureRow> rows) {
  std::array<std::size_t, 3> n{};
  for (const auto& r : rows) ++n[static_cast<int>(r.label)];
  return n;
}

nlohmann::json AugmentReport::to_json() const {
  return {{"original_per_class", original},
          {"added_per_class", added},
          {"achieved_fatal_share", achieved_fatal_share}};
}

std::size_t minimal_additions(std::size_t fatal, std::size_t total, double target) {
  const auto ok = [&](std::size_t a) {
    return static_cast<double>(fatal + a) >= target * static_cast<double>(total + a);
  };
  if (ok(0)) return 0;
  const double est = (target * static_cast<double>(total) - static_cast<double>(fatal)) / (1.0 - target);
  auto a = static_cast<std::size_t>(std::max(0.0, std::ceil(est)));
  while (a > 0 && ok(a - 1)) --a;
  while (!ok(a)) ++a;
  return a;
}

namespace {

// Fatal rows ordered by collision_id, so sampling ignores input order.
std::vector<std::size_t> sorted_fatal(std::span<const EventFeatureRow> rows) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (static_cast<int>(rows[i].label) == kFatal) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return rows[a].collision_id < rows[b].collision_id;
  });
  return idx;
}

Augmented start(std::span<const EventFeatureRow> rows, double target, std::size_t& additions) {
  if (!(target > 0 && target < 0.5))
    throw ConfigError("bad_strategy", "target_fatal_share must lie in (0, 0.5)");
  Augmented out;
  out.rows.assign(rows.begin(), rows.end());
  out.report.original = label_counts(rows);
  additions = minimal_additions(out.report.original[kFatal], rows.size(), target);
  return out;
}

void finish(Augmented& out) {
  const auto n = static_cast<double>(out.rows.size());
  out.report.achieved_fatal_share =
      n > 0 ? static_cast<double>(out.report.original[kFatal] + out.report.added[kFatal]) / n : 0.0;
}

}  // namespace

Augmented random_oversample(std::span<const EventFeatureRow> rows, double target_fatal_share,
                            std::uint64_t seed) {
  std::size_t a = 0;
  auto out = start(rows, target_fatal_share, a);
  const auto fatal = sorted_fatal(rows);
  if (fatal.empty()) throw DataError("no_fatal_rows", "oversampling needs at least one Fatal row");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, fatal.size() - 1);
  for (std::size_t k = 0; k < a; ++k) out.rows.push_back(rows[fatal[pick(rng)]]);
  out.report.added[kFatal] = a;
  finish(out);
  return out;
}

Augmented smote(std::span<const EventFeatureRow> rows, int k_neighbors, double target_fatal_share,
                std::uint64_t seed, const FeatureSchema& schema) {
  if (k_neighbors < 1) throw ConfigError("bad_strategy", "k_neighbors must be at least 1");
  std::size_t a = 0;
  auto out = start(rows, target_fatal_share, a);
  const auto fatal = sorted_fatal(rows);
  if (fatal.size() < 2)
    throw DataError("too_few_fatal_rows",
                    "SMOTE needs at least two Fatal rows; use random oversampling instead");

  std::vector<std::size_t> numeric;
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].kind == FeatureKind::Numeric) numeric.push_back(j);

  // z-scores over all training rows; missing values sit at the mean.
  std::vector<double> mean(numeric.size(), 0.0), scale(numeric.size(), 1.0);
  for (std::size_t q = 0; q < numeric.size(); ++q) {
    const auto j = numeric[q];
    double s = 0, ss = 0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (!r.missing[j]) s += r.values[j], ++n;
    if (n == 0) continue;
    mean[q] = s / static_cast<double>(n);
    for (const auto& r : rows)
      if (!r.missing[j]) ss += (r.values[j] - mean[q]) * (r.values[j] - mean[q]);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    if (sd > 0) scale[q] = sd;
  }
  const std::size_t f = fatal.size();
  std::vector<double> z(f * numeric.size());
  for (std::size_t i = 0; i < f; ++i) {
    const auto& r = rows[fatal[i]];
    for (std::size_t q = 0; q < numeric.size(); ++q) {
      const auto j = numeric[q];
      z[i * numeric.size() + q] = r.missing[j] ? 0.0 : (r.values[j] - mean[q]) / scale[q];
    }
  }

  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_neighbors), f - 1);
  std::vector<std::vector<std::size_t>> neighbors(f);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < f; ++i) {
    dist.clear();
    for (std::size_t m = 0; m < f; ++m) {
      if (m == i) continue;
      double d2 = 0;
      for (std::size_t q = 0; q < numeric.size(); ++q) {
        const double d = z[i * numeric.size() + q] - z[m * numeric.size() + q];
        d2 += d * d;
      }
      dist.emplace_back(d2, m);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    for (std::size_t t = 0; t < k; ++t) neighbors[i].push_back(dist[t].second);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_seed(0, f - 1), pick_nb(0, k - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < a; ++s) {
    const std::size_t i = pick_seed(rng);
    const auto& base = rows[fatal[i]];
    const auto& nb = rows[fatal[neighbors[i][pick_nb(rng)]]];
    const double u = unit(rng);
    EventFeatureRow syn = base;
    syn.collision_id = -static_cast<std::int64_t>(s + 1);
    for (auto j : numeric) {
      if (base.missing[j] || nb.missing[j]) continue;
      syn.values[j] = base.values[j] + u * (nb.values[j] - base.values[j]);
    }
    out.rows.push_back(std::move(syn));
  }
  out.report.added[kFatal] = a;
  finish(out);
  return out;
}

PreparedTraining apply_strategy(const ImbalanceStrategy& strategy,
                                std::span<const EventFeatureRow> train, std::uint64_t seed) {
  strategy.validate();
  PreparedTraining p;
  p.objective = std::make_shared<SoftmaxObjective>();
  switch (strategy.kind) {
    case StrategyKind::Baseline:
    case StrategyKind::Weighted:
    case StrategyKind::Focal: {
      p.rows.assign(train.begin(), train.end());
      p.report.original = label_counts(train);
      const auto n = static_cast<double>(train.size());
      p.report.achieved_fatal_share = n > 0 ? p.report.original[kFatal] / n : 0.0;
      if (strategy.kind != StrategyKind::Baseline)
        p.class_weights = compute_class_weights(p.report.original);
      if (strategy.kind == StrategyKind::Focal)
        p.objective = std::make_shared<FocalObjective>(strategy.gamma);
      break;
    }
    case StrategyKind::Oversample: {
      auto aug = random_oversample(train, strategy.target_fatal_share, seed);
      p.rows = std::move(aug.rows);
      p.report = aug.report;
      break;
    }
    case StrategyKind::Smote: {
      auto aug = smote(train, strategy.k_neighbors, strategy.target_fatal_share, seed);
      p.rows = std::move(aug.rows);
      p.report = aug.report;
      break;
    }
  }
  return p;
}

}  // namespace rax
