#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "rax/models.hpp"

namespace rax {

enum class ModelKind : std::uint8_t { Forest = 0, Boosted = 1, Linear = 2 };

std::string_view to_string(ModelKind kind);

// Immutable trained model of any kind. Scoring is thread-safe.
class Model {
 public:
  explicit Model(ForestModel m);
  explicit Model(BoostedModel m);
  explicit Model(LinearModel m);

  ModelKind kind() const;
  std::uint64_t schema_hash() const;
  std::size_t n_features() const;

  const ForestModel* forest() const { return std::get_if<ForestModel>(&model_); }
  const BoostedModel* boosted() const { return std::get_if<BoostedModel>(&model_); }
  const LinearModel* linear() const { return std::get_if<LinearModel>(&model_); }

  // Output scale explained by SHAP: boosting margins, forest class
  // probabilities, linear scores. Writes n x 3 values.
  void margins(const FeatureMatrix& x, std::span<double> out) const;
  // Writes n x 3 class probabilities.
  void predict_proba(const FeatureMatrix& x, std::span<double> out, unsigned threads = 1) const;
  std::vector<ClassVector> predict_proba(const FeatureMatrix& x, unsigned threads = 1) const;
  std::vector<int> predict_class(const FeatureMatrix& x, unsigned threads = 1) const;

  // Throws DataError("schema_mismatch") naming both hashes.
  void check_schema(std::uint64_t expected) const;

  std::vector<std::uint8_t> serialize() const;
  static Model deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  bool operator==(const Model& other) const { return model_ == other.model_; }

 private:
  struct Compiled;
  void compile();
  void margins_block(const double* x, std::size_t n, double* out) const;

  std::variant<ForestModel, BoostedModel, LinearModel> model_;
  std::shared_ptr<const Compiled> compiled_;
};

int argmax_class(std::span<const double, 3> p);

struct ScoreResult {
  std::vector<int> labels;
  std::vector<ClassVector> proba;
  double seconds = 0;
  double rows_per_second = 0;
};

// Timed batch scoring; rows are split across workers and merged in order.
ScoreResult score_batch(const Model& model, const FeatureMatrix& x, unsigned threads = 1);

// Row-level entry points that check the model schema first.
std::vector<ClassVector> predict_proba(const Model& model, std::span<const EventFeatureRow> rows,
                                       const FeatureSchema& schema = canonical_schema());
std::vector<int> predict_class(const Model& model, std::span<const EventFeatureRow> rows,
                               const FeatureSchema& schema = canonical_schema());

}  // namespace rax
