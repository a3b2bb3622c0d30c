#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rax/objective.hpp"
#include "rax/schema.hpp"

namespace rax {

struct EventPrompt {
  std::int64_t collision_id = 0;
  std::string event_text;
  std::string task_text;
  std::optional<std::string> augmentation;

  // event_text, augmentation (if any) and task_text, one paragraph each.
  std::string render() const;
};

// Fixed-template summary of the row. Shares are rendered as percentages with
// one decimal; missing fields are left out.
std::string serialize_event(const EventFeatureRow& row, std::span<const std::string> factors);
std::string serialize_event(const EventFeatureRow& row);
EventPrompt make_prompt(const EventFeatureRow& row);

std::string probability_sentence(const ClassVector& proba);
// Throws DataError for an invalid probability vector or a prompt that is
// already augmented.
void augment_with_probs(EventPrompt& prompt, const ClassVector& proba);

enum class GatedMass { FatalOnly, InjuryPlusFatal };

struct GatingConfig {
  double threshold = 0.05;
  GatedMass mass = GatedMass::FatalOnly;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static GatingConfig from_json(const nlohmann::json& j);
};

// Strict: the gated probability mass must exceed the threshold.
bool gate(const ClassVector& proba, const GatingConfig& config);

// First class keyword in the text, case-insensitive. "no injury" and
// "property damage" win over the "injury" they overlap.
std::optional<SeverityLabel> parse_prediction(std::string_view text);

// Feature name -> phrases that count as a mention of that feature. A phrase
// matches case-insensitively where it starts a word.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::map<std::string, std::vector<std::string>> phrases);

  static const Lexicon& defaults();
  // Entries replace the default phrase list of the named features.
  static Lexicon from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Every schema feature has at least one phrase and no phrase matches inside
  // a phrase of a different feature. Throws ConfigError.
  void validate(const FeatureSchema& schema = canonical_schema()) const;

  const std::vector<std::string>& phrases(const std::string& feature) const;
  std::set<std::string> mentions(std::string_view text) const;

 private:
  std::map<std::string, std::vector<std::string>> phrases_;
};

bool phrase_occurs(std::string_view text, std::string_view phrase);

struct AlignmentResult {
  double recall_at_k = 0;
  double precision = 0;
  bool aligned = false;
  std::set<std::string> mentions;
};

// aligned means at least two thirds of the k SHAP features are mentioned
// (two of three for k = 3).
AlignmentResult align(std::span<const std::string> shap_top, std::string_view narrative,
                      const Lexicon& lexicon = Lexicon::defaults(), std::size_t k = 3);
double alignment_score(double mean_recall, double mean_precision);

struct EventAlignment {
  std::int64_t collision_id = 0;
  std::vector<std::string> shap_top;
  AlignmentResult result;
};

struct AlignmentReport {
  std::vector<EventAlignment> events;
  double mean_recall = 0;
  double mean_precision = 0;
  double alignment_score = 0;
  double aligned_fraction = 0;

  static AlignmentReport from_events(std::vector<EventAlignment> events);
  nlohmann::json to_json() const;
};

struct NarrativeRequest {
  std::int64_t collision_id = 0;
  EventPrompt prompt;
  ClassVector proba{};
  std::vector<std::string> shap_top;
};

struct NarrativeResult {
  std::int64_t collision_id = 0;
  std::optional<SeverityLabel> predicted_class;
  std::string explanation;
  std::string policy_suggestion;
  std::chrono::duration<double> latency{0};
  std::string backend_id;
  std::optional<std::string> error;

  nlohmann::json to_json() const;
};

class NarrativeBackend {
 public:
  virtual ~NarrativeBackend() = default;
  virtual std::string id() const = 0;
  // Safe to call concurrently.
  virtual NarrativeResult generate(const NarrativeRequest& request) const = 0;
};

// Deterministic narrative naming the request's SHAP features with their
// first lexicon phrase; the predicted class is the argmax of proba.
class TemplateBackend final : public NarrativeBackend {
 public:
  explicit TemplateBackend(Lexicon lexicon = Lexicon::defaults());
  std::string id() const override { return "template"; }
  NarrativeResult generate(const NarrativeRequest& request) const override;

 private:
  Lexicon lexicon_;
};

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model = "local-slm";
  double timeout_seconds = 30;
  int max_retries = 2;
  double backoff_seconds = 0.25;  // doubled after every failed attempt
  unsigned max_in_flight = 4;

  void validate() const;  // ConfigError
  nlohmann::json to_json() const;
  static HttpBackendConfig from_json(const nlohmann::json& j);
  // RAX_NARRATIVE_URL replaces base_url when set.
  void apply_env();
};

// OpenAI-compatible chat completions client. Transport failures and 5xx/429
// responses are retried; BackendError once retries run out.
class HttpBackend final : public NarrativeBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string id() const override { return "http:" + config_.model; }
  NarrativeResult generate(const NarrativeRequest& request) const override;

  static nlohmann::json request_body(const std::string& model, const std::string& prompt);
  static const std::string& system_prompt();

 private:
  HttpBackendConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

// Runs the backend over all requests with at most max_in_flight concurrent
// calls. Output order matches input order.
std::vector<NarrativeResult> generate_narratives(const NarrativeBackend& backend,
                                                 std::span<const NarrativeRequest> requests,
                                                 unsigned max_in_flight = 4);

}  // namespace rax
