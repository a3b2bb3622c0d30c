#include "rax/narrative.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "rax/error.hpp"
#include "rax/model.hpp"
#include "rax/parallel.hpp"

namespace rax {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string pct(double share) { return fmt("%.1f%%", 100.0 * share); }

std::string hour_text(int h) {
  if (h == 0) return "12 AM";
  if (h < 12) return std::to_string(h) + " AM";
  if (h == 12) return "12 PM";
  return std::to_string(h - 12) + " PM";
}

std::string plural(long n, const std::string& noun) {
  return std::to_string(n) + " " + noun + (n == 1 ? "" : "s");
}

constexpr std::array<std::string_view, 7> kDays{"Monday", "Tuesday", "Wednesday", "Thursday",
                                                "Friday", "Saturday", "Sunday"};

std::string_view label_text(SeverityLabel l) {
  switch (l) {
    case SeverityLabel::NoInjury: return "no injury";
    case SeverityLabel::Injury: return "injury";
    case SeverityLabel::Fatal: return "fatal";
  }
  return "";
}

void check_proba(const ClassVector& p) {
  double s = 0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("invalid_probabilities", "probabilities must lie in [0,1]");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DataError("invalid_probabilities", "probabilities must sum to 1");
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string EventPrompt::render() const {
  std::string out = event_text;
  if (augmentation) out += "\n\n" + *augmentation;
  out += "\n\n" + task_text;
  return out;
}

std::string serialize_event(const EventFeatureRow& row, std::span<const std::string> factors) {
  using namespace feat;
  const auto& v = row.values;
  const auto has = [&row](std::size_t j) { return !row.is_missing(j); };
  std::vector<std::string> sentences;

  std::string where = "Crash";
  const std::pair<std::size_t, const char*> boroughs[] = {{BORO_BRONX, "the Bronx"},
                                                         {BORO_BROOKLYN, "Brooklyn"},
                                                         {BORO_MANHATTAN, "Manhattan"},
                                                         {BORO_QUEENS, "Queens"},
                                                         {BORO_STATEN, "Staten Island"}};
  for (const auto& [j, name] : boroughs)
    if (has(j) && v[j] == 1.0) where += std::string(" in ") + name;
  if (has(LATITUDE) && has(LONGITUDE)) where += " near (" + fmt("%.4f", v[LATITUDE]) + ", " + fmt("%.4f", v[LONGITUDE]) + ")";
  if (has(CRASH_HOUR)) where += " at " + hour_text(static_cast<int>(v[CRASH_HOUR]));
  if (has(DAY_OF_WEEK)) where += std::string(" on a ") + std::string(kDays[static_cast<std::size_t>(v[DAY_OF_WEEK]) % 7]);
  sentences.push_back(where + ".");

  const long persons = std::lround(v[NUM_PERSON_RECORDS]);
  if (has(NUM_PERSON_RECORDS) && persons > 0) {
    std::string s = plural(persons, "person") + " involved";
    if (has(ROLE_PEDESTRIAN)) {
      const auto count = [&](std::size_t j) { return std::lround(v[j] * static_cast<double>(persons)); };
      s += ": " + plural(count(ROLE_PEDESTRIAN), "pedestrian") + " (" + pct(v[ROLE_PEDESTRIAN]) + "), " +
           plural(count(ROLE_CYCLIST), "cyclist") + " (" + pct(v[ROLE_CYCLIST]) + "), " +
           plural(count(ROLE_DRIVER), "driver") + ", " + plural(count(ROLE_PASSENGER), "passenger");
    }
    sentences.push_back(s + ".");
  }
  if (has(AVG_AGE)) {
    sentences.push_back("Average age " + fmt("%.1f", v[AVG_AGE]) + " years, " + pct(v[PCT_YOUTH]) +
                        " aged 25 or younger and " + pct(v[PCT_SENIOR]) + " aged 65 or older.");
  }
  if (has(PCT_WITH_SAFETY_EQUIPMENT)) {
    sentences.push_back(pct(v[PCT_WITH_SAFETY_EQUIPMENT]) + " used safety equipment and " +
                        pct(v[PCT_NO_SAFETY_EQUIPMENT]) + " used none.");
  }
  if (has(PCT_EJECTED)) sentences.push_back(pct(v[PCT_EJECTED]) + " were ejected.");
  if (has(PCT_AIRBAG_DEPLOYED)) sentences.push_back("Airbags deployed for " + pct(v[PCT_AIRBAG_DEPLOYED]) + ".");

  const long vehicles = std::lround(v[NUM_VEHICLE_RECORDS]);
  if (has(NUM_VEHICLE_RECORDS) && vehicles > 0) {
    std::string s = plural(vehicles, "vehicle") + " involved";
    if (has(PASSENGER_VEHICLE)) {
      const std::pair<std::size_t, const char*> kinds[] = {
          {PASSENGER_VEHICLE, "sedan"}, {SUV, "SUV"},       {TAXI, "taxi"},          {BUS, "bus"},
          {TRUCK, "truck"},             {MOTORCYCLE, "motorcycle"}, {BICYCLE, "bicycle"}, {OTHER_VEHICLE, "other"}};
      std::vector<std::string> parts;
      for (const auto& [j, name] : kinds)
        if (v[j] > 0) parts.push_back(pct(v[j]) + " " + name);
      if (!parts.empty()) {
        s += " (";
        for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? ", " : "") + parts[i];
        s += ")";
      }
      s += ", " + pct(v[PCT_OUT_OF_STATE]) + " registered out of state";
    }
    sentences.push_back(s + ".");
  }

  std::vector<std::string> named;
  for (const auto& f : factors)
    if (!f.empty()) named.push_back(f);
  if (!named.empty()) {
    std::string s = "Contributing factors: ";
    for (std::size_t i = 0; i < named.size(); ++i) s += (i ? "; " : "") + named[i];
    sentences.push_back(s + ".");
  }

  std::string out;
  for (std::size_t i = 0; i < sentences.size(); ++i) out += (i ? " " : "") + sentences[i];
  return out;
}

std::string serialize_event(const EventFeatureRow& row) { return serialize_event(row, row.factors); }

EventPrompt make_prompt(const EventFeatureRow& row) {
  EventPrompt p;
  p.collision_id = row.collision_id;
  p.event_text = serialize_event(row);
  p.task_text =
      "Task: state the most likely severity class (no injury, injury or fatal), briefly explain "
      "which factors drive it, and suggest one policy intervention.";
  return p;
}

std::string probability_sentence(const ClassVector& p) {
  check_proba(p);
  return "The tabular model assigns " + fmt("%.2f", p[2]) + " probability to a fatal outcome and " +
         fmt("%.2f", p[1]) + " probability to an injury.";
}

void augment_with_probs(EventPrompt& prompt, const ClassVector& proba) {
  if (prompt.augmentation) throw DataError("already_augmented", "prompt already carries probabilities");
  prompt.augmentation = probability_sentence(proba);
}

void GatingConfig::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ConfigError("bad_gating", "gating threshold must lie in [0,1]");
}

nlohmann::json GatingConfig::to_json() const {
  return {{"threshold", threshold}, {"mass", mass == GatedMass::FatalOnly ? "fatal" : "injury_plus_fatal"}};
}

GatingConfig GatingConfig::from_json(const nlohmann::json& j) {
  GatingConfig c;
  if (!j.is_object()) throw ConfigError("bad_gating", "gating config must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "threshold") {
        c.threshold = value.get<double>();
      } else if (key == "mass") {
        const auto m = value.get<std::string>();
        if (m == "fatal") c.mass = GatedMass::FatalOnly;
        else if (m == "injury_plus_fatal") c.mass = GatedMass::InjuryPlusFatal;
        else throw ConfigError("bad_gating", "gating mass must be fatal or injury_plus_fatal");
      } else {
        throw ConfigError("unknown_key", "unknown gating key: " + key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_gating", e.what());
  }
  c.validate();
  return c;
}

bool gate(const ClassVector& p, const GatingConfig& config) {
  const double mass = config.mass == GatedMass::FatalOnly ? p[2] : p[1] + p[2];
  return mass > config.threshold;
}

std::optional<SeverityLabel> parse_prediction(std::string_view text) {
  const auto s = lower(text);
  // Longer keywords first so that equal start positions prefer them.
  const std::pair<std::string_view, SeverityLabel> keys[] = {
      {"property damage", SeverityLabel::NoInjury}, {"no injury", SeverityLabel::NoInjury},
      {"injured", SeverityLabel::Injury},           {"injury", SeverityLabel::Injury},
      {"fatal", SeverityLabel::Fatal}};
  std::optional<SeverityLabel> best;
  std::size_t best_pos = std::string::npos;
  for (const auto& [key, label] : keys) {
    const auto pos = s.find(key);
    if (pos != std::string::npos && pos < best_pos) {
      best_pos = pos;
      best = label;
    }
  }
  return best;
}

bool phrase_occurs(std::string_view text, std::string_view phrase) {
  if (phrase.empty()) return false;
  const auto t = lower(text);
  const auto p = lower(phrase);
  for (auto pos = t.find(p); pos != std::string::npos; pos = t.find(p, pos + 1)) {
    if (pos == 0 || !is_word_char(t[pos - 1])) return true;
  }
  return false;
}

Lexicon::Lexicon(std::map<std::string, std::vector<std::string>> phrases) : phrases_(std::move(phrases)) {}

const Lexicon& Lexicon::defaults() {
  static const Lexicon lexicon({
      {"NUM_PERSON_RECORDS", {"number of people", "people involved", "persons involved"}},
      {"ROLE_DRIVER", {"driver", "motorist"}},
      {"ROLE_PASSENGER", {"passenger", "occupant"}},
      {"ROLE_PEDESTRIAN", {"pedestrian", "on foot", "walker"}},
      {"ROLE_CYCLIST", {"cyclist", "bicyclist", "bike rider"}},
      {"AVG_AGE", {"average age", "age profile", "age of those"}},
      {"PCT_YOUTH", {"young", "youth", "teen"}},
      {"PCT_SENIOR", {"senior", "elderly", "older adult"}},
      {"PCT_WITH_SAFETY_EQUIPMENT", {"seat belt", "helmet", "safety equipment", "restraint use", "belted"}},
      {"PCT_NO_SAFETY_EQUIPMENT", {"unbelted", "unrestrained", "unprotected"}},
      {"PCT_EJECTED", {"ejected", "ejection", "thrown from"}},
      {"PCT_AIRBAG_DEPLOYED", {"airbag", "air bag"}},
      {"NUM_VEHICLE_RECORDS", {"number of vehicles", "vehicles involved", "multi-vehicle"}},
      {"PASSENGER_VEHICLE", {"sedan", "private car", "coupe"}},
      {"SUV", {"suv", "sport utility"}},
      {"TAXI", {"taxi", "cab", "for-hire"}},
      {"BUS", {"bus", "transit vehicle"}},
      {"TRUCK", {"truck", "lorry", "heavy vehicle"}},
      {"MOTORCYCLE", {"motorcycle", "motorbike", "moped"}},
      {"BICYCLE", {"bicycle", "pedal bike"}},
      {"OTHER_VEHICLE", {"other vehicle type", "unusual vehicle"}},
      {"PCT_OUT_OF_STATE", {"out-of-state", "out of state", "non-local plate"}},
      {"VEH_AGE_NEW", {"new vehicle", "newer vehicle", "recent model"}},
      {"VEH_AGE_MID", {"mid-age vehicle", "middle-aged vehicle"}},
      {"VEH_AGE_OLD", {"old vehicle", "older vehicle", "aging vehicle"}},
      {"CRASH_HOUR", {"night", "nighttime", "late night", "early morning", "hour of", "rush hour"}},
      {"DAY_OF_WEEK", {"day of the week", "weekday"}},
      {"IS_WEEKEND", {"weekend", "saturday", "sunday"}},
      {"LATITUDE", {"latitude", "north-south position"}},
      {"LONGITUDE", {"longitude", "east-west position"}},
      {"ZIP_CODE", {"zip code", "postal area", "neighborhood"}},
      {"BORO_BRONX", {"bronx", "the bronx"}},
      {"BORO_BROOKLYN", {"brooklyn", "kings county"}},
      {"BORO_MANHATTAN", {"manhattan", "new york county"}},
      {"BORO_QUEENS", {"queens", "queens county"}},
      {"BORO_STATEN", {"staten island", "richmond county"}},
  });
  return lexicon;
}

Lexicon Lexicon::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("bad_lexicon", "lexicon must map feature names to phrase lists");
  auto phrases = defaults().phrases_;
  for (const auto& [key, value] : j.items()) {
    if (!phrases.count(key)) throw ConfigError("unknown_key", "lexicon names unknown feature: " + key);
    if (!value.is_array()) throw ConfigError("bad_lexicon", "lexicon entry for " + key + " must be a list");
    std::vector<std::string> list;
    for (const auto& p : value) {
      if (!p.is_string()) throw ConfigError("bad_lexicon", "lexicon phrases must be strings");
      list.push_back(p.get<std::string>());
    }
    phrases[key] = std::move(list);
  }
  Lexicon out(std::move(phrases));
  out.validate();
  return out;
}

nlohmann::json Lexicon::to_json() const { return phrases_; }

void Lexicon::validate(const FeatureSchema& schema) const {
  for (const auto& f : schema.features()) {
    auto it = phrases_.find(f.name);
    if (it == phrases_.end() || it->second.empty())
      throw ConfigError("bad_lexicon", "lexicon has no phrase for " + f.name);
    for (const auto& p : it->second)
      if (p.empty()) throw ConfigError("bad_lexicon", "empty lexicon phrase for " + f.name);
  }
  for (const auto& [fa, pa] : phrases_)
    for (const auto& [fb, pb] : phrases_) {
      if (fa == fb) continue;
      for (const auto& a : pa)
        for (const auto& b : pb)
          if (phrase_occurs(b, a))
            throw ConfigError("bad_lexicon", "phrase '" + a + "' of " + fa + " matches inside '" + b + "' of " + fb);
    }
}

const std::vector<std::string>& Lexicon::phrases(const std::string& feature) const {
  auto it = phrases_.find(feature);
  if (it == phrases_.end()) throw ConfigError("bad_lexicon", "lexicon has no entry for " + feature);
  return it->second;
}

std::set<std::string> Lexicon::mentions(std::string_view text) const {
  std::set<std::string> out;
  for (const auto& [feature, list] : phrases_)
    for (const auto& p : list)
      if (phrase_occurs(text, p)) {
        out.insert(feature);
        break;
      }
  return out;
}

AlignmentResult align(std::span<const std::string> shap_top, std::string_view narrative, const Lexicon& lexicon,
                      std::size_t k) {
  if (k < 1) throw ConfigError("bad_k", "k must be at least 1");
  AlignmentResult r;
  r.mentions = lexicon.mentions(narrative);
  const std::set<std::string> top(shap_top.begin(), shap_top.begin() + static_cast<std::ptrdiff_t>(std::min(k, shap_top.size())));
  std::size_t hit = 0;
  for (const auto& f : top) hit += r.mentions.count(f);
  r.recall_at_k = static_cast<double>(hit) / static_cast<double>(k);
  r.precision = r.mentions.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(r.mentions.size());
  r.aligned = 3 * hit >= 2 * k;
  return r;
}

double alignment_score(double r, double p) { return r + p > 0 ? 2 * p * r / (p + r) : 0.0; }

AlignmentReport AlignmentReport::from_events(std::vector<EventAlignment> events) {
  AlignmentReport rep;
  rep.events = std::move(events);
  if (rep.events.empty()) return rep;
  double aligned = 0;
  for (const auto& e : rep.events) {
    rep.mean_recall += e.result.recall_at_k;
    rep.mean_precision += e.result.precision;
    aligned += e.result.aligned ? 1 : 0;
  }
  const auto n = static_cast<double>(rep.events.size());
  rep.mean_recall /= n;
  rep.mean_precision /= n;
  rep.aligned_fraction = aligned / n;
  rep.alignment_score = rax::alignment_score(rep.mean_recall, rep.mean_precision);
  return rep;
}

nlohmann::json AlignmentReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : events) {
    per.push_back({{"collision_id", e.collision_id},
                   {"shap_top", e.shap_top},
                   {"mentions", e.result.mentions},
                   {"recall_at_k", e.result.recall_at_k},
                   {"precision", e.result.precision},
                   {"aligned", e.result.aligned}});
  }
  return {{"n_events", events.size()},
          {"mean_recall", mean_recall},
          {"mean_precision", mean_precision},
          {"alignment_score", alignment_score},
          {"aligned_fraction", aligned_fraction},
          {"events", per}};
}

nlohmann::json NarrativeResult::to_json() const {
  nlohmann::json j = {{"collision_id", collision_id},
                      {"backend", backend_id},
                      {"predicted_class", nullptr},
                      {"explanation", explanation},
                      {"policy_suggestion", policy_suggestion},
                      {"latency_ms", latency.count() * 1000.0}};
  if (predicted_class) j["predicted_class"] = to_string(*predicted_class);
  if (error) j["error"] = *error;
  return j;
}

TemplateBackend::TemplateBackend(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}

NarrativeResult TemplateBackend::generate(const NarrativeRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  NarrativeResult r;
  r.collision_id = request.collision_id;
  r.backend_id = id();
  const auto label = static_cast<SeverityLabel>(argmax_class(request.proba));
  std::vector<std::string> phrases;
  for (const auto& f : request.shap_top) phrases.push_back(lexicon_.phrases(f).front());
  std::string factors;
  for (std::size_t i = 0; i < phrases.size(); ++i)
    factors += (i == 0 ? "" : (i + 1 == phrases.size() ? " and " : ", ")) + phrases[i];
  r.explanation = "Predicted severity: " + std::string(label_text(label)) + ".";
  if (!phrases.empty()) r.explanation += " Main risk factors: " + factors + ".";
  r.policy_suggestion = phrases.empty() ? "Policy suggestion: review the crash site."
                                        : "Policy suggestion: prioritize countermeasures targeting " + phrases.front() + ".";
  r.predicted_class = label;
  r.latency = std::chrono::steady_clock::now() - start;
  return r;
}

void HttpBackendConfig::validate() const {
  if (base_url.rfind("http://", 0) != 0)
    throw ConfigError("bad_backend", "narrative base_url must start with http://");
  if (model.empty()) throw ConfigError("bad_backend", "narrative model name is empty");
  if (!(timeout_seconds > 0)) throw ConfigError("bad_backend", "timeout_seconds must be positive");
  if (max_retries < 0) throw ConfigError("bad_backend", "max_retries must be non-negative");
  if (!(backoff_seconds >= 0)) throw ConfigError("bad_backend", "backoff_seconds must be non-negative");
  if (max_in_flight < 1) throw ConfigError("bad_backend", "max_in_flight must be at least 1");
}

nlohmann::json HttpBackendConfig::to_json() const {
  return {{"base_url", base_url},           {"model", model},
          {"timeout_seconds", timeout_seconds}, {"max_retries", max_retries},
          {"backoff_seconds", backoff_seconds}, {"max_in_flight", max_in_flight}};
}

HttpBackendConfig HttpBackendConfig::from_json(const nlohmann::json& j) {
  HttpBackendConfig c;
  if (!j.is_object()) throw ConfigError("bad_backend", "backend config must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "base_url") c.base_url = value.get<std::string>();
      else if (key == "model") c.model = value.get<std::string>();
      else if (key == "timeout_seconds") c.timeout_seconds = value.get<double>();
      else if (key == "max_retries") c.max_retries = value.get<int>();
      else if (key == "backoff_seconds") c.backoff_seconds = value.get<double>();
      else if (key == "max_in_flight") c.max_in_flight = value.get<unsigned>();
      else throw ConfigError("unknown_key", "unknown backend key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_backend", e.what());
  }
  c.validate();
  return c;
}

void HttpBackendConfig::apply_env() {
  if (const char* url = std::getenv("RAX_NARRATIVE_URL"); url && *url) base_url = url;
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto rest = config_.base_url.substr(7);
  const auto slash = rest.find('/');
  scheme_host_port_ = "http://" + rest.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : rest.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/v1/chat/completions";
}

const std::string& HttpBackend::system_prompt() {
  static const std::string text =
      "You analyze traffic crash records. Answer with the severity class (no injury, injury or "
      "fatal), a short explanation naming the factors that drive it, and one policy suggestion.";
  return text;
}

nlohmann::json HttpBackend::request_body(const std::string& model, const std::string& prompt) {
  return {{"model", model},
          {"temperature", 0},
          {"max_tokens", 256},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", system_prompt()}},
                                  {{"role", "user"}, {"content", prompt}}})}};
}

NarrativeResult HttpBackend::generate(const NarrativeRequest& request) const {
  const auto start = std::chrono::steady_clock::now();
  const auto body = request_body(config_.model, request.prompt.render()).dump();
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(config_.backoff_seconds * std::pow(2.0, attempt - 1)));
    }
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "server returned status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendError("http_status", "narrative backend returned status " + std::to_string(res->status));
    std::string content;
    try {
      content = nlohmann::json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("bad_response", std::string("malformed chat completion response: ") + e.what());
    }
    NarrativeResult r;
    r.collision_id = request.collision_id;
    r.backend_id = id();
    r.explanation = content;
    const auto low = lower(content);
    if (auto pos = low.find("policy"); pos != std::string::npos) {
      const auto line_start = content.rfind('\n', pos);
      const auto begin = line_start == std::string::npos ? 0 : line_start + 1;
      r.policy_suggestion = content.substr(begin, content.find('\n', pos) - begin);
    }
    r.predicted_class = parse_prediction(content);
    if (!r.predicted_class) r.error = "unparseable_label";
    r.latency = std::chrono::steady_clock::now() - start;
    return r;
  }
  throw BackendError("transport_error", "narrative backend unreachable after " +
                                            std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

std::vector<NarrativeResult> generate_narratives(const NarrativeBackend& backend,
                                                 std::span<const NarrativeRequest> requests,
                                                 unsigned max_in_flight) {
  std::vector<NarrativeResult> out(requests.size());
  parallel_for(requests.size(), std::max(1u, max_in_flight),
               [&](std::size_t i) { out[i] = backend.generate(requests[i]); });
  return out;
}

}  // namespace rax
