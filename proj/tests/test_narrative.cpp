#include <doctest.h>

#include <atomic>
#include <random>
#include <thread>

#include <httplib.h>

#include "mock_server.hpp"

#include "rax/error.hpp"
#include "rax/narrative.hpp"

using namespace rax;
using rax::testing::completion;
using rax::testing::MockServer;

namespace {

EventFeatureRow brooklyn_row() {
  using namespace feat;
  EventFeatureRow r;
  r.collision_id = 77;
  r.values[NUM_PERSON_RECORDS] = 3;
  r.values[ROLE_DRIVER] = 2.0 / 3.0;
  r.values[ROLE_PEDESTRIAN] = 1.0 / 3.0;
  r.values[AVG_AGE] = 41.5;
  r.values[PCT_WITH_SAFETY_EQUIPMENT] = 0.5;
  r.values[PCT_NO_SAFETY_EQUIPMENT] = 0.5;
  r.values[NUM_VEHICLE_RECORDS] = 1;
  r.values[PASSENGER_VEHICLE] = 1;
  r.values[CRASH_HOUR] = 2;
  r.values[DAY_OF_WEEK] = 5;
  r.values[IS_WEEKEND] = 1;
  r.values[LATITUDE] = 40.65;
  r.values[LONGITUDE] = -73.95;
  r.values[ZIP_CODE] = 11215;
  r.values[BORO_BROOKLYN] = 1;
  r.factors = {"Unsafe Speed"};
  return r;
}

// Mock chat-completions server on a free local port.

NarrativeRequest request_for(const EventFeatureRow& row, ClassVector p) {
  NarrativeRequest req;
  req.collision_id = row.collision_id;
  req.prompt = make_prompt(row);
  augment_with_probs(req.prompt, p);
  req.proba = p;
  req.shap_top = {"CRASH_HOUR", "ROLE_PEDESTRIAN", "PCT_WITH_SAFETY_EQUIPMENT"};
  return req;
}

}  // namespace

TEST_CASE("serialized event carries the key fields") {
  const auto row = brooklyn_row();
  const auto text = serialize_event(row);
  CHECK(text.find("Brooklyn") != std::string::npos);
  CHECK(text.find("2 AM") != std::string::npos);
  CHECK(text.find("pedestrian") != std::string::npos);
  CHECK(text.find("50.0%") != std::string::npos);
  CHECK(text.find("33.3%") != std::string::npos);
  CHECK(text.find("Saturday") != std::string::npos);
  CHECK(text.find("Unsafe Speed") != std::string::npos);
  CHECK(text == serialize_event(row));
}

TEST_CASE("missing location and age are omitted") {
  auto row = brooklyn_row();
  row.values[feat::BORO_BROOKLYN] = 0;
  row.missing[feat::LATITUDE] = row.missing[feat::LONGITUDE] = 1;
  row.missing[feat::AVG_AGE] = row.missing[feat::PCT_YOUTH] = row.missing[feat::PCT_SENIOR] = 1;
  row.values[feat::AVG_AGE] = kAgeSentinel;
  const auto text = serialize_event(row);
  CHECK(text.find("Brooklyn") == std::string::npos);
  CHECK(text.find(" in ") == std::string::npos);
  CHECK(text.find("near") == std::string::npos);
  CHECK(text.find("age") == std::string::npos);
  CHECK(text.find("-1") == std::string::npos);
  CHECK(text.find("nan") == std::string::npos);
}

TEST_CASE("hour rendering covers midnight and noon") {
  auto row = brooklyn_row();
  row.values[feat::CRASH_HOUR] = 0;
  CHECK(serialize_event(row).find("12 AM") != std::string::npos);
  row.values[feat::CRASH_HOUR] = 12;
  CHECK(serialize_event(row).find("12 PM") != std::string::npos);
  row.values[feat::CRASH_HOUR] = 23;
  CHECK(serialize_event(row).find("11 PM") != std::string::npos);
}

TEST_CASE("probability augmentation") {
  auto p = make_prompt(brooklyn_row());
  augment_with_probs(p, {0.27, 0.65, 0.08});
  REQUIRE(p.augmentation);
  CHECK(p.augmentation->find("assigns 0.08 probability to a fatal outcome and 0.65 probability to an injury") !=
        std::string::npos);
  CHECK_THROWS_AS(augment_with_probs(p, {0.27, 0.65, 0.08}), DataError);
  auto q = make_prompt(brooklyn_row());
  augment_with_probs(q, {1, 0, 0});
  CHECK(q.augmentation->find("0.00 probability to a fatal outcome and 0.00 probability to an injury") !=
        std::string::npos);
  auto bad = make_prompt(brooklyn_row());
  CHECK_THROWS_AS(augment_with_probs(bad, {0.5, 0.4, 0.2}), DataError);
  CHECK_THROWS_AS(augment_with_probs(bad, {1.2, -0.2, 0.0}), DataError);
  CHECK(q.render().find(*q.augmentation) != std::string::npos);
}

TEST_CASE("gating rule") {
  GatingConfig cfg;
  CHECK(gate({0.27, 0.65, 0.08}, cfg));
  CHECK_FALSE(gate({0.90, 0.05, 0.05}, cfg));
  cfg.threshold = 1.0;
  CHECK_FALSE(gate({0, 0, 1}, cfg));
  cfg.threshold = 0.0;
  CHECK(gate({0.999, 0.0, 0.001}, cfg));
  CHECK_FALSE(gate({1, 0, 0}, cfg));
  cfg.mass = GatedMass::InjuryPlusFatal;
  cfg.threshold = 0.3;
  CHECK(gate({0.6, 0.3, 0.1}, cfg));
  CHECK_FALSE(gate({0.7, 0.3, 0.0}, cfg));
  GatingConfig bad;
  bad.threshold = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(GatingConfig::from_json({{"treshold", 0.1}}), ConfigError);
  CHECK(GatingConfig::from_json(cfg.to_json()).mass == GatedMass::InjuryPlusFatal);
}

TEST_CASE("gating is monotone in the threshold") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    double a = u(rng), b = u(rng) * (1 - a);
    const ClassVector p{1 - a - b, a, b};
    GatingConfig lo, hi;
    lo.mass = hi.mass = i % 2 ? GatedMass::FatalOnly : GatedMass::InjuryPlusFatal;
    lo.threshold = u(rng);
    hi.threshold = lo.threshold + (1 - lo.threshold) * u(rng);
    if (gate(p, hi)) CHECK(gate(p, lo));
  }
}

TEST_CASE("prediction parsing") {
  CHECK(parse_prediction("This is likely a fatal outcome") == SeverityLabel::Fatal);
  CHECK(parse_prediction("No injury expected") == SeverityLabel::NoInjury);
  CHECK(parse_prediction("Severity: Injury. Pedestrian struck at night.") == SeverityLabel::Injury);
  CHECK(parse_prediction("Two people were INJURED") == SeverityLabel::Injury);
  CHECK(parse_prediction("Property damage only, nobody hurt") == SeverityLabel::NoInjury);
  CHECK(parse_prediction("injury likely, fatal unlikely") == SeverityLabel::Injury);
  CHECK(parse_prediction("fatal risk; no injury to the driver") == SeverityLabel::Fatal);
  CHECK_FALSE(parse_prediction(""));
  CHECK_FALSE(parse_prediction("The crash happened on a rainy day."));
}

TEST_CASE("default lexicon covers the schema without cross-feature overlaps") {
  const auto& lex = Lexicon::defaults();
  CHECK_NOTHROW(lex.validate());
  for (const auto& f : canonical_schema().features()) {
    const auto& p = lex.phrases(f.name);
    CHECK(p.size() >= 2);
    CHECK(p.size() <= 6);
  }
  CHECK(lex.mentions("A pedestrian was hit late at night; no seat belt.") ==
        std::set<std::string>{"ROLE_PEDESTRIAN", "CRASH_HOUR", "PCT_WITH_SAFETY_EQUIPMENT"});
  CHECK(lex.mentions("Pedestrians crossing") == std::set<std::string>{"ROLE_PEDESTRIAN"});
  CHECK(lex.mentions("property damage, percentage") .empty());
}

TEST_CASE("lexicon overrides are validated") {
  const auto lex = Lexicon::from_json({{"CRASH_HOUR", {"darkness", "after midnight"}}});
  CHECK(lex.mentions("after midnight") == std::set<std::string>{"CRASH_HOUR"});
  CHECK(lex.mentions("at night").empty());
  CHECK_THROWS_AS(Lexicon::from_json({{"NOT_A_FEATURE", {"x"}}}), ConfigError);
  CHECK_THROWS_AS(Lexicon::from_json({{"CRASH_HOUR", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(Lexicon::from_json({{"CRASH_HOUR", {"pedestrian"}}}), ConfigError);
}

TEST_CASE("alignment examples") {
  const std::vector<std::string> top{"ROLE_PEDESTRIAN", "CRASH_HOUR", "PCT_EJECTED"};
  const auto r = align(top, "A pedestrian at night; the driver was speeding.");
  CHECK(r.recall_at_k == doctest::Approx(2.0 / 3.0));
  CHECK(r.precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.aligned);
  const auto full = align(top, "pedestrian, night, ejected");
  CHECK(full.recall_at_k == 1.0);
  CHECK(full.precision == 1.0);
  const auto none = align(top, "taxi in Queens");
  CHECK(none.recall_at_k == 0.0);
  CHECK(none.precision == 0.0);
  CHECK_FALSE(none.aligned);
  const auto empty = align(top, "");
  CHECK(empty.precision == 0.0);
}

TEST_CASE("alignment score is the harmonic mean") {
  // 2 * 0.67 * 0.57 / 1.24 and 2 * 0.62 * 0.50 / 1.12
  CHECK(alignment_score(0.67, 0.57) == doctest::Approx(0.7638 / 1.24).epsilon(1e-12));
  CHECK(alignment_score(0.62, 0.50) == doctest::Approx(0.62 / 1.12).epsilon(1e-12));
  CHECK(std::floor(alignment_score(0.67, 0.57) * 100) == 61);
  CHECK(std::floor(alignment_score(0.62, 0.50) * 100) == 55);
  CHECK(alignment_score(0.4, 0.4) == doctest::Approx(0.4));
  CHECK(alignment_score(0, 0) == 0.0);
}

TEST_CASE("alignment set logic matches hand enumeration on random sets") {
  const auto& lex = Lexicon::defaults();
  const auto& schema = canonical_schema();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, schema.size() - 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::set<std::string> top_set, mentioned;
    while (top_set.size() < 3) top_set.insert(schema[pick(rng)].name);
    const std::size_t n_mention = trial % 6;
    while (mentioned.size() < n_mention) mentioned.insert(schema[pick(rng)].name);
    std::string narrative = "Summary:";
    for (const auto& f : mentioned) narrative += " " + lex.phrases(f).back() + ";";
    const std::vector<std::string> top(top_set.begin(), top_set.end());
    const auto r = align(top, narrative, lex);
    int both = 0;
    for (const auto& f : top)
      for (const auto& m : mentioned) both += f == m;
    CHECK(r.mentions == mentioned);
    CHECK(r.recall_at_k == doctest::Approx(both / 3.0));
    CHECK(r.precision == doctest::Approx(mentioned.empty() ? 0.0 : both / static_cast<double>(mentioned.size())));
    CHECK(r.aligned == (both >= 2));
  }
}

TEST_CASE("template backend narratives align perfectly") {
  const TemplateBackend backend;
  const auto& schema = canonical_schema();
  std::vector<EventAlignment> events;
  for (std::size_t a = 0; a + 2 < schema.size(); ++a) {
    NarrativeRequest req;
    req.collision_id = static_cast<std::int64_t>(a);
    req.proba = {0.2, 0.7, 0.1};
    req.shap_top = {schema[a].name, schema[a + 1].name, schema[a + 2].name};
    const auto res = backend.generate(req);
    CHECK(res.predicted_class == SeverityLabel::Injury);
    CHECK(parse_prediction(res.explanation) == SeverityLabel::Injury);
    events.push_back({req.collision_id, req.shap_top, align(req.shap_top, res.explanation + " " + res.policy_suggestion)});
  }
  const auto report = AlignmentReport::from_events(events);
  CHECK(report.alignment_score == 1.0);
  CHECK(report.aligned_fraction == 1.0);
  CHECK(report.to_json()["events"].size() == events.size());
  NarrativeRequest fatal;
  fatal.proba = {0.1, 0.2, 0.7};
  CHECK(parse_prediction(backend.generate(fatal).explanation) == SeverityLabel::Fatal);
  fatal.proba = {0.8, 0.1, 0.1};
  CHECK(parse_prediction(backend.generate(fatal).explanation) == SeverityLabel::NoInjury);
  CHECK(Lexicon::defaults().mentions(backend.generate(fatal).explanation).empty());
}

TEST_CASE("http backend parses the mock reply and sends the fixed request shape") {
  MockServer mock([](const httplib::Request&, httplib::Response& res) {
    res.set_content(completion("Severity: Injury. A pedestrian was struck at night.\nPolicy: add lighting."),
                    "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = mock.url();
  cfg.model = "tiny-slm";
  const HttpBackend backend(cfg);
  const auto res = backend.generate(request_for(brooklyn_row(), {0.27, 0.65, 0.08}));
  CHECK(res.predicted_class == SeverityLabel::Injury);
  CHECK_FALSE(res.error);
  CHECK(res.policy_suggestion == "Policy: add lighting.");
  CHECK(res.backend_id == "http:tiny-slm");
  const auto body = nlohmann::json::parse(mock.last_body);
  CHECK(body["model"] == "tiny-slm");
  CHECK(body["temperature"] == 0);
  CHECK(body["max_tokens"] == 256);
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["role"] == "user");
  CHECK(body["messages"][1]["content"].get<std::string>().find("0.08 probability to a fatal outcome") !=
        std::string::npos);
}

TEST_CASE("http backend flags replies without a class keyword") {
  MockServer mock([](const httplib::Request&, httplib::Response& res) {
    res.set_content(completion("The scene was busy."), "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = mock.url();
  const auto res = HttpBackend(cfg).generate(request_for(brooklyn_row(), {0.5, 0.4, 0.1}));
  CHECK_FALSE(res.predicted_class);
  REQUIRE(res.error);
  CHECK(*res.error == "unparseable_label");
}

TEST_CASE("http backend retries server errors then succeeds") {
  std::atomic<int> calls{0};
  MockServer mock([&calls](const httplib::Request&, httplib::Response& res) {
    if (calls++ < 2) {
      res.status = 503;
      return;
    }
    res.set_content(completion("fatal"), "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = mock.url();
  cfg.max_retries = 2;
  cfg.backoff_seconds = 0.01;
  const auto res = HttpBackend(cfg).generate(request_for(brooklyn_row(), {0.5, 0.4, 0.1}));
  CHECK(res.predicted_class == SeverityLabel::Fatal);
  CHECK(mock.hits == 3);
}

TEST_CASE("http backend gives up with a backend error") {
  MockServer mock([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  HttpBackendConfig cfg;
  cfg.base_url = mock.url();
  cfg.max_retries = 1;
  cfg.backoff_seconds = 0.01;
  CHECK_THROWS_AS(HttpBackend(cfg).generate(request_for(brooklyn_row(), {0.5, 0.4, 0.1})), BackendError);
  CHECK(mock.hits == 2);

  HttpBackendConfig dead;
  dead.base_url = "http://127.0.0.1:1";
  dead.max_retries = 1;
  dead.backoff_seconds = 0.01;
  dead.timeout_seconds = 1;
  try {
    HttpBackend(dead).generate(request_for(brooklyn_row(), {0.5, 0.4, 0.1}));
    FAIL("expected a backend error");
  } catch (const BackendError& e) {
    CHECK(e.code() == "transport_error");
    CHECK(e.kind() == ErrorKind::Backend);
  }
}

TEST_CASE("bounded concurrent generation keeps input order") {
  std::atomic<int> in_flight{0}, peak{0};
  MockServer mock([&](const httplib::Request& req, httplib::Response& res) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    const auto body = nlohmann::json::parse(req.body);
    const auto prompt = body["messages"][1]["content"].get<std::string>();
    res.set_content(completion(prompt.find("Queens") != std::string::npos ? "fatal" : "no injury"), "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = mock.url();
  const HttpBackend backend(cfg);
  std::vector<NarrativeRequest> reqs;
  for (int i = 0; i < 12; ++i) {
    auto row = brooklyn_row();
    row.collision_id = i;
    if (i % 3 == 0) {
      row.values[feat::BORO_BROOKLYN] = 0;
      row.values[feat::BORO_QUEENS] = 1;
    }
    reqs.push_back(request_for(row, {0.5, 0.4, 0.1}));
  }
  const auto out = generate_narratives(backend, reqs, 3);
  REQUIRE(out.size() == 12);
  for (int i = 0; i < 12; ++i) {
    CHECK(out[i].collision_id == i);
    CHECK(out[i].predicted_class == (i % 3 == 0 ? SeverityLabel::Fatal : SeverityLabel::NoInjury));
  }
  CHECK(peak.load() <= 3);
}

TEST_CASE("backend config validation and environment override") {
  CHECK_THROWS_AS(HttpBackendConfig::from_json({{"url", "x"}}), ConfigError);
  CHECK_THROWS_AS(HttpBackendConfig::from_json({{"base_url", "https://x"}}), ConfigError);
  HttpBackendConfig cfg;
  ::setenv("RAX_NARRATIVE_URL", "http://10.0.0.1:9000/api", 1);
  cfg.apply_env();
  ::unsetenv("RAX_NARRATIVE_URL");
  CHECK(cfg.base_url == "http://10.0.0.1:9000/api");
  CHECK(HttpBackendConfig::from_json(cfg.to_json()).base_url == cfg.base_url);
}
