#include <doctest.h>

#include <algorithm>
#include <random>

#include "rax/error.hpp"
#include "rax/schema.hpp"

using namespace rax;

TEST_CASE("canonical schema resolves every top-ranked feature name") {
  const auto& schema = canonical_schema();
  for (const char* name : {"NUM_PERSON_RECORDS", "PCT_EJECTED", "CRASH_HOUR", "LONGITUDE",
                           "PCT_WITH_SAFETY_EQUIPMENT", "AVG_AGE", "LATITUDE",
                           "PASSENGER_VEHICLE", "ZIP_CODE", "ROLE_PEDESTRIAN"}) {
    CAPTURE(name);
    CHECK(schema.index_of(name).has_value());
  }
  CHECK(schema.size() == kNumFeatures);
  CHECK(schema[feat::PCT_EJECTED].name == "PCT_EJECTED");
  CHECK(schema[feat::BORO_STATEN].name == "BORO_STATEN");
  CHECK(schema[feat::CRASH_HOUR].group == FeatureGroup::SpatioTemporal);
  CHECK(schema[feat::IS_WEEKEND].kind == FeatureKind::Binary);
}

TEST_CASE("schema hash is deterministic and order sensitive") {
  const auto& schema = canonical_schema();
  CHECK(schema.hash() == canonical_schema().hash());
  CHECK(schema.hash() == schema_hash(schema.features()));

  auto permuted = schema.features();
  std::swap(permuted[0], permuted[1]);
  CHECK(schema_hash(permuted) != schema.hash());

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto shuffled = schema.features();
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (shuffled != schema.features()) CHECK(schema_hash(shuffled) != schema.hash());
  }
}

TEST_CASE("schema JSON round trip keeps the hash") {
  const auto& schema = canonical_schema();
  const auto j = schema.to_json();
  CHECK(j.at("version") == 1);
  CHECK(j.at("schema_hash").get<std::string>().size() == 16);
  const auto back = FeatureSchema::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.hash() == schema.hash());
  CHECK(back.features() == schema.features());

  auto tampered = j;
  tampered["features"][0]["name"] = "SOMETHING_ELSE";
  CHECK_THROWS_AS(FeatureSchema::from_json(tampered), DataError);
}

TEST_CASE("duplicate feature names are rejected") {
  std::vector<FeatureDescriptor> f = {{"A", FeatureGroup::HumanComposition, FeatureKind::Numeric},
                                      {"A", FeatureGroup::SafetyBehavior, FeatureKind::Numeric}};
  CHECK_THROWS_AS(FeatureSchema{f}, DataError);
}

TEST_CASE("derive_label examples") {
  CHECK(derive_label(0, 0) == SeverityLabel::NoInjury);
  CHECK(derive_label(3, 0) == SeverityLabel::Injury);
  CHECK(derive_label(2, 1) == SeverityLabel::Fatal);
  CHECK(derive_label(0, 1) == SeverityLabel::Fatal);
  CHECK_THROWS_AS(derive_label(-1, 0), DataError);
  CHECK_THROWS_AS(derive_label(0, -2), DataError);
}

TEST_CASE("derive_label is monotone in killed_count") {
  for (int injured = 0; injured <= 10; ++injured) {
    for (int killed = 0; killed < 5; ++killed) {
      CHECK(static_cast<int>(derive_label(injured, killed + 1)) >=
            static_cast<int>(derive_label(injured, killed)));
      CHECK(static_cast<int>(derive_label(injured + 1, killed)) >=
            static_cast<int>(derive_label(injured, killed)));
    }
  }
}

TEST_CASE("row invariant checker") {
  EventFeatureRow row;
  row.values[feat::DAY_OF_WEEK] = 5;
  row.values[feat::IS_WEEKEND] = 1;
  CHECK(check_row_invariants(row).empty());
  row.values[feat::IS_WEEKEND] = 0;
  CHECK_FALSE(check_row_invariants(row).empty());
  row.values[feat::IS_WEEKEND] = 1;
  row.values[feat::ROLE_DRIVER] = 0.7;
  row.values[feat::ROLE_PEDESTRIAN] = 0.4;
  CHECK_FALSE(check_row_invariants(row).empty());
}
