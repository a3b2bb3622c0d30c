#include "rax/schema.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "rax/error.hpp"

namespace rax {

std::string_view to_string(SeverityLabel label) {
  switch (label) {
    case SeverityLabel::NoInjury: return "NoInjury";
    case SeverityLabel::Injury: return "Injury";
    case SeverityLabel::Fatal: return "Fatal";
  }
  return "?";
}

std::string_view to_string(Borough borough) {
  switch (borough) {
    case Borough::Bronx: return "Bronx";
    case Borough::Brooklyn: return "Brooklyn";
    case Borough::Manhattan: return "Manhattan";
    case Borough::Queens: return "Queens";
    case Borough::StatenIsland: return "Staten Island";
    case Borough::Unknown: return "Unknown";
  }
  return "?";
}

std::string_view to_string(FeatureGroup group) {
  switch (group) {
    case FeatureGroup::HumanComposition: return "HumanComposition";
    case FeatureGroup::SafetyBehavior: return "SafetyBehavior";
    case FeatureGroup::VehicleComposition: return "VehicleComposition";
    case FeatureGroup::SpatioTemporal: return "SpatioTemporal";
  }
  return "?";
}

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Numeric: return "Numeric";
    case FeatureKind::Binary: return "Binary";
    case FeatureKind::CategoricalCode: return "CategoricalCode";
  }
  return "?";
}

namespace {

FeatureGroup parse_group(const std::string& s) {
  for (auto g : {FeatureGroup::HumanComposition, FeatureGroup::SafetyBehavior,
                 FeatureGroup::VehicleComposition, FeatureGroup::SpatioTemporal}) {
    if (s == to_string(g)) return g;
  }
  throw DataError("bad_schema", "unknown feature group '" + s + "'");
}

FeatureKind parse_kind(const std::string& s) {
  for (auto k : {FeatureKind::Numeric, FeatureKind::Binary, FeatureKind::CategoricalCode}) {
    if (s == to_string(k)) return k;
  }
  throw DataError("bad_schema", "unknown feature kind '" + s + "'");
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t schema_hash(const std::vector<FeatureDescriptor>& features) {
  std::uint64_t h = kFnvOffset;
  for (const auto& f : features) {
    fnv_mix(h, f.name);
    fnv_mix(h, "\x1f");
    fnv_mix(h, to_string(f.group));
    fnv_mix(h, "\x1f");
    fnv_mix(h, to_string(f.kind));
    fnv_mix(h, "\x1e");
  }
  return h;
}

std::string hash_hex(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::uint64_t parse_hash_hex(std::string_view hex) {
  if (hex.size() != 16) throw DataError("bad_hash", "schema hash must be 16 hex chars");
  std::uint64_t v = 0;
  for (char c : hex) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else throw DataError("bad_hash", "schema hash must be 16 hex chars");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

FeatureSchema::FeatureSchema(std::vector<FeatureDescriptor> features)
    : features_(std::move(features)) {
  std::set<std::string> seen;
  for (const auto& f : features_) {
    if (!seen.insert(f.name).second) {
      throw DataError("bad_schema", "duplicate feature name '" + f.name + "'");
    }
  }
  hash_ = schema_hash(features_);
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::require_index(std::string_view name) const {
  auto idx = index_of(name);
  if (!idx) throw DataError("unknown_feature", "feature '" + std::string(name) + "' not in schema");
  return *idx;
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : features_) {
    features.push_back({{"name", f.name},
                        {"group", std::string(to_string(f.group))},
                        {"kind", std::string(to_string(f.kind))}});
  }
  return {{"version", 1}, {"features", features}, {"schema_hash", hash_hex(hash_)}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("features")) {
    throw DataError("bad_schema", "schema JSON must have version 1 and a feature list");
  }
  std::vector<FeatureDescriptor> features;
  for (const auto& f : j.at("features")) {
    features.push_back({f.at("name").get<std::string>(),
                        parse_group(f.at("group").get<std::string>()),
                        parse_kind(f.at("kind").get<std::string>())});
  }
  FeatureSchema schema(std::move(features));
  if (j.contains("schema_hash") &&
      parse_hash_hex(j.at("schema_hash").get<std::string>()) != schema.hash()) {
    throw DataError("schema_mismatch", "schema_hash does not match the feature list");
  }
  return schema;
}

const FeatureSchema& canonical_schema() {
  static const FeatureSchema schema = [] {
    using G = FeatureGroup;
    using K = FeatureKind;
    std::vector<FeatureDescriptor> f = {
        {"NUM_PERSON_RECORDS", G::HumanComposition, K::Numeric},
        {"ROLE_DRIVER", G::HumanComposition, K::Numeric},
        {"ROLE_PASSENGER", G::HumanComposition, K::Numeric},
        {"ROLE_PEDESTRIAN", G::HumanComposition, K::Numeric},
        {"ROLE_CYCLIST", G::HumanComposition, K::Numeric},
        {"AVG_AGE", G::HumanComposition, K::Numeric},
        {"PCT_YOUTH", G::HumanComposition, K::Numeric},
        {"PCT_SENIOR", G::HumanComposition, K::Numeric},
        {"PCT_WITH_SAFETY_EQUIPMENT", G::SafetyBehavior, K::Numeric},
        {"PCT_NO_SAFETY_EQUIPMENT", G::SafetyBehavior, K::Numeric},
        {"PCT_EJECTED", G::SafetyBehavior, K::Numeric},
        {"PCT_AIRBAG_DEPLOYED", G::SafetyBehavior, K::Numeric},
        {"NUM_VEHICLE_RECORDS", G::VehicleComposition, K::Numeric},
        {"PASSENGER_VEHICLE", G::VehicleComposition, K::Numeric},
        {"SUV", G::VehicleComposition, K::Numeric},
        {"TAXI", G::VehicleComposition, K::Numeric},
        {"BUS", G::VehicleComposition, K::Numeric},
        {"TRUCK", G::VehicleComposition, K::Numeric},
        {"MOTORCYCLE", G::VehicleComposition, K::Numeric},
        {"BICYCLE", G::VehicleComposition, K::Numeric},
        {"OTHER_VEHICLE", G::VehicleComposition, K::Numeric},
        {"PCT_OUT_OF_STATE", G::VehicleComposition, K::Numeric},
        {"VEH_AGE_NEW", G::VehicleComposition, K::Numeric},
        {"VEH_AGE_MID", G::VehicleComposition, K::Numeric},
        {"VEH_AGE_OLD", G::VehicleComposition, K::Numeric},
        {"CRASH_HOUR", G::SpatioTemporal, K::CategoricalCode},
        {"DAY_OF_WEEK", G::SpatioTemporal, K::CategoricalCode},
        {"IS_WEEKEND", G::SpatioTemporal, K::Binary},
        {"LATITUDE", G::SpatioTemporal, K::Numeric},
        {"LONGITUDE", G::SpatioTemporal, K::Numeric},
        {"ZIP_CODE", G::SpatioTemporal, K::CategoricalCode},
        {"BORO_BRONX", G::SpatioTemporal, K::Binary},
        {"BORO_BROOKLYN", G::SpatioTemporal, K::Binary},
        {"BORO_MANHATTAN", G::SpatioTemporal, K::Binary},
        {"BORO_QUEENS", G::SpatioTemporal, K::Binary},
        {"BORO_STATEN", G::SpatioTemporal, K::Binary},
    };
    return FeatureSchema(std::move(f));
  }();
  return schema;
}

SeverityLabel derive_label(int injured_count, int killed_count) {
  if (injured_count < 0 || killed_count < 0) {
    throw DataError("negative_count", "injured/killed counts must be non-negative");
  }
  if (killed_count >= 1) return SeverityLabel::Fatal;
  if (injured_count >= 1) return SeverityLabel::Injury;
  return SeverityLabel::NoInjury;
}

std::string check_row_invariants(const EventFeatureRow& row) {
  using namespace feat;
  if (row.values.size() != kNumFeatures || row.missing.size() != kNumFeatures) {
    return "row width does not match schema";
  }
  const auto& v = row.values;
  const std::size_t shares[] = {ROLE_DRIVER, ROLE_PASSENGER, ROLE_PEDESTRIAN, ROLE_CYCLIST,
                                PCT_YOUTH, PCT_SENIOR, PCT_WITH_SAFETY_EQUIPMENT,
                                PCT_NO_SAFETY_EQUIPMENT, PCT_EJECTED, PCT_AIRBAG_DEPLOYED,
                                PASSENGER_VEHICLE, SUV, TAXI, BUS, TRUCK, MOTORCYCLE, BICYCLE,
                                OTHER_VEHICLE, PCT_OUT_OF_STATE, VEH_AGE_NEW, VEH_AGE_MID,
                                VEH_AGE_OLD};
  for (std::size_t j : shares) {
    if (!(v[j] >= 0.0 && v[j] <= 1.0)) {
      return canonical_schema()[j].name + " outside [0,1]";
    }
  }
  if (v[ROLE_DRIVER] + v[ROLE_PASSENGER] + v[ROLE_PEDESTRIAN] + v[ROLE_CYCLIST] > 1.0 + 1e-9) {
    return "role shares sum above 1";
  }
  double veh = 0.0;
  for (std::size_t j = PASSENGER_VEHICLE; j <= OTHER_VEHICLE; ++j) veh += v[j];
  if (veh > 1.0 + 1e-9) return "vehicle category shares sum above 1";
  if (!(v[CRASH_HOUR] >= 0 && v[CRASH_HOUR] <= 23)) return "CRASH_HOUR outside [0,23]";
  if (!(v[DAY_OF_WEEK] >= 0 && v[DAY_OF_WEEK] <= 6)) return "DAY_OF_WEEK outside [0,6]";
  const bool weekend = v[DAY_OF_WEEK] >= 5;
  if ((v[IS_WEEKEND] == 1.0) != weekend) return "IS_WEEKEND inconsistent with DAY_OF_WEEK";
  return {};
}

}  // namespace rax
