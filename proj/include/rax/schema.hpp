#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace rax {

enum class Borough { Bronx, Brooklyn, Manhattan, Queens, StatenIsland, Unknown };
enum class PersonRole { Driver, Passenger, Pedestrian, Cyclist, Other };
enum class Sex { Male, Female, Other };
enum class InjuryStatus { Uninjured, Injured, Killed, Unknown };
enum class SafetyEquipment { Present, None, Unknown };
enum class VehicleCategory { PassengerVehicle, SUV, Taxi, Bus, Truck, Motorcycle, Bicycle, Other };

// Ordinal: NoInjury < Injury < Fatal.
enum class SeverityLabel : int { NoInjury = 0, Injury = 1, Fatal = 2 };

inline constexpr int kNumClasses = 3;

std::string_view to_string(SeverityLabel label);
std::string_view to_string(Borough borough);

struct RawCrashRecord {
  std::int64_t collision_id = 0;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC, minute precision
  std::optional<Borough> borough;
  std::optional<std::string> zip_code;  // 5 digits
  std::optional<double> latitude;
  std::optional<double> longitude;
  std::vector<std::string> contributing_factors;
  int injured_count = 0;
  int killed_count = 0;
};

struct RawPersonRecord {
  std::int64_t collision_id = 0;
  PersonRole role = PersonRole::Other;
  std::optional<int> age;
  std::optional<Sex> sex;
  InjuryStatus injury_status = InjuryStatus::Unknown;
  SafetyEquipment safety_equipment = SafetyEquipment::Unknown;
  std::optional<bool> ejected;
  std::optional<bool> airbag_deployed;
};

struct RawVehicleRecord {
  std::int64_t collision_id = 0;
  VehicleCategory vehicle_category = VehicleCategory::Other;
  std::optional<std::string> registration_state;
  std::optional<int> model_year;
};

enum class FeatureGroup { HumanComposition, SafetyBehavior, VehicleComposition, SpatioTemporal };
enum class FeatureKind { Numeric, Binary, CategoricalCode };

std::string_view to_string(FeatureGroup group);
std::string_view to_string(FeatureKind kind);

struct FeatureDescriptor {
  std::string name;
  FeatureGroup group;
  FeatureKind kind;

  bool operator==(const FeatureDescriptor&) const = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureDescriptor> features);

  const std::vector<FeatureDescriptor>& features() const { return features_; }
  std::size_t size() const { return features_.size(); }
  const FeatureDescriptor& operator[](std::size_t i) const { return features_[i]; }
  std::uint64_t hash() const { return hash_; }

  // Index of the named feature, or nullopt.
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t require_index(std::string_view name) const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

 private:
  std::vector<FeatureDescriptor> features_;
  std::uint64_t hash_ = 0;
};

// FNV-1a over the ordered descriptor list.
std::uint64_t schema_hash(const std::vector<FeatureDescriptor>& features);
std::string hash_hex(std::uint64_t hash);
std::uint64_t parse_hash_hex(std::string_view hex);

// Positions of the canonical features. The values below are the canonical
// column order; canonical_schema() is built from the same table.
namespace feat {
enum : std::size_t {
  NUM_PERSON_RECORDS,
  ROLE_DRIVER,
  ROLE_PASSENGER,
  ROLE_PEDESTRIAN,
  ROLE_CYCLIST,
  AVG_AGE,
  PCT_YOUTH,
  PCT_SENIOR,
  PCT_WITH_SAFETY_EQUIPMENT,
  PCT_NO_SAFETY_EQUIPMENT,
  PCT_EJECTED,
  PCT_AIRBAG_DEPLOYED,
  NUM_VEHICLE_RECORDS,
  PASSENGER_VEHICLE,
  SUV,
  TAXI,
  BUS,
  TRUCK,
  MOTORCYCLE,
  BICYCLE,
  OTHER_VEHICLE,
  PCT_OUT_OF_STATE,
  VEH_AGE_NEW,
  VEH_AGE_MID,
  VEH_AGE_OLD,
  CRASH_HOUR,
  DAY_OF_WEEK,
  IS_WEEKEND,
  LATITUDE,
  LONGITUDE,
  ZIP_CODE,
  BORO_BRONX,
  BORO_BROOKLYN,
  BORO_MANHATTAN,
  BORO_QUEENS,
  BORO_STATEN,
  kCount
};
}  // namespace feat

inline constexpr std::size_t kNumFeatures = feat::kCount;

const FeatureSchema& canonical_schema();

SeverityLabel derive_label(int injured_count, int killed_count);

// NYC bounding box used to validate coordinates.
inline constexpr double kMinLatitude = 40.4;
inline constexpr double kMaxLatitude = 41.0;
inline constexpr double kMinLongitude = -74.3;
inline constexpr double kMaxLongitude = -73.6;

inline constexpr double kAgeSentinel = -1.0;
inline constexpr double kZipSentinel = -1.0;

// One joined, labeled event in the unified schema.
struct EventFeatureRow {
  std::int64_t collision_id = 0;
  std::int64_t timestamp = 0;
  SeverityLabel label = SeverityLabel::NoInjury;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;  // 1 = value not observed
  std::vector<std::string> factors;   // auxiliary, never a model feature

  EventFeatureRow() : values(kNumFeatures, 0.0), missing(kNumFeatures, 0) {}

  bool is_missing(std::size_t j) const { return missing[j] != 0; }
};

// Checks the per-row invariants (share ranges, role/vehicle share sums,
// calendar fields). Returns an empty string when the row is valid,
// otherwise a description of the first violation.
std::string check_row_invariants(const EventFeatureRow& row);

}  // namespace rax
