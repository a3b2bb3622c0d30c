#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/schema.hpp"

namespace rax {

enum class TableKind { Crash, Person, Vehicle };

std::string_view to_string(TableKind kind);

// Semantic field name -> source CSV header(s). Most fields take one header;
// "contributing_factors" and "role" may list several, which are read in order.
struct ColumnMapping {
  TableKind kind = TableKind::Crash;
  std::map<std::string, std::vector<std::string>> columns;

  // Header names used by the NYC Open Data exports.
  static ColumnMapping nyc_default(TableKind kind);
  // Entries override the NYC defaults; unknown semantic fields are rejected.
  static ColumnMapping from_json(TableKind kind, const nlohmann::json& j);
  nlohmann::json to_json() const;

  // collision_id must be mapped for every table kind.
  void validate() const;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_accepted = 0;
  std::size_t rows_dropped = 0;
  std::map<std::string, std::size_t> drop_reasons;
  // Accepted person/vehicle rows whose collision_id matched no crash.
  std::size_t rows_unmatched = 0;

  void accept() { ++rows_read, ++rows_accepted; }
  void drop(const std::string& reason) {
    ++rows_read;
    ++rows_dropped;
    ++drop_reasons[reason];
  }
  nlohmann::json to_json() const;
};

template <typename Record>
struct ParsedTable {
  std::vector<Record> records;
  IngestReport report;
};

ParsedTable<RawCrashRecord> parse_crash_table(const std::filesystem::path& path,
                                              const ColumnMapping& mapping);
ParsedTable<RawPersonRecord> parse_person_table(const std::filesystem::path& path,
                                                const ColumnMapping& mapping);
ParsedTable<RawVehicleRecord> parse_vehicle_table(const std::filesystem::path& path,
                                                  const ColumnMapping& mapping);

ParsedTable<RawCrashRecord> parse_crash_table(std::istream& in, const ColumnMapping& mapping);
ParsedTable<RawPersonRecord> parse_person_table(std::istream& in, const ColumnMapping& mapping);
ParsedTable<RawVehicleRecord> parse_vehicle_table(std::istream& in, const ColumnMapping& mapping);

PersonRole parse_role(std::string_view text);
VehicleCategory parse_vehicle_category(std::string_view text);
std::optional<Borough> parse_borough(std::string_view text);

// Human composition and safety behavior features of one collision.
// Flag shares use only records where the flag was observed; a share with a
// zero denominator is 0 and flagged missing.
struct PersonAggregate {
  double num_person_records = 0;
  double role_driver = 0, role_passenger = 0, role_pedestrian = 0, role_cyclist = 0;
  double avg_age = kAgeSentinel;
  double pct_youth = 0, pct_senior = 0;
  double pct_with_safety_equipment = 0, pct_no_safety_equipment = 0;
  double pct_ejected = 0, pct_airbag_deployed = 0;
  bool roles_missing = true, age_missing = true, safety_missing = true, ejected_missing = true,
       airbag_missing = true;

  void apply(EventFeatureRow& row) const;
};

struct VehicleAggregate {
  double num_vehicle_records = 0;
  // PassengerVehicle, SUV, Taxi, Bus, Truck, Motorcycle, Bicycle, Other
  std::array<double, 8> category_share{};
  double pct_out_of_state = 0;
  double veh_age_new = 0, veh_age_mid = 0, veh_age_old = 0;
  bool categories_missing = true, age_missing = true;

  void apply(EventFeatureRow& row) const;
};

PersonAggregate aggregate_persons(std::span<const RawPersonRecord> persons);
VehicleAggregate aggregate_vehicles(std::span<const RawVehicleRecord> vehicles, int crash_year);

EventFeatureRow build_event_row(const RawCrashRecord& crash,
                                std::span<const RawPersonRecord> persons,
                                std::span<const RawVehicleRecord> vehicles);

struct JoinResult {
  std::vector<EventFeatureRow> rows;  // sorted by (timestamp, collision_id)
  std::size_t duplicate_crashes = 0;
  std::size_t unmatched_persons = 0;
  std::size_t unmatched_vehicles = 0;
};

// Groups persons and vehicles by collision_id and emits one row per distinct
// crash. Later duplicates of a crash id are skipped and counted.
JoinResult join_tables(std::span<const RawCrashRecord> crashes,
                       std::span<const RawPersonRecord> persons,
                       std::span<const RawVehicleRecord> vehicles);

}  // namespace rax
