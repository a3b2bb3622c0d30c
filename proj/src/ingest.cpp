#include "rax/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <unordered_map>

#include "rax/csv.hpp"
#include "rax/error.hpp"
#include "rax/time.hpp"

namespace rax {

std::string_view to_string(TableKind kind) {
  switch (kind) {
    case TableKind::Crash: return "crash";
    case TableKind::Person: return "person";
    case TableKind::Vehicle: return "vehicle";
  }
  return "?";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool contains(const std::string& haystack, std::string_view needle) {
  return haystack.find(needle) != std::string::npos;
}

std::optional<std::int64_t> parse_i64(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && p == s.data() + s.size()) return v;
  // Accept integral values written as floats, e.g. "3.0".
  double d = 0;
  auto [p2, ec2] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec2 == std::errc() && p2 == s.data() + s.size() && std::isfinite(d) && d == std::floor(d) &&
      std::abs(d) < 9e15) {
    return static_cast<std::int64_t>(d);
  }
  return std::nullopt;
}

std::optional<double> parse_f64(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && p == s.data() + s.size() && std::isfinite(v)) return v;
  return std::nullopt;
}

// Semantic fields accepted per table kind.
const std::set<std::string>& known_fields(TableKind kind) {
  static const std::set<std::string> crash = {
      "collision_id", "timestamp", "crash_date", "crash_time", "borough", "zip_code",
      "latitude", "longitude", "injured_count", "killed_count", "contributing_factors"};
  static const std::set<std::string> person = {
      "collision_id", "role", "age", "sex", "injury_status", "safety_equipment", "ejected",
      "airbag_deployed"};
  static const std::set<std::string> vehicle = {"collision_id", "vehicle_category",
                                                "registration_state", "model_year"};
  switch (kind) {
    case TableKind::Crash: return crash;
    case TableKind::Person: return person;
    case TableKind::Vehicle: return vehicle;
  }
  return crash;
}

// Resolves the mapping against a header row.
class HeaderIndex {
 public:
  HeaderIndex(const std::vector<std::string>& header, const ColumnMapping& mapping) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string h(trim(header[i]));
      if (i == 0 && h.size() >= 3 && h.compare(0, 3, "\xEF\xBB\xBF") == 0) h = h.substr(3);
      pos.emplace(h, i);
    }
    for (const auto& [field, headers] : mapping.columns) {
      for (const auto& h : headers) {
        if (auto it = pos.find(h); it != pos.end()) cols_[field].push_back(it->second);
      }
    }
  }

  bool has(const std::string& field) const { return cols_.count(field) > 0; }

  void require(const std::string& field, const ColumnMapping& mapping) const {
    if (!has(field)) {
      std::string expected;
      if (auto it = mapping.columns.find(field); it != mapping.columns.end()) {
        for (const auto& h : it->second) expected += (expected.empty() ? "" : "|") + h;
      }
      throw DataError("missing_header", std::string(to_string(mapping.kind)) +
                                            " table lacks mandatory column for '" + field +
                                            "' (expected header " + expected + ")");
    }
  }

  std::string_view get(const std::vector<std::string>& rec, const std::string& field) const {
    auto it = cols_.find(field);
    if (it == cols_.end()) return {};
    const auto c = it->second.front();
    return c < rec.size() ? std::string_view(rec[c]) : std::string_view();
  }

  std::vector<std::string_view> get_all(const std::vector<std::string>& rec,
                                        const std::string& field) const {
    std::vector<std::string_view> out;
    auto it = cols_.find(field);
    if (it == cols_.end()) return out;
    for (auto c : it->second) {
      if (c < rec.size()) out.emplace_back(rec[c]);
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<std::size_t>> cols_;
};

std::optional<std::string> parse_zip(std::string_view s) {
  s = trim(s);
  if (auto dot = s.find('.'); dot != std::string_view::npos) s = s.substr(0, dot);
  if (s.size() != 5) return std::nullopt;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
  }
  return std::string(s);
}

std::optional<bool> parse_flag(std::string_view text) {
  const auto s = lower(trim(text));
  if (s.empty() || s == "unknown" || s == "unspecified" || s == "-" || s == "na" || s == "n/a") {
    return std::nullopt;
  }
  if (contains(s, "not ") || s == "no" || s == "n" || s == "false" || s == "0" ||
      s == "not deployed") {
    return false;
  }
  if (s == "yes" || s == "y" || s == "true" || s == "1" || contains(s, "ejected") ||
      contains(s, "deployed") || contains(s, "trapped")) {
    return true;
  }
  return std::nullopt;
}

SafetyEquipment parse_safety(std::string_view text) {
  const auto s = lower(trim(text));
  if (s.empty() || s == "unknown" || s == "unspecified" || s == "-") return SafetyEquipment::Unknown;
  if (s == "none" || s == "no" || contains(s, "none")) return SafetyEquipment::None;
  return SafetyEquipment::Present;
}

InjuryStatus parse_injury(std::string_view text) {
  const auto s = lower(trim(text));
  if (contains(s, "kill") || contains(s, "fatal")) return InjuryStatus::Killed;
  if (contains(s, "injur")) return InjuryStatus::Injured;
  if (s == "unspecified" || s == "uninjured" || s == "none" || s == "no injury") {
    return InjuryStatus::Uninjured;
  }
  return InjuryStatus::Unknown;
}

std::optional<Sex> parse_sex(std::string_view text) {
  const auto s = lower(trim(text));
  if (s == "m" || s == "male") return Sex::Male;
  if (s == "f" || s == "female") return Sex::Female;
  if (s == "u" || s.empty() || s == "unknown") return std::nullopt;
  return Sex::Other;
}

template <typename Record, typename RowFn>
ParsedTable<Record> parse_csv(std::istream& in, const ColumnMapping& mapping, RowFn&& row_fn,
                              const std::vector<std::string>& mandatory) {
  mapping.validate();
  CsvReader reader(in);
  std::vector<std::string> rec;
  if (!reader.next(rec)) throw DataError("missing_header", "CSV has no header row");
  HeaderIndex index(rec, mapping);
  for (const auto& field : mandatory) index.require(field, mapping);

  ParsedTable<Record> out;
  while (reader.next(rec)) {
    if (rec.size() == 1 && trim(rec[0]).empty()) continue;  // blank line
    Record r;
    if (auto reason = row_fn(index, rec, r); !reason.empty()) {
      out.report.drop(reason);
    } else {
      out.report.accept();
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

// Empty string on success, otherwise the drop reason.
std::string read_collision_id(const HeaderIndex& index, const std::vector<std::string>& rec,
                              std::int64_t& id) {
  const auto raw = trim(index.get(rec, "collision_id"));
  if (raw.empty()) return "missing_collision_id";
  auto v = parse_i64(raw);
  if (!v) return "malformed_numeric";
  id = *v;
  return {};
}

ParsedTable<RawCrashRecord> parse_crashes_impl(std::istream& in, const ColumnMapping& mapping) {
  auto row_fn = [&mapping](const HeaderIndex& index, const std::vector<std::string>& rec,
                           RawCrashRecord& r) -> std::string {
    if (auto reason = read_collision_id(index, rec, r.collision_id); !reason.empty()) return reason;

    std::optional<std::int64_t> ts;
    if (index.has("timestamp")) {
      ts = parse_timestamp(index.get(rec, "timestamp"));
    } else {
      ts = parse_timestamp(index.get(rec, "crash_date"), index.get(rec, "crash_time"));
    }
    if (!ts) return "unparseable_timestamp";
    r.timestamp = *ts;

    auto injured = parse_i64(index.get(rec, "injured_count"));
    auto killed = parse_i64(index.get(rec, "killed_count"));
    if (!injured || !killed || *injured < 0 || *killed < 0 || *injured > 100000 ||
        *killed > 100000) {
      return "malformed_numeric";
    }
    r.injured_count = static_cast<int>(*injured);
    r.killed_count = static_cast<int>(*killed);

    const auto lat_raw = trim(index.get(rec, "latitude"));
    const auto lon_raw = trim(index.get(rec, "longitude"));
    std::optional<double> lat, lon;
    if (!lat_raw.empty()) {
      lat = parse_f64(lat_raw);
      if (!lat) return "malformed_numeric";
      if (std::abs(*lat) > 90.0) return "out_of_range_coordinate";
    }
    if (!lon_raw.empty()) {
      lon = parse_f64(lon_raw);
      if (!lon) return "malformed_numeric";
      if (std::abs(*lon) > 180.0) return "out_of_range_coordinate";
    }
    // Physically valid coordinates outside the city box (including the
    // common 0,0 placeholder) are kept as missing.
    if (lat && lon && *lat >= kMinLatitude && *lat <= kMaxLatitude && *lon >= kMinLongitude &&
        *lon <= kMaxLongitude) {
      r.latitude = lat;
      r.longitude = lon;
    }

    r.borough = parse_borough(index.get(rec, "borough"));
    r.zip_code = parse_zip(index.get(rec, "zip_code"));
    for (auto f : index.get_all(rec, "contributing_factors")) {
      auto t = trim(f);
      if (!t.empty() && lower(t) != "unspecified") r.contributing_factors.emplace_back(t);
    }
    (void)mapping;
    return {};
  };
  const bool has_ts = mapping.columns.count("timestamp") > 0;
  std::vector<std::string> mandatory = {"collision_id", "injured_count", "killed_count"};
  mandatory.push_back(has_ts ? "timestamp" : "crash_date");
  return parse_csv<RawCrashRecord>(in, mapping, row_fn, mandatory);
}

ParsedTable<RawPersonRecord> parse_persons_impl(std::istream& in, const ColumnMapping& mapping) {
  auto row_fn = [](const HeaderIndex& index, const std::vector<std::string>& rec,
                   RawPersonRecord& r) -> std::string {
    if (auto reason = read_collision_id(index, rec, r.collision_id); !reason.empty()) return reason;
    std::string role_text;
    for (auto part : index.get_all(rec, "role")) {
      role_text += std::string(part) + " ";
    }
    r.role = parse_role(role_text);
    if (auto age = parse_i64(index.get(rec, "age")); age && *age >= 0 && *age <= 120) {
      r.age = static_cast<int>(*age);
    }
    r.sex = parse_sex(index.get(rec, "sex"));
    r.injury_status = parse_injury(index.get(rec, "injury_status"));
    const auto safety_text = index.get(rec, "safety_equipment");
    r.safety_equipment = parse_safety(safety_text);
    r.ejected = parse_flag(index.get(rec, "ejected"));
    if (index.has("airbag_deployed")) {
      r.airbag_deployed = parse_flag(index.get(rec, "airbag_deployed"));
    } else if (r.safety_equipment != SafetyEquipment::Unknown) {
      const auto s = lower(safety_text);
      r.airbag_deployed = contains(s, "air bag deployed") || contains(s, "airbag deployed");
    }
    return {};
  };
  return parse_csv<RawPersonRecord>(in, mapping, row_fn, {"collision_id"});
}

ParsedTable<RawVehicleRecord> parse_vehicles_impl(std::istream& in, const ColumnMapping& mapping) {
  auto row_fn = [](const HeaderIndex& index, const std::vector<std::string>& rec,
                   RawVehicleRecord& r) -> std::string {
    if (auto reason = read_collision_id(index, rec, r.collision_id); !reason.empty()) return reason;
    r.vehicle_category = parse_vehicle_category(index.get(rec, "vehicle_category"));
    auto state = trim(index.get(rec, "registration_state"));
    if (state.size() == 2 && std::isalpha(static_cast<unsigned char>(state[0])) &&
        std::isalpha(static_cast<unsigned char>(state[1]))) {
      std::string s(state);
      for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      r.registration_state = s;
    }
    if (auto year = parse_i64(index.get(rec, "model_year")); year && *year >= 1900 && *year <= 2200) {
      r.model_year = static_cast<int>(*year);
    }
    return {};
  };
  return parse_csv<RawVehicleRecord>(in, mapping, row_fn, {"collision_id"});
}

template <typename Fn>
auto parse_path(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("unreadable_file", "cannot open " + path.string());
  return fn(in);
}

}  // namespace

ColumnMapping ColumnMapping::nyc_default(TableKind kind) {
  ColumnMapping m;
  m.kind = kind;
  switch (kind) {
    case TableKind::Crash:
      m.columns = {{"collision_id", {"COLLISION_ID"}},
                   {"crash_date", {"CRASH DATE"}},
                   {"crash_time", {"CRASH TIME"}},
                   {"borough", {"BOROUGH"}},
                   {"zip_code", {"ZIP CODE"}},
                   {"latitude", {"LATITUDE"}},
                   {"longitude", {"LONGITUDE"}},
                   {"injured_count", {"NUMBER OF PERSONS INJURED"}},
                   {"killed_count", {"NUMBER OF PERSONS KILLED"}},
                   {"contributing_factors",
                    {"CONTRIBUTING FACTOR VEHICLE 1", "CONTRIBUTING FACTOR VEHICLE 2",
                     "CONTRIBUTING FACTOR VEHICLE 3", "CONTRIBUTING FACTOR VEHICLE 4",
                     "CONTRIBUTING FACTOR VEHICLE 5"}}};
      break;
    case TableKind::Person:
      m.columns = {{"collision_id", {"COLLISION_ID"}},
                   {"role", {"PERSON_TYPE", "PED_ROLE"}},
                   {"age", {"PERSON_AGE"}},
                   {"sex", {"PERSON_SEX"}},
                   {"injury_status", {"PERSON_INJURY"}},
                   {"safety_equipment", {"SAFETY_EQUIPMENT"}},
                   {"ejected", {"EJECTION"}}};
      break;
    case TableKind::Vehicle:
      m.columns = {{"collision_id", {"COLLISION_ID"}},
                   {"vehicle_category", {"VEHICLE_TYPE"}},
                   {"registration_state", {"STATE_REGISTRATION"}},
                   {"model_year", {"VEHICLE_YEAR"}}};
      break;
  }
  return m;
}

ColumnMapping ColumnMapping::from_json(TableKind kind, const nlohmann::json& j) {
  ColumnMapping m = nyc_default(kind);
  if (j.is_null()) return m;
  if (!j.is_object()) throw ConfigError("bad_mapping", "column mapping must be a JSON object");
  const auto& known = known_fields(kind);
  for (const auto& [field, value] : j.items()) {
    if (!known.count(field)) {
      throw ConfigError("unknown_key", "unknown " + std::string(to_string(kind)) +
                                           " mapping field '" + field + "'");
    }
    std::vector<std::string> headers;
    if (value.is_string()) {
      headers.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      for (const auto& h : value) headers.push_back(h.get<std::string>());
    } else if (value.is_null()) {
      m.columns.erase(field);
      continue;
    } else {
      throw ConfigError("bad_mapping", "mapping for '" + field + "' must be a string or list");
    }
    m.columns[field] = std::move(headers);
  }
  // An explicit timestamp column replaces the date/time pair.
  if (kind == TableKind::Crash && j.contains("timestamp") && !j.contains("crash_date")) {
    m.columns.erase("crash_date");
    m.columns.erase("crash_time");
  }
  m.validate();
  return m;
}

nlohmann::json ColumnMapping::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [field, headers] : columns) {
    if (headers.size() == 1) j[field] = headers.front();
    else j[field] = headers;
  }
  return j;
}

void ColumnMapping::validate() const {
  auto it = columns.find("collision_id");
  if (it == columns.end() || it->second.empty()) {
    throw ConfigError("bad_mapping", std::string(to_string(kind)) +
                                         " mapping must name the collision_id column");
  }
}

nlohmann::json IngestReport::to_json() const {
  return {{"rows_read", rows_read},
          {"rows_accepted", rows_accepted},
          {"rows_dropped", rows_dropped},
          {"rows_unmatched", rows_unmatched},
          {"drop_reasons", drop_reasons}};
}

ParsedTable<RawCrashRecord> parse_crash_table(std::istream& in, const ColumnMapping& mapping) {
  return parse_crashes_impl(in, mapping);
}
ParsedTable<RawPersonRecord> parse_person_table(std::istream& in, const ColumnMapping& mapping) {
  return parse_persons_impl(in, mapping);
}
ParsedTable<RawVehicleRecord> parse_vehicle_table(std::istream& in, const ColumnMapping& mapping) {
  return parse_vehicles_impl(in, mapping);
}

ParsedTable<RawCrashRecord> parse_crash_table(const std::filesystem::path& path,
                                              const ColumnMapping& mapping) {
  return parse_path(path, [&](std::istream& in) { return parse_crashes_impl(in, mapping); });
}
ParsedTable<RawPersonRecord> parse_person_table(const std::filesystem::path& path,
                                                const ColumnMapping& mapping) {
  return parse_path(path, [&](std::istream& in) { return parse_persons_impl(in, mapping); });
}
ParsedTable<RawVehicleRecord> parse_vehicle_table(const std::filesystem::path& path,
                                                  const ColumnMapping& mapping) {
  return parse_path(path, [&](std::istream& in) { return parse_vehicles_impl(in, mapping); });
}

PersonRole parse_role(std::string_view text) {
  const auto s = lower(text);
  if (contains(s, "pedestrian")) return PersonRole::Pedestrian;
  if (contains(s, "bicycl") || contains(s, "cyclist")) return PersonRole::Cyclist;
  if (contains(s, "driver")) return PersonRole::Driver;
  if (contains(s, "passenger")) return PersonRole::Passenger;
  return PersonRole::Other;
}

VehicleCategory parse_vehicle_category(std::string_view text) {
  const auto s = lower(trim(text));
  if (contains(s, "sport utility") || s == "suv" || contains(s, "suv")) return VehicleCategory::SUV;
  if (contains(s, "taxi") || contains(s, "cab")) return VehicleCategory::Taxi;
  if (contains(s, "bus")) return VehicleCategory::Bus;
  if (contains(s, "motorcycle") || contains(s, "motorbike") || contains(s, "moped") ||
      contains(s, "scooter") || contains(s, "minibike")) {
    return VehicleCategory::Motorcycle;
  }
  if (contains(s, "bike") || contains(s, "bicycle")) return VehicleCategory::Bicycle;
  if (contains(s, "truck") || contains(s, "tractor") || contains(s, "pick-up") ||
      contains(s, "dump") || contains(s, "tanker") || contains(s, "flat bed")) {
    return VehicleCategory::Truck;
  }
  if (contains(s, "sedan") || contains(s, "passenger") || contains(s, "wagon") ||
      contains(s, "coupe") || contains(s, "convertible") || contains(s, "hatchback")) {
    return VehicleCategory::PassengerVehicle;
  }
  return VehicleCategory::Other;
}

std::optional<Borough> parse_borough(std::string_view text) {
  const auto s = lower(trim(text));
  if (s.empty()) return std::nullopt;
  if (s == "bronx" || s == "the bronx") return Borough::Bronx;
  if (s == "brooklyn") return Borough::Brooklyn;
  if (s == "manhattan") return Borough::Manhattan;
  if (s == "queens") return Borough::Queens;
  if (s == "staten island" || s == "statenisland") return Borough::StatenIsland;
  return Borough::Unknown;
}

PersonAggregate aggregate_persons(std::span<const RawPersonRecord> persons) {
  PersonAggregate a;
  const auto n = static_cast<double>(persons.size());
  a.num_person_records = n;
  if (persons.empty()) return a;

  std::size_t drivers = 0, passengers = 0, pedestrians = 0, cyclists = 0;
  std::size_t aged = 0, youth = 0, seniors = 0;
  double age_sum = 0;
  std::size_t safety_known = 0, with_safety = 0, without_safety = 0;
  std::size_t eject_known = 0, ejected = 0;
  std::size_t airbag_known = 0, airbag = 0;
  for (const auto& p : persons) {
    switch (p.role) {
      case PersonRole::Driver: ++drivers; break;
      case PersonRole::Passenger: ++passengers; break;
      case PersonRole::Pedestrian: ++pedestrians; break;
      case PersonRole::Cyclist: ++cyclists; break;
      case PersonRole::Other: break;
    }
    if (p.age) {
      ++aged;
      age_sum += *p.age;
      if (*p.age <= 25) ++youth;
      if (*p.age >= 65) ++seniors;
    }
    if (p.safety_equipment != SafetyEquipment::Unknown) {
      ++safety_known;
      if (p.safety_equipment == SafetyEquipment::Present) ++with_safety;
      else ++without_safety;
    }
    if (p.ejected) {
      ++eject_known;
      if (*p.ejected) ++ejected;
    }
    if (p.airbag_deployed) {
      ++airbag_known;
      if (*p.airbag_deployed) ++airbag;
    }
  }
  a.roles_missing = false;
  a.role_driver = static_cast<double>(drivers) / n;
  a.role_passenger = static_cast<double>(passengers) / n;
  a.role_pedestrian = static_cast<double>(pedestrians) / n;
  a.role_cyclist = static_cast<double>(cyclists) / n;
  if (aged > 0) {
    a.age_missing = false;
    a.avg_age = age_sum / static_cast<double>(aged);
    a.pct_youth = static_cast<double>(youth) / static_cast<double>(aged);
    a.pct_senior = static_cast<double>(seniors) / static_cast<double>(aged);
  }
  if (safety_known > 0) {
    a.safety_missing = false;
    a.pct_with_safety_equipment = static_cast<double>(with_safety) / static_cast<double>(safety_known);
    a.pct_no_safety_equipment = static_cast<double>(without_safety) / static_cast<double>(safety_known);
  }
  if (eject_known > 0) {
    a.ejected_missing = false;
    a.pct_ejected = static_cast<double>(ejected) / static_cast<double>(eject_known);
  }
  if (airbag_known > 0) {
    a.airbag_missing = false;
    a.pct_airbag_deployed = static_cast<double>(airbag) / static_cast<double>(airbag_known);
  }
  return a;
}

void PersonAggregate::apply(EventFeatureRow& row) const {
  using namespace feat;
  auto set = [&row](std::size_t j, double v, bool missing) {
    row.values[j] = v;
    row.missing[j] = missing ? 1 : 0;
  };
  set(NUM_PERSON_RECORDS, num_person_records, false);
  set(ROLE_DRIVER, role_driver, roles_missing);
  set(ROLE_PASSENGER, role_passenger, roles_missing);
  set(ROLE_PEDESTRIAN, role_pedestrian, roles_missing);
  set(ROLE_CYCLIST, role_cyclist, roles_missing);
  set(AVG_AGE, age_missing ? kAgeSentinel : avg_age, age_missing);
  set(PCT_YOUTH, pct_youth, age_missing);
  set(PCT_SENIOR, pct_senior, age_missing);
  set(PCT_WITH_SAFETY_EQUIPMENT, pct_with_safety_equipment, safety_missing);
  set(PCT_NO_SAFETY_EQUIPMENT, pct_no_safety_equipment, safety_missing);
  set(PCT_EJECTED, pct_ejected, ejected_missing);
  set(PCT_AIRBAG_DEPLOYED, pct_airbag_deployed, airbag_missing);
}

VehicleAggregate aggregate_vehicles(std::span<const RawVehicleRecord> vehicles, int crash_year) {
  VehicleAggregate a;
  const auto n = static_cast<double>(vehicles.size());
  a.num_vehicle_records = n;
  if (vehicles.empty()) return a;
  std::array<std::size_t, 8> counts{};
  std::size_t out_of_state = 0, aged = 0, fresh = 0, mid = 0, old = 0;
  for (const auto& v : vehicles) {
    ++counts[static_cast<std::size_t>(v.vehicle_category)];
    if (v.registration_state && *v.registration_state != "NY") ++out_of_state;
    if (v.model_year && *v.model_year >= 1900 && *v.model_year <= crash_year + 1) {
      ++aged;
      const int age = crash_year - *v.model_year;
      if (age < 5) ++fresh;
      else if (age <= 15) ++mid;
      else ++old;
    }
  }
  a.categories_missing = false;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    a.category_share[c] = static_cast<double>(counts[c]) / n;
  }
  a.pct_out_of_state = static_cast<double>(out_of_state) / n;
  if (aged > 0) {
    a.age_missing = false;
    a.veh_age_new = static_cast<double>(fresh) / static_cast<double>(aged);
    a.veh_age_mid = static_cast<double>(mid) / static_cast<double>(aged);
    a.veh_age_old = static_cast<double>(old) / static_cast<double>(aged);
  }
  return a;
}

void VehicleAggregate::apply(EventFeatureRow& row) const {
  using namespace feat;
  row.values[NUM_VEHICLE_RECORDS] = num_vehicle_records;
  row.missing[NUM_VEHICLE_RECORDS] = 0;
  for (std::size_t c = 0; c < category_share.size(); ++c) {
    row.values[PASSENGER_VEHICLE + c] = category_share[c];
    row.missing[PASSENGER_VEHICLE + c] = categories_missing ? 1 : 0;
  }
  row.values[PCT_OUT_OF_STATE] = pct_out_of_state;
  row.missing[PCT_OUT_OF_STATE] = categories_missing ? 1 : 0;
  row.values[VEH_AGE_NEW] = veh_age_new;
  row.values[VEH_AGE_MID] = veh_age_mid;
  row.values[VEH_AGE_OLD] = veh_age_old;
  for (auto j : {VEH_AGE_NEW, VEH_AGE_MID, VEH_AGE_OLD}) row.missing[j] = age_missing ? 1 : 0;
}

EventFeatureRow build_event_row(const RawCrashRecord& crash,
                                std::span<const RawPersonRecord> persons,
                                std::span<const RawVehicleRecord> vehicles) {
  using namespace feat;
  EventFeatureRow row;
  row.collision_id = crash.collision_id;
  row.timestamp = crash.timestamp;
  row.label = derive_label(crash.injured_count, crash.killed_count);
  row.factors = crash.contributing_factors;

  const auto civil = to_civil(crash.timestamp);
  aggregate_persons(persons).apply(row);
  aggregate_vehicles(vehicles, civil.year).apply(row);

  row.values[CRASH_HOUR] = civil.hour;
  row.values[DAY_OF_WEEK] = civil.weekday;
  row.values[IS_WEEKEND] = civil.weekday >= 5 ? 1.0 : 0.0;

  if (crash.latitude && crash.longitude) {
    row.values[LATITUDE] = *crash.latitude;
    row.values[LONGITUDE] = *crash.longitude;
  } else {
    row.missing[LATITUDE] = row.missing[LONGITUDE] = 1;
  }
  if (crash.zip_code) {
    row.values[ZIP_CODE] = std::stoi(*crash.zip_code);
  } else {
    row.values[ZIP_CODE] = kZipSentinel;
    row.missing[ZIP_CODE] = 1;
  }
  const auto borough = crash.borough.value_or(Borough::Unknown);
  row.values[BORO_BRONX] = borough == Borough::Bronx;
  row.values[BORO_BROOKLYN] = borough == Borough::Brooklyn;
  row.values[BORO_MANHATTAN] = borough == Borough::Manhattan;
  row.values[BORO_QUEENS] = borough == Borough::Queens;
  row.values[BORO_STATEN] = borough == Borough::StatenIsland;
  return row;
}

JoinResult join_tables(std::span<const RawCrashRecord> crashes,
                       std::span<const RawPersonRecord> persons,
                       std::span<const RawVehicleRecord> vehicles) {
  JoinResult out;
  std::unordered_map<std::int64_t, std::size_t> crash_index;
  std::vector<const RawCrashRecord*> unique;
  for (const auto& c : crashes) {
    if (crash_index.emplace(c.collision_id, unique.size()).second) {
      unique.push_back(&c);
    } else {
      ++out.duplicate_crashes;
    }
  }
  std::vector<std::vector<RawPersonRecord>> by_crash_p(unique.size());
  std::vector<std::vector<RawVehicleRecord>> by_crash_v(unique.size());
  for (const auto& p : persons) {
    auto it = crash_index.find(p.collision_id);
    if (it == crash_index.end()) ++out.unmatched_persons;
    else by_crash_p[it->second].push_back(p);
  }
  for (const auto& v : vehicles) {
    auto it = crash_index.find(v.collision_id);
    if (it == crash_index.end()) ++out.unmatched_vehicles;
    else by_crash_v[it->second].push_back(v);
  }
  out.rows.reserve(unique.size());
  for (std::size_t i = 0; i < unique.size(); ++i) {
    out.rows.push_back(build_event_row(*unique[i], by_crash_p[i], by_crash_v[i]));
  }
  std::sort(out.rows.begin(), out.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.timestamp, a.collision_id) < std::tie(b.timestamp, b.collision_id);
  });
  return out;
}

}  // namespace rax
