#include "rax/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "rax/error.hpp"
#include "rax/ingest.hpp"
#include "rax/matrix.hpp"
#include "rax/model.hpp"
#include "rax/parallel.hpp"
#include "rax/time.hpp"
#include "rax/tree.hpp"

namespace rax {
namespace {

constexpr std::size_t kBlock = 1024;

using Rng = std::mt19937_64;

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double beta(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

template <std::size_t N>
std::array<double, N> dirichlet(Rng& rng, const std::array<double, N>& alpha) {
  std::array<double, N> p{};
  double s = 0;
  for (std::size_t i = 0; i < N; ++i) s += p[i] = std::gamma_distribution<double>(alpha[i], 1.0)(rng);
  for (auto& v : p) v /= s;
  return p;
}

template <std::size_t N>
std::size_t categorical(Rng& rng, const std::array<double, N>& p) {
  double u = uniform(rng);
  for (std::size_t i = 0; i + 1 < N; ++i) {
    if (u < p[i]) return i;
    u -= p[i];
  }
  return N - 1;
}

// 1 + Poisson(mean), capped.
int truncated_poisson(Rng& rng, double mean, int cap) {
  return std::min(cap, 1 + std::poisson_distribution<int>(mean)(rng));
}

// Bimodal around the commute peaks with a uniform floor.
int sample_hour(Rng& rng) {
  const double u = uniform(rng);
  double h;
  if (u < 0.42) h = std::normal_distribution<double>(8.0, 2.0)(rng);
  else if (u < 0.84) h = std::normal_distribution<double>(18.0, 2.5)(rng);
  else h = 24.0 * uniform(rng);
  const int hour = static_cast<int>(std::floor(h));
  return ((hour % 24) + 24) % 24;
}

struct Cluster {
  Borough borough;
  double lat, lon, sd;
  int zip_lo, zip_hi;
};

constexpr std::array<Cluster, 3> kClusters{{
    {Borough::Manhattan, 40.776, -73.971, 0.020, 10001, 10040},
    {Borough::Brooklyn, 40.650, -73.949, 0.030, 11201, 11239},
    {Borough::Queens, 40.728, -73.826, 0.040, 11354, 11436},
}};

const std::array<std::string, 6> kFactors{"Driver Inattention/Distraction", "Unsafe Speed",
                                          "Failure to Yield Right-of-Way", "Following Too Closely",
                                          "Traffic Control Disregarded", "Unspecified"};

struct Event {
  RawCrashRecord crash;
  std::vector<RawPersonRecord> persons;
  std::vector<RawVehicleRecord> vehicles;
};

Event sample_event(Rng& rng, std::int64_t t0, std::int64_t t1) {
  Event e;
  auto& c = e.crash;
  const std::int64_t days = (t1 - t0) / 86400;
  const auto day = std::uniform_int_distribution<std::int64_t>(0, days - 1)(rng);
  const int minute = std::uniform_int_distribution<int>(0, 59)(rng);
  c.timestamp = t0 + day * 86400 + sample_hour(rng) * 3600 + minute * 60;

  const auto& cl = kClusters[categorical(rng, std::array<double, 3>{0.35, 0.35, 0.30})];
  c.borough = uniform(rng) < 0.02 ? std::nullopt : std::optional<Borough>(cl.borough);
  if (uniform(rng) >= 0.03) {
    std::normal_distribution<double> jitter(0.0, cl.sd);
    c.latitude = std::clamp(cl.lat + jitter(rng), kMinLatitude, kMaxLatitude);
    c.longitude = std::clamp(cl.lon + jitter(rng), kMinLongitude, kMaxLongitude);
  }
  if (uniform(rng) >= 0.05) c.zip_code = std::to_string(std::uniform_int_distribution<int>(cl.zip_lo, cl.zip_hi)(rng));
  const int n_factors = 1 + (uniform(rng) < 0.3);
  for (int i = 0; i < n_factors; ++i)
    c.contributing_factors.push_back(kFactors[std::uniform_int_distribution<std::size_t>(0, kFactors.size() - 1)(rng)]);

  // Event-level rates, realized through person records.
  const auto roles = dirichlet(rng, std::array<double, 4>{4.0, 2.0, 0.35, 0.25});
  const double safety_rate = beta(rng, 5.0, 2.0);
  const double eject_rate = uniform(rng) < 0.95 ? 0.0 : beta(rng, 2.0, 3.0);
  const int n_persons = truncated_poisson(rng, 1.2, 12);
  const double age_mean = std::normal_distribution<double>(40.0, 8.0)(rng);
  for (int i = 0; i < n_persons; ++i) {
    RawPersonRecord p;
    p.role = static_cast<PersonRole>(categorical(rng, roles));
    if (uniform(rng) >= 0.15) {
      const double age = std::normal_distribution<double>(age_mean, 15.0)(rng);
      p.age = std::clamp(static_cast<int>(std::lround(age)), 1, 95);
    }
    p.sex = uniform(rng) < 0.55 ? Sex::Male : Sex::Female;
    if (p.role == PersonRole::Pedestrian) {
      p.safety_equipment = SafetyEquipment::None;
    } else if (uniform(rng) < 0.1) {
      p.safety_equipment = SafetyEquipment::Unknown;
    } else {
      p.safety_equipment = uniform(rng) < safety_rate ? SafetyEquipment::Present : SafetyEquipment::None;
    }
    // Ingest reads airbag status from the safety text, which never reports a deployment here.
    if (p.safety_equipment != SafetyEquipment::Unknown) p.airbag_deployed = false;
    if (uniform(rng) >= 0.05) p.ejected = uniform(rng) < eject_rate;
    p.injury_status = InjuryStatus::Uninjured;
    e.persons.push_back(p);
  }

  const auto categories = dirichlet(rng, std::array<double, 8>{6.0, 4.0, 1.0, 0.3, 0.8, 0.3, 0.4, 0.3});
  const double out_of_state = beta(rng, 1.0, 8.0);
  const int year = to_civil(c.timestamp).year;
  const int n_vehicles = truncated_poisson(rng, 0.8, 8);
  for (int i = 0; i < n_vehicles; ++i) {
    RawVehicleRecord v;
    v.vehicle_category = static_cast<VehicleCategory>(categorical(rng, categories));
    v.registration_state = uniform(rng) < out_of_state ? "NJ" : "NY";
    if (uniform(rng) >= 0.1) v.model_year = year - std::min(40, std::poisson_distribution<int>(8.0)(rng));
    e.vehicles.push_back(v);
  }
  return e;
}

// Sets injured/killed counts and person statuses consistent with the label.
void assign_outcome(Event& e, SeverityLabel label, Rng& rng) {
  auto& c = e.crash;
  const int n = static_cast<int>(e.persons.size());
  c.injured_count = c.killed_count = 0;
  if (label == SeverityLabel::Injury) {
    c.injured_count = std::min(n, 1 + std::poisson_distribution<int>(0.4)(rng));
  } else if (label == SeverityLabel::Fatal) {
    c.killed_count = 1;
    c.injured_count = std::min(n - 1, std::poisson_distribution<int>(0.8)(rng));
  }
  // Pedestrians and cyclists first, then in record order.
  std::vector<std::size_t> order(e.persons.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto vul = [](PersonRole r) { return r == PersonRole::Pedestrian || r == PersonRole::Cyclist; };
    return vul(e.persons[a].role) > vul(e.persons[b].role);
  });
  int k = 0;
  for (int i = 0; i < c.killed_count; ++i) e.persons[order[k++]].injury_status = InjuryStatus::Killed;
  for (int i = 0; i < c.injured_count && k < n; ++i) e.persons[order[k++]].injury_status = InjuryStatus::Injured;
}

struct Generated {
  std::vector<Event> events;
  std::vector<EventFeatureRow> rows;
};

Generated generate_all(const SynthConfig& cfg, unsigned threads) {
  cfg.validate();
  const auto t0 = month_start(cfg.start_year, cfg.start_month);
  const int last = cfg.start_month - 1 + cfg.n_months - 1;
  const auto t1 = month_end(cfg.start_year + last / 12, last % 12 + 1);
  const std::size_t n = cfg.n_events;
  const std::size_t n_blocks = (n + kBlock - 1) / kBlock;

  Generated g;
  g.events.resize(n);
  std::vector<double> latent(n);
  parallel_for(n_blocks, threads, [&](std::size_t b) {
    Rng rng(derive_seed(cfg.seed, b));
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) g.events[i] = sample_event(rng, t0, t1);
  });
  // Chronological ids.
  std::stable_sort(g.events.begin(), g.events.end(),
                   [](const Event& a, const Event& b) { return a.crash.timestamp < b.crash.timestamp; });
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = g.events[i];
    e.crash.collision_id = static_cast<std::int64_t>(i + 1);
    for (auto& p : e.persons) p.collision_id = e.crash.collision_id;
    for (auto& v : e.vehicles) v.collision_id = e.crash.collision_id;
  }

  g.rows.resize(n);
  parallel_for(n_blocks, threads, [&](std::size_t b) {
    Rng rng(derive_seed(cfg.seed ^ 0x6c61'7465'6e74ULL, b));
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
      const auto& e = g.events[i];
      g.rows[i] = build_event_row(e.crash, e.persons, e.vehicles);
      const double u = std::clamp(uniform(rng), 1e-300, 1.0 - 1e-16);
      latent[i] = synth_eta(g.rows[i], cfg) + std::log(u / (1.0 - u));
    }
  });

  // Cut points at empirical quantiles: the lowest round(p0 n) are NoInjury,
  // the highest round(p2 n) Fatal.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return latent[a] != latent[b] ? latent[a] < latent[b] : a < b;
  });
  const auto n_fatal = static_cast<std::size_t>(std::llround(cfg.class_prior[2] * static_cast<double>(n)));
  const auto n_none = std::min(n - n_fatal, static_cast<std::size_t>(std::llround(cfg.class_prior[0] * static_cast<double>(n))));
  std::vector<SeverityLabel> label(n, SeverityLabel::Injury);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_none) label[order[r]] = SeverityLabel::NoInjury;
    else if (r >= n - n_fatal) label[order[r]] = SeverityLabel::Fatal;
  }

  parallel_for(n_blocks, threads, [&](std::size_t b) {
    Rng rng(derive_seed(cfg.seed ^ 0x6f75'7463'6f6dULL, b));
    for (std::size_t i = b * kBlock; i < std::min(n, (b + 1) * kBlock); ++i) {
      assign_outcome(g.events[i], label[i], rng);
      g.rows[i].label = derive_label(g.events[i].crash.injured_count, g.events[i].crash.killed_count);
    }
  });
  return g;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string_view role_text(PersonRole r) {
  switch (r) {
    case PersonRole::Driver: return "Driver";
    case PersonRole::Passenger: return "Passenger";
    case PersonRole::Pedestrian: return "Pedestrian";
    case PersonRole::Cyclist: return "Bicyclist";
    case PersonRole::Other: return "Other";
  }
  return "Other";
}

std::string_view vehicle_text(VehicleCategory v) {
  switch (v) {
    case VehicleCategory::PassengerVehicle: return "Sedan";
    case VehicleCategory::SUV: return "Station Wagon/Sport Utility Vehicle";
    case VehicleCategory::Taxi: return "Taxi";
    case VehicleCategory::Bus: return "Bus";
    case VehicleCategory::Truck: return "Box Truck";
    case VehicleCategory::Motorcycle: return "Motorcycle";
    case VehicleCategory::Bicycle: return "Bike";
    case VehicleCategory::Other: return "Other";
  }
  return "Other";
}

std::string_view injury_text(InjuryStatus s) {
  switch (s) {
    case InjuryStatus::Killed: return "Killed";
    case InjuryStatus::Injured: return "Injured";
    case InjuryStatus::Uninjured: return "Unspecified";
    case InjuryStatus::Unknown: return "";
  }
  return "";
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("unwritable_file", "cannot write " + p.string());
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_events < 1) throw ConfigError("bad_synth_config", "n_events must be at least 1");
  double s = 0;
  for (double p : class_prior) {
    if (!(p >= 0.0)) throw ConfigError("bad_synth_config", "class_prior entries must be non-negative");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("bad_synth_config", "class_prior must sum to 1");
  if (start_month < 1 || start_month > 12 || n_months < 1)
    throw ConfigError("bad_synth_config", "time span needs start_month in 1..12 and n_months >= 1");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_events", n_events},
          {"seed", seed},
          {"class_prior", class_prior},
          {"beta_ejected", beta_ejected},
          {"beta_pedestrian", beta_pedestrian},
          {"beta_night", beta_night},
          {"beta_safety", beta_safety},
          {"beta_night_pedestrian", beta_night_pedestrian},
          {"start_year", start_year},
          {"start_month", start_month},
          {"n_months", n_months}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("bad_synth_config", "synth config must be an object");
  SynthConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_events") c.n_events = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "class_prior") c.class_prior = value.get<std::array<double, 3>>();
      else if (key == "beta_ejected") c.beta_ejected = value.get<double>();
      else if (key == "beta_pedestrian") c.beta_pedestrian = value.get<double>();
      else if (key == "beta_night") c.beta_night = value.get<double>();
      else if (key == "beta_safety") c.beta_safety = value.get<double>();
      else if (key == "beta_night_pedestrian") c.beta_night_pedestrian = value.get<double>();
      else if (key == "start_year") c.start_year = value.get<int>();
      else if (key == "start_month") c.start_month = value.get<int>();
      else if (key == "n_months") c.n_months = value.get<int>();
      else throw ConfigError("unknown_key", "unknown synth config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad_synth_config", e.what());
  }
  c.validate();
  return c;
}

double synth_eta(const EventFeatureRow& row, const SynthConfig& c) {
  using namespace feat;
  const auto val = [&row](std::size_t j) { return row.is_missing(j) ? 0.0 : row.values[j]; };
  const double hour = row.values[CRASH_HOUR];
  const double night = (hour < 6 || hour >= 21) ? 1.0 : 0.0;
  const double ped = val(ROLE_PEDESTRIAN);
  return c.beta_ejected * val(PCT_EJECTED) + c.beta_pedestrian * ped + c.beta_night * night +
         c.beta_safety * val(PCT_WITH_SAFETY_EQUIPMENT) + c.beta_night_pedestrian * night * ped;
}

SynthTables generate_tables(const SynthConfig& config, unsigned threads) {
  auto g = generate_all(config, threads);
  SynthTables t;
  for (auto& e : g.events) {
    t.crashes.push_back(std::move(e.crash));
    for (auto& p : e.persons) t.persons.push_back(p);
    for (auto& v : e.vehicles) t.vehicles.push_back(v);
  }
  return t;
}

std::vector<EventFeatureRow> generate(const SynthConfig& config, unsigned threads) {
  return generate_all(config, threads).rows;
}

void write_tables_csv(const SynthTables& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_out(dir / "crashes.csv");
    out << "COLLISION_ID,CRASH DATE,CRASH TIME,BOROUGH,ZIP CODE,LATITUDE,LONGITUDE,"
           "NUMBER OF PERSONS INJURED,NUMBER OF PERSONS KILLED,CONTRIBUTING FACTOR VEHICLE 1,"
           "CONTRIBUTING FACTOR VEHICLE 2\n";
    out << std::setprecision(17);
    for (const auto& c : t.crashes) {
      const auto ct = to_civil(c.timestamp);
      char date[16], time[8];
      std::snprintf(date, sizeof date, "%02d/%02d/%04d", ct.month, ct.day, ct.year);
      std::snprintf(time, sizeof time, "%d:%02d", ct.hour, ct.minute);
      out << c.collision_id << ',' << date << ',' << time << ','
          << (c.borough ? csv_field(std::string(to_string(*c.borough))) : "") << ','
          << c.zip_code.value_or("") << ',';
      if (c.latitude) out << *c.latitude;
      out << ',';
      if (c.longitude) out << *c.longitude;
      out << ',' << c.injured_count << ',' << c.killed_count;
      for (std::size_t i = 0; i < 2; ++i)
        out << ',' << (i < c.contributing_factors.size() ? csv_field(c.contributing_factors[i]) : "");
      out << '\n';
    }
  }
  {
    auto out = open_out(dir / "persons.csv");
    out << "COLLISION_ID,PERSON_TYPE,PERSON_AGE,PERSON_SEX,PERSON_INJURY,SAFETY_EQUIPMENT,EJECTION\n";
    for (const auto& p : t.persons) {
      out << p.collision_id << ',' << role_text(p.role) << ',' << (p.age ? std::to_string(*p.age) : "") << ','
          << (p.sex ? (*p.sex == Sex::Male ? "M" : *p.sex == Sex::Female ? "F" : "U") : "") << ','
          << injury_text(p.injury_status) << ','
          << (p.safety_equipment == SafetyEquipment::Present ? "Lap Belt & Harness"
              : p.safety_equipment == SafetyEquipment::None ? "None"
                                                             : "")
          << ',' << (p.ejected ? (*p.ejected ? "Ejected" : "Not Ejected") : "") << '\n';
    }
  }
  {
    auto out = open_out(dir / "vehicles.csv");
    out << "COLLISION_ID,VEHICLE_TYPE,STATE_REGISTRATION,VEHICLE_YEAR\n";
    for (const auto& v : t.vehicles) {
      out << v.collision_id << ',' << csv_field(std::string(vehicle_text(v.vehicle_category))) << ','
          << v.registration_state.value_or("") << ',' << (v.model_year ? std::to_string(*v.model_year) : "")
          << '\n';
    }
  }
}

std::vector<ImbalanceStrategy> default_ablation_strategies() {
  return {ImbalanceStrategy::baseline(), ImbalanceStrategy::weighted(), ImbalanceStrategy::smote(),
          ImbalanceStrategy::focal()};
}

std::vector<AblationRow> run_ablation(std::span<const ImbalanceStrategy> strategies,
                                      const AblationConfig& config) {
  const auto split = temporal_split(generate(config.data, config.threads), config.split);
  const auto x_test = FeatureMatrix::from_rows(split.test);
  const auto y_test = labels_of(split.test);
  std::vector<AblationRow> out;
  for (const auto& s : strategies) {
    s.validate();
    const auto prepared = apply_strategy(s, split.train, config.data.seed);
    const auto x = FeatureMatrix::from_rows(prepared.rows);
    const auto y = labels_of(prepared.rows);
    auto boost = config.boost;
    boost.class_weights = prepared.class_weights;
    boost.seed = config.data.seed;
    const Model model(fit_gradient_boosting(x, y, *prepared.objective, boost));
    const auto report = evaluate(y_test, model.predict_class(x_test, config.threads));
    out.push_back({s.name(), report.accuracy, report.macro_f1, report.recall_fatal()});
  }
  return out;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "strategy,accuracy,macro_f1,recall_fatal\n" << std::setprecision(6) << std::fixed;
  for (const auto& r : rows) out << r.strategy << ',' << r.accuracy << ',' << r.macro_f1 << ',' << r.recall_fatal << '\n';
  return out.str();
}

}  // namespace rax
