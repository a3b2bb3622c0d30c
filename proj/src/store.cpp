#include "rax/store.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "rax/binary_io.hpp"
#include "rax/error.hpp"
#include "rax/time.hpp"

namespace rax {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'R', 'A', 'X', 'F'};
constexpr std::uint16_t kFormatVersion = 1;
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kSchemaFile = "schema.json";
constexpr const char* kPartFile = "part.raxf";
constexpr const char* kSidecarFile = "events.jsonl";

// CRC-32 of a partition file body. The whole-file CRC would be the same
// residue for every file, since each one ends with its own CRC trailer.
std::uint32_t file_checksum(std::span<const std::uint8_t> bytes) {
  return crc32(bytes.first(bytes.size() >= 4 ? bytes.size() - 4 : 0));
}

std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

std::uint32_t parse_crc_hex(const std::string& s) {
  if (s.size() != 8) throw DataError("bad_manifest", "checksum must be 8 hex chars");
  return static_cast<std::uint32_t>(std::stoul(s, nullptr, 16));
}

}  // namespace

PartitionKey PartitionKey::of(std::int64_t timestamp) {
  const auto c = to_civil(timestamp);
  return {c.year, c.month};
}

std::int64_t PartitionKey::start() const { return month_start(year, month); }
std::int64_t PartitionKey::end() const { return month_end(year, month); }

PartitionKey PartitionKey::prev() const {
  return month == 1 ? PartitionKey{year - 1, 12} : PartitionKey{year, month - 1};
}

std::string PartitionKey::relative_dir() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "year=%04d/month=%02d", year, month);
  return buf;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : partitions) {
    parts.push_back({{"year", p.key.year},
                     {"month", p.key.month},
                     {"row_count", p.row_count},
                     {"min_timestamp", p.min_timestamp},
                     {"max_timestamp", p.max_timestamp},
                     {"checksum", crc_hex(p.checksum)},
                     {"sidecar_checksum", crc_hex(p.sidecar_checksum)},
                     {"path", p.path}});
  }
  return {{"version", 1}, {"schema_hash", hash_hex(schema_hash)}, {"partitions", parts}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    m.schema_hash = parse_hash_hex(j.at("schema_hash").get<std::string>());
    for (const auto& p : j.at("partitions")) {
      PartitionEntry e;
      e.key = {p.at("year").get<int>(), p.at("month").get<int>()};
      e.row_count = p.at("row_count").get<std::uint64_t>();
      e.min_timestamp = p.at("min_timestamp").get<std::int64_t>();
      e.max_timestamp = p.at("max_timestamp").get<std::int64_t>();
      e.checksum = parse_crc_hex(p.at("checksum").get<std::string>());
      e.sidecar_checksum = parse_crc_hex(p.at("sidecar_checksum").get<std::string>());
      e.path = p.at("path").get<std::string>();
      if (e.min_timestamp > e.max_timestamp && e.row_count > 0) {
        throw DataError("bad_manifest", "partition min_timestamp after max_timestamp");
      }
      m.partitions.push_back(std::move(e));
    }
    std::sort(m.partitions.begin(), m.partitions.end(),
              [](const auto& a, const auto& b) { return a.key < b.key; });
    for (std::size_t i = 1; i < m.partitions.size(); ++i) {
      if (m.partitions[i].key == m.partitions[i - 1].key) {
        throw DataError("bad_manifest", "duplicate partition key in manifest");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_manifest", std::string("malformed manifest: ") + e.what());
  }
}

bool row_time_less(const EventFeatureRow& a, const EventFeatureRow& b) {
  return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.collision_id < b.collision_id;
}

TemporalSplit temporal_split(std::vector<EventFeatureRow> rows, const SplitSpec& spec) {
  if (spec.n_test == 0 || spec.n_train == 0) {
    throw ConfigError("bad_split", "n_test and n_train must be positive");
  }
  const std::size_t need = spec.n_train + spec.n_test;
  if (rows.size() < need) {
    throw DataError("insufficient_rows", "temporal split needs " + std::to_string(need) +
                                             " rows (" + std::to_string(spec.n_train) +
                                             " train + " + std::to_string(spec.n_test) +
                                             " test) but only " + std::to_string(rows.size()) +
                                             " are available");
  }
  std::sort(rows.begin(), rows.end(), row_time_less);
  TemporalSplit split;
  const auto test_begin = rows.end() - static_cast<std::ptrdiff_t>(spec.n_test);
  const auto train_begin = test_begin - static_cast<std::ptrdiff_t>(spec.n_train);
  split.train.assign(std::make_move_iterator(train_begin), std::make_move_iterator(test_begin));
  split.test.assign(std::make_move_iterator(test_begin), std::make_move_iterator(rows.end()));
  return split;
}

std::vector<std::uint8_t> encode_partition(std::span<const EventFeatureRow> rows,
                                           const FeatureSchema& schema) {
  const std::size_t n = rows.size();
  const std::size_t d = schema.size();
  ByteWriter w;
  for (char c : kMagic) w.put<std::uint8_t>(static_cast<std::uint8_t>(c));
  w.put<std::uint16_t>(kFormatVersion);
  w.put<std::uint64_t>(schema.hash());
  w.put<std::uint64_t>(n);

  std::vector<std::uint8_t> bitmap((n + 7) / 8);
  for (std::size_t j = 0; j < d; ++j) {
    std::fill(bitmap.begin(), bitmap.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i].values.size() != d) {
        throw DataError("schema_mismatch", "row width does not match the store schema");
      }
      if (!rows[i].missing[j]) bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    w.put_bytes(bitmap);
    switch (schema[j].kind) {
      case FeatureKind::Numeric:
        for (std::size_t i = 0; i < n; ++i) w.put<double>(rows[i].values[j]);
        break;
      case FeatureKind::Binary:
        for (std::size_t i = 0; i < n; ++i) {
          const double v = rows[i].values[j];
          if (v != 0.0 && v != 1.0) {
            throw DataError("bad_value", schema[j].name + " must be 0 or 1");
          }
          w.put<std::uint8_t>(v == 1.0 ? 1 : 0);
        }
        break;
      case FeatureKind::CategoricalCode:
        for (std::size_t i = 0; i < n; ++i) {
          const double v = rows[i].values[j];
          if (v != std::floor(v) || std::abs(v) > 2147483647.0) {
            throw DataError("bad_value", schema[j].name + " must be an integer code");
          }
          w.put<std::int32_t>(static_cast<std::int32_t>(v));
        }
        break;
    }
  }
  for (const auto& r : rows) w.put<std::uint64_t>(static_cast<std::uint64_t>(r.collision_id));
  for (const auto& r : rows) w.put<std::int64_t>(r.timestamp);
  w.put_crc_trailer();
  return w.take();
}

std::vector<EventFeatureRow> decode_partition(std::span<const std::uint8_t> bytes,
                                              const FeatureSchema& schema) {
  ByteReader r(verify_crc_trailer(bytes, "RAXF partition"));
  for (char c : kMagic) {
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(c)) {
      throw DataError("bad_magic", "not a RAXF partition file");
    }
  }
  if (const auto version = r.get<std::uint16_t>(); version != kFormatVersion) {
    throw DataError("bad_version", "unsupported RAXF version " + std::to_string(version));
  }
  if (const auto h = r.get<std::uint64_t>(); h != schema.hash()) {
    throw DataError("schema_mismatch", "partition schema " + hash_hex(h) +
                                           " does not match expected " + hash_hex(schema.hash()));
  }
  const auto n = static_cast<std::size_t>(r.get<std::uint64_t>());
  if (n > r.remaining()) throw DataError("truncated", "RAXF row count exceeds file size");
  std::vector<EventFeatureRow> rows(n);
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto bitmap = r.get_bytes((n + 7) / 8);
    for (std::size_t i = 0; i < n; ++i) {
      rows[i].missing[j] = (bitmap[i / 8] >> (i % 8)) & 1u ? 0 : 1;
    }
    switch (schema[j].kind) {
      case FeatureKind::Numeric:
        for (std::size_t i = 0; i < n; ++i) rows[i].values[j] = r.get<double>();
        break;
      case FeatureKind::Binary:
        for (std::size_t i = 0; i < n; ++i) {
          const auto b = r.get<std::uint8_t>();
          if (b > 1) throw DataError("bad_value", schema[j].name + " byte is not 0/1");
          rows[i].values[j] = b;
        }
        break;
      case FeatureKind::CategoricalCode:
        for (std::size_t i = 0; i < n; ++i) rows[i].values[j] = r.get<std::int32_t>();
        break;
    }
  }
  for (auto& row : rows) row.collision_id = static_cast<std::int64_t>(r.get<std::uint64_t>());
  for (auto& row : rows) row.timestamp = r.get<std::int64_t>();
  if (r.remaining() != 0) throw DataError("trailing_bytes", "RAXF file has trailing bytes");
  return rows;
}

namespace {

// Labels and contributing factors travel in a JSON-lines sidecar, one line
// per row in partition order.
std::string encode_sidecar(std::span<const EventFeatureRow> rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::json line = {{"collision_id", r.collision_id},
                           {"label", static_cast<int>(r.label)},
                           {"factors", r.factors}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

void apply_sidecar(const std::string& text, std::vector<EventFeatureRow>& rows) {
  std::istringstream in(text);
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (i >= rows.size()) throw DataError("bad_sidecar", "sidecar has more lines than rows");
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError("bad_sidecar", "sidecar line is not JSON");
    if (j.at("collision_id").get<std::int64_t>() != rows[i].collision_id) {
      throw DataError("bad_sidecar", "sidecar row order does not match partition");
    }
    const int label = j.at("label").get<int>();
    if (label < 0 || label > 2) throw DataError("bad_sidecar", "label outside {0,1,2}");
    rows[i].label = static_cast<SeverityLabel>(label);
    rows[i].factors = j.at("factors").get<std::vector<std::string>>();
    ++i;
  }
  if (i != rows.size()) throw DataError("bad_sidecar", "sidecar has fewer lines than rows");
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

FeatureStore::FeatureStore(fs::path root, const FeatureSchema& schema)
    : root_(std::move(root)), schema_(schema) {
  manifest_.schema_hash = schema_.hash();
  const auto manifest_path = root_ / kManifestFile;
  if (fs::exists(manifest_path)) {
    const auto j = nlohmann::json::parse(read_text(manifest_path), nullptr, false);
    if (j.is_discarded()) throw DataError("bad_manifest", "manifest.json is not valid JSON");
    manifest_ = Manifest::from_json(j);
    check_schema();
  }
}

void FeatureStore::check_schema() const {
  if (manifest_.schema_hash != schema_.hash()) {
    throw DataError("schema_mismatch", "store schema " + hash_hex(manifest_.schema_hash) +
                                           " does not match expected " + hash_hex(schema_.hash()));
  }
}

std::size_t FeatureStore::row_count() const {
  std::size_t n = 0;
  for (const auto& p : manifest_.partitions) n += p.row_count;
  return n;
}

void FeatureStore::save_manifest() const {
  write_text_atomic(root_ / kSchemaFile, schema_.to_json().dump(2) + "\n");
  write_text_atomic(root_ / kManifestFile, manifest_.to_json().dump(2) + "\n");
}

const Manifest& FeatureStore::write_partition(std::span<const EventFeatureRow> rows,
                                              PartitionKey key) {
  check_schema();
  if (key.month < 1 || key.month > 12) throw DataError("bad_partition", "month must be 1..12");
  std::vector<EventFeatureRow> sorted(rows.begin(), rows.end());
  for (const auto& r : sorted) {
    if (r.timestamp < key.start() || r.timestamp >= key.end()) {
      throw DataError("timestamp_outside_partition",
                      "row " + std::to_string(r.collision_id) + " at " +
                          format_timestamp(r.timestamp) + " does not belong to partition " +
                          key.relative_dir());
    }
    if (r.values.size() != schema_.size() || r.missing.size() != schema_.size()) {
      throw DataError("schema_mismatch", "row width does not match the store schema");
    }
  }
  std::sort(sorted.begin(), sorted.end(), row_time_less);

  const auto bytes = encode_partition(sorted, schema_);
  const auto sidecar = encode_sidecar(sorted);
  const std::string rel = key.relative_dir() + "/" + kPartFile;
  // Sidecar first, data file second, manifest last.
  write_text_atomic(root_ / key.relative_dir() / kSidecarFile, sidecar);
  write_file_atomic(root_ / rel, bytes);

  PartitionEntry entry;
  entry.key = key;
  entry.row_count = sorted.size();
  entry.min_timestamp = sorted.empty() ? key.start() : sorted.front().timestamp;
  entry.max_timestamp = sorted.empty() ? key.start() : sorted.back().timestamp;
  entry.checksum = file_checksum(bytes);
  entry.sidecar_checksum = crc32({reinterpret_cast<const std::uint8_t*>(sidecar.data()),
                                  sidecar.size()});
  entry.path = rel;

  auto& parts = manifest_.partitions;
  auto it = std::lower_bound(parts.begin(), parts.end(), key,
                             [](const PartitionEntry& e, const PartitionKey& k) { return e.key < k; });
  if (it != parts.end() && it->key == key) *it = entry;
  else parts.insert(it, entry);
  save_manifest();
  return manifest_;
}

const Manifest& FeatureStore::write_rows(std::span<const EventFeatureRow> rows) {
  std::map<PartitionKey, std::vector<EventFeatureRow>> groups;
  for (const auto& r : rows) groups[PartitionKey::of(r.timestamp)].push_back(r);
  for (const auto& [key, group] : groups) write_partition(group, key);
  if (groups.empty()) save_manifest();
  return manifest_;
}

std::vector<EventFeatureRow> FeatureStore::read_partition(const PartitionEntry& entry) const {
  check_schema();
  const auto bytes = read_file_bytes(root_ / entry.path);
  if (file_checksum(bytes) != entry.checksum) {
    throw DataError("checksum_mismatch", "partition " + entry.path + " does not match manifest checksum");
  }
  auto rows = decode_partition(bytes, schema_);
  if (rows.size() != entry.row_count) {
    throw DataError("row_count_mismatch", "partition " + entry.path + " row count differs from manifest");
  }
  const auto sidecar_path = root_ / entry.key.relative_dir() / kSidecarFile;
  const auto sidecar = read_text(sidecar_path);
  if (crc32({reinterpret_cast<const std::uint8_t*>(sidecar.data()), sidecar.size()}) !=
      entry.sidecar_checksum) {
    throw DataError("checksum_mismatch", "sidecar for " + entry.path + " does not match manifest");
  }
  apply_sidecar(sidecar, rows);
  return rows;
}

std::vector<EventFeatureRow> FeatureStore::query_window(std::int64_t start, std::int64_t end) const {
  std::vector<EventFeatureRow> out;
  if (start >= end) return out;
  for (const auto& p : manifest_.partitions) {
    if (!(p.key.start() < end && start < p.key.end())) continue;
    for (auto& r : read_partition(p)) {
      if (r.timestamp >= start && r.timestamp < end) out.push_back(std::move(r));
    }
  }
  std::sort(out.begin(), out.end(), row_time_less);
  return out;
}

std::vector<EventFeatureRow> FeatureStore::all_rows() const {
  std::vector<EventFeatureRow> out;
  for (const auto& p : manifest_.partitions) {
    auto rows = read_partition(p);
    out.insert(out.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  }
  std::sort(out.begin(), out.end(), row_time_less);
  return out;
}

TemporalSplit FeatureStore::temporal_split(const SplitSpec& spec) const {
  return rax::temporal_split(all_rows(), spec);
}

std::vector<EventFeatureRow> FeatureStore::rolling_window(int months) const {
  if (months < 1) throw ConfigError("bad_window", "rolling window needs at least one month");
  const auto& parts = manifest_.partitions;
  if (parts.empty()) return {};
  const auto first = parts.size() > static_cast<std::size_t>(months)
                         ? parts.size() - static_cast<std::size_t>(months)
                         : 0;
  return query_window(parts[first].key.start(), parts.back().key.end());
}

void FeatureStore::verify() const {
  check_schema();
  for (const auto& p : manifest_.partitions) {
    const auto path = root_ / p.path;
    if (!fs::exists(path)) throw DataError("missing_partition", "partition file " + p.path + " is missing");
    if (file_checksum(read_file_bytes(path)) != p.checksum) {
      throw DataError("checksum_mismatch", "partition " + p.path + " does not match manifest checksum");
    }
  }
}

}  // namespace rax
