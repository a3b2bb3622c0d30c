#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rax/schema.hpp"

namespace rax {

struct PartitionKey {
  int year = 1970;
  int month = 1;

  auto operator<=>(const PartitionKey&) const = default;

  static PartitionKey of(std::int64_t timestamp);
  std::int64_t start() const;  // inclusive
  std::int64_t end() const;    // exclusive
  PartitionKey prev() const;
  std::string relative_dir() const;  // "year=YYYY/month=MM"
};

struct PartitionEntry {
  PartitionKey key;
  std::uint64_t row_count = 0;
  std::int64_t min_timestamp = 0;
  std::int64_t max_timestamp = 0;
  std::uint32_t checksum = 0;          // CRC-32 of the partition file before its trailer
  std::uint32_t sidecar_checksum = 0;  // CRC-32 of the label/factor sidecar
  std::string path;            // relative to the store root
};

struct Manifest {
  std::uint64_t schema_hash = 0;
  std::vector<PartitionEntry> partitions;  // sorted by key, keys unique

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

struct SplitSpec {
  std::size_t n_test = 5000;
  std::size_t n_train = 20000;
};

struct TemporalSplit {
  std::vector<EventFeatureRow> train;
  std::vector<EventFeatureRow> test;
};

// Total order used for every temporal operation: (timestamp, collision_id).
bool row_time_less(const EventFeatureRow& a, const EventFeatureRow& b);

// Test = latest n_test rows; train = the n_train rows just before them.
// Throws DataError when fewer than n_train + n_test rows are available.
TemporalSplit temporal_split(std::vector<EventFeatureRow> rows, const SplitSpec& spec);

// RAXF partition codec.
std::vector<std::uint8_t> encode_partition(std::span<const EventFeatureRow> rows,
                                           const FeatureSchema& schema);
std::vector<EventFeatureRow> decode_partition(std::span<const std::uint8_t> bytes,
                                              const FeatureSchema& schema);

// Month-partitioned store with a JSON manifest. Single writer; readers only
// ever see fully renamed partition files.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root,
                        const FeatureSchema& schema = canonical_schema());

  const std::filesystem::path& root() const { return root_; }
  const Manifest& manifest() const { return manifest_; }
  const FeatureSchema& schema() const { return schema_; }
  std::size_t row_count() const;

  // Replaces the partition for `key` (atomic rename), then rewrites the manifest.
  const Manifest& write_partition(std::span<const EventFeatureRow> rows, PartitionKey key);
  // Groups rows by month and writes each group.
  const Manifest& write_rows(std::span<const EventFeatureRow> rows);

  std::vector<EventFeatureRow> read_partition(const PartitionEntry& entry) const;

  // Rows with start <= t < end, ordered by (timestamp, collision_id).
  std::vector<EventFeatureRow> query_window(std::int64_t start, std::int64_t end) const;
  std::vector<EventFeatureRow> all_rows() const;
  TemporalSplit temporal_split(const SplitSpec& spec) const;
  // Rows of the latest `months` partition keys present in the manifest.
  std::vector<EventFeatureRow> rolling_window(int months) const;

  // Every listed file exists and matches its checksum.
  void verify() const;

 private:
  void check_schema() const;
  void save_manifest() const;

  std::filesystem::path root_;
  FeatureSchema schema_;
  Manifest manifest_;
};

}  // namespace rax
