#include <doctest.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "rax/binary_io.hpp"
#include "rax/error.hpp"
#include "rax/store.hpp"
#include "rax/time.hpp"

using namespace rax;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("rax_store_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

EventFeatureRow make_row(std::int64_t id, std::int64_t ts, std::mt19937_64& rng) {
  EventFeatureRow r;
  r.collision_id = id;
  r.timestamp = ts;
  std::uniform_real_distribution<double> u(0, 1);
  const auto& schema = canonical_schema();
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    switch (schema[j].kind) {
      case FeatureKind::Numeric: r.values[j] = u(rng); break;
      case FeatureKind::Binary: r.values[j] = u(rng) < 0.5 ? 1 : 0; break;
      case FeatureKind::CategoricalCode: r.values[j] = std::floor(u(rng) * 6); break;
    }
    if (u(rng) < 0.1) {
      r.missing[j] = 1;
      r.values[j] = 0;
    }
  }
  r.label = static_cast<SeverityLabel>(id % 3);
  if (id % 4 == 0) r.factors = {"Unsafe Speed", "Driver \"Inattention\""};
  return r;
}

std::vector<EventFeatureRow> random_rows(std::size_t n, std::int64_t t0, std::int64_t span,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> t(0, span - 1);
  std::vector<EventFeatureRow> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(make_row(1000 + i, t0 + t(rng) / 60 * 60, rng));
  return rows;
}

bool same_row(const EventFeatureRow& a, const EventFeatureRow& b) {
  return a.collision_id == b.collision_id && a.timestamp == b.timestamp && a.label == b.label &&
         a.values == b.values && a.missing == b.missing && a.factors == b.factors;
}

}  // namespace

TEST_CASE("partition codec round trip") {
  std::mt19937_64 rng(3);
  std::vector<EventFeatureRow> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(make_row(i, make_timestamp(2025, 1, 1 + i % 28), rng));
  const auto bytes = encode_partition(rows, canonical_schema());
  CHECK_NOTHROW(verify_crc_trailer(bytes, "partition"));
  auto back = decode_partition(bytes, canonical_schema());
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].collision_id == rows[i].collision_id);
    CHECK(back[i].timestamp == rows[i].timestamp);
    CHECK(back[i].missing == rows[i].missing);
    for (std::size_t j = 0; j < kNumFeatures; ++j)
      if (!rows[i].missing[j]) CHECK(back[i].values[j] == rows[i].values[j]);
  }

  auto corrupt = bytes;
  corrupt[corrupt.size() / 2] ^= 0x5a;
  CHECK_THROWS_AS(decode_partition(corrupt, canonical_schema()), DataError);
}

TEST_CASE("partition key arithmetic") {
  const PartitionKey k{2025, 1};
  CHECK(k.start() == make_timestamp(2025, 1, 1));
  CHECK(k.end() == make_timestamp(2025, 2, 1));
  CHECK(k.prev() == PartitionKey{2024, 12});
  CHECK(k.relative_dir() == "year=2025/month=01");
  CHECK(PartitionKey::of(make_timestamp(2024, 12, 31, 23, 59)) == PartitionKey{2024, 12});
}

TEST_CASE("store write, read and manifest consistency") {
  TempDir dir;
  auto rows = random_rows(300, make_timestamp(2025, 1, 1), 90LL * 86400, 5);
  {
    FeatureStore store(dir.path);
    store.write_rows(rows);
    CHECK(store.row_count() == rows.size());
    store.verify();
  }
  FeatureStore reopened(dir.path);
  CHECK(reopened.manifest().schema_hash == canonical_schema().hash());
  CHECK(reopened.row_count() == rows.size());
  for (const auto& p : reopened.manifest().partitions) {
    const auto part = reopened.read_partition(p);
    CHECK(part.size() == p.row_count);
    for (const auto& r : part) {
      CHECK(PartitionKey::of(r.timestamp) == p.key);
      CHECK(r.timestamp >= p.min_timestamp);
      CHECK(r.timestamp <= p.max_timestamp);
    }
  }

  auto all = reopened.all_rows();
  auto expected = rows;
  std::sort(expected.begin(), expected.end(), row_time_less);
  REQUIRE(all.size() == expected.size());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(same_row(all[i], expected[i]));
}

TEST_CASE("write_partition replaces and validates month boundaries") {
  TempDir dir;
  FeatureStore store(dir.path);
  const PartitionKey key{2025, 3};
  auto rows = random_rows(20, key.start(), key.end() - key.start(), 9);
  store.write_partition(rows, key);
  store.write_partition(std::span(rows).first(5), key);
  REQUIRE(store.manifest().partitions.size() == 1);
  CHECK(store.manifest().partitions[0].row_count == 5);
  CHECK(store.row_count() == 5);

  auto outside = random_rows(3, PartitionKey{2025, 4}.start(), 86400, 10);
  const auto before = read_file_bytes(dir.path / "manifest.json");
  CHECK_THROWS_AS(store.write_partition(outside, key), DataError);
  CHECK(read_file_bytes(dir.path / "manifest.json") == before);
  CHECK(store.row_count() == 5);

  auto wrong_width = rows;
  wrong_width[0].values.pop_back();
  CHECK_THROWS_AS(store.write_partition(wrong_width, key), DataError);
}

TEST_CASE("query_window matches a brute-force filter") {
  TempDir dir;
  FeatureStore store(dir.path);
  const auto t0 = make_timestamp(2024, 11, 1);
  auto rows = random_rows(500, t0, 120LL * 86400, 17);
  store.write_rows(rows);

  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::int64_t> t(t0 - 86400, t0 + 125LL * 86400);
  for (int trial = 0; trial < 25; ++trial) {
    std::int64_t a = t(rng), b = t(rng);
    if (a > b) std::swap(a, b);
    if (trial == 0) a = b = t0 + 86400;
    const auto got = store.query_window(a, b);
    std::vector<EventFeatureRow> want;
    for (const auto& r : rows)
      if (r.timestamp >= a && r.timestamp < b) want.push_back(r);
    std::sort(want.begin(), want.end(), row_time_less);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].collision_id == want[i].collision_id);
  }
}

TEST_CASE("temporal split sizes and ordering") {
  std::mt19937_64 rng(1);
  auto rows = random_rows(500, make_timestamp(2025, 1, 1), 40LL * 86400, 31);
  // Equal timestamps break ties by collision_id.
  rows[10].timestamp = rows[11].timestamp;
  auto split = temporal_split(rows, SplitSpec{100, 300});
  REQUIRE(split.test.size() == 100);
  REQUIRE(split.train.size() == 300);
  CHECK(std::is_sorted(split.train.begin(), split.train.end(), row_time_less));
  CHECK(std::is_sorted(split.test.begin(), split.test.end(), row_time_less));
  CHECK(row_time_less(split.train.back(), split.test.front()));

  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), row_time_less);
  CHECK(split.test.back().collision_id == sorted.back().collision_id);
  CHECK(split.train.front().collision_id == sorted[100].collision_id);

  try {
    temporal_split(rows, SplitSpec{300, 300});
    FAIL("expected insufficient_rows");
  } catch (const DataError& e) {
    CHECK(e.code() == "insufficient_rows");
  }
}

TEST_CASE("rolling window returns the latest months") {
  TempDir dir;
  FeatureStore store(dir.path);
  std::vector<EventFeatureRow> rows;
  std::mt19937_64 rng(2);
  for (int m = 1; m <= 6; ++m)
    for (int i = 0; i < 10; ++i) rows.push_back(make_row(m * 100 + i, make_timestamp(2025, m, 1 + i), rng));
  store.write_rows(rows);
  const auto last = store.rolling_window(2);
  CHECK(last.size() == 20);
  for (const auto& r : last) CHECK(to_civil(r.timestamp).month >= 5);
}

TEST_CASE("corrupted partition file is detected") {
  TempDir dir;
  FeatureStore store(dir.path);
  auto rows = random_rows(40, make_timestamp(2025, 2, 1), 20LL * 86400, 4);
  store.write_rows(rows);
  const auto path = dir.path / store.manifest().partitions[0].path;
  auto bytes = read_file_bytes(path);
  bytes[bytes.size() / 3] ^= 0xff;
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(store.verify(), DataError);
  CHECK_THROWS_AS(store.all_rows(), DataError);
}

TEST_CASE("schema mismatch on reopen is rejected") {
  TempDir dir;
  {
    FeatureStore store(dir.path);
    store.write_rows(random_rows(5, make_timestamp(2025, 2, 1), 86400, 4));
  }
  auto features = canonical_schema().features();
  std::swap(features[0], features[1]);
  CHECK_THROWS_AS(FeatureStore(dir.path, FeatureSchema{features}), DataError);
}

TEST_CASE("no prefix of a partition file decodes") {
  const auto rows = random_rows(30, make_timestamp(2025, 5, 1), 10LL * 86400, 8);
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end(), row_time_less);
  const auto bytes = encode_partition(sorted, canonical_schema());
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const std::span<const std::uint8_t> prefix(bytes.data(), len);
    CHECK_THROWS_AS(decode_partition(prefix, canonical_schema()), DataError);
  }
  CHECK(decode_partition(bytes, canonical_schema()).size() == 30);
}

TEST_CASE("interrupted rewrites leave the previous partition or a detected failure") {
  TempDir dir;
  const auto key = PartitionKey{2025, 6};
  const auto old_rows = random_rows(50, key.start(), 20LL * 86400, 9);
  const auto new_rows = random_rows(70, key.start(), 20LL * 86400, 10);
  auto sorted_new = new_rows;
  std::sort(sorted_new.begin(), sorted_new.end(), row_time_less);
  const auto new_bytes = encode_partition(sorted_new, canonical_schema());
  {
    FeatureStore store(dir.path);
    store.write_partition(old_rows, key);
  }
  const auto part = dir.path / key.relative_dir() / "part.raxf";
  const auto old_bytes = read_file_bytes(part);
  auto write_raw = [](const fs::path& p, std::span<const std::uint8_t> b) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t cut = rng() % new_bytes.size();
    const std::span<const std::uint8_t> torn(new_bytes.data(), cut);

    // Crash while the staging file is written: the live file is untouched.
    write_raw(fs::path(part.string() + ".tmp"), torn);
    {
      FeatureStore store(dir.path);
      CHECK_NOTHROW(store.verify());
      CHECK(store.all_rows().size() == old_rows.size());
    }
    fs::remove(fs::path(part.string() + ".tmp"));

    // A torn file in the live position never passes the checksum.
    write_raw(part, torn);
    {
      FeatureStore store(dir.path);
      CHECK_THROWS_AS(store.verify(), DataError);
      CHECK_THROWS_AS(store.all_rows(), DataError);
    }
    write_raw(part, old_bytes);
  }

  // Crash between the data rename and the manifest update: detected.
  write_raw(part, new_bytes);
  FeatureStore store(dir.path);
  CHECK_THROWS_AS(store.verify(), DataError);
}
