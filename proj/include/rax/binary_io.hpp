#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rax/error.hpp"

namespace rax {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  void put_bytes(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

  // Appends the CRC-32 of everything written so far.
  void put_crc_trailer() { put<std::uint32_t>(crc32(buf_)); }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    require(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("truncated", "unexpected end of binary data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Verifies and strips the 4-byte CRC-32 trailer. Throws DataError on mismatch.
std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> bytes,
                                                 const std::string& what);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes to "<path>.tmp" and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace rax
