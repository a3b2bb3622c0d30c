#include "rax/binary_io.hpp"

#include <fstream>
#include <iterator>

#include <zlib.h>

namespace rax {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::span<const std::uint8_t> verify_crc_trailer(std::span<const std::uint8_t> bytes,
                                                 const std::string& what) {
  if (bytes.size() < 4) throw DataError("truncated", what + ": file too short");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32(body) != stored) throw DataError("checksum_mismatch", what + ": CRC-32 mismatch");
  return body;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("unreadable_file", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("unwritable_file", "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("unwritable_file", "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace rax
