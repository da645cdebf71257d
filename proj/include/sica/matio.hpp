#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sica/matrix.hpp"

namespace sica {

// Matrix container file (".matb"):
//   bytes 0-3  magic "MATB"
//   byte  4    version (1)
//   bytes 5-7  reserved, zero
//   u64 LE     rows
//   u64 LE     cols
//   rows*cols doubles, IEEE-754 little-endian, row-major
namespace matb {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace matb

inline void write_matb(const std::filesystem::path& path, const Matrix& m) {
  std::string buf;
  buf.reserve(24 + m.entries.size() * 8);
  buf += "MATB";
  buf.push_back('\x01');
  buf.append(3, '\x00');
  matb::put_u64_le(buf, m.rows);
  matb::put_u64_le(buf, m.cols);
  for (double x : m.entries) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    matb::put_u64_le(buf, bits);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::invalid_argument("write_matb: cannot open " + path.string());
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::invalid_argument("write_matb: short write to " + path.string());
}

inline Matrix read_matb(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("read_matb: cannot open " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 24) throw std::invalid_argument("read_matb: truncated header in " + path.string());
  if (std::memcmp(raw.data(), "MATB", 4) != 0)
    throw std::invalid_argument("read_matb: bad magic in " + path.string());
  if (raw[4] != 1) throw std::invalid_argument("read_matb: unsupported version in " + path.string());
  if (raw[5] != 0 || raw[6] != 0 || raw[7] != 0)
    throw std::invalid_argument("read_matb: nonzero reserved bytes in " + path.string());
  const std::uint64_t rows = matb::get_u64_le(raw.data() + 8);
  const std::uint64_t cols = matb::get_u64_le(raw.data() + 16);
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("read_matb: zero dimension in " + path.string());
  const std::uint64_t count = rows * cols;
  if (raw.size() != 24 + count * 8)
    throw std::invalid_argument("read_matb: payload length mismatch in " + path.string());
  std::vector<double> entries(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t bits = matb::get_u64_le(raw.data() + 24 + i * 8);
    double x;
    std::memcpy(&x, &bits, 8);
    entries[i] = x;
  }
  // The Matrix constructor re-validates finiteness, rejecting NaN/Inf payloads.
  return Matrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                std::move(entries));
}

}  // namespace sica
