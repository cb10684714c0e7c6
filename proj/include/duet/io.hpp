#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "duet/common.hpp"

namespace duet::io {

namespace fs = std::filesystem;

// All file outputs go through here: write to a sibling temp file, then rename.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

// %.17g round-trips doubles and never depends on locale or <format> support.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// --- little-endian scalar packing ---------------------------------------

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Bounds-checked cursor over a byte buffer; short reads raise corruption errors.
class Reader {
 public:
  Reader(const std::string& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  void expect_end() const {
    if (!at_end())
      throw std::runtime_error("corrupted file (trailing bytes): " + origin_);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error("corrupted file (truncated): " + origin_);
  }

  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

// --- embedding matrix file -----------------------------------------------
// Header: u32 row count, u32 dim; then rows of little-endian f32.

struct Matrix {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  std::vector<float> data;  // row-major
};

inline void write_matrix(const fs::path& path, std::uint32_t rows,
                         std::uint32_t dim, std::span<const float> data) {
  if (data.size() != static_cast<std::size_t>(rows) * dim)
    throw ValidationError("matrix payload does not match header shape");
  std::string out;
  out.reserve(8 + data.size() * 4);
  put_u32(out, rows);
  put_u32(out, dim);
  for (float v : data) put_f32(out, v);
  write_file_atomic(path, out);
}

inline Matrix read_matrix(const fs::path& path) {
  const std::string bytes = read_file(path);
  Reader rd(bytes, path.string());
  Matrix m;
  m.rows = rd.u32();
  m.dim = rd.u32();
  m.data.resize(static_cast<std::size_t>(m.rows) * m.dim);
  for (auto& v : m.data) v = rd.f32();
  rd.expect_end();
  return m;
}

}  // namespace duet::io
