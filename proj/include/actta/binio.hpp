#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "actta/errors.hpp"

namespace actta::binio {

// Little-endian primitives for the binary file formats. Serialization is
// byte-explicit so files are identical across hosts regardless of native
// endianness.

inline void write_u8(std::ostream& os, std::uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void write_f64(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  os.write(b, 8);
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& v) {
  for (double d : v) write_f64(os, d);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  char c;
  if (!is.get(c)) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("truncated while reading ") + what);
  }
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  char b[4];
  if (!is.read(b, 4)) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("truncated while reading ") + what);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i]))
         << (8 * i);
  }
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  char b[8];
  if (!is.read(b, 8)) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("truncated while reading ") + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i]))
         << (8 * i);
  }
  return std::bit_cast<double>(v);
}

inline std::vector<double> read_f64_array(std::istream& is, std::size_t n,
                                          const char* what) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = read_f64(is, what);
  return v;
}

inline void expect_magic(std::istream& is, const char magic[4],
                         const char* format_name) {
  char b[4];
  if (!is.read(b, 4)) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("file too short for a ") + format_name +
                          " header");
  }
  for (int i = 0; i < 4; ++i) {
    if (b[i] != magic[i]) {
      throw FormatError(FormatError::Kind::kBadHeader,
                        std::string("bad magic for ") + format_name);
    }
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

}  // namespace actta::binio
