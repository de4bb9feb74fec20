#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nowcast::io {

// File formats are little-endian; raw reads/writes below rely on the host
// matching.
static_assert(std::endian::native == std::endian::little,
              "binary file I/O assumes a little-endian host");

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof v);
}

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
  write_bytes(os, v.data(), v.size() * sizeof(T));
}

inline void write_str16(std::ostream& os, const std::string& s) {
  if (s.size() > std::numeric_limits<uint16_t>::max()) {
    throw std::runtime_error("string too long for 16-bit length prefix");
  }
  write_pod<uint16_t>(os, static_cast<uint16_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) {
    throw std::runtime_error(std::string("truncated file while reading ") + what);
  }
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  read_bytes(is, &v, sizeof v, what);
  return v;
}

template <typename T>
std::vector<T> read_vec(std::istream& is, size_t count, const char* what) {
  std::vector<T> v(count);
  read_bytes(is, v.data(), count * sizeof(T), what);
  return v;
}

inline std::string read_str16(std::istream& is, const char* what) {
  const auto n = read_pod<uint16_t>(is, what);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace nowcast::io
