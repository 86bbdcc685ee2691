#pragma once

// Little-endian field I/O shared by the checkpoint and index formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pscs/common.hpp"

namespace pscs::binio {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void put_string16(std::ostream& out, const std::string& s) {
  if (s.size() > 0xffff) throw InvalidArgument("string too long for a 16-bit length: " + s.substr(0, 32));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

inline void put_string32(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(what_ + ": truncated file");
  }

  template <typename T>
  T get() {
    T value;
    bytes(&value, sizeof(T));
    return value;
  }

  std::string string16() { return string_of(get<std::uint16_t>()); }
  std::string string32() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 30)) throw FormatError(what_ + ": implausible string length");
    return string_of(n);
  }

  void floats(std::vector<float>& out, std::size_t n) {
    out.resize(n);
    if (n) bytes(out.data(), n * sizeof(float));
  }

  void magic(const char (&expected)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, expected, 4) != 0)
      throw FormatError(what_ + ": bad magic (expected '" + std::string(expected, 4) + "')");
  }

  void version(std::uint32_t expected) {
    const auto v = get<std::uint32_t>();
    if (v != expected)
      throw FormatError(what_ + ": unsupported version " + std::to_string(v) + " (expected " +
                        std::to_string(expected) + ")");
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& what() const { return what_; }

 private:
  std::string string_of(std::size_t n) {
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }

  std::istream& in_;
  std::string what_;
};

}  // namespace pscs::binio
