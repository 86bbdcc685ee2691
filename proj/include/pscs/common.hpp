#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pscs {

// Base of every error thrown by the library. The C API maps subclasses onto
// status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A query with no tokens left after preprocessing.
class EmptyQuery : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Malformed file, bad magic, version mismatch, invalid serialized record.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Numerical failure during training (NaN/Inf loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

// The random stream used everywhere. mt19937_64 output is fully specified by
// the standard, and the helpers below avoid the implementation-defined
// standard distributions, so seeded runs agree across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) {
    // Rejection sampling on the top of the range.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % bound;
  }

  // Uniform float in [0, 1).
  float uniform() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Derive an independent child stream.
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used for per-snippet seeds and the validation split.
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace pscs
