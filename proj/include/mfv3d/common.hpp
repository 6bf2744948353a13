#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mfv3d {

using Vec3 = Eigen::Vector3d;

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// catch one type and map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; message names the offending line where known.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Input format recognized but not supported (e.g. non-triangular OFF face).
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Input is valid but geometrically unusable (all points coincident, zero-area mesh).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// API contract violation: wrong call order or wrong object kind.
class MisuseError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Thrown when an operation would produce an empty point cloud.
class EmptyResultError : public Error {
 public:
  using Error::Error;
};

// Raised by recover_plane when mass around the Gaussian is symmetric and the
// normal direction is unrecoverable.
class DegeneratePlaneError : public Error {
 public:
  explicit DegeneratePlaneError(const std::string& msg, double rho0) : Error(msg), rho0(rho0) {}
  double rho0;
};

class NoPointPresentError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, int epoch, double learning_rate)
      : Error(msg), epoch(epoch), learning_rate(learning_rate) {}
  int epoch;
  double learning_rate;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// One independent PRNG stream per (seed, operation tag) pair, so different
// operations fed the same user seed do not share a stream.
inline std::mt19937_64 rng_for(std::uint64_t seed, std::string_view tag) {
  return std::mt19937_64(detail::splitmix64(seed ^ detail::fnv1a(tag)));
}

inline std::mt19937_64 rng_for(std::uint64_t seed) { return std::mt19937_64(detail::splitmix64(seed)); }

}  // namespace mfv3d
