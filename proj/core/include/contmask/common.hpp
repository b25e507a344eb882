#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace contmask {

// Error taxonomy. Everything derives from Error so callers can catch broadly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct PlacementError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

/// Row-major H×W binary grid.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t size() const { return bits.size(); }
  std::uint8_t& at(int h, int w) { return bits[static_cast<std::size_t>(h) * width + w]; }
  std::uint8_t at(int h, int w) const { return bits[static_cast<std::size_t>(h) * width + w]; }
  long area() const;
  bool same_shape(const BinaryMask& other) const {
    return height == other.height && width == other.width;
  }
  bool operator==(const BinaryMask&) const = default;
};

/// True if any pixel is set in both masks.
bool intersects(const BinaryMask& a, const BinaryMask& b);

/// A (class, mask) pair. Used for ground truth and for inferred segments alike.
struct Segment {
  int class_id = 0;
  BinaryMask mask;
  bool operator==(const Segment&) const = default;
};
using GtSegment = Segment;

/// Throws IntegrityError if any two masks overlap or differ in shape.
void require_disjoint(std::span<const Segment> segments, const char* what);

/// Portable random stream. std distributions are implementation-defined, so
/// sampling is done by hand on top of the (fully specified) mt19937_64 engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i - 1)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer; derives well-separated child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace contmask
