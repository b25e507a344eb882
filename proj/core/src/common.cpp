#include "contmask/common.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace contmask {

long BinaryMask::area() const {
  long n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

bool intersects(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw IntegrityError("mask shape mismatch");
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (a.bits[i] && b.bits[i]) return true;
  }
  return false;
}

void require_disjoint(std::span<const Segment> segments, const char* what) {
  if (segments.empty()) return;
  const auto& first = segments.front().mask;
  std::vector<std::uint8_t> owned(first.size(), 0);
  for (const auto& s : segments) {
    if (!s.mask.same_shape(first)) {
      throw IntegrityError(std::string(what) + ": segment shapes differ");
    }
    for (std::size_t i = 0; i < owned.size(); ++i) {
      if (!s.mask.bits[i]) continue;
      if (owned[i]) throw IntegrityError(std::string(what) + ": overlapping segments");
      owned[i] = 1;
    }
  }
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return lo + static_cast<int>(x % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace contmask
