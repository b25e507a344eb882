#include <gtest/gtest.h>

#include <set>

#include "contmask/common.hpp"

namespace contmask {
namespace {

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng c(42), d(43);
  EXPECT_NE(c.next(), d.next());
}

TEST(Rng, Ranges) {
  Rng rng(1);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const int k = rng.uniform_int(-2, 3);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 3);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(rng.uniform_int(5, 5), 5);
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(3);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  rng.shuffle(v);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 8u);
}

TEST(MixSeed, SeparatesStreams) {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::uint64_t k = 0; k < 100; ++k) seeds.insert(mix_seed(s, k));
  EXPECT_EQ(seeds.size(), 400u);
  EXPECT_EQ(mix_seed(9, 2), mix_seed(9, 2));
}

TEST(Masks, DisjointnessCheck) {
  Segment a{1, BinaryMask(2, 2)}, b{2, BinaryMask(2, 2)};
  a.mask.at(0, 0) = 1;
  b.mask.at(1, 1) = 1;
  EXPECT_FALSE(intersects(a.mask, b.mask));
  std::vector<Segment> ok{a, b};
  EXPECT_NO_THROW(require_disjoint(ok, "test"));
  b.mask.at(0, 0) = 1;
  EXPECT_TRUE(intersects(a.mask, b.mask));
  std::vector<Segment> clash{a, b};
  EXPECT_THROW(require_disjoint(clash, "test"), IntegrityError);
  std::vector<Segment> shapes{a, {3, BinaryMask(3, 2)}};
  EXPECT_THROW(require_disjoint(shapes, "test"), IntegrityError);
  EXPECT_EQ(b.mask.area(), 2);
}

}  // namespace
}  // namespace contmask
