#include <gtest/gtest.h>

#include <cmath>

#include "contmask/distill.hpp"

namespace contmask {
namespace {

using std::log;

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix random_simplex_rows(Rng& rng, int n, int k, double floor = 0.0) {
  Matrix m(n, k);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() + floor;
  for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

const std::vector<int> kNewThree{3};

TEST(UnbiasedProb, Examples) {
  // Layout [∅, c1, c2, c3] with c3 new.
  const auto folded = unbiased_prob(std::vector<double>{0.4, 0.2, 0.3, 0.1}, kNewThree);
  ASSERT_EQ(folded.size(), 3u);
  EXPECT_NEAR(folded[0], 0.5, 1e-15);
  EXPECT_EQ(folded[1], 0.2);
  EXPECT_EQ(folded[2], 0.3);

  const std::vector<double> p{0.1, 0.6, 0.3};
  EXPECT_EQ(unbiased_prob(p, {}), p);

  const auto all_new = unbiased_prob(std::vector<double>{0.0, 0.0, 1.0}, std::vector<int>{2});
  EXPECT_EQ(all_new, (std::vector<double>{1.0, 0.0}));
}

TEST(AdaptiveWeight, Examples) {
  EXPECT_EQ(adaptive_weight(std::vector<double>{1.0, 0.0}), 0.0);
  EXPECT_EQ(adaptive_weight(std::vector<double>{0.0, 1.0}), 1.0);
  EXPECT_EQ(adaptive_weight(std::vector<double>{0.5, 0.5}), 0.25);
}

TEST(KdLoss, TwoOutputHandInstance) {
  const Matrix probs = rows({{0.4, 0.2, 0.3, 0.1}, {0.1, 0.5, 0.1, 0.3}});
  const Matrix old = rows({{0.3, 0.3, 0.4}, {0.2, 0.6, 0.2}});
  // Folded: [0.5, 0.2, 0.3] and [0.4, 0.5, 0.1].
  const double expect = -0.5 * (0.3 * log(0.5 / 0.3) + 0.3 * log(0.2 / 0.3) + 0.4 * log(0.3 / 0.4) +
                                0.2 * log(0.4 / 0.2) + 0.6 * log(0.5 / 0.6) + 0.2 * log(0.1 / 0.2));
  EXPECT_NEAR(kd_loss(probs, old, kNewThree), expect, 1e-14);
}

TEST(KdLoss, ZeroWhenOldIsReproduced) {
  Rng rng(1);
  const Matrix old = random_simplex_rows(rng, 5, 4);
  Matrix probs = Matrix::Zero(5, 6);
  probs.leftCols(4) = old;
  EXPECT_NEAR(kd_loss(probs, old, std::vector<int>{4, 5}), 0.0, 1e-12);
}

TEST(KdLoss, NonNegative) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix old = random_simplex_rows(rng, 3, 3);
    const Matrix probs = random_simplex_rows(rng, 3, 5);
    EXPECT_GE(kd_loss(probs, old, std::vector<int>{3, 4}), -1e-15);
  }
}

TEST(KdLoss, IgnoresVanishingOldMass) {
  const Matrix old = rows({{0.0, 1.0, 0.0}});
  const Matrix probs = rows({{0.1, 0.8, 0.05, 0.05}});
  EXPECT_NEAR(kd_loss(probs, old, kNewThree), -log(0.8), 1e-15);
}

TEST(AdLoss, MixedWeightThreeOutputs) {
  const Matrix probs = rows({{0.4, 0.2, 0.3, 0.1}, {0.1, 0.5, 0.1, 0.3}, {0.7, 0.1, 0.1, 0.1}});
  const Matrix old = rows({{0.3, 0.3, 0.4}, {0.2, 0.6, 0.2}, {0.9, 0.05, 0.05}});
  const double w1 = 0.7 * 0.7, w2 = 0.8 * 0.8, w3 = 0.1 * 0.1;
  const double kl1 = -(0.3 * log(0.5 / 0.3) + 0.3 * log(0.2 / 0.3) + 0.4 * log(0.3 / 0.4));
  const double kl2 = -(0.2 * log(0.4 / 0.2) + 0.6 * log(0.5 / 0.6) + 0.2 * log(0.1 / 0.2));
  const double kl3 = -(0.9 * log(0.8 / 0.9) + 0.05 * log(0.1 / 0.05) + 0.05 * log(0.1 / 0.05));
  const double expect = (w1 * kl1 + w2 * kl2 + w3 * kl3) / (w1 + w2 + w3);
  EXPECT_NEAR(ad_loss(probs, old, kNewThree), expect, 1e-14);
}

TEST(AdLoss, AllNoObjectIsZero) {
  const Matrix old = rows({{1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}});
  const Matrix probs = rows({{0.1, 0.5, 0.2, 0.2}, {0.3, 0.3, 0.3, 0.1}});
  Matrix grad = Matrix::Zero(2, 4);
  EXPECT_EQ(ad_loss(probs, old, kNewThree, &grad), 0.0);
  EXPECT_TRUE((grad.array() == 0.0).all());
}

TEST(AdLoss, UniformWeightsReduceToKd) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix old = random_simplex_rows(rng, 4, 3);
    // Same no-object probability everywhere gives equal weights.
    const double empty = rng.uniform(0.0, 0.9);
    for (int i = 0; i < 4; ++i) {
      const double rest = old(i, 1) + old(i, 2);
      old(i, 0) = empty;
      old(i, 1) *= (1 - empty) / rest;
      old(i, 2) *= (1 - empty) / rest;
    }
    const Matrix probs = random_simplex_rows(rng, 4, 5);
    const std::vector<int> fresh{3, 4};
    EXPECT_NEAR(ad_loss(probs, old, fresh), kd_loss(probs, old, fresh), 1e-12);
  }
}

TEST(DistillGradient, MatchesDifferences) {
  Rng rng(4);
  const Matrix old = random_simplex_rows(rng, 3, 3, 0.05);
  Matrix probs = random_simplex_rows(rng, 3, 5, 0.05);
  const std::vector<int> fresh{3, 4};
  for (int mode = 0; mode < 2; ++mode) {
    auto f = [&](const Matrix& p, Matrix* g) {
      return mode == 0 ? kd_loss(p, old, fresh, g, 2.0) : ad_loss(p, old, fresh, g, 2.0);
    };
    Matrix grad = Matrix::Zero(3, 5);
    f(probs, &grad);
    for (Eigen::Index k = 0; k < probs.size(); ++k) {
      const double saved = probs.data()[k];
      const double h = 1e-7;
      probs.data()[k] = saved + h;
      const double up = f(probs, nullptr);
      probs.data()[k] = saved - h;
      const double down = f(probs, nullptr);
      probs.data()[k] = saved;
      // The gradient is scaled, the returned loss is not.
      EXPECT_NEAR(grad.data()[k], 2.0 * (up - down) / (2 * h), 1e-6) << "mode " << mode << " entry " << k;
    }
  }
}

OldModelOutput worked_instance() {
  OldModelOutput old;
  old.height = 2;
  old.width = 2;
  // [∅, old class 1, old class 2]; p^max 0.8 for output 0 and 0.9 for output 1.
  old.class_probs = rows({{0.2, 0.8, 0.0}, {0.1, 0.0, 0.9}});
  old.masks = rows({{0.9, 0.6, 0.1, 0.1}, {0.4, 0.7, 0.8, 0.2}});
  return old;
}

BinaryMask mask2x2(std::initializer_list<int> bits) {
  BinaryMask m(2, 2);
  std::size_t i = 0;
  for (int b : bits) m.bits[i++] = static_cast<std::uint8_t>(b);
  return m;
}

TEST(PseudoLabels, WorkedInstance) {
  const std::vector<BinaryMask> gt{mask2x2({0, 0, 0, 1})};
  const auto ps = generate_pseudo_labels(worked_instance(), gt);
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].query, 0);
  EXPECT_EQ(ps[0].label, 1);
  EXPECT_EQ(ps[0].mask, mask2x2({1, 0, 0, 0}));
  EXPECT_NEAR(ps[0].confidence, 0.72, 1e-15);
  EXPECT_EQ(ps[1].query, 1);
  EXPECT_EQ(ps[1].label, 2);
  EXPECT_EQ(ps[1].mask, mask2x2({0, 1, 1, 0}));
  EXPECT_NEAR(ps[1].confidence, 0.72, 1e-15);

  const std::vector<Segment> gt_segments{{3, gt[0]}};
  const auto merged = merge_labels(gt_segments, ps);
  EXPECT_EQ(merged.size(), 3u);
  EXPECT_EQ(merged.count(LabelOrigin::ground_truth), 1u);
  EXPECT_EQ(merged.count(LabelOrigin::pseudo), 2u);
}

TEST(PseudoLabels, FullGroundTruthLeavesNothing) {
  const std::vector<BinaryMask> gt{mask2x2({1, 1, 1, 1})};
  EXPECT_TRUE(generate_pseudo_labels(worked_instance(), gt).empty());
}

TEST(PseudoLabels, NoConfidentMaskLeavesNothing) {
  OldModelOutput old;
  old.height = 2;
  old.width = 2;
  old.class_probs = rows({{0.9, 0.05, 0.05}, {0.9, 0.05, 0.05}, {0.9, 0.05, 0.05}});
  old.masks = Matrix::Constant(3, 4, 1.0 / 3.0);
  EXPECT_TRUE(generate_pseudo_labels(old, {}).empty());
}

TEST(PseudoLabels, RetentionRule) {
  // Output 0 binarizes three pixels; ground truth removes two of them.
  OldModelOutput old;
  old.height = 2;
  old.width = 2;
  old.class_probs = rows({{0.1, 0.9}});
  old.masks = rows({{0.8, 0.8, 0.8, 0.1}});
  EXPECT_TRUE(generate_pseudo_labels(old, std::vector<BinaryMask>{mask2x2({1, 1, 0, 0})}).empty());
  EXPECT_EQ(generate_pseudo_labels(old, std::vector<BinaryMask>{mask2x2({1, 0, 0, 0})}).size(), 1u);
}

TEST(PseudoLabels, RandomInvariants) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 6), k = rng.uniform_int(1, 4), h = 4, w = 5;
    OldModelOutput old;
    old.height = h;
    old.width = w;
    old.class_probs = random_simplex_rows(rng, n, k + 1);
    old.masks = random_simplex_rows(rng, h * w, n).transpose();
    old.masks = Matrix(old.masks);
    std::vector<BinaryMask> gt;
    BinaryMask g(h, w);
    for (auto& b : g.bits) b = rng.bernoulli(0.3);
    gt.push_back(g);
    const auto ps = generate_pseudo_labels(old, gt);
    for (std::size_t a = 0; a < ps.size(); ++a) {
      EXPECT_GE(ps[a].label, 1);
      EXPECT_GE(ps[a].mask.area(), 1);
      EXPECT_FALSE(intersects(ps[a].mask, g));
      long binarized = 0;
      for (int p = 0; p < h * w; ++p) binarized += old.masks(ps[a].query, p) > 0.5;
      EXPECT_GE(2 * ps[a].mask.area(), binarized);
      for (std::size_t b = a + 1; b < ps.size(); ++b) EXPECT_FALSE(intersects(ps[a].mask, ps[b].mask));
    }
    std::vector<Segment> gts{{1, g}};
    if (g.area() == 0) gts.clear();
    EXPECT_NO_THROW(merge_labels(gts, ps));
  }
}

TEST(MergeLabels, Basics) {
  const std::vector<Segment> gt{{2, mask2x2({1, 0, 0, 0})}};
  const auto only_gt = merge_labels(gt, {});
  ASSERT_EQ(only_gt.size(), 1u);
  EXPECT_EQ(only_gt.entries[0].label, 2);
  EXPECT_EQ(only_gt.entries[0].origin, LabelOrigin::ground_truth);

  const std::vector<PseudoLabel> ps{{1, mask2x2({0, 1, 0, 0}), 4, 0.9}};
  const auto only_ps = merge_labels({}, ps);
  ASSERT_EQ(only_ps.size(), 1u);
  EXPECT_EQ(only_ps.entries[0].origin, LabelOrigin::pseudo);

  const std::vector<PseudoLabel> clash{{1, mask2x2({1, 0, 0, 0}), 0, 0.9}};
  EXPECT_THROW(merge_labels(gt, clash), IntegrityError);
}

}  // namespace
}  // namespace contmask
