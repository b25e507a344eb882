#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "contmask/objective.hpp"
#include "contmask/oracle.hpp"

namespace contmask {
namespace {

BinaryMask mask_of(int h, int w, std::initializer_list<int> bits) {
  BinaryMask m(h, w);
  std::size_t i = 0;
  for (int b : bits) m.bits[i++] = static_cast<std::uint8_t>(b);
  return m;
}

// Direct per-pixel transcriptions used as oracles.
double dice_oracle(const std::vector<double>& a, const BinaryMask& b) {
  double inter = 0, sa = 0, sb = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    inter += a[p] * b.bits[p];
    sa += a[p];
    sb += b.bits[p];
  }
  return (2 * inter + 1e-8) / (sa + sb + 1e-8);
}

double ce_oracle(const std::vector<double>& a, const BinaryMask& b) {
  double s = 0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    const double y = b.bits[p];
    s += -(y * std::log(std::max(a[p], 1e-12)) + (1 - y) * std::log(std::max(1 - a[p], 1e-12)));
  }
  return s / static_cast<double>(a.size());
}

double focal_oracle(double p, double alpha, double gamma) {
  return -alpha * std::pow(1 - p, gamma) * std::log(std::max(p, 1e-12));
}

struct Instance {
  PredictionSet preds;
  LabelSet labels;
};

Instance random_instance(Rng& rng, int n, int k, int n_labels, int h, int w) {
  Instance in;
  auto& p = in.preds;
  p.height = h;
  p.width = w;
  p.class_probs = Matrix(n, k + 1);
  p.masks = Matrix(n, h * w);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c <= k; ++c) p.class_probs(i, c) = rng.uniform() + 0.01;
    p.class_probs.row(i) /= p.class_probs.row(i).sum();
    for (int px = 0; px < h * w; ++px) p.masks(i, px) = rng.uniform(0.01, 0.99);
  }
  // Disjoint labels: each pixel goes to one label or none.
  std::vector<BinaryMask> masks(static_cast<std::size_t>(n_labels), BinaryMask(h, w));
  for (int px = 0; px < h * w; ++px) {
    const int owner = rng.uniform_int(-1, n_labels - 1);
    if (owner >= 0) masks[static_cast<std::size_t>(owner)].bits[static_cast<std::size_t>(px)] = 1;
  }
  for (auto& m : masks) in.labels.entries.push_back({rng.uniform_int(1, k), m, LabelOrigin::ground_truth});
  return in;
}

std::vector<double> row(const Matrix& m, Eigen::Index i) {
  return {m.row(i).data(), m.row(i).data() + m.cols()};
}

TEST(Dice, Examples) {
  const auto ones = mask_of(1, 4, {1, 1, 0, 0});
  EXPECT_NEAR(dice(std::vector<double>{1, 1, 0, 0}, ones), 1.0, 1e-8);
  EXPECT_NEAR(dice(std::vector<double>{0, 0, 1, 1}, ones), 0.0, 1e-8);
  EXPECT_NEAR(dice(std::vector<double>{1, 1, 0, 0}, mask_of(1, 4, {1, 0, 0, 0})), 2.0 / 3.0, 1e-8);
  EXPECT_THROW(dice(std::vector<double>{1, 1}, ones), IntegrityError);
}

TEST(Matching, TwoByTwo) {
  Matrix c(2, 2);
  c << -0.9, -0.1,  //
      -0.2, -0.8;
  const auto m = solve_assignment(c);
  EXPECT_EQ(m.prediction_for, (std::vector<int>{0, 1}));
  EXPECT_NEAR(m.cost, -1.7, 1e-12);
}

TEST(Matching, SingleAnnotationPicksBestRow) {
  Matrix c(5, 1);
  c << -0.1, -0.2, -0.7, -0.3, 0.0;
  EXPECT_EQ(solve_assignment(c).prediction_for, (std::vector<int>{2}));
}

TEST(Matching, TieBreakIsLexicographic) {
  EXPECT_EQ(solve_assignment(Matrix::Zero(4, 3)).prediction_for, (std::vector<int>{0, 1, 2}));
  Matrix c(3, 2);
  c << -1, -1,  //
      -1, -1,   //
      0, 0;
  EXPECT_EQ(solve_assignment(c).prediction_for, (std::vector<int>{0, 1}));
}

TEST(Matching, EmptyAndOverCapacity) {
  EXPECT_TRUE(solve_assignment(Matrix(3, 0)).prediction_for.empty());
  EXPECT_THROW(solve_assignment(Matrix::Zero(2, 3)), CapacityError);
}

TEST(Matching, SixByFiveAgainstEnumeration) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix c(6, 5);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = -rng.uniform();
    const auto fast = solve_assignment(c);
    const auto slow = brute_force_assignment(c);
    double fast_cost = 0;
    for (int j = 0; j < 5; ++j) fast_cost += c(fast.prediction_for[static_cast<std::size_t>(j)], j);
    EXPECT_NEAR(fast_cost, slow.cost, 1e-12);
    EXPECT_EQ(fast.prediction_for, slow.prediction_for);
  }
}

TEST(Matching, AllSizesUpToSevenAgainstEnumeration) {
  for (std::uint64_t k = 0; k < 300; ++k) {
    const Matrix c = random_cost_matrix(mix_seed(77, k));
    EXPECT_EQ(solve_assignment(c).prediction_for, brute_force_assignment(c).prediction_for) << "trial " << k;
  }
}

TEST(Matching, CostIsProbabilityTimesDice) {
  Rng rng(3);
  const auto in = random_instance(rng, 4, 3, 3, 3, 3);
  const Matrix c = matching_cost(in.preds, in.labels);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      const auto& e = in.labels.entries[static_cast<std::size_t>(j)];
      EXPECT_NEAR(c(i, j), -in.preds.class_probs(i, e.label) * dice_oracle(row(in.preds.masks, i), e.mask), 1e-14);
    }
}

TEST(Focal, Examples) {
  EXPECT_EQ(focal_term(1.0, 20, 2), 0.0);
  for (double p : {0.1, 0.5, 0.9}) EXPECT_NEAR(focal_term(p, 1, 0), -std::log(p), 1e-15);
  EXPECT_NEAR(focal_term(0.5, 20, 2), 20 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_term(0.5, 20, 2), 3.4657, 1e-4);
  EXPECT_TRUE(std::isfinite(focal_term(0.0, 20, 2)));
  EXPECT_NEAR(focal_term(0.0, 20, 2), -20 * std::log(1e-12), 1e-9);
}

TEST(Focal, GradientMatchesDifferences) {
  for (double p : {0.05, 0.3, 0.77}) {
    const double h = 1e-7;
    const double numeric = (focal_term(p + h, 20, 2) - focal_term(p - h, 20, 2)) / (2 * h);
    EXPECT_NEAR(focal_term_grad(p, 20, 2), numeric, 1e-5 * std::abs(numeric));
  }
}

TEST(MaskTerm, Examples) {
  const auto target = mask_of(2, 2, {1, 0, 0, 1});
  const auto saturated = mask_term(std::vector<double>{1, 0, 0, 1}, target);
  EXPECT_NEAR(saturated.dice_loss, 0.0, 1e-8);
  EXPECT_NEAR(saturated.mask_ce, 0.0, 1e-10);
  const auto half = mask_term(std::vector<double>(4, 0.5), target);
  EXPECT_NEAR(half.mask_ce, std::log(2.0), 1e-15);
}

TEST(MaskTerm, MatchesPerPixelOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 30);
    std::vector<double> soft(static_cast<std::size_t>(n));
    BinaryMask target(1, n);
    for (int p = 0; p < n; ++p) {
      soft[static_cast<std::size_t>(p)] = rng.uniform();
      target.bits[static_cast<std::size_t>(p)] = rng.bernoulli(0.4);
    }
    const auto t = mask_term(soft, target);
    EXPECT_NEAR(t.dice_loss, 1 - dice_oracle(soft, target), 1e-13);
    EXPECT_NEAR(t.mask_ce, ce_oracle(soft, target), 1e-13);
  }
}

TEST(MaskTerm, GradientMatchesDifferences) {
  Rng rng(6);
  std::vector<double> soft(12);
  BinaryMask target(3, 4);
  for (std::size_t p = 0; p < 12; ++p) {
    soft[p] = rng.uniform(0.05, 0.95);
    target.bits[p] = rng.bernoulli(0.5);
  }
  std::vector<double> grad(12, 0.0);
  mask_term(soft, target, grad, 2.0);
  for (std::size_t p = 0; p < 12; ++p) {
    auto f = [&](double v) {
      auto s = soft;
      s[p] = v;
      const auto t = mask_term(s, target);
      return 2.0 * (t.dice_loss + t.mask_ce);
    };
    const double h = 1e-6;
    const double numeric = (f(soft[p] + h) - f(soft[p] - h)) / (2 * h);
    EXPECT_NEAR(grad[p], numeric, 1e-7 + 1e-6 * std::abs(numeric));
  }
}

// Term-by-term transcription of the supervised objective.
double seg_loss_oracle(const Instance& in, const Matching& sigma, const LossHyper& hp) {
  const int n = in.preds.queries();
  std::vector<int> label_of(static_cast<std::size_t>(n), -1);
  for (std::size_t j = 0; j < sigma.prediction_for.size(); ++j)
    label_of[static_cast<std::size_t>(sigma.prediction_for[j])] = static_cast<int>(j);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const int j = label_of[static_cast<std::size_t>(i)];
    if (j < 0) {
      total += hp.no_object_weight * focal_oracle(in.preds.class_probs(i, 0), hp.alpha, hp.gamma);
      continue;
    }
    const auto& e = in.labels.entries[static_cast<std::size_t>(j)];
    const auto m = row(in.preds.masks, i);
    total += focal_oracle(in.preds.class_probs(i, e.label), hp.alpha, hp.gamma);
    total += hp.lambda_mask * ((1 - dice_oracle(m, e.mask)) + ce_oracle(m, e.mask));
  }
  return total;
}

TEST(SegLoss, EmptyLabelsArePureNoObjectFocal) {
  Rng rng(7);
  const auto in = random_instance(rng, 5, 3, 0, 3, 3);
  LossHyper hp;
  hp.no_object_weight = 0.3;
  const auto l = seg_loss(in.preds, in.labels, match(in.preds, in.labels), hp);
  double expect = 0;
  for (int i = 0; i < 5; ++i) expect += 0.3 * focal_oracle(in.preds.class_probs(i, 0), 20, 2);
  EXPECT_NEAR(l.total, expect, 1e-12);
  EXPECT_EQ(l.dice_loss, 0.0);
  EXPECT_EQ(l.mask_ce, 0.0);
}

TEST(SegLoss, PerfectPredictionIsFree) {
  PredictionSet p;
  p.height = 1;
  p.width = 4;
  p.class_probs = Matrix(3, 3);
  p.class_probs << 0, 1, 0,  //
      0, 0, 1,               //
      1, 0, 0;
  p.masks = Matrix(3, 4);
  p.masks << 1, 1, 0, 0,  //
      0, 0, 1, 1,         //
      0, 0, 0, 0;
  LabelSet labels;
  labels.entries.push_back({1, mask_of(1, 4, {1, 1, 0, 0}), LabelOrigin::ground_truth});
  labels.entries.push_back({2, mask_of(1, 4, {0, 0, 1, 1}), LabelOrigin::ground_truth});
  const auto l = seg_loss(p, labels, match(p, labels), LossHyper{});
  EXPECT_NEAR(l.total, 0.0, 1e-7);
}

TEST(SegLoss, MatchesTranscription) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(2, 6);
    const auto in = random_instance(rng, n, 3, rng.uniform_int(0, n), 3, 4);
    LossHyper hp{rng.uniform(1, 20), rng.uniform(0, 3), rng.uniform(0, 6), rng.uniform(0.1, 1)};
    const auto sigma = match(in.preds, in.labels);
    const auto l = seg_loss(in.preds, in.labels, sigma, hp);
    EXPECT_NEAR(l.total, seg_loss_oracle(in, sigma, hp), 1e-10 * (1 + std::abs(l.total)));
    EXPECT_NEAR(l.total, l.focal + hp.lambda_mask * (l.dice_loss + l.mask_ce), 1e-10 * (1 + l.total));
    EXPECT_GE(l.focal, 0);
    EXPECT_GE(l.dice_loss, 0);
    EXPECT_GE(l.mask_ce, 0);
  }
}

TEST(SegLoss, InvariantToAnnotationOrder) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = random_instance(rng, 6, 4, 4, 4, 4);
    const double a = seg_loss(in.preds, in.labels, match(in.preds, in.labels), LossHyper{}).total;
    std::reverse(in.labels.entries.begin(), in.labels.entries.end());
    const double b = seg_loss(in.preds, in.labels, match(in.preds, in.labels), LossHyper{}).total;
    EXPECT_NEAR(a, b, 1e-10 * (1 + a));
  }
}

TEST(SegLoss, GradientWithRespectToOutputs) {
  Rng rng(10);
  auto in = random_instance(rng, 4, 3, 2, 3, 3);
  const auto sigma = match(in.preds, in.labels);
  const LossHyper hp;
  auto grad = PredictionGrad::zeros(in.preds);
  seg_loss(in.preds, in.labels, sigma, hp, &grad);
  const double h = 1e-7;
  auto check = [&](Matrix& target, const Matrix& analytic) {
    for (Eigen::Index k = 0; k < target.size(); ++k) {
      const double saved = target.data()[k];
      target.data()[k] = saved + h;
      const double up = seg_loss(in.preds, in.labels, sigma, hp).total;
      target.data()[k] = saved - h;
      const double down = seg_loss(in.preds, in.labels, sigma, hp).total;
      target.data()[k] = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic.data()[k], numeric, 1e-5 * std::max(1.0, std::abs(numeric)));
    }
  };
  check(in.preds.class_probs, grad.class_probs);
  check(in.preds.masks, grad.masks);
}

}  // namespace
}  // namespace contmask
