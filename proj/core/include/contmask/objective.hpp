#pragma once

#include <span>
#include <vector>

#include "contmask/model.hpp"

namespace contmask {

enum class LabelOrigin { ground_truth, pseudo };

/// One annotation. `label` is a classifier index in 1..K (never no-object).
struct LabelEntry {
  int label = 0;
  BinaryMask mask;
  LabelOrigin origin = LabelOrigin::ground_truth;
};

/// Annotation set z̄ = ground truth ∪ pseudo-labels; masks pairwise disjoint.
struct LabelSet {
  std::vector<LabelEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t count(LabelOrigin origin) const;
};

/// prediction_for[j] = σ(j), the prediction matched to annotation j.
/// Predictions that appear nowhere are matched to no-object.
struct Matching {
  std::vector<int> prediction_for;
  double cost = 0.0;
};

inline constexpr double kDiceEpsilon = 1e-8;
inline constexpr double kLogClamp = 1e-12;

/// (2·Σ a⊙b + ε) / (Σa + Σb + ε). Throws IntegrityError on size mismatch.
double dice(std::span<const double> soft, const BinaryMask& target);

/// Minimum-cost injective assignment of the columns (annotations) of an
/// N × N̄ cost matrix to its rows (predictions), via Kuhn-Munkres. Among
/// optimal assignments the lexicographically smallest (σ(1), σ(2), ...) wins.
/// Throws CapacityError when N̄ > N.
Matching solve_assignment(const Matrix& cost);

/// cost(i, j) = −p_i(c̄_j) · dice(m_i, m̄_j).
Matrix matching_cost(const PredictionSet& preds, const LabelSet& labels);
Matching match(const PredictionSet& preds, const LabelSet& labels);

/// −α (1 − p)^γ log p, with the log clamped at kLogClamp.
double focal_term(double p_target, double alpha, double gamma);
double focal_term_grad(double p_target, double alpha, double gamma);

struct MaskTerm {
  double dice_loss = 0.0;
  double mask_ce = 0.0;
};

/// 1 − dice(m, m̄); adds weight·∂/∂m into `grad` when it is non-empty.
double dice_loss_term(std::span<const double> soft, const BinaryMask& target,
                      std::span<double> grad = {}, double weight = 1.0);
/// Per-pixel mean of −[m̄ log m + (1 − m̄) log(1 − m)], logs clamped.
double mask_ce_term(std::span<const double> soft, const BinaryMask& target,
                    std::span<double> grad = {}, double weight = 1.0);

/// dice_loss = 1 − dice; mask_ce = per-pixel mean binary cross-entropy. When
/// `grad` is non-empty, ∂(weight·(dice_loss + mask_ce))/∂m is added to it.
MaskTerm mask_term(std::span<const double> soft, const BinaryMask& target,
                   std::span<double> grad = {}, double weight = 1.0);

struct LossHyper {
  double alpha = 20.0;
  double gamma = 2.0;
  double lambda_mask = 5.0;
  double no_object_weight = 1.0;
};

struct LossBreakdown {
  double focal = 0.0;
  double dice_loss = 0.0;
  double mask_ce = 0.0;
  double adaptive_distill = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
};

/// Supervised part of the objective for one image: focal classification over
/// matched pairs, no-object focal (scaled by no_object_weight) over unmatched
/// predictions, and λ_mask·(dice + CE) over matched pairs. The matching is a
/// constant. When `grad` is given, gradients w.r.t. class_probs and masks are
/// accumulated into it. `total` holds focal + λ_mask·(dice_loss + mask_ce).
LossBreakdown seg_loss(const PredictionSet& preds, const LabelSet& labels, const Matching& sigma,
                       const LossHyper& hyper, PredictionGrad* grad = nullptr);

}  // namespace contmask
