#pragma once

#include <span>
#include <vector>

#include "contmask/objective.hpp"

namespace contmask {

/// Frozen previous-step model output: rows over [no-object, old classes].
struct OldModelOutput {
  int height = 0;
  int width = 0;
  Matrix class_probs;  // N × (K_old + 1)
  Matrix masks;        // N × P

  static OldModelOutput from(const PredictionSet& preds) {
    return {preds.height, preds.width, preds.class_probs, preds.masks};
  }
};

/// Folds the probability of the new classes into no-object:
/// p̃(∅) = p(∅) + Σ_{j∈new} p(j), p̃(k) = p(k) for the remaining classes, in
/// index order. `new_classes` are classifier indices.
std::vector<double> unbiased_prob(std::span<const double> p, std::span<const int> new_classes);

/// ω = (1 − p^o(∅))².
double adaptive_weight(std::span<const double> old_p);

/// −(1/N) Σ_i Σ_k p^o_i(k) log(p̃_i(k) / p^o_i(k)). When `dprobs` is given,
/// scale · ∂loss/∂p is added to it. The old model receives no gradient.
double kd_loss(const Matrix& probs, const Matrix& old_probs, std::span<const int> new_classes,
               Matrix* dprobs = nullptr, double scale = 1.0);

/// Same divergence, output i weighted by ω_i / Σω. Defined as 0 (with zero
/// gradient) when every ω_i vanishes.
double ad_loss(const Matrix& probs, const Matrix& old_probs, std::span<const int> new_classes,
               Matrix* dprobs = nullptr, double scale = 1.0);

/// Per-output weights of an arbitrary normalized divergence sum; kd and ad
/// are the uniform and ω-weighted cases.
double weighted_distill_loss(const Matrix& probs, const Matrix& old_probs,
                             std::span<const int> new_classes, std::span<const double> weights,
                             Matrix* dprobs = nullptr, double scale = 1.0);

struct PseudoLabel {
  int label = 0;   // classifier index of the old class, never no-object
  BinaryMask mask;
  int query = 0;   // old-model output it came from
  double confidence = 0.0;  // max over pixels of q_i
};

inline constexpr double kBinarizeThreshold = 0.5;

/// Mask-based pseudo-labels from the old model. A pixel goes to output i only
/// if i maximizes q_j = p^max_j · m^o_j there (ties to the smallest index),
/// m^o_i > 0.5, and no ground-truth mask covers it. Outputs keeping fewer
/// than half of their binarized pixels, or none at all, are discarded.
std::vector<PseudoLabel> generate_pseudo_labels(const OldModelOutput& old,
                                                std::span<const BinaryMask> gt);

/// z̄ = z^gt ∪ z^ps with origin flags. `gt` class ids must already be
/// classifier indices. Throws IntegrityError on any overlap.
LabelSet merge_labels(std::span<const Segment> gt, std::span<const PseudoLabel> pseudo);

}  // namespace contmask
