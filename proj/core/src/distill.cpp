#include "contmask/distill.hpp"

#include <algorithm>
#include <cmath>

namespace contmask {
namespace {

constexpr double kProbFloor = 1e-12;

// Maps current-model column → unbiased column (0 for no-object and new classes).
std::vector<int> fold_map(Eigen::Index columns, std::span<const int> new_classes) {
  std::vector<int> map(static_cast<std::size_t>(columns), 0);
  int next = 1;
  for (Eigen::Index k = 1; k < columns; ++k) {
    const bool is_new = std::ranges::find(new_classes, static_cast<int>(k)) != new_classes.end();
    map[static_cast<std::size_t>(k)] = is_new ? 0 : next++;
  }
  return map;
}

}  // namespace

std::vector<double> unbiased_prob(std::span<const double> p, std::span<const int> new_classes) {
  for (int k : new_classes) {
    if (k <= 0 || k >= static_cast<int>(p.size())) throw IntegrityError("new class index out of range");
  }
  const auto map = fold_map(static_cast<Eigen::Index>(p.size()), new_classes);
  std::vector<double> out(p.size() - new_classes.size(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k) out[static_cast<std::size_t>(map[k])] += p[k];
  return out;
}

double adaptive_weight(std::span<const double> old_p) {
  const double a = 1.0 - old_p[kNoObject];
  return a * a;
}

double weighted_distill_loss(const Matrix& probs, const Matrix& old_probs,
                             std::span<const int> new_classes, std::span<const double> weights,
                             Matrix* dprobs, double scale) {
  const auto n = probs.rows();
  if (old_probs.rows() != n || static_cast<Eigen::Index>(weights.size()) != n) {
    throw IntegrityError("distillation: output counts differ");
  }
  if (old_probs.cols() + static_cast<Eigen::Index>(new_classes.size()) != probs.cols()) {
    throw IntegrityError("distillation: class counts do not line up");
  }
  const auto map = fold_map(probs.cols(), new_classes);
  double total = 0.0;
  std::vector<double> folded(static_cast<std::size_t>(old_probs.cols()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    std::fill(folded.begin(), folded.end(), 0.0);
    for (Eigen::Index k = 0; k < probs.cols(); ++k) folded[static_cast<std::size_t>(map[static_cast<std::size_t>(k)])] += probs(i, k);
    double term = 0.0;
    for (Eigen::Index k = 0; k < old_probs.cols(); ++k) {
      const double po = old_probs(i, k);
      if (po < kProbFloor) continue;
      term -= po * (std::log(std::max(folded[static_cast<std::size_t>(k)], kProbFloor)) - std::log(po));
    }
    total += w * term;
    if (dprobs) {
      for (Eigen::Index k = 0; k < probs.cols(); ++k) {
        const auto r = static_cast<std::size_t>(map[static_cast<std::size_t>(k)]);
        const double po = old_probs(i, static_cast<Eigen::Index>(r));
        if (po < kProbFloor || folded[r] < kProbFloor) continue;
        (*dprobs)(i, k) -= scale * w * po / folded[r];
      }
    }
  }
  return total;
}

double kd_loss(const Matrix& probs, const Matrix& old_probs, std::span<const int> new_classes,
               Matrix* dprobs, double scale) {
  const std::vector<double> w(static_cast<std::size_t>(probs.rows()), 1.0 / static_cast<double>(probs.rows()));
  return weighted_distill_loss(probs, old_probs, new_classes, w, dprobs, scale);
}

double ad_loss(const Matrix& probs, const Matrix& old_probs, std::span<const int> new_classes,
               Matrix* dprobs, double scale) {
  std::vector<double> w(static_cast<std::size_t>(old_probs.rows()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < old_probs.rows(); ++i) {
    const std::span<const double> row(old_probs.row(i).data(), static_cast<std::size_t>(old_probs.cols()));
    w[static_cast<std::size_t>(i)] = adaptive_weight(row);
    sum += w[static_cast<std::size_t>(i)];
  }
  if (sum <= 0.0) return 0.0;
  for (auto& x : w) x /= sum;
  return weighted_distill_loss(probs, old_probs, new_classes, w, dprobs, scale);
}

std::vector<PseudoLabel> generate_pseudo_labels(const OldModelOutput& old,
                                                std::span<const BinaryMask> gt) {
  const auto n = old.class_probs.rows();
  const auto pixels = static_cast<std::size_t>(old.height) * static_cast<std::size_t>(old.width);
  if (old.masks.rows() != n || static_cast<std::size_t>(old.masks.cols()) != pixels) {
    throw IntegrityError("pseudo-labels: old output shapes disagree");
  }
  std::vector<std::uint8_t> gt_all(pixels, 0);
  for (const auto& m : gt) {
    if (m.size() != pixels) throw IntegrityError("pseudo-labels: ground-truth shape mismatch");
    for (std::size_t p = 0; p < pixels; ++p) {
      if (!m.bits[p]) continue;
      if (gt_all[p]) throw IntegrityError("pseudo-labels: ground-truth masks overlap");
      gt_all[p] = 1;
    }
  }

  // p^max and c^ps ignore no-object.
  std::vector<double> pmax(static_cast<std::size_t>(n), 0.0);
  std::vector<int> cls(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 1; k < old.class_probs.cols(); ++k) {
      if (old.class_probs(i, k) > pmax[static_cast<std::size_t>(i)]) {
        pmax[static_cast<std::size_t>(i)] = old.class_probs(i, k);
        cls[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
  }

  std::vector<BinaryMask> pseudo(static_cast<std::size_t>(n), BinaryMask(old.height, old.width));
  std::vector<long> binarized(static_cast<std::size_t>(n), 0);
  std::vector<double> peak(static_cast<std::size_t>(n), 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    Eigen::Index winner = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = old.masks(i, static_cast<Eigen::Index>(p));
      const double q = pmax[static_cast<std::size_t>(i)] * m;
      peak[static_cast<std::size_t>(i)] = std::max(peak[static_cast<std::size_t>(i)], q);
      if (m > kBinarizeThreshold) ++binarized[static_cast<std::size_t>(i)];
      if (q > best) {
        best = q;
        winner = i;
      }
    }
    if (!gt_all[p] && old.masks(winner, static_cast<Eigen::Index>(p)) > kBinarizeThreshold) {
      pseudo[static_cast<std::size_t>(winner)].bits[p] = 1;
    }
  }

  std::vector<PseudoLabel> out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (cls[idx] == 0) continue;
    const long kept = pseudo[idx].area();
    if (kept < 1 || 2 * kept < binarized[idx]) continue;
    out.push_back({cls[idx], std::move(pseudo[idx]), static_cast<int>(i), peak[idx]});
  }
  return out;
}

LabelSet merge_labels(std::span<const Segment> gt, std::span<const PseudoLabel> pseudo) {
  LabelSet out;
  for (const auto& s : gt) out.entries.push_back({s.class_id, s.mask, LabelOrigin::ground_truth});
  for (const auto& s : pseudo) out.entries.push_back({s.label, s.mask, LabelOrigin::pseudo});
  if (out.entries.empty()) return out;
  const auto pixels = out.entries.front().mask.size();
  std::vector<std::uint8_t> owned(pixels, 0);
  for (const auto& e : out.entries) {
    if (e.label <= 0) throw IntegrityError("merge_labels: annotation without a class");
    if (e.mask.size() != pixels) throw IntegrityError("merge_labels: mask shapes differ");
    for (std::size_t p = 0; p < pixels; ++p) {
      if (!e.mask.bits[p]) continue;
      if (owned[p]) throw IntegrityError("merge_labels: overlapping annotations");
      owned[p] = 1;
    }
  }
  return out;
}

}  // namespace contmask
