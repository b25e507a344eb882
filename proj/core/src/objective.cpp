#include "contmask/objective.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace contmask {

std::size_t LabelSet::count(LabelOrigin origin) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.origin == origin;
  return n;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  focal += o.focal;
  dice_loss += o.dice_loss;
  mask_ce += o.mask_ce;
  adaptive_distill += o.adaptive_distill;
  total += o.total;
  return *this;
}

double dice(std::span<const double> soft, const BinaryMask& target) {
  if (soft.size() != target.size()) throw IntegrityError("dice: shape mismatch");
  double inter = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < soft.size(); ++k) {
    const double t = target.bits[k] ? 1.0 : 0.0;
    inter += soft[k] * t;
    sa += soft[k];
    sb += t;
  }
  return (2.0 * inter + kDiceEpsilon) / (sa + sb + kDiceEpsilon);
}

double focal_term(double p, double alpha, double gamma) {
  const double q = 1.0 - p;
  const double w = q > 0.0 ? std::pow(q, gamma) : (gamma == 0.0 ? 1.0 : 0.0);
  return -alpha * w * std::log(std::max(p, kLogClamp));
}

double focal_term_grad(double p, double alpha, double gamma) {
  const double q = 1.0 - p;
  const double lp = std::log(std::max(p, kLogClamp));
  const double dlp = p >= kLogClamp ? 1.0 / p : 0.0;
  const double w = q > 0.0 ? std::pow(q, gamma) : (gamma == 0.0 ? 1.0 : 0.0);
  const double dw = (gamma != 0.0 && q > 0.0) ? -gamma * std::pow(q, gamma - 1.0) : 0.0;
  return -alpha * (dw * lp + w * dlp);
}

double dice_loss_term(std::span<const double> m, const BinaryMask& target, std::span<double> grad,
                      double weight) {
  if (m.size() != target.size()) throw IntegrityError("dice loss: shape mismatch");
  if (!grad.empty() && grad.size() != m.size()) throw IntegrityError("dice loss: gradient size");
  double inter = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double t = target.bits[k] ? 1.0 : 0.0;
    inter += m[k] * t;
    sa += m[k];
    sb += t;
  }
  const double num = 2.0 * inter + kDiceEpsilon;
  const double den = sa + sb + kDiceEpsilon;
  if (!grad.empty()) {
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double t = target.bits[k] ? 1.0 : 0.0;
      grad[k] -= weight * (2.0 * t * den - num) / (den * den);
    }
  }
  return 1.0 - num / den;
}

double mask_ce_term(std::span<const double> m, const BinaryMask& target, std::span<double> grad,
                    double weight) {
  if (m.size() != target.size()) throw IntegrityError("mask CE: shape mismatch");
  if (!grad.empty() && grad.size() != m.size()) throw IntegrityError("mask CE: gradient size");
  const auto n = static_cast<double>(m.size());
  double ce = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const bool t = target.bits[k] != 0;
    const double v = t ? m[k] : 1.0 - m[k];
    ce -= std::log(std::max(v, kLogClamp));
    if (!grad.empty() && v >= kLogClamp) grad[k] += weight * (t ? -1.0 : 1.0) / (v * n);
  }
  return ce / n;
}

MaskTerm mask_term(std::span<const double> m, const BinaryMask& target, std::span<double> grad,
                   double weight) {
  return {dice_loss_term(m, target, grad, weight), mask_ce_term(m, target, grad, weight)};
}

LossBreakdown seg_loss(const PredictionSet& preds, const LabelSet& labels, const Matching& sigma,
                       const LossHyper& hyper, PredictionGrad* grad) {
  const int n = preds.queries();
  const auto p = static_cast<std::size_t>(preds.pixels());
  if (sigma.prediction_for.size() != labels.size()) throw IntegrityError("matching/label size mismatch");
  std::vector<char> matched(static_cast<std::size_t>(n), 0);
  LossBreakdown out;

  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int i = sigma.prediction_for[j];
    if (i < 0 || i >= n || matched[static_cast<std::size_t>(i)]) {
      throw IntegrityError("matching is not injective");
    }
    matched[static_cast<std::size_t>(i)] = 1;
    const auto& e = labels.entries[j];
    const double pc = preds.class_probs(i, e.label);
    out.focal += focal_term(pc, hyper.alpha, hyper.gamma);
    const std::span<const double> m(preds.masks.row(i).data(), p);
    std::span<double> g;
    if (grad) {
      grad->class_probs(i, e.label) += focal_term_grad(pc, hyper.alpha, hyper.gamma);
      g = std::span<double>(grad->masks.row(i).data(), p);
    }
    const auto mt = mask_term(m, e.mask, g, hyper.lambda_mask);
    out.dice_loss += mt.dice_loss;
    out.mask_ce += mt.mask_ce;
  }
  for (int i = 0; i < n; ++i) {
    if (matched[static_cast<std::size_t>(i)]) continue;
    const double p0 = preds.class_probs(i, kNoObject);
    out.focal += hyper.no_object_weight * focal_term(p0, hyper.alpha, hyper.gamma);
    if (grad) {
      grad->class_probs(i, kNoObject) +=
          hyper.no_object_weight * focal_term_grad(p0, hyper.alpha, hyper.gamma);
    }
  }
  out.total = out.focal + hyper.lambda_mask * (out.dice_loss + out.mask_ce);
  return out;
}

}  // namespace contmask
