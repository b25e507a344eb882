#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contmask/config.hpp"

namespace contmask {

struct ComponentCheck {
  std::string name;
  bool active = true;
  int probes = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_entry;  // "tensor[index]: analytic vs numeric"
};

struct GradcheckReport {
  std::vector<ComponentCheck> components;
  /// Largest loss change from perturbing frozen old-model entries.
  double old_model_max_change = 0.0;
  int old_model_probes = 0;
  double tolerance = 1e-4;

  bool passed() const;
  std::string to_text() const;
};

struct GradcheckOptions {
  int probes = 200;            // per component
  std::uint64_t seed = 11;
  double step = 1e-6;          // central-difference h
  double tolerance = 1e-4;
  /// Relative error is |a − n| / max(|a|, |n|, scale_floor).
  double scale_floor = 1e-4;
  int batch = 2;
};

/// Compares analytic against central finite-difference gradients on a random
/// two-step scenario built from `config` (old model with K classes, current
/// model with new classes appended). Components: focal, dice, mask_ce, kd,
/// ad, total. The matching and pseudo-labels are computed once and held fixed.
/// Throws ConfigError if probes < 1.
GradcheckReport gradcheck(const ExperimentConfig& config, const GradcheckOptions& options);

}  // namespace contmask
