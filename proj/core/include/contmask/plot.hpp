#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contmask/metrics.hpp"

namespace contmask {

/// All-seen-classes means per step, in percent; nullopt where undefined.
struct Curve {
  std::string name;
  std::vector<std::optional<double>> pq;
  std::vector<std::optional<double>> miou;
};

Curve make_curve(const std::string& name, std::span<const StepReport> reports);

/// Two side-by-side line charts (PQ and mIoU against step), one line per curve.
std::string render_curves_svg(std::span<const Curve> curves);

/// Reads `dir/steps.csv`, or `*/steps.csv` one level down; the run name is
/// taken from the neighbouring summary.json when present. Throws FormatError
/// when nothing is found or a file is malformed.
std::vector<Curve> load_curves(const std::filesystem::path& dir);

}  // namespace contmask
