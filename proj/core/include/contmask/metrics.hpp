#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "contmask/common.hpp"
#include "contmask/protocol.hpp"

namespace contmask {

/// |a ∩ b| / |a ∪ b|, 0 for two empty masks.
double iou(const BinaryMask& a, const BinaryMask& b);

struct ClassPq {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double iou_sum = 0.0;

  /// nullopt when the class never appears on either side.
  std::optional<double> pq() const;
  /// Mean IoU of true positives; nullopt without true positives.
  std::optional<double> sq() const;
  std::optional<double> rq() const;
};

/// Per-class panoptic counts. Merging is field-wise addition, so per-image
/// stats can be combined in any order.
struct PqStats {
  std::map<int, ClassPq> per_class;

  void merge(const PqStats& other);
};

/// Matches predicted and ground-truth segments of one image (same class,
/// IoU > 0.5) and updates the counts. Throws IntegrityError if either side
/// has overlapping segments.
void accumulate_pq(std::span<const Segment> pred, std::span<const Segment> gt, PqStats& stats);

/// Intersection and union pixel counts per class, summed over label maps.
struct IouStats {
  std::map<int, std::pair<long, long>> per_class;  // class → (intersection, union)

  void merge(const IouStats& other);
  std::optional<double> iou(int class_id) const;
};

void accumulate_iou(std::span<const int> pred, std::span<const int> gt, std::span<const int> classes,
                    IouStats& stats);

struct MeanIou {
  std::map<int, std::optional<double>> per_class;  // nullopt: absent from both maps
  std::optional<double> mean;
};

MeanIou mean_iou(std::span<const int> pred, std::span<const int> gt, std::span<const int> classes);
MeanIou mean_iou(const IouStats& stats, std::span<const int> classes);

struct ClassMetrics {
  std::optional<double> pq;
  std::optional<double> sq;
  std::optional<double> rq;
  std::optional<double> iou;
};

struct StepReport {
  int step = 0;
  std::vector<int> seen_classes;
  std::map<int, ClassMetrics> per_class;
};

StepReport make_step_report(int step, std::span<const int> seen, const PqStats& pq, const IouStats& iou);

/// Arithmetic mean over the defined values of `field` for `classes`.
std::optional<double> class_mean(const StepReport& report, std::span<const int> classes,
                                 std::optional<double> ClassMetrics::*field);

struct GroupSummary {
  std::optional<double> base;  // first-step classes at the last step
  std::optional<double> added; // classes of steps 2..T at the last step
  std::optional<double> all;   // every class at the last step
  std::optional<double> avg;   // mean over steps of the all-seen mean
};

struct ContinualSummary {
  GroupSummary pq;
  GroupSummary sq;
  GroupSummary rq;
  GroupSummary miou;
};

/// Throws IntegrityError unless there is exactly one report per task, in order.
ContinualSummary aggregate_continual(std::span<const StepReport> reports,
                                     std::span<const TaskSpec> protocol);

}  // namespace contmask
