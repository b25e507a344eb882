#include "contmask/metrics.hpp"

namespace contmask {

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw IntegrityError("iou: shape mismatch");
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> ClassPq::pq() const {
  const double denom = static_cast<double>(tp) + 0.5 * static_cast<double>(fp) + 0.5 * static_cast<double>(fn);
  if (denom == 0.0) return std::nullopt;
  return iou_sum / denom;
}

std::optional<double> ClassPq::sq() const {
  if (tp == 0) return std::nullopt;
  return iou_sum / static_cast<double>(tp);
}

std::optional<double> ClassPq::rq() const {
  const double denom = static_cast<double>(tp) + 0.5 * static_cast<double>(fp) + 0.5 * static_cast<double>(fn);
  if (denom == 0.0) return std::nullopt;
  return static_cast<double>(tp) / denom;
}

void PqStats::merge(const PqStats& other) {
  for (const auto& [c, s] : other.per_class) {
    auto& d = per_class[c];
    d.tp += s.tp;
    d.fp += s.fp;
    d.fn += s.fn;
    d.iou_sum += s.iou_sum;
  }
}

void accumulate_pq(std::span<const Segment> pred, std::span<const Segment> gt, PqStats& stats) {
  require_disjoint(pred, "predicted segments");
  require_disjoint(gt, "ground-truth segments");
  std::vector<char> pred_used(pred.size(), 0), gt_used(gt.size(), 0);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (pred_used[p] || pred[p].class_id != gt[g].class_id) continue;
      if (!pred[p].mask.same_shape(gt[g].mask)) throw IntegrityError("accumulate_pq: shape mismatch");
      const double v = iou(pred[p].mask, gt[g].mask);
      // IoU > 0.5 on disjoint sets admits at most one partner per segment.
      if (v > 0.5) {
        auto& s = stats.per_class[gt[g].class_id];
        ++s.tp;
        s.iou_sum += v;
        pred_used[p] = gt_used[g] = 1;
        break;
      }
    }
  }
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!pred_used[p]) ++stats.per_class[pred[p].class_id].fp;
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (!gt_used[g]) ++stats.per_class[gt[g].class_id].fn;
}

void IouStats::merge(const IouStats& other) {
  for (const auto& [c, v] : other.per_class) {
    per_class[c].first += v.first;
    per_class[c].second += v.second;
  }
}

std::optional<double> IouStats::iou(int class_id) const {
  const auto it = per_class.find(class_id);
  if (it == per_class.end() || it->second.second == 0) return std::nullopt;
  return static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
}

void accumulate_iou(std::span<const int> pred, std::span<const int> gt, std::span<const int> classes,
                    IouStats& stats) {
  if (pred.size() != gt.size()) throw IntegrityError("accumulate_iou: shape mismatch");
  for (int c : classes) {
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool x = pred[i] == c, y = gt[i] == c;
      inter += x && y;
      uni += x || y;
    }
    auto& s = stats.per_class[c];
    s.first += inter;
    s.second += uni;
  }
}

MeanIou mean_iou(const IouStats& stats, std::span<const int> classes) {
  MeanIou out;
  double sum = 0.0;
  int count = 0;
  for (int c : classes) {
    const auto v = stats.iou(c);
    out.per_class[c] = v;
    if (v) {
      sum += *v;
      ++count;
    }
  }
  if (count > 0) out.mean = sum / count;
  return out;
}

MeanIou mean_iou(std::span<const int> pred, std::span<const int> gt, std::span<const int> classes) {
  IouStats stats;
  accumulate_iou(pred, gt, classes, stats);
  return mean_iou(stats, classes);
}

StepReport make_step_report(int step, std::span<const int> seen, const PqStats& pq, const IouStats& iou) {
  StepReport r;
  r.step = step;
  r.seen_classes.assign(seen.begin(), seen.end());
  for (int c : seen) {
    ClassMetrics m;
    if (const auto it = pq.per_class.find(c); it != pq.per_class.end()) {
      m.pq = it->second.pq();
      m.sq = it->second.sq();
      m.rq = it->second.rq();
    }
    m.iou = iou.iou(c);
    r.per_class[c] = m;
  }
  return r;
}

std::optional<double> class_mean(const StepReport& report, std::span<const int> classes,
                                 std::optional<double> ClassMetrics::*field) {
  double sum = 0.0;
  int count = 0;
  for (int c : classes) {
    const auto it = report.per_class.find(c);
    if (it == report.per_class.end()) continue;
    if (const auto& v = it->second.*field) {
      sum += *v;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

namespace {

GroupSummary summarize(std::span<const StepReport> reports, std::span<const TaskSpec> protocol,
                       std::optional<double> ClassMetrics::*field) {
  const auto& last = reports.back();
  std::vector<int> added;
  for (std::size_t t = 1; t < protocol.size(); ++t)
    added.insert(added.end(), protocol[t].new_classes.begin(), protocol[t].new_classes.end());

  GroupSummary g;
  g.base = class_mean(last, protocol.front().new_classes, field);
  g.added = class_mean(last, added, field);
  g.all = class_mean(last, protocol.back().seen_classes, field);
  double sum = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < reports.size(); ++t) {
    if (const auto v = class_mean(reports[t], protocol[t].seen_classes, field)) {
      sum += *v;
      ++count;
    }
  }
  if (count > 0) g.avg = sum / count;
  return g;
}

}  // namespace

ContinualSummary aggregate_continual(std::span<const StepReport> reports,
                                     std::span<const TaskSpec> protocol) {
  if (protocol.empty() || reports.size() != protocol.size()) {
    throw IntegrityError("aggregate_continual: need exactly one report per step");
  }
  for (std::size_t t = 0; t < reports.size(); ++t) {
    if (reports[t].step != static_cast<int>(t)) throw IntegrityError("aggregate_continual: missing step");
  }
  return {summarize(reports, protocol, &ClassMetrics::pq), summarize(reports, protocol, &ClassMetrics::sq),
          summarize(reports, protocol, &ClassMetrics::rq), summarize(reports, protocol, &ClassMetrics::iou)};
}

}  // namespace contmask
