#include "contmask/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

namespace contmask {
namespace {

constexpr int kMaxQueries = 7;
constexpr int kMaxSegments = 6;

double cost_of(const Matrix& cost, const std::vector<int>& assignment) {
  double sum = 0.0;
  for (std::size_t j = 0; j < assignment.size(); ++j) sum += cost(assignment[j], static_cast<Eigen::Index>(j));
  return sum;
}

std::string seed_tag(std::uint64_t seed) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "seed 0x%016llx", static_cast<unsigned long long>(seed));
  return buf;
}

std::vector<Segment> segments_from_ids(const std::vector<int>& ids, const std::vector<int>& class_of, int h,
                                       int w) {
  std::vector<Segment> out;
  for (std::size_t id = 1; id < class_of.size(); ++id) {
    Segment s{class_of[id], BinaryMask(h, w)};
    for (std::size_t p = 0; p < ids.size(); ++p) s.mask.bits[p] = ids[p] == static_cast<int>(id);
    if (s.mask.area() > 0) out.push_back(std::move(s));
  }
  return out;
}

// Pixel-count IoU, written independently of metrics.cpp.
double overlap_ratio(const BinaryMask& a, const BinaryMask& b) {
  long both = 0, either = 0;
  for (int h = 0; h < a.height; ++h) {
    for (int w = 0; w < a.width; ++w) {
      both += a.at(h, w) && b.at(h, w);
      either += a.at(h, w) || b.at(h, w);
    }
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

}  // namespace

OracleSubject parse_oracle_subject(const std::string& s) {
  if (s == "match") return OracleSubject::match;
  if (s == "pq") return OracleSubject::pq;
  throw ConfigError("oracle subject must be match or pq; got '" + s + "'");
}

std::string to_string(OracleSubject s) { return s == OracleSubject::match ? "match" : "pq"; }

std::string OracleReport::to_text() const {
  std::ostringstream out;
  out << to_string(subject) << ": " << agreed << "/" << trials << " agree\n";
  for (const auto& d : discrepancies) out << "  " << d << "\n";
  return out.str();
}

Matching brute_force_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (m > n) throw CapacityError("more annotations than predictions");
  std::vector<int> current(static_cast<std::size_t>(m)), best;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  // Depth-first in lexicographic order, so the first optimum found is the
  // lexicographically smallest; later ones must be strictly cheaper.
  std::function<void(int)> rec = [&](int j) {
    if (j == m) {
      const double c = cost_of(cost, current);
      if (c < best_cost) {
        best_cost = c;
        best = current;
      }
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      used[static_cast<std::size_t>(i)] = 1;
      current[static_cast<std::size_t>(j)] = i;
      rec(j + 1);
      used[static_cast<std::size_t>(i)] = 0;
    }
  };
  rec(0);
  return {best, m == 0 ? 0.0 : best_cost};
}

PqStats brute_force_pq(const std::vector<Segment>& pred, const std::vector<Segment>& gt) {
  std::vector<int> partner(gt.size(), -1), best_partner(gt.size(), -1);
  std::vector<char> used(pred.size(), 0);
  int best_count = -1;
  double best_iou = -1.0;
  std::function<void(std::size_t, int, double)> rec = [&](std::size_t g, int count, double iou_sum) {
    if (g == gt.size()) {
      if (count > best_count || (count == best_count && iou_sum > best_iou)) {
        best_count = count;
        best_iou = iou_sum;
        best_partner = partner;
      }
      return;
    }
    partner[g] = -1;
    rec(g + 1, count, iou_sum);
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (used[p] || pred[p].class_id != gt[g].class_id) continue;
      const double v = overlap_ratio(pred[p].mask, gt[g].mask);
      if (!(v > 0.5)) continue;
      used[p] = 1;
      partner[g] = static_cast<int>(p);
      rec(g + 1, count + 1, iou_sum + v);
      used[p] = 0;
      partner[g] = -1;
    }
  };
  rec(0, 0, 0.0);

  PqStats stats;
  std::vector<char> pred_matched(pred.size(), 0);
  for (std::size_t g = 0; g < gt.size(); ++g) {
    auto& s = stats.per_class[gt[g].class_id];
    if (best_partner[g] < 0) {
      ++s.fn;
      continue;
    }
    ++s.tp;
    s.iou_sum += overlap_ratio(pred[static_cast<std::size_t>(best_partner[g])].mask, gt[g].mask);
    pred_matched[static_cast<std::size_t>(best_partner[g])] = 1;
  }
  for (std::size_t p = 0; p < pred.size(); ++p)
    if (!pred_matched[p]) ++stats.per_class[pred[p].class_id].fp;
  return stats;
}

Matrix random_cost_matrix(std::uint64_t seed) {
  Rng rng(seed);
  const int n = rng.uniform_int(1, kMaxQueries);
  const int m = rng.uniform_int(0, n);
  Matrix c(n, m);
  // A third of the instances draw from a handful of integer levels so that
  // ties, and hence the tie-break rule, are exercised.
  const bool coarse = rng.uniform_int(0, 2) == 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) c(i, j) = coarse ? -static_cast<double>(rng.uniform_int(0, 3)) : -rng.uniform();
  return c;
}

std::pair<std::vector<Segment>, std::vector<Segment>> random_segment_sets(std::uint64_t seed) {
  Rng rng(seed);
  const int h = rng.uniform_int(4, 8);
  const int w = rng.uniform_int(4, 8);
  const auto pixels = static_cast<std::size_t>(h * w);

  const int gt_count = rng.uniform_int(0, kMaxSegments - 1);
  std::vector<int> gt_ids(pixels, 0);
  for (int id = 1; id <= gt_count; ++id) {
    const int h0 = rng.uniform_int(0, h - 1), w0 = rng.uniform_int(0, w - 1);
    const int h1 = rng.uniform_int(h0, h - 1), w1 = rng.uniform_int(w0, w - 1);
    for (int y = h0; y <= h1; ++y)
      for (int x = w0; x <= w1; ++x) gt_ids[static_cast<std::size_t>(y * w + x)] = id;
  }
  std::vector<int> gt_class(static_cast<std::size_t>(kMaxSegments) + 1, 0);
  for (auto& c : gt_class) c = rng.uniform_int(1, 3);

  // Predictions: the ground-truth layout with some pixels reassigned, one
  // extra id available for spurious segments, and occasional class swaps.
  const double noise = rng.uniform(0.0, 0.4);
  std::vector<int> pred_ids = gt_ids;
  for (auto& id : pred_ids)
    if (rng.bernoulli(noise)) id = rng.uniform_int(0, gt_count + 1);
  std::vector<int> pred_class = gt_class;
  for (auto& c : pred_class)
    if (rng.bernoulli(0.2)) c = rng.uniform_int(1, 3);

  return {segments_from_ids(pred_ids, pred_class, h, w), segments_from_ids(gt_ids, gt_class, h, w)};
}

OracleReport run_oracle(OracleSubject subject, int trials, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("oracle needs trials >= 1");
  OracleReport report;
  report.subject = subject;
  for (int k = 0; k < trials; ++k) {
    const std::uint64_t trial_seed = mix_seed(seed, static_cast<std::uint64_t>(k));
    ++report.trials;
    std::string problem;
    if (subject == OracleSubject::match) {
      const Matrix cost = random_cost_matrix(trial_seed);
      const Matching fast = solve_assignment(cost);
      const Matching slow = brute_force_assignment(cost);
      const double fast_cost = cost_of(cost, fast.prediction_for);
      if (fast_cost != slow.cost) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "cost %.17g vs brute force %.17g", fast_cost, slow.cost);
        problem = buf;
      } else if (fast.prediction_for != slow.prediction_for) {
        problem = "optimal cost agrees but the tie-break picked a different assignment";
      }
    } else {
      const auto [pred, gt] = random_segment_sets(trial_seed);
      PqStats fast;
      accumulate_pq(pred, gt, fast);
      const PqStats slow = brute_force_pq(pred, gt);
      for (const auto& [c, s] : slow.per_class) {
        const auto it = fast.per_class.find(c);
        const ClassPq f = it == fast.per_class.end() ? ClassPq{} : it->second;
        if (f.tp != s.tp || f.fp != s.fp || f.fn != s.fn || std::abs(f.iou_sum - s.iou_sum) > 1e-12) {
          problem = "class " + std::to_string(c) + " counts differ";
        }
        const auto pq = f.pq(), sq = f.sq(), rq = f.rq();
        if (pq && rq && (sq ? std::abs(*pq - *sq * *rq) > 1e-9 : *pq != 0.0)) {
          problem = "class " + std::to_string(c) + " violates PQ = SQ * RQ";
        }
      }
      if (fast.per_class.size() != slow.per_class.size()) problem = "class sets differ";
    }
    if (problem.empty()) {
      ++report.agreed;
    } else {
      report.discrepancies.push_back("trial " + std::to_string(k) + " (" + seed_tag(trial_seed) + "): " + problem);
    }
  }
  return report;
}

}  // namespace contmask
