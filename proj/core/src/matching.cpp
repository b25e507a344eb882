#include <algorithm>
#include <cmath>
#include <limits>

#include "contmask/objective.hpp"

namespace contmask {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Kuhn-Munkres with potentials on an n × m matrix (n ≤ m), rows assigned to
// distinct columns. a is indexed [row][col]. Returns row → column.
std::vector<int> hungarian(const std::vector<std::vector<double>>& a, std::size_t m) {
  const std::size_t n = a.size();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

// Optimal cost of assigning `rows` (annotations) to the still-free columns.
double optimum(const Matrix& cost, const std::vector<int>& rows, const std::vector<int>& cols,
               std::vector<int>* assignment = nullptr) {
  if (rows.empty()) return 0.0;
  std::vector<std::vector<double>> a(rows.size(), std::vector<double>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) a[r][c] = cost(cols[c], rows[r]);
  const auto sol = hungarian(a, cols.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    total += a[r][static_cast<std::size_t>(sol[r])];
    if (assignment) (*assignment)[r] = cols[static_cast<std::size_t>(sol[r])];
  }
  return total;
}

}  // namespace

Matching solve_assignment(const Matrix& cost) {
  const auto n_pred = static_cast<int>(cost.rows());
  const auto n_label = static_cast<int>(cost.cols());
  if (n_label > n_pred) {
    throw CapacityError("more annotations (" + std::to_string(n_label) + ") than predictions (" +
                        std::to_string(n_pred) + ")");
  }
  if (!cost.allFinite()) throw NumericError("non-finite matching cost");
  if (n_label == 0) return {};

  std::vector<int> rows(static_cast<std::size_t>(n_label)), cols(static_cast<std::size_t>(n_pred));
  for (int j = 0; j < n_label; ++j) rows[static_cast<std::size_t>(j)] = j;
  for (int i = 0; i < n_pred; ++i) cols[static_cast<std::size_t>(i)] = i;
  std::vector<int> current(rows.size());
  double best = optimum(cost, rows, cols, &current);
  const double tol = 1e-9 * std::max(1.0, cost.cwiseAbs().maxCoeff() * std::max(1, n_label));

  // Fix σ(1), σ(2), ... in turn to the smallest prediction that still admits
  // an optimal completion.
  Matching out;
  out.prediction_for.assign(rows.size(), -1);
  for (int j = 0; j < n_label; ++j) {
    std::vector<int> rest_rows(rows.begin() + j + 1, rows.end());
    int chosen = current[static_cast<std::size_t>(j)];
    for (int i : cols) {
      if (i >= chosen) break;
      std::vector<int> rest_cols;
      for (int c : cols)
        if (c != i) rest_cols.push_back(c);
      std::vector<int> trial(rest_rows.size());
      const double value = cost(i, j) + optimum(cost, rest_rows, rest_cols, &trial);
      if (value <= best + tol) {
        chosen = i;
        for (std::size_t r = 0; r < trial.size(); ++r) current[static_cast<std::size_t>(j) + 1 + r] = trial[r];
        break;
      }
    }
    out.prediction_for[static_cast<std::size_t>(j)] = chosen;
    best -= cost(chosen, j);
    cols.erase(std::ranges::find(cols, chosen));
  }
  out.cost = 0.0;
  for (int j = 0; j < n_label; ++j) out.cost += cost(out.prediction_for[static_cast<std::size_t>(j)], j);
  return out;
}

Matrix matching_cost(const PredictionSet& preds, const LabelSet& labels) {
  const int n = preds.queries();
  const auto p = static_cast<std::size_t>(preds.pixels());
  Matrix cost(n, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const auto& e = labels.entries[j];
    if (e.label <= 0 || e.label >= preds.class_probs.cols()) {
      throw IntegrityError("annotation label outside the classifier range");
    }
    for (int i = 0; i < n; ++i) {
      const std::span<const double> m(preds.masks.row(i).data(), p);
      cost(i, static_cast<Eigen::Index>(j)) = -preds.class_probs(i, e.label) * dice(m, e.mask);
    }
  }
  return cost;
}

Matching match(const PredictionSet& preds, const LabelSet& labels) {
  if (static_cast<int>(labels.size()) > preds.queries()) {
    throw CapacityError("annotation set larger than the prediction set");
  }
  return solve_assignment(matching_cost(preds, labels));
}

}  // namespace contmask
