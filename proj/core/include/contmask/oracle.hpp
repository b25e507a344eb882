#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "contmask/metrics.hpp"
#include "contmask/model.hpp"
#include "contmask/objective.hpp"

namespace contmask {

enum class OracleSubject { match, pq };

OracleSubject parse_oracle_subject(const std::string& s);
std::string to_string(OracleSubject s);

struct OracleReport {
  OracleSubject subject = OracleSubject::match;
  int trials = 0;
  int agreed = 0;
  std::vector<std::string> discrepancies;  // each names the trial seed

  bool passed() const { return trials > 0 && agreed == trials; }
  std::string to_text() const;
};

/// Exhaustive search over all injections of the columns (annotations) into
/// the rows (predictions). Among optimal assignments, the lexicographically
/// smallest one; costs are summed in column order.
Matching brute_force_assignment(const Matrix& cost);

/// Maximum-cardinality same-class matching with IoU > 0.5, found by
/// enumeration; counts written as in accumulate_pq.
PqStats brute_force_pq(const std::vector<Segment>& pred, const std::vector<Segment>& gt);

/// Random instance generators, exposed for tests. Trial `k` of a run with
/// seed `s` uses mix_seed(s, k).
Matrix random_cost_matrix(std::uint64_t seed);
std::pair<std::vector<Segment>, std::vector<Segment>> random_segment_sets(std::uint64_t seed);

/// Throws ConfigError if trials < 1.
OracleReport run_oracle(OracleSubject subject, int trials, std::uint64_t seed);

}  // namespace contmask
