#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "contmask/synthdata.hpp"

namespace contmask {

enum class OverlapMode { disjoint, overlap };

OverlapMode parse_overlap_mode(const std::string& s);
std::string to_string(OverlapMode mode);

struct ProtocolSpec {
  std::vector<int> ordering;  // permutation of class ids
  int initial = 0;
  int increment = 0;
  OverlapMode overlap_mode = OverlapMode::overlap;
};

struct TaskSpec {
  int step = 0;
  std::vector<int> new_classes;   // in ordering order
  std::vector<int> seen_classes;  // every class introduced up to this step
};

/// Ascending ids 1..num_classes, or a seeded shuffle of them.
std::vector<int> make_ordering(int num_classes, std::optional<std::uint64_t> shuffle_seed);

/// Splits the ordering into `initial` classes followed by `increment`-sized
/// chunks. Throws ConfigError unless the counts tile the ordering exactly.
std::vector<TaskSpec> build_protocol(const ProtocolSpec& spec);

/// Step that owns a sample in disjoint mode: the one introducing its smallest
/// present class id. nullopt for samples with no annotated class.
std::optional<int> owning_step(const SceneSample& sample, const std::vector<TaskSpec>& tasks);

/// Training data of step `step`, annotations filtered to that step's new
/// classes. Disjoint mode gives each sample to its owning step only; overlap
/// mode includes every sample that contains a class of the step.
std::vector<SceneSample> slice_dataset(const std::vector<SceneSample>& samples,
                                       const std::vector<TaskSpec>& tasks, int step,
                                       OverlapMode mode);

}  // namespace contmask
