#include "contmask/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace contmask {

OverlapMode parse_overlap_mode(const std::string& s) {
  if (s == "disjoint") return OverlapMode::disjoint;
  if (s == "overlap") return OverlapMode::overlap;
  throw ConfigError("overlap_mode must be 'disjoint' or 'overlap', got '" + s + "'");
}

std::string to_string(OverlapMode mode) {
  return mode == OverlapMode::disjoint ? "disjoint" : "overlap";
}

std::vector<int> make_ordering(int num_classes, std::optional<std::uint64_t> shuffle_seed) {
  std::vector<int> ordering(static_cast<std::size_t>(num_classes));
  std::iota(ordering.begin(), ordering.end(), 1);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(ordering);
  }
  return ordering;
}

std::vector<TaskSpec> build_protocol(const ProtocolSpec& spec) {
  const int total = static_cast<int>(spec.ordering.size());
  if (spec.initial < 1 || spec.initial > total) {
    throw ConfigError("initial class count must be in [1, total classes]");
  }
  {
    std::set<int> unique(spec.ordering.begin(), spec.ordering.end());
    if (static_cast<int>(unique.size()) != total) throw ConfigError("ordering repeats a class");
  }
  const int rest = total - spec.initial;
  if (rest > 0 && (spec.increment < 1 || rest % spec.increment != 0)) {
    throw ConfigError("remaining " + std::to_string(rest) + " classes are not a multiple of increment " +
                      std::to_string(spec.increment));
  }
  const int steps = 1 + (rest > 0 ? rest / spec.increment : 0);

  std::vector<TaskSpec> tasks;
  std::vector<int> seen;
  auto cursor = spec.ordering.begin();
  for (int t = 0; t < steps; ++t) {
    const int count = t == 0 ? spec.initial : spec.increment;
    TaskSpec task;
    task.step = t;
    task.new_classes.assign(cursor, cursor + count);
    cursor += count;
    seen.insert(seen.end(), task.new_classes.begin(), task.new_classes.end());
    task.seen_classes = seen;
    tasks.push_back(std::move(task));
  }
  return tasks;
}

std::optional<int> owning_step(const SceneSample& sample, const std::vector<TaskSpec>& tasks) {
  const auto present = present_classes(sample);
  if (present.empty()) return std::nullopt;
  const int smallest = *present.begin();
  for (const auto& task : tasks) {
    if (std::ranges::find(task.new_classes, smallest) != task.new_classes.end()) return task.step;
  }
  return std::nullopt;
}

std::vector<SceneSample> slice_dataset(const std::vector<SceneSample>& samples,
                                       const std::vector<TaskSpec>& tasks, int step,
                                       OverlapMode mode) {
  if (step < 0 || step >= static_cast<int>(tasks.size())) throw ConfigError("step out of range");
  const auto& task = tasks[static_cast<std::size_t>(step)];
  const std::set<int> current(task.new_classes.begin(), task.new_classes.end());

  std::vector<SceneSample> out;
  for (const auto& s : samples) {
    bool include = false;
    if (mode == OverlapMode::disjoint) {
      include = owning_step(s, tasks) == step;
    } else {
      for (const auto& seg : s.segments) include = include || current.contains(seg.class_id);
    }
    if (include) out.push_back(filter_annotations(s, current));
  }
  return out;
}

}  // namespace contmask
