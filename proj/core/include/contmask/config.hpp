#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "contmask/model.hpp"
#include "contmask/objective.hpp"
#include "contmask/protocol.hpp"

namespace contmask {

enum class DistillMode { none, kd, ad };

DistillMode parse_distill_mode(const std::string& s);
std::string to_string(DistillMode m);

struct DataConfig {
  int num_classes = 8;
  int num_things = 4;
  int channels = 3;
  int height = 16;
  int width = 16;
  int max_instances = 2;
  int samples_per_class = 40;
  int test_samples_per_class = 25;
  int max_extra_classes = 2;
  std::uint64_t seed = 1;       // palette and training scenes
  std::uint64_t test_seed = 2;  // held-out scenes
  bool operator==(const DataConfig&) const = default;
};

struct ProtocolConfig {
  int initial = 4;
  int increment = 2;
  OverlapMode overlap_mode = OverlapMode::overlap;
  std::optional<std::uint64_t> ordering_seed;  // absent: ascending ids
  bool operator==(const ProtocolConfig&) const = default;
};

struct ModelSection {
  int queries = 10;
  int dim = 32;
  int backbone_hidden = 16;
  int ffn_hidden = 64;
  MaskActivation mask_activation = MaskActivation::softmax;
  double new_row_std = 0.01;
  bool operator==(const ModelSection&) const = default;
};

struct OptimConfig {
  int steps_initial = 2000;
  int steps_per_class = 400;
  double lr_initial = 1e-3;
  double lr_incremental = 5e-4;
  int batch_size = 4;
  std::uint64_t init_seed = 3;
  std::uint64_t shuffle_seed = 4;
  bool operator==(const OptimConfig&) const = default;
};

struct LossConfig {
  double alpha = 20.0;
  double gamma = 2.0;
  double lambda_mask = 5.0;
  double no_object_weight = 1.0;
  std::optional<double> lambda_d;  // absent: 1 for two-step protocols, 10 otherwise
  DistillMode distill_mode = DistillMode::ad;
  bool pseudo_labels = true;
  bool operator==(const LossConfig&) const = default;

  LossHyper hyper() const { return {alpha, gamma, lambda_mask, no_object_weight}; }
};

struct EvalConfig {
  double min_confidence = 0.5;
  int min_area = 4;
  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "run";
  DataConfig data;
  ProtocolConfig protocol;
  ModelSection model;
  OptimConfig optimization;
  LossConfig losses;
  EvalConfig eval;
  std::string output_dir = "out";
  bool operator==(const ExperimentConfig&) const = default;

  ModelConfig model_config() const;
};

/// Throws ConfigError on malformed JSON, unknown keys, or invalid values.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

void validate(const ExperimentConfig& config);

double effective_lambda_d(const LossConfig& losses, std::size_t num_tasks);

/// True when two configs train an identical first step, so the step-0 model
/// can be shared between them.
bool same_initial_step(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace contmask
