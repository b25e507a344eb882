#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contmask/config.hpp"
#include "contmask/distill.hpp"
#include "contmask/metrics.hpp"
#include "contmask/model.hpp"
#include "contmask/synthdata.hpp"

namespace contmask {

/// Palette, training scenes and held-out scenes of one experiment.
struct ExperimentData {
  std::vector<ClassDef> palette;
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
  std::vector<SampleRecipe> train_recipes;
  std::vector<SampleRecipe> test_recipes;
};

ExperimentData make_experiment_data(const DataConfig& data);

/// Maps dataset class ids to classifier indices (1..K in introduction order)
/// and back.
struct ClassIndex {
  std::vector<int> ordering;

  int index_of(int class_id) const;
  int class_of(int index) const { return ordering.at(static_cast<std::size_t>(index - 1)); }
};

/// First-order adaptive-moment optimizer over every tensor of a ModelParams.
class Adam {
 public:
  Adam(const ModelParams& like, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ModelParams& params, const ModelParams& grads);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ModelParams m_, v_;
};

/// One training sample with everything that stays fixed during a step.
struct PreparedSample {
  SceneSample scene;  // annotations already restricted to the step
  std::vector<Segment> gt;  // class ids replaced by classifier indices
  std::optional<OldModelOutput> old;
  std::vector<PseudoLabel> pseudo;
  LabelSet labels;
};

struct StepLog {
  int step = 0;
  int updates = 0;
  double final_loss = 0.0;        // mean total over the last ≤ 50 updates
  double mean_pseudo_labels = 0.0;
};

struct RunState {
  ModelParams params;
  std::optional<ModelParams> old_params;
  std::vector<StepReport> reports;
  std::vector<StepLog> logs;
  Rng init_rng{0};
  Rng shuffle_rng{0};
  int next_step = 0;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<TaskSpec> tasks;
  std::vector<StepReport> reports;  // class ids, metrics in [0, 1]
  std::vector<StepLog> logs;
  ContinualSummary summary;
  std::vector<ModelParams> checkpoints;  // final params of every step
};

/// Drives one continual experiment step by step.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::shared_ptr<const ExperimentData> data);

  const ExperimentConfig& config() const { return config_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const ClassIndex& class_index() const { return index_; }
  const RunState& state() const { return state_; }
  bool done() const { return state_.next_step >= static_cast<int>(tasks_.size()); }

  /// Trains and evaluates the next step. Throws NumericError, after dumping
  /// the offending batch under config.output_dir, on a non-finite loss.
  void run_step();
  /// Replaces the state after step 0 with another experiment's; the caller
  /// guarantees both would have trained that step identically.
  void adopt_initial_step(const Experiment& other);

  StepReport evaluate(const ModelParams& params, int step) const;
  RunResult result() const;

  /// Loss of one prepared sample; gradients (w.r.t. the model outputs) are
  /// added into `grad` when given. The matching is recomputed unless `fixed`
  /// is supplied.
  static LossBreakdown sample_loss(const PredictionSet& preds, const PreparedSample& sample,
                                   std::span<const int> new_indices, const LossConfig& losses,
                                   double lambda_d, PredictionGrad* grad, const Matching* fixed = nullptr);

 private:
  std::vector<PreparedSample> prepare(int step, const ModelParams* old) const;
  void dump_batch(int step, int update, std::span<const PreparedSample* const> batch,
                  const std::string& reason) const;

  ExperimentConfig config_;
  std::shared_ptr<const ExperimentData> data_;
  std::vector<TaskSpec> tasks_;
  ClassIndex index_;
  RunState state_;
  std::optional<RunState> initial_state_;  // state right after step 0
  std::vector<ModelParams> checkpoints_;
};

/// Caps a label set at `capacity` by dropping the least confident
/// pseudo-labels; ground truth is never dropped.
std::vector<PseudoLabel> cap_pseudo_labels(std::vector<PseudoLabel> pseudo, std::size_t gt_count,
                                           std::size_t capacity);

/// Runs every step and, when `write` is set, writes steps.csv, summary.json,
/// curves.svg and one checkpoint per step into config.output_dir.
RunResult run_experiment(const ExperimentConfig& config, bool write = true);

/// Runs several configurations, training a shared first step only once for
/// configurations that agree on it. Each run writes into its own
/// config.output_dir; a combined curves.svg goes to `plot_dir` when given.
std::vector<RunResult> run_grid(const std::vector<ExperimentConfig>& configs, bool write = true,
                                const std::optional<std::filesystem::path>& plot_dir = std::nullopt,
                                const std::function<void(const std::string&)>& progress = {});

std::string steps_csv(const RunResult& result);
std::string summary_json(const RunResult& result);
void write_run(const RunResult& result);

}  // namespace contmask
