#include <benchmark/benchmark.h>

#include "contmask/distill.hpp"
#include "contmask/experiment.hpp"
#include "contmask/metrics.hpp"
#include "contmask/oracle.hpp"

using namespace contmask;

namespace {

struct Fixture {
  ModelParams params;
  SceneSample scene;
};

Fixture make_fixture(int side, int classes) {
  ModelConfig mc;
  mc.height = side;
  mc.width = side;
  Rng rng(1);
  Fixture f{init_params(mc, classes, rng), {}};
  const auto palette = make_palette(classes, classes / 2, mc.channels, 1);
  f.scene = generate_scene(5, palette, {1, 2, 3}, {side, side, 2});
  return f;
}

void BM_Forward(benchmark::State& state) {
  const auto f = make_fixture(static_cast<int>(state.range(0)), 8);
  ForwardCache cache;
  for (auto _ : state) benchmark::DoNotOptimize(forward(f.params, f.scene.image, cache));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(32);

void BM_ForwardBackward(benchmark::State& state) {
  const auto f = make_fixture(static_cast<int>(state.range(0)), 8);
  ForwardCache cache;
  auto grads = zeros_like(f.params);
  for (auto _ : state) {
    const auto preds = forward(f.params, f.scene.image, cache);
    OutputGrad g{Matrix::Ones(preds.class_probs.rows(), preds.class_probs.cols()),
                 Matrix::Ones(preds.mask_logits.rows(), preds.mask_logits.cols())};
    backward_into(f.params, cache, g, grads);
    benchmark::DoNotOptimize(grads.cls_w.data());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(32);

// One full training-sample evaluation: forward, matching, loss with
// distillation, and backward.
void BM_SampleUpdate(benchmark::State& state) {
  const auto f = make_fixture(16, 8);
  Rng rng(2);
  const auto old_params = init_params(f.params.config, 4, rng);
  PreparedSample sample;
  sample.scene = f.scene;
  for (const auto& s : f.scene.segments)
    if (s.class_id > 4) sample.gt.push_back(s);
  sample.old = OldModelOutput::from(forward(old_params, f.scene.image));
  sample.labels = merge_labels(sample.gt, sample.pseudo);
  const std::vector<int> fresh{5, 6, 7, 8};
  LossConfig losses;
  ForwardCache cache;
  auto grads = zeros_like(f.params);
  for (auto _ : state) {
    const auto preds = forward(f.params, f.scene.image, cache);
    auto pg = PredictionGrad::zeros(preds);
    benchmark::DoNotOptimize(Experiment::sample_loss(preds, sample, fresh, losses, 10.0, &pg));
    backward_into(f.params, cache, to_output_grad(preds, pg), grads);
  }
}
BENCHMARK(BM_SampleUpdate);

void BM_Hungarian(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(3);
  Matrix cost(n, n / 2);
  for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = -rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(solve_assignment(cost));
}
BENCHMARK(BM_Hungarian)->Arg(10)->Arg(100);

void BM_BruteForceAssignment(benchmark::State& state) {
  Rng rng(4);
  Matrix cost(7, 5);
  for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = -rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_assignment(cost));
}
BENCHMARK(BM_BruteForceAssignment);

void BM_PseudoLabels(benchmark::State& state) {
  const auto f = make_fixture(16, 8);
  const auto old = OldModelOutput::from(forward(f.params, f.scene.image));
  std::vector<BinaryMask> gt;
  for (const auto& s : f.scene.segments) gt.push_back(s.mask);
  gt.resize(1);
  for (auto _ : state) benchmark::DoNotOptimize(generate_pseudo_labels(old, gt));
}
BENCHMARK(BM_PseudoLabels);

void BM_AccumulatePq(benchmark::State& state) {
  const auto [pred, gt] = random_segment_sets(9);
  for (auto _ : state) {
    PqStats stats;
    accumulate_pq(pred, gt, stats);
    benchmark::DoNotOptimize(stats);
  }
}
BENCHMARK(BM_AccumulatePq);

}  // namespace

BENCHMARK_MAIN();
