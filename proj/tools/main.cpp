// contmask: command-line driver for continual mask-classification experiments.
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "contmask/config.hpp"
#include "contmask/dataset_io.hpp"
#include "contmask/experiment.hpp"
#include "contmask/gradcheck.hpp"
#include "contmask/oracle.hpp"
#include "contmask/plot.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace contmask;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

int cmd_run(const std::vector<std::string>& paths, const std::string& output_dir, const std::string& plot_dir) {
  std::vector<ExperimentConfig> configs;
  for (const auto& p : paths) configs.push_back(load_config(p));
  if (!output_dir.empty()) {
    if (configs.size() == 1) {
      configs.front().output_dir = output_dir;
    } else {
      for (auto& c : configs) c.output_dir = (fs::path(output_dir) / c.name).string();
    }
  }
  std::optional<fs::path> plot;
  if (!plot_dir.empty()) plot = plot_dir;
  const auto results = run_grid(configs, true, plot, [](const std::string& msg) { std::cerr << msg << "\n"; });
  for (const auto& r : results) {
    const auto fmt = [](const std::optional<double>& v) { return v ? std::to_string(100.0 * *v) : std::string("n/a"); };
    std::cout << r.config.name << ": PQ base " << fmt(r.summary.pq.base) << ", new " << fmt(r.summary.pq.added)
              << ", all " << fmt(r.summary.pq.all) << "; mIoU all " << fmt(r.summary.miou.all) << "  -> "
              << r.config.output_dir << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& config_path, int probes, std::uint64_t seed) {
  GradcheckOptions opt;
  opt.probes = probes;
  opt.seed = seed;
  const auto report = gradcheck(config_or_default(config_path), opt);
  std::cout << report.to_text();
  std::cout << (report.passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return report.passed() ? 0 : 1;
}

int cmd_oracle(const std::string& subject, int trials, std::uint64_t seed) {
  const auto report = run_oracle(parse_oracle_subject(subject), trials, seed);
  std::cout << report.to_text();
  return report.passed() ? 0 : 1;
}

int cmd_gen_data(const std::string& config_path, const std::string& out) {
  const auto config = config_or_default(config_path);
  const auto data = make_experiment_data(config.data);
  const fs::path dir(out);
  fs::create_directories(dir);
  write_container(dir / "train.cmfd", data.train);
  write_container(dir / "test.cmfd", data.test);

  nlohmann::json m;
  m["format"] = "CMFD";
  m["data"] = nlohmann::json::parse(config_to_json(config))["data"];
  auto palette = nlohmann::json::array();
  for (const auto& c : data.palette) {
    palette.push_back({{"id", c.id},
                       {"kind", c.kind == ClassKind::thing ? "thing" : "stuff"},
                       {"appearance", c.appearance}});
  }
  m["palette"] = palette;
  const auto recipes = [](const std::vector<SampleRecipe>& rs) {
    auto a = nlohmann::json::array();
    for (const auto& r : rs) a.push_back({{"seed", r.seed}, {"present", r.present}});
    return a;
  };
  m["splits"]["train"] = {{"file", "train.cmfd"}, {"samples", recipes(data.train_recipes)}};
  m["splits"]["test"] = {{"file", "test.cmfd"}, {"samples", recipes(data.test_recipes)}};

  // Training-sample indices used by each step of the configured protocol.
  const auto tasks = build_protocol({make_ordering(config.data.num_classes, config.protocol.ordering_seed),
                                     config.protocol.initial, config.protocol.increment,
                                     config.protocol.overlap_mode});
  auto steps = nlohmann::json::array();
  for (const auto& task : tasks) {
    const auto slice = slice_dataset(data.train, tasks, task.step, config.protocol.overlap_mode);
    std::vector<std::size_t> idx;
    std::size_t cursor = 0;
    for (const auto& s : slice) {
      while (cursor < data.train.size() && !(data.train[cursor].image == s.image)) ++cursor;
      idx.push_back(cursor++);
    }
    steps.push_back({{"step", task.step}, {"new_classes", task.new_classes}, {"train_indices", idx}});
  }
  m["splits"]["steps"] = steps;
  write_text(dir / "manifest.json", m.dump(2) + "\n");
  std::cout << "wrote " << data.train.size() << " training and " << data.test.size() << " test samples to "
            << dir.string() << "\n";
  return 0;
}

int cmd_plot(const std::string& from, const std::string& out) {
  const auto curves = load_curves(from);
  const fs::path target = out.empty() ? fs::path(from) / "curves.svg" : fs::path(out);
  write_text(target, render_curves_svg(curves));
  std::cout << "wrote " << target.string() << " (" << curves.size() << " curve" << (curves.size() == 1 ? "" : "s")
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual mask-classification on synthetic scenes"};
  app.require_subcommand(1);

  std::vector<std::string> run_configs;
  std::string run_out, run_plot;
  auto* run = app.add_subcommand("run", "Train and evaluate one or more experiment configs");
  run->add_option("--config", run_configs, "Experiment config JSON (repeat for a grid)")->required();
  run->add_option("--output-dir", run_out, "Override the output directory");
  run->add_option("--plot-dir", run_plot, "Write a combined curves.svg here");

  std::string gc_config;
  int gc_probes = 200;
  std::uint64_t gc_seed = 11;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--probes", gc_probes, "Probed entries per loss component");
  gc->add_option("--config", gc_config, "Experiment config JSON (defaults if omitted)");
  gc->add_option("--seed", gc_seed, "Seed of the random scenario");

  std::string or_subject;
  int or_trials = 200;
  std::uint64_t or_seed = 1;
  auto* orc = app.add_subcommand("oracle", "Check matching or PQ against brute force");
  orc->add_option("subject", or_subject, "match or pq")->required()->check(CLI::IsMember({"match", "pq"}));
  orc->add_option("--trials", or_trials, "Number of random instances");
  orc->add_option("--seed", or_seed, "Base seed");

  std::string gd_config, gd_out = "data";
  auto* gd = app.add_subcommand("gen-data", "Write the synthetic dataset as CMFD containers plus a manifest");
  gd->add_option("--config", gd_config, "Experiment config JSON (defaults if omitted)");
  gd->add_option("--out", gd_out, "Output directory");

  std::string pl_from, pl_out;
  auto* pl = app.add_subcommand("plot", "Render curves.svg from finished runs");
  pl->add_option("--from", pl_from, "Run directory, or a directory of run directories")->required();
  pl->add_option("--out", pl_out, "Output SVG path (default <from>/curves.svg)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_configs, run_out, run_plot);
    if (*gc) return cmd_gradcheck(gc_config, gc_probes, gc_seed);
    if (*orc) return cmd_oracle(or_subject, or_trials, or_seed);
    if (*gd) return cmd_gen_data(gd_config, gd_out);
    if (*pl) return cmd_plot(pl_from, pl_out);
  } catch (const contmask::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
