#include "contmask/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "contmask/experiment.hpp"

namespace contmask {
namespace {

struct Entry {
  std::string tensor;
  std::size_t index = 0;
};

// Flat views over every tensor, in visit order.
struct Flat {
  std::vector<std::span<double>> spans;
  std::vector<std::string> names;
  std::size_t total = 0;

  explicit Flat(ModelParams& p) {
    p.visit([&](const char* name, auto& t) {
      spans.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
      names.emplace_back(name);
      total += static_cast<std::size_t>(t.size());
    });
  }
  double& at(std::size_t flat) {
    for (auto& s : spans) {
      if (flat < s.size()) return s[flat];
      flat -= s.size();
    }
    throw IntegrityError("flat index out of range");
  }
  Entry entry(std::size_t flat) const {
    for (std::size_t k = 0; k < spans.size(); ++k) {
      if (flat < spans[k].size()) return {names[k], flat};
      flat -= spans[k].size();
    }
    throw IntegrityError("flat index out of range");
  }
};

struct Case {
  PreparedSample sample;
  Matching sigma;
};

using Component = std::function<double(const PredictionSet&, const Case&, PredictionGrad*)>;

double mask_component(const PredictionSet& preds, const Case& c, PredictionGrad* grad, bool dice_part) {
  const auto p = static_cast<std::size_t>(preds.pixels());
  double sum = 0.0;
  for (std::size_t j = 0; j < c.sample.labels.size(); ++j) {
    const int i = c.sigma.prediction_for[j];
    const std::span<const double> m(preds.masks.row(i).data(), p);
    std::span<double> g;
    if (grad) g = std::span<double>(grad->masks.row(i).data(), p);
    const auto& target = c.sample.labels.entries[j].mask;
    sum += dice_part ? dice_loss_term(m, target, g) : mask_ce_term(m, target, g);
  }
  return sum;
}

}  // namespace

bool GradcheckReport::passed() const {
  for (const auto& c : components)
    if (c.active && !(c.max_rel_error < tolerance)) return false;
  return old_model_max_change == 0.0;
}

std::string GradcheckReport::to_text() const {
  std::ostringstream out;
  char buf[256];
  for (const auto& c : components) {
    if (!c.active) {
      std::snprintf(buf, sizeof buf, "%-8s inactive\n", c.name.c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%-8s probes %4d  max rel %.3e  max abs %.3e  %s  (worst %s)\n",
                    c.name.c_str(), c.probes, c.max_rel_error, c.max_abs_error,
                    c.max_rel_error < tolerance ? "ok" : "FAIL", c.worst_entry.c_str());
    }
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "old-model entries: %d probes, max loss change %.3e (%s)\n", old_model_probes,
                old_model_max_change, old_model_max_change == 0.0 ? "zero gradient" : "FAIL");
  out << buf;
  return out.str();
}

GradcheckReport gradcheck(const ExperimentConfig& config, const GradcheckOptions& opt) {
  if (opt.probes < 1) throw ConfigError("gradcheck needs probes >= 1");
  if (opt.batch < 1) throw ConfigError("gradcheck needs a batch of at least one sample");
  validate(config);
  const int classes = config.data.num_classes;
  if (classes < 2) throw ConfigError("gradcheck needs at least two classes");
  const int k_old = std::min(2, classes - 1);
  const int k_new = std::min(2, classes - k_old);

  const auto tasks = build_protocol({make_ordering(classes, std::nullopt), config.protocol.initial,
                                     config.protocol.increment, config.protocol.overlap_mode});
  const double lambda_d = effective_lambda_d(config.losses, tasks.size());

  Rng rng(opt.seed);
  const auto palette = make_palette(classes, config.data.num_things, config.data.channels, mix_seed(opt.seed, 1));
  const Geometry geometry{config.data.height, config.data.width, config.data.max_instances};

  // Old model: random weights with a spread-out classifier so that ω and the
  // pseudo-labels are non-trivial. Current model: old model plus new rows and
  // a perturbation everywhere.
  const ModelConfig mc = config.model_config();
  const ModelParams old_params = init_params(mc, k_old, rng, 0.5);
  ModelParams params = expand_classifier(old_params, k_new, rng, 0.5);
  {
    Flat f(params);
    for (std::size_t i = 0; i < f.total; ++i) f.at(i) += 0.05 * rng.normal();
  }
  std::vector<int> new_indices;
  for (int k = k_old + 1; k <= k_old + k_new; ++k) new_indices.push_back(k);

  std::set<int> present;
  for (int k = 1; k <= k_old + k_new; ++k) present.insert(k);
  std::vector<Case> cases;
  for (std::uint64_t s = 0; static_cast<int>(cases.size()) < opt.batch; ++s) {
    SceneSample scene;
    try {
      scene = generate_scene(mix_seed(opt.seed, 100 + s), palette, present, geometry);
    } catch (const PlacementError&) {
      continue;
    }
    Case c;
    c.sample.scene = scene;
    for (const auto& seg : scene.segments)
      if (seg.class_id > k_old) c.sample.gt.push_back(seg);  // ids coincide with classifier indices
    c.sample.old = OldModelOutput::from(forward(old_params, scene.image));
    std::vector<BinaryMask> gt_masks;
    for (const auto& g : c.sample.gt) gt_masks.push_back(g.mask);
    c.sample.pseudo = cap_pseudo_labels(generate_pseudo_labels(*c.sample.old, gt_masks), c.sample.gt.size(),
                                        static_cast<std::size_t>(mc.queries));
    c.sample.labels = merge_labels(c.sample.gt, c.sample.pseudo);
    c.sigma = match(forward(params, scene.image), c.sample.labels);
    cases.push_back(std::move(c));
  }

  LossHyper focal_only = config.losses.hyper();
  focal_only.lambda_mask = 0.0;
  const LossConfig losses = config.losses;
  struct Named {
    std::string name;
    bool active;
    Component f;
  };
  const std::vector<Named> components = {
      {"focal", true,
       [&](const PredictionSet& p, const Case& c, PredictionGrad* g) {
         return seg_loss(p, c.sample.labels, c.sigma, focal_only, g).total;
       }},
      {"dice", true,
       [](const PredictionSet& p, const Case& c, PredictionGrad* g) { return mask_component(p, c, g, true); }},
      {"mask_ce", true,
       [](const PredictionSet& p, const Case& c, PredictionGrad* g) { return mask_component(p, c, g, false); }},
      {"kd", true,
       [&](const PredictionSet& p, const Case& c, PredictionGrad* g) {
         return kd_loss(p.class_probs, c.sample.old->class_probs, new_indices, g ? &g->class_probs : nullptr);
       }},
      {"ad", lambda_d > 0.0,
       [&](const PredictionSet& p, const Case& c, PredictionGrad* g) {
         return ad_loss(p.class_probs, c.sample.old->class_probs, new_indices, g ? &g->class_probs : nullptr);
       }},
      {"total", true,
       [&](const PredictionSet& p, const Case& c, PredictionGrad* g) {
         return Experiment::sample_loss(p, c.sample, new_indices, losses, lambda_d, g, &c.sigma).total;
       }},
  };

  const auto loss_at = [&](const ModelParams& prm, const Component& f) {
    double sum = 0.0;
    for (const auto& c : cases) sum += f(forward(prm, c.sample.scene.image), c, nullptr);
    return sum;
  };

  GradcheckReport report;
  report.tolerance = opt.tolerance;
  for (const auto& comp : components) {
    ComponentCheck check;
    check.name = comp.name;
    check.active = comp.active;
    if (!comp.active) {
      report.components.push_back(check);
      continue;
    }
    ModelParams analytic = zeros_like(params);
    for (const auto& c : cases) {
      ForwardCache cache;
      const PredictionSet preds = forward(params, c.sample.scene.image, cache);
      PredictionGrad g = PredictionGrad::zeros(preds);
      comp.f(preds, c, &g);
      backward_into(params, cache, to_output_grad(preds, g), analytic);
    }
    Flat grad_flat(analytic);
    ModelParams probe = params;
    Flat probe_flat(probe);
    for (int k = 0; k < opt.probes; ++k) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(probe_flat.total) - 1));
      double& x = probe_flat.at(idx);
      const double x0 = x;
      x = x0 + opt.step;
      const double up = loss_at(probe, comp.f);
      x = x0 - opt.step;
      const double down = loss_at(probe, comp.f);
      x = x0;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = grad_flat.at(idx);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
      ++check.probes;
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      if (rel > check.max_rel_error || check.worst_entry.empty()) {
        check.max_rel_error = std::max(check.max_rel_error, rel);
        const auto e = probe_flat.entry(idx);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s[%zu]: %.6e vs %.6e", e.tensor.c_str(), e.index, a, numeric);
        check.worst_entry = buf;
      }
    }
    report.components.push_back(check);
  }

  // The old model enters the loss only through outputs captured before the
  // step, so perturbing its parameters cannot move the loss.
  {
    const Component& total = components.back().f;
    const double base = loss_at(params, total);
    ModelParams old_probe = old_params;
    Flat f(old_probe);
    for (int k = 0; k < opt.probes; ++k) {
      const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(f.total) - 1));
      f.at(idx) += opt.step;
      report.old_model_max_change = std::max(report.old_model_max_change, std::abs(loss_at(params, total) - base));
      f.at(idx) -= opt.step;
      ++report.old_model_probes;
    }
  }
  return report;
}

}  // namespace contmask
