#include "contmask/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "contmask/checkpoint.hpp"
#include "contmask/dataset_io.hpp"
#include "contmask/plot.hpp"
#include "json.hpp"

namespace contmask {
namespace {

// Seed streams derived from data.seed.
constexpr std::uint64_t kPaletteStream = 1;
constexpr std::uint64_t kTrainStream = 2;

constexpr int kLossWindow = 50;

std::vector<std::span<double>> tensors(ModelParams& p) {
  std::vector<std::span<double>> out;
  p.visit([&](const char*, auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

std::vector<std::span<const double>> tensors(const ModelParams& p) {
  std::vector<std::span<const double>> out;
  p.visit([&](const char*, const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

void set_zero(ModelParams& p) {
  p.visit([](const char*, auto& t) { t.setZero(); });
}

std::string protocol_name(const ExperimentConfig& c) {
  std::string s = std::to_string(c.protocol.initial);
  for (int k = c.protocol.initial; k < c.data.num_classes; k += c.protocol.increment) {
    s += "-" + std::to_string(c.protocol.increment);
  }
  return s;
}

// Pixels of classes that exist in the scene but are not evaluated yet.
BinaryMask void_region(const SceneSample& scene, const std::set<int>& seen) {
  BinaryMask v(scene.image.height, scene.image.width);
  for (const auto& s : scene.segments) {
    if (seen.contains(s.class_id)) continue;
    for (std::size_t p = 0; p < v.bits.size(); ++p) v.bits[p] |= s.mask.bits[p];
  }
  return v;
}

}  // namespace

ExperimentData make_experiment_data(const DataConfig& d) {
  ExperimentData out;
  out.palette = make_palette(d.num_classes, d.num_things, d.channels, mix_seed(d.seed, kPaletteStream));
  const Geometry geometry{d.height, d.width, d.max_instances};
  out.train = build_dataset(out.palette, {d.samples_per_class, d.max_extra_classes, geometry},
                            mix_seed(d.seed, kTrainStream), &out.train_recipes);
  out.test = build_dataset(out.palette, {d.test_samples_per_class, d.max_extra_classes, geometry},
                           d.test_seed, &out.test_recipes);
  return out;
}

int ClassIndex::index_of(int class_id) const {
  const auto it = std::find(ordering.begin(), ordering.end(), class_id);
  if (it == ordering.end()) throw IntegrityError("class " + std::to_string(class_id) + " not in ordering");
  return static_cast<int>(it - ordering.begin()) + 1;
}

Adam::Adam(const ModelParams& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(zeros_like(like)), v_(zeros_like(like)) {}

void Adam::step(ModelParams& params, const ModelParams& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = tensors(params);
  const auto g = tensors(grads);
  auto m = tensors(m_);
  auto v = tensors(v_);
  if (p.size() != g.size() || p.size() != m.size()) throw IntegrityError("Adam: tensor count mismatch");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k].size() != g[k].size() || p[k].size() != m[k].size()) {
      throw IntegrityError("Adam: tensor shape mismatch");
    }
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      m[k][i] = beta1_ * m[k][i] + (1.0 - beta1_) * g[k][i];
      v[k][i] = beta2_ * v[k][i] + (1.0 - beta2_) * g[k][i] * g[k][i];
      p[k][i] -= lr_ * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + eps_);
    }
  }
}

std::vector<PseudoLabel> cap_pseudo_labels(std::vector<PseudoLabel> pseudo, std::size_t gt_count,
                                           std::size_t capacity) {
  const std::size_t room = capacity > gt_count ? capacity - gt_count : 0;
  if (pseudo.size() <= room) return pseudo;
  std::stable_sort(pseudo.begin(), pseudo.end(),
                   [](const PseudoLabel& a, const PseudoLabel& b) { return a.confidence > b.confidence; });
  pseudo.resize(room);
  std::sort(pseudo.begin(), pseudo.end(),
            [](const PseudoLabel& a, const PseudoLabel& b) { return a.query < b.query; });
  return pseudo;
}

Experiment::Experiment(ExperimentConfig config, std::shared_ptr<const ExperimentData> data)
    : config_(std::move(config)), data_(std::move(data)) {
  validate(config_);
  if (!data_) throw ConfigError("experiment needs data");
  const auto ordering = make_ordering(config_.data.num_classes, config_.protocol.ordering_seed);
  tasks_ = build_protocol({ordering, config_.protocol.initial, config_.protocol.increment,
                           config_.protocol.overlap_mode});
  index_.ordering = ordering;
  state_.init_rng = Rng(config_.optimization.init_seed);
  state_.shuffle_rng = Rng(config_.optimization.shuffle_seed);
  state_.params = init_params(config_.model_config(), static_cast<int>(tasks_.front().new_classes.size()),
                              state_.init_rng, config_.model.new_row_std);
}

LossBreakdown Experiment::sample_loss(const PredictionSet& preds, const PreparedSample& sample,
                                      std::span<const int> new_indices, const LossConfig& losses,
                                      double lambda_d, PredictionGrad* grad, const Matching* fixed) {
  const Matching sigma = fixed ? *fixed : match(preds, sample.labels);
  LossBreakdown b = seg_loss(preds, sample.labels, sigma, losses.hyper(), grad);
  if (sample.old && losses.distill_mode != DistillMode::none && lambda_d > 0.0) {
    Matrix* dprobs = grad ? &grad->class_probs : nullptr;
    b.adaptive_distill = losses.distill_mode == DistillMode::kd
                             ? kd_loss(preds.class_probs, sample.old->class_probs, new_indices, dprobs, lambda_d)
                             : ad_loss(preds.class_probs, sample.old->class_probs, new_indices, dprobs, lambda_d);
    b.total += lambda_d * b.adaptive_distill;
  }
  return b;
}

std::vector<PreparedSample> Experiment::prepare(int step, const ModelParams* old) const {
  const auto slice = slice_dataset(data_->train, tasks_, step, config_.protocol.overlap_mode);
  const bool need_old = old && (config_.losses.distill_mode != DistillMode::none || config_.losses.pseudo_labels);
  const auto capacity = static_cast<std::size_t>(config_.model.queries);
  std::vector<PreparedSample> out;
  out.reserve(slice.size());
  for (const auto& scene : slice) {
    PreparedSample ps;
    ps.scene = scene;
    for (const auto& seg : scene.segments) ps.gt.push_back({index_.index_of(seg.class_id), seg.mask});
    if (ps.gt.size() > capacity) {
      throw CapacityError("sample has " + std::to_string(ps.gt.size()) + " segments but the model has " +
                          std::to_string(capacity) + " queries");
    }
    if (need_old) {
      ps.old = OldModelOutput::from(forward(*old, scene.image));
      if (config_.losses.pseudo_labels) {
        std::vector<BinaryMask> gt_masks;
        for (const auto& g : ps.gt) gt_masks.push_back(g.mask);
        ps.pseudo = cap_pseudo_labels(generate_pseudo_labels(*ps.old, gt_masks), ps.gt.size(), capacity);
      }
    }
    ps.labels = merge_labels(ps.gt, ps.pseudo);
    out.push_back(std::move(ps));
  }
  return out;
}

void Experiment::dump_batch(int step, int update, std::span<const PreparedSample* const> batch,
                            const std::string& reason) const {
  try {
    const auto dir = std::filesystem::path(config_.output_dir) / "diagnostics";
    std::filesystem::create_directories(dir);
    const std::string stem = "step" + std::to_string(step) + "_update" + std::to_string(update);
    std::vector<SceneSample> scenes;
    std::ostringstream txt;
    txt << "reason: " << reason << "\n";
    for (const auto* s : batch) {
      scenes.push_back(s->scene);
      txt << "sample seed " << s->scene.seed << ": " << s->gt.size() << " gt, " << s->pseudo.size()
          << " pseudo\n";
    }
    write_container(dir / (stem + ".cmfd"), scenes);
    write_text(dir / (stem + ".txt"), txt.str());
    save_checkpoint(dir / (stem + ".cmfk"), state_.params);
  } catch (const std::exception&) {
    // The original failure is what the caller needs to see.
  }
}

void Experiment::run_step() {
  if (done()) throw ConfigError("experiment already finished");
  const int t = state_.next_step;
  const auto& task = tasks_[static_cast<std::size_t>(t)];
  const auto& opt = config_.optimization;

  std::vector<int> new_indices;
  for (int c : task.new_classes) new_indices.push_back(index_.index_of(c));

  if (t > 0) {
    state_.old_params = state_.params;
    state_.params = expand_classifier(state_.params, static_cast<int>(task.new_classes.size()),
                                      state_.init_rng, config_.model.new_row_std);
  } else {
    state_.old_params.reset();
  }
  const auto prepared = prepare(t, t > 0 ? &*state_.old_params : nullptr);
  if (prepared.empty()) {
    throw ConfigError("step " + std::to_string(t) + " has no training samples");
  }

  const int updates = t == 0 ? opt.steps_initial
                             : opt.steps_per_class * static_cast<int>(task.new_classes.size());
  const double lr = t == 0 ? opt.lr_initial : opt.lr_incremental;
  const double lambda_d = effective_lambda_d(config_.losses, tasks_.size());
  const auto batch_size = static_cast<std::size_t>(std::min<int>(opt.batch_size, static_cast<int>(prepared.size())));

  Adam adam(state_.params, lr);
  ModelParams grads = zeros_like(state_.params);
  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  std::vector<double> recent;
  std::vector<const PreparedSample*> batch;

  for (int u = 0; u < updates; ++u) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        state_.shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&prepared[order[cursor++]]);
    }
    set_zero(grads);
    double batch_loss = 0.0;
    for (const auto* sample : batch) {
      ForwardCache cache;
      PredictionSet preds;
      try {
        preds = forward(state_.params, sample->scene.image, cache);
      } catch (const NumericError& e) {
        dump_batch(t, u, batch, e.what());
        throw;
      }
      PredictionGrad g = PredictionGrad::zeros(preds);
      const LossBreakdown b = sample_loss(preds, *sample, new_indices, config_.losses, lambda_d, &g);
      if (!std::isfinite(b.total)) {
        std::ostringstream why;
        why << "non-finite loss at step " << t << ", update " << u << " (focal " << b.focal << ", dice "
            << b.dice_loss << ", ce " << b.mask_ce << ", distill " << b.adaptive_distill << ")";
        dump_batch(t, u, batch, why.str());
        throw NumericError(why.str());
      }
      batch_loss += b.total;
      OutputGrad og = to_output_grad(preds, g);
      const double scale = 1.0 / static_cast<double>(batch.size());
      og.class_probs *= scale;
      og.mask_logits *= scale;
      backward_into(state_.params, cache, og, grads);
    }
    adam.step(state_.params, grads);
    recent.push_back(batch_loss / static_cast<double>(batch.size()));
    if (recent.size() > kLossWindow) recent.erase(recent.begin());
  }

  StepLog log;
  log.step = t;
  log.updates = updates;
  for (double l : recent) log.final_loss += l / static_cast<double>(recent.size());
  double pseudo_total = 0.0;
  for (const auto& p : prepared) pseudo_total += static_cast<double>(p.pseudo.size());
  log.mean_pseudo_labels = pseudo_total / static_cast<double>(prepared.size());
  state_.logs.push_back(log);

  checkpoints_.push_back(state_.params);
  state_.reports.push_back(evaluate(state_.params, t));
  state_.next_step = t + 1;
  if (t == 0) initial_state_ = state_;
}

void Experiment::adopt_initial_step(const Experiment& other) {
  if (state_.next_step != 0) throw ConfigError("adopt_initial_step: experiment already started");
  if (!other.initial_state_) throw ConfigError("adopt_initial_step: source has not finished step 0");
  if (!same_initial_step(config_, other.config_)) {
    throw ConfigError("adopt_initial_step: configurations differ in their first step");
  }
  state_ = *other.initial_state_;
  initial_state_ = state_;
  checkpoints_ = {other.checkpoints_.front()};
}

StepReport Experiment::evaluate(const ModelParams& params, int step) const {
  const auto& task = tasks_.at(static_cast<std::size_t>(step));
  const std::set<int> seen(task.seen_classes.begin(), task.seen_classes.end());
  PqStats pq;
  IouStats iou;
  for (const auto& scene : data_->test) {
    const PredictionSet preds = forward(params, scene.image);
    const auto gt = filter_annotations(scene, seen).segments;

    // Predicted segments lying mostly on not-yet-seen classes are ignored,
    // as predictions on void regions are in standard panoptic evaluation.
    const BinaryMask unseen = void_region(scene, seen);
    std::vector<Segment> pred;
    for (auto& s : infer_panoptic(preds, config_.eval.min_confidence, config_.eval.min_area)) {
      long on_void = 0;
      for (std::size_t p = 0; p < s.mask.bits.size(); ++p) on_void += s.mask.bits[p] && unseen.bits[p];
      if (2 * on_void > s.mask.area()) continue;
      s.class_id = index_.class_of(s.class_id);
      pred.push_back(std::move(s));
    }
    accumulate_pq(pred, gt, pq);

    // Semantic scores cover annotated pixels only.
    const auto gt_map = to_semantic(gt, scene.image.height, scene.image.width);
    const auto sem = infer_semantic(preds);
    std::vector<int> p_sel, g_sel;
    for (std::size_t p = 0; p < gt_map.size(); ++p) {
      if (gt_map[p] == 0) continue;
      p_sel.push_back(index_.class_of(sem[p]));
      g_sel.push_back(gt_map[p]);
    }
    accumulate_iou(p_sel, g_sel, task.seen_classes, iou);
  }
  return make_step_report(step, task.seen_classes, pq, iou);
}

RunResult Experiment::result() const {
  RunResult r;
  r.config = config_;
  r.tasks = tasks_;
  r.reports = state_.reports;
  r.logs = state_.logs;
  r.checkpoints = checkpoints_;
  if (done()) r.summary = aggregate_continual(r.reports, r.tasks);
  return r;
}

namespace {

std::string percent(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", 100.0 * *v);
  return buf;
}

nlohmann::json percent_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return std::round(1e6 * 100.0 * *v) / 1e6;
}

nlohmann::json group_json(const GroupSummary& g) {
  return {{"base", percent_json(g.base)},
          {"new", percent_json(g.added)},
          {"all", percent_json(g.all)},
          {"avg", percent_json(g.avg)}};
}

}  // namespace

std::string steps_csv(const RunResult& result) {
  std::ostringstream out;
  out << "step,class_id,pq,sq,rq,iou\n";
  for (const auto& r : result.reports) {
    for (int c : r.seen_classes) {
      const auto& m = r.per_class.at(c);
      out << r.step << ',' << c << ',' << percent(m.pq) << ',' << percent(m.sq) << ',' << percent(m.rq)
          << ',' << percent(m.iou) << '\n';
    }
  }
  return out.str();
}

std::string summary_json(const RunResult& result) {
  const auto& c = result.config;
  nlohmann::json j;
  j["name"] = c.name;
  j["protocol"] = protocol_name(c);
  j["overlap_mode"] = to_string(c.protocol.overlap_mode);
  j["distill_mode"] = to_string(c.losses.distill_mode);
  j["pseudo_labels"] = c.losses.pseudo_labels;
  j["lambda_d"] = effective_lambda_d(c.losses, result.tasks.size());
  j["mask_activation"] = to_string(c.model.mask_activation);
  j["pq"] = group_json(result.summary.pq);
  j["sq"] = group_json(result.summary.sq);
  j["rq"] = group_json(result.summary.rq);
  j["miou"] = group_json(result.summary.miou);
  auto steps = nlohmann::json::array();
  for (std::size_t t = 0; t < result.reports.size(); ++t) {
    const auto& seen = result.tasks[t].seen_classes;
    steps.push_back({{"step", t},
                     {"pq", percent_json(class_mean(result.reports[t], seen, &ClassMetrics::pq))},
                     {"miou", percent_json(class_mean(result.reports[t], seen, &ClassMetrics::iou))},
                     {"mean_pseudo_labels", std::round(1e6 * result.logs[t].mean_pseudo_labels) / 1e6}});
  }
  j["steps"] = steps;
  return j.dump(2) + "\n";
}

void write_run(const RunResult& result) {
  const std::filesystem::path dir(result.config.output_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", config_to_json(result.config));
  write_text(dir / "steps.csv", steps_csv(result));
  write_text(dir / "summary.json", summary_json(result));
  const Curve curve = make_curve(result.config.name, result.reports);
  write_text(dir / "curves.svg", render_curves_svg(std::span(&curve, 1)));
  for (std::size_t t = 0; t < result.checkpoints.size(); ++t) {
    save_checkpoint(dir / ("step" + std::to_string(t) + ".cmfk"), result.checkpoints[t]);
  }
}

RunResult run_experiment(const ExperimentConfig& config, bool write) {
  return run_grid({config}, write).front();
}

std::vector<RunResult> run_grid(const std::vector<ExperimentConfig>& configs, bool write,
                                const std::optional<std::filesystem::path>& plot_dir,
                                const std::function<void(const std::string&)>& progress) {
  const auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  std::vector<std::pair<DataConfig, std::shared_ptr<const ExperimentData>>> datasets;
  std::vector<std::unique_ptr<Experiment>> finished;
  std::vector<RunResult> results;
  for (const auto& config : configs) {
    validate(config);
    std::shared_ptr<const ExperimentData> data;
    for (const auto& [dc, d] : datasets)
      if (dc == config.data) data = d;
    if (!data) {
      say("generating data for " + config.name);
      data = std::make_shared<const ExperimentData>(make_experiment_data(config.data));
      datasets.emplace_back(config.data, data);
    }
    auto exp = std::make_unique<Experiment>(config, data);
    for (const auto& prev : finished) {
      if (same_initial_step(config, prev->config())) {
        exp->adopt_initial_step(*prev);
        say(config.name + ": step 0 shared with " + prev->config().name);
        break;
      }
    }
    while (!exp->done()) {
      say(config.name + ": training step " + std::to_string(exp->state().next_step));
      exp->run_step();
    }
    results.push_back(exp->result());
    if (write) write_run(results.back());
    finished.push_back(std::move(exp));
  }
  if (write && plot_dir) {
    std::vector<Curve> curves;
    for (const auto& r : results) curves.push_back(make_curve(r.config.name, r.reports));
    std::filesystem::create_directories(*plot_dir);
    write_text(*plot_dir / "curves.svg", render_curves_svg(curves));
  }
  return results;
}

}  // namespace contmask
