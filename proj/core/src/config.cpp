#include "contmask/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace contmask {
namespace {

using nlohmann::json;

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

DistillMode parse_distill_mode(const std::string& s) {
  if (s == "none") return DistillMode::none;
  if (s == "kd") return DistillMode::kd;
  if (s == "ad") return DistillMode::ad;
  throw ConfigError("distill_mode must be none, kd or ad; got '" + s + "'");
}

std::string to_string(DistillMode m) {
  switch (m) {
    case DistillMode::none: return "none";
    case DistillMode::kd: return "kd";
    case DistillMode::ad: return "ad";
  }
  return "none";
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig c;
  c.channels = data.channels;
  c.height = data.height;
  c.width = data.width;
  c.queries = model.queries;
  c.dim = model.dim;
  c.backbone_hidden = model.backbone_hidden;
  c.ffn_hidden = model.ffn_hidden;
  c.mask_activation = model.mask_activation;
  return c;
}

ExperimentConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(root, "config",
            {"name", "data", "protocol", "model", "optimization", "losses", "eval", "output_dir"});
  ExperimentConfig c;
  read(root, "name", c.name, "config");
  read(root, "output_dir", c.output_dir, "config");

  if (root.contains("data")) {
    const auto& j = root["data"];
    only_keys(j, "data",
              {"num_classes", "num_things", "channels", "height", "width", "max_instances",
               "samples_per_class", "test_samples_per_class", "max_extra_classes", "seed", "test_seed"});
    auto& d = c.data;
    read(j, "num_classes", d.num_classes, "data");
    read(j, "num_things", d.num_things, "data");
    read(j, "channels", d.channels, "data");
    read(j, "height", d.height, "data");
    read(j, "width", d.width, "data");
    read(j, "max_instances", d.max_instances, "data");
    read(j, "samples_per_class", d.samples_per_class, "data");
    read(j, "test_samples_per_class", d.test_samples_per_class, "data");
    read(j, "max_extra_classes", d.max_extra_classes, "data");
    read(j, "seed", d.seed, "data");
    read(j, "test_seed", d.test_seed, "data");
  }
  if (root.contains("protocol")) {
    const auto& j = root["protocol"];
    only_keys(j, "protocol", {"initial", "increment", "overlap_mode", "ordering_seed"});
    read(j, "initial", c.protocol.initial, "protocol");
    read(j, "increment", c.protocol.increment, "protocol");
    std::string mode = to_string(c.protocol.overlap_mode);
    read(j, "overlap_mode", mode, "protocol");
    c.protocol.overlap_mode = parse_overlap_mode(mode);
    if (j.contains("ordering_seed") && !j["ordering_seed"].is_null()) {
      std::uint64_t s = 0;
      read(j, "ordering_seed", s, "protocol");
      c.protocol.ordering_seed = s;
    }
  }
  if (root.contains("model")) {
    const auto& j = root["model"];
    only_keys(j, "model",
              {"queries", "dim", "backbone_hidden", "ffn_hidden", "mask_activation", "new_row_std"});
    read(j, "queries", c.model.queries, "model");
    read(j, "dim", c.model.dim, "model");
    read(j, "backbone_hidden", c.model.backbone_hidden, "model");
    read(j, "ffn_hidden", c.model.ffn_hidden, "model");
    std::string act = to_string(c.model.mask_activation);
    read(j, "mask_activation", act, "model");
    c.model.mask_activation = parse_mask_activation(act);
    read(j, "new_row_std", c.model.new_row_std, "model");
  }
  if (root.contains("optimization")) {
    const auto& j = root["optimization"];
    only_keys(j, "optimization",
              {"steps_initial", "steps_per_class", "lr_initial", "lr_incremental", "batch_size",
               "init_seed", "shuffle_seed"});
    auto& o = c.optimization;
    read(j, "steps_initial", o.steps_initial, "optimization");
    read(j, "steps_per_class", o.steps_per_class, "optimization");
    read(j, "lr_initial", o.lr_initial, "optimization");
    read(j, "lr_incremental", o.lr_incremental, "optimization");
    read(j, "batch_size", o.batch_size, "optimization");
    read(j, "init_seed", o.init_seed, "optimization");
    read(j, "shuffle_seed", o.shuffle_seed, "optimization");
  }
  if (root.contains("losses")) {
    const auto& j = root["losses"];
    only_keys(j, "losses",
              {"alpha", "gamma", "lambda_mask", "no_object_weight", "lambda_d", "distill_mode",
               "pseudo_labels"});
    auto& l = c.losses;
    read(j, "alpha", l.alpha, "losses");
    read(j, "gamma", l.gamma, "losses");
    read(j, "lambda_mask", l.lambda_mask, "losses");
    read(j, "no_object_weight", l.no_object_weight, "losses");
    if (j.contains("lambda_d") && !j["lambda_d"].is_null()) {
      double v = 0.0;
      read(j, "lambda_d", v, "losses");
      l.lambda_d = v;
    }
    std::string mode = to_string(l.distill_mode);
    read(j, "distill_mode", mode, "losses");
    l.distill_mode = parse_distill_mode(mode);
    read(j, "pseudo_labels", l.pseudo_labels, "losses");
  }
  if (root.contains("eval")) {
    const auto& j = root["eval"];
    only_keys(j, "eval", {"min_confidence", "min_area"});
    read(j, "min_confidence", c.eval.min_confidence, "eval");
    read(j, "min_area", c.eval.min_area, "eval");
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["output_dir"] = c.output_dir;
  j["data"] = {{"num_classes", c.data.num_classes},
               {"num_things", c.data.num_things},
               {"channels", c.data.channels},
               {"height", c.data.height},
               {"width", c.data.width},
               {"max_instances", c.data.max_instances},
               {"samples_per_class", c.data.samples_per_class},
               {"test_samples_per_class", c.data.test_samples_per_class},
               {"max_extra_classes", c.data.max_extra_classes},
               {"seed", c.data.seed},
               {"test_seed", c.data.test_seed}};
  j["protocol"] = {{"initial", c.protocol.initial},
                   {"increment", c.protocol.increment},
                   {"overlap_mode", to_string(c.protocol.overlap_mode)},
                   {"ordering_seed", c.protocol.ordering_seed ? json(*c.protocol.ordering_seed) : json(nullptr)}};
  j["model"] = {{"queries", c.model.queries},
                {"dim", c.model.dim},
                {"backbone_hidden", c.model.backbone_hidden},
                {"ffn_hidden", c.model.ffn_hidden},
                {"mask_activation", to_string(c.model.mask_activation)},
                {"new_row_std", c.model.new_row_std}};
  j["optimization"] = {{"steps_initial", c.optimization.steps_initial},
                       {"steps_per_class", c.optimization.steps_per_class},
                       {"lr_initial", c.optimization.lr_initial},
                       {"lr_incremental", c.optimization.lr_incremental},
                       {"batch_size", c.optimization.batch_size},
                       {"init_seed", c.optimization.init_seed},
                       {"shuffle_seed", c.optimization.shuffle_seed}};
  j["losses"] = {{"alpha", c.losses.alpha},
                 {"gamma", c.losses.gamma},
                 {"lambda_mask", c.losses.lambda_mask},
                 {"no_object_weight", c.losses.no_object_weight},
                 {"lambda_d", c.losses.lambda_d ? json(*c.losses.lambda_d) : json(nullptr)},
                 {"distill_mode", to_string(c.losses.distill_mode)},
                 {"pseudo_labels", c.losses.pseudo_labels}};
  j["eval"] = {{"min_confidence", c.eval.min_confidence}, {"min_area", c.eval.min_area}};
  return j.dump(2) + "\n";
}

void validate(const ExperimentConfig& c) {
  auto positive = [](long v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(c.data.num_classes, "data.num_classes");
  positive(c.data.channels, "data.channels");
  positive(c.data.max_instances, "data.max_instances");
  positive(c.data.samples_per_class, "data.samples_per_class");
  positive(c.data.test_samples_per_class, "data.test_samples_per_class");
  if (c.data.num_things < 0 || c.data.num_things > c.data.num_classes) {
    throw ConfigError("data.num_things must lie in [0, num_classes]");
  }
  if (c.data.max_extra_classes < 0) throw ConfigError("data.max_extra_classes must be >= 0");
  if (c.data.height < 8 || c.data.width < 8) throw ConfigError("data grid must be at least 8x8");
  positive(c.protocol.initial, "protocol.initial");
  if (c.protocol.initial < c.data.num_classes) positive(c.protocol.increment, "protocol.increment");
  positive(c.model.queries, "model.queries");
  positive(c.model.dim, "model.dim");
  positive(c.model.backbone_hidden, "model.backbone_hidden");
  positive(c.model.ffn_hidden, "model.ffn_hidden");
  if (!(c.model.new_row_std >= 0.0)) throw ConfigError("model.new_row_std must be >= 0");
  positive(c.optimization.steps_initial, "optimization.steps_initial");
  positive(c.optimization.steps_per_class, "optimization.steps_per_class");
  positive(c.optimization.batch_size, "optimization.batch_size");
  if (!(c.optimization.lr_initial > 0.0) || !(c.optimization.lr_incremental > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (c.losses.lambda_d && *c.losses.lambda_d < 0.0) throw ConfigError("losses.lambda_d must be >= 0");
  if (c.losses.alpha < 0.0 || c.losses.gamma < 0.0 || c.losses.lambda_mask < 0.0 ||
      c.losses.no_object_weight < 0.0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (c.eval.min_confidence < 0.0 || c.eval.min_confidence > 1.0) {
    throw ConfigError("eval.min_confidence must lie in [0, 1]");
  }
  if (c.eval.min_area < 0) throw ConfigError("eval.min_area must be >= 0");
  // Divisibility of the protocol.
  build_protocol({make_ordering(c.data.num_classes, std::nullopt), c.protocol.initial,
                  c.protocol.increment, c.protocol.overlap_mode});
}

double effective_lambda_d(const LossConfig& losses, std::size_t num_tasks) {
  if (losses.lambda_d) return *losses.lambda_d;
  return num_tasks <= 2 ? 1.0 : 10.0;
}

bool same_initial_step(const ExperimentConfig& a, const ExperimentConfig& b) {
  const auto strip = [](LossConfig l) {
    l.lambda_d.reset();
    l.distill_mode = DistillMode::none;
    l.pseudo_labels = false;
    return l;
  };
  return a.data == b.data && a.protocol.initial == b.protocol.initial &&
         a.protocol.overlap_mode == b.protocol.overlap_mode &&
         a.protocol.ordering_seed == b.protocol.ordering_seed && a.model == b.model &&
         a.optimization == b.optimization && strip(a.losses) == strip(b.losses) && a.eval == b.eval &&
         (a.protocol.initial == a.data.num_classes) == (b.protocol.initial == b.data.num_classes);
}

}  // namespace contmask
