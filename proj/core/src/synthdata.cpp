#include "contmask/synthdata.hpp"

#include <algorithm>
#include <string>

namespace contmask {
namespace {

constexpr double kLevels[] = {0.1, 0.3, 0.7, 0.9};
constexpr int kMaxSeedRetries = 1000;

struct Placement {
  std::vector<int> pixels;  // flat indices
};

// Shape pixels for an axis-aligned rectangle or a discrete disc, drawn so the
// shape always lies fully inside the grid.
Placement draw_shape(Rng& rng, const Geometry& g, ClassKind kind) {
  Placement out;
  const int h = g.height;
  const int w = g.width;
  if (kind == ClassKind::stuff) {
    const int lo_h = std::max(3, h / 4), hi_h = std::max(lo_h, h / 2);
    const int lo_w = std::max(3, w / 4), hi_w = std::max(lo_w, w / 2);
    const int rh = rng.uniform_int(lo_h, hi_h);
    const int rw = rng.uniform_int(lo_w, hi_w);
    const int y0 = rng.uniform_int(0, h - rh);
    const int x0 = rng.uniform_int(0, w - rw);
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) out.pixels.push_back(y * w + x);
    return out;
  }
  if (rng.bernoulli(0.5)) {
    const int hi = std::max(3, std::min(h, w) / 4);
    const int rh = rng.uniform_int(2, hi);
    const int rw = rng.uniform_int(2, hi);
    const int y0 = rng.uniform_int(0, h - rh);
    const int x0 = rng.uniform_int(0, w - rw);
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) out.pixels.push_back(y * w + x);
  } else {
    const int r = rng.uniform_int(1, std::max(2, std::min(h, w) / 8));
    const int cy = rng.uniform_int(r, h - 1 - r);
    const int cx = rng.uniform_int(r, w - 1 - r);
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) out.pixels.push_back(y * w + x);
  }
  return out;
}

// Shapes may not overlap or touch (8-neighbourhood) an already placed shape,
// so instances of the same class stay separable.
bool fits(const Placement& p, const std::vector<int>& owner, const Geometry& g) {
  for (int idx : p.pixels) {
    const int y = idx / g.width, x = idx % g.width;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= g.height || xx < 0 || xx >= g.width) continue;
        if (owner[static_cast<std::size_t>(yy * g.width + xx)] >= 0) return false;
      }
    }
  }
  return true;
}

const ClassDef& lookup(const std::vector<ClassDef>& palette, int id) {
  for (const auto& c : palette)
    if (c.id == id) return c;
  throw ConfigError("class " + std::to_string(id) + " is not in the palette");
}

}  // namespace

std::vector<double> neutral_appearance(int channels) {
  return std::vector<double>(static_cast<std::size_t>(channels), kNeutralLevel);
}

std::vector<ClassDef> make_palette(int num_classes, int num_things, int channels,
                                   std::uint64_t seed) {
  if (num_classes < 1 || channels < 1) throw ConfigError("palette needs classes and channels");
  if (num_things < 0 || num_things > num_classes) throw ConfigError("bad thing count");
  std::size_t lattice = 1;
  for (int c = 0; c < channels; ++c) lattice *= std::size(kLevels);
  if (static_cast<std::size_t>(num_classes) > lattice) {
    throw ConfigError("too many classes for the appearance lattice; add channels");
  }
  std::vector<std::size_t> codes(lattice);
  for (std::size_t i = 0; i < lattice; ++i) codes[i] = i;
  Rng rng(mix_seed(seed, 0x9a1e77e));
  rng.shuffle(codes);

  std::vector<ClassDef> palette;
  int things_left = num_things;
  int stuff_left = num_classes - num_things;
  for (int i = 0; i < num_classes; ++i) {
    ClassDef def;
    def.id = i + 1;
    const bool want_thing = (i % 2 == 0) ? things_left > 0 : stuff_left == 0;
    def.kind = want_thing ? ClassKind::thing : ClassKind::stuff;
    (want_thing ? things_left : stuff_left) -= 1;
    std::size_t code = codes[static_cast<std::size_t>(i)];
    for (int c = 0; c < channels; ++c) {
      def.appearance.push_back(kLevels[code % std::size(kLevels)]);
      code /= std::size(kLevels);
    }
    palette.push_back(std::move(def));
  }
  return palette;
}

SceneSample generate_scene(std::uint64_t seed, const std::vector<ClassDef>& palette,
                           const std::set<int>& present, const Geometry& geometry) {
  if (geometry.height < 8 || geometry.width < 8) throw ConfigError("grid must be at least 8x8");
  if (geometry.max_instances < 1) throw ConfigError("max_instances must be positive");
  if (palette.empty()) throw ConfigError("empty palette");
  const int channels = static_cast<int>(palette.front().appearance.size());

  Rng rng(seed);
  std::vector<int> owner(static_cast<std::size_t>(geometry.height) * geometry.width, -1);
  SceneSample sample;
  sample.seed = seed;

  auto place = [&](const ClassDef& def) {
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
      Placement p = draw_shape(rng, geometry, def.kind);
      if (!fits(p, owner, geometry)) continue;
      GtSegment seg{def.id, BinaryMask(geometry.height, geometry.width)};
      for (int idx : p.pixels) {
        owner[static_cast<std::size_t>(idx)] = def.id;
        seg.mask.bits[static_cast<std::size_t>(idx)] = 1;
      }
      sample.segments.push_back(std::move(seg));
      return;
    }
    throw PlacementError("could not place class " + std::to_string(def.id) + " with seed " +
                         std::to_string(seed));
  };

  // Large regions first, so small shapes fill the gaps.
  for (int id : present) {
    const auto& def = lookup(palette, id);
    if (def.kind == ClassKind::stuff) place(def);
  }
  for (int id : present) {
    const auto& def = lookup(palette, id);
    if (def.kind != ClassKind::thing) continue;
    const int count = rng.uniform_int(1, geometry.max_instances);
    for (int k = 0; k < count; ++k) place(def);
  }

  sample.image = Image(channels, geometry.height, geometry.width);
  const auto neutral = neutral_appearance(channels);
  for (int y = 0; y < geometry.height; ++y) {
    for (int x = 0; x < geometry.width; ++x) {
      const int id = owner[static_cast<std::size_t>(y * geometry.width + x)];
      const auto& base = id > 0 ? lookup(palette, id).appearance : neutral;
      for (int c = 0; c < channels; ++c) {
        sample.image.at(c, y, x) = base[static_cast<std::size_t>(c)] +
                                   rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
      }
    }
  }
  return sample;
}

SceneSample filter_annotations(const SceneSample& sample, const std::set<int>& current) {
  SceneSample out;
  out.image = sample.image;
  out.seed = sample.seed;
  for (const auto& s : sample.segments)
    if (current.contains(s.class_id)) out.segments.push_back(s);
  return out;
}

std::vector<int> to_semantic(std::span<const GtSegment> segments, int height, int width) {
  std::vector<int> labels(static_cast<std::size_t>(height) * width, 0);
  for (const auto& s : segments) {
    if (s.mask.height != height || s.mask.width != width) {
      throw IntegrityError("to_semantic: segment shape mismatch");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!s.mask.bits[i]) continue;
      if (labels[i] != 0) throw IntegrityError("to_semantic: overlapping segments");
      labels[i] = s.class_id;
    }
  }
  return labels;
}

std::set<int> present_classes(const SceneSample& sample) {
  std::set<int> out;
  for (const auto& s : sample.segments) out.insert(s.class_id);
  return out;
}

std::vector<SceneSample> build_dataset(const std::vector<ClassDef>& palette, const DatasetSpec& spec,
                                       std::uint64_t seed, std::vector<SampleRecipe>* recipes) {
  if (spec.samples_per_class < 0 || spec.max_extra_classes < 0) {
    throw ConfigError("dataset counts must be non-negative");
  }
  Rng plan(mix_seed(seed, 0));
  std::uint64_t counter = 1;
  std::vector<SceneSample> out;
  for (const auto& anchor : palette) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      std::vector<int> others;
      for (const auto& c : palette)
        if (c.id != anchor.id) others.push_back(c.id);
      plan.shuffle(others);
      const int extra =
          std::min(plan.uniform_int(0, spec.max_extra_classes), static_cast<int>(others.size()));
      std::set<int> present{anchor.id};
      present.insert(others.begin(), others.begin() + extra);

      bool placed = false;
      for (int attempt = 0; attempt < kMaxSeedRetries && !placed; ++attempt) {
        const std::uint64_t scene_seed = mix_seed(seed, counter++);
        try {
          out.push_back(generate_scene(scene_seed, palette, present, spec.geometry));
          if (recipes) recipes->push_back({scene_seed, present});
          placed = true;
        } catch (const PlacementError&) {
        }
      }
      if (!placed) throw PlacementError("scene layout is infeasible for this geometry");
    }
  }
  return out;
}

}  // namespace contmask
