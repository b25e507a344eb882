#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "contmask/common.hpp"

namespace contmask {

enum class ClassKind { thing, stuff };

struct ClassDef {
  int id = 0;
  ClassKind kind = ClassKind::thing;
  std::vector<double> appearance;  // one mean per channel, in [0, 1]
};

/// C×H×W feature image, channel-major then row-major.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0) {}

  double& at(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * height + h) * width + w];
  }
  double at(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * height + h) * width + w];
  }
  bool operator==(const Image&) const = default;
};

struct SceneSample {
  Image image;
  std::vector<GtSegment> segments;
  std::uint64_t seed = 0;
  bool operator==(const SceneSample&) const = default;
};

struct Geometry {
  int height = 16;
  int width = 16;
  int max_instances = 2;
};

inline constexpr double kNoiseAmplitude = 0.05;
inline constexpr double kNeutralLevel = 0.5;
inline constexpr int kMaxPlacementAttempts = 100;

/// Deterministic palette: ids 1..num_classes, kinds alternate thing/stuff until
/// one quota runs out, appearances drawn from a lattice that keeps every pair of
/// classes (and the neutral colour) at least 0.2 apart in some channel.
std::vector<ClassDef> make_palette(int num_classes, int num_things, int channels,
                                   std::uint64_t seed);

/// Appearance assigned to pixels that belong to no segment.
std::vector<double> neutral_appearance(int channels);

/// Draws one panoptic scene. Throws PlacementError when a shape cannot be
/// placed after kMaxPlacementAttempts tries; callers retry with a new seed.
SceneSample generate_scene(std::uint64_t seed, const std::vector<ClassDef>& palette,
                           const std::set<int>& present, const Geometry& geometry);

/// Keeps the segments whose class is in `current`; the image is untouched.
SceneSample filter_annotations(const SceneSample& sample, const std::set<int>& current);

/// H×W map of class ids, 0 where no segment lies. Instances of a class merge.
std::vector<int> to_semantic(std::span<const GtSegment> segments, int height, int width);

/// Classes that own at least one segment of the sample.
std::set<int> present_classes(const SceneSample& sample);

struct DatasetSpec {
  int samples_per_class = 40;
  int max_extra_classes = 2;
  Geometry geometry;
};

/// Record of how a sample was drawn, enough to regenerate it.
struct SampleRecipe {
  std::uint64_t seed = 0;
  std::set<int> present;
};

/// For every palette class, `samples_per_class` scenes anchored on it plus up to
/// `max_extra_classes` other random classes. Placement failures are retried
/// with the next derived seed; `recipes` receives the seeds that succeeded.
std::vector<SceneSample> build_dataset(const std::vector<ClassDef>& palette, const DatasetSpec& spec,
                                       std::uint64_t seed,
                                       std::vector<SampleRecipe>* recipes = nullptr);

}  // namespace contmask
