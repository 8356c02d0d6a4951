#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dilnet/tensor.hpp"

namespace dilnet {

enum class ShapeKind { rectangle, disk, triangle };

// Synthetic dense-prediction scenes. Every foreground class shares the same
// stripe colors; what distinguishes classes is the stripe orientation and
// outline of the shape, so a 3x3 patch is ambiguous while a window a few
// dozen pixels wide is not. That makes the value of a large receptive field
// measurable on desk-scale data.
struct ShapesSceneConfig {
  int64_t height = 64;
  int64_t width = 64;
  int64_t num_classes = 3;  // background + at least one foreground class
  int64_t shapes_min = 2;
  int64_t shapes_max = 4;
  std::vector<ShapeKind> kinds = {ShapeKind::rectangle, ShapeKind::disk, ShapeKind::triangle};
  double noise = 0.05;
  uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  Tensor image;     // (1, 3, h, w), values in [0, 1]
  LabelMap labels;  // (1, h, w), class ids
};

// Sample `index` is a pure function of (cfg, cfg.seed, index).
SynthSample generate_scene(const ShapesSceneConfig& cfg, uint64_t index);
std::vector<SynthSample> generate(const ShapesSceneConfig& cfg, int64_t count);

// Binary PPM (P6, maxval 255). Written values are round(v*255) clamped to
// [0,255]; read values are scaled to [0,1]. Single-image tensors only.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Binary PGM (P5, maxval 255); pixel value = class id, 255 = ignore.
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

// Scene config file: key=value lines with keys height, width, classes,
// shapes_min, shapes_max, noise, seed, kinds (comma list). Missing keys keep
// their defaults.
ShapesSceneConfig parse_scene_config(const std::string& text);
ShapesSceneConfig load_scene_config(const std::string& path);

// Dataset directory: images/NNNNNN.ppm, labels/NNNNNN.pgm, manifest.txt
// listing "images/NNNNNN.ppm labels/NNNNNN.pgm" pairs.
void write_dataset(const std::string& dir, const ShapesSceneConfig& cfg, int64_t count);

struct Dataset {
  std::vector<Tensor> images;
  std::vector<LabelMap> labels;
};

Dataset load_dataset(const std::string& dir);

}  // namespace dilnet
