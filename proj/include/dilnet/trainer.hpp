#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dilnet/loss.hpp"
#include "dilnet/metrics.hpp"
#include "dilnet/netgraph.hpp"
#include "dilnet/synth.hpp"

namespace dilnet {

struct SGDConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;  // classical momentum: v <- mu*v - lr*g; w <- w + v
  int64_t batch_size = 1;
  int64_t iterations = 0;
  uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0.0) throw ArgumentError("learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ArgumentError("momentum must be in [0,1)");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (iterations < 0) throw ArgumentError("iterations must be >= 0");
  }
};

// Which parameter subset a stage updates. The boundary between front end and
// context module is the plan's context_start layer index; gradients for
// frozen filters are discarded.
enum class StageScope { front, context, joint };

struct TrainStage {
  StageScope scope = StageScope::joint;
  SGDConfig sgd;
};

struct TrainStagePlan {
  std::vector<TrainStage> stages;
  int64_t context_start = -1;  // conv-filter index of the first context layer; -1 = no split

  void validate() const {
    if (stages.empty()) throw ArgumentError("stage plan needs at least one stage");
    for (const auto& s : stages) s.sgd.validate();
  }
};

// Draws fixed-size crops uniformly from a padded image. Images are padded
// per `padding`; the matching label crop is padded with the ignore label so
// the reflected buffer zone carries no supervision.
struct CropSampler {
  int64_t crop_size = 0;
  PaddingSpec padding{};
  uint64_t seed = 0;
};

// One uniform crop anchor over the valid positions of a padded plane.
std::pair<int64_t, int64_t> draw_crop_anchor(SplitMix64& rng, int64_t padded_h, int64_t padded_w,
                                             int64_t crop_size);

// v <- momentum*v - lr*g; w <- w + v, elementwise over every filter.
void sgd_step(NetworkWeights& w, const NetworkWeights& grads, NetworkWeights& velocity,
              const SGDConfig& cfg);

struct TrainResult {
  NetworkWeights weights;
  std::vector<double> loss_history;  // one entry per iteration, all stages
};

TrainResult train(const NetworkSpec& net, NetworkWeights w, const Dataset& data,
                  const TrainStagePlan& plan, const CropSampler& crop,
                  int32_t ignore_label = kIgnoreLabel);

// Training config file: key=value lines (see README). Stage fields use a
// stageN. prefix.
struct TrainConfig {
  TrainStagePlan plan;
  CropSampler crop;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);

void write_loss_csv(const std::string& path, const std::vector<double>& history);

// Runs the net over a full image with the receptive-field input buffer
// applied, and returns the argmax class map (ties to the lowest index).
// With the buffer in place, output pixel p corresponds to image pixel
// p*jump, so the map is full-resolution for stride-free nets.
LabelMap predict(const NetworkSpec& net, const NetworkWeights& w, const Tensor& image,
                 PadMode buffer_mode);

// Predicts every dataset image and scores it against the ground truth on
// the network's output grid.
struct EvalResult {
  ConfusionMatrix cm;
  MeanIouResult iou;
};

EvalResult evaluate_dataset(const NetworkSpec& net, const NetworkWeights& w, const Dataset& data,
                            PadMode buffer_mode, int64_t num_classes,
                            int32_t ignore_label = kIgnoreLabel);

}  // namespace dilnet
