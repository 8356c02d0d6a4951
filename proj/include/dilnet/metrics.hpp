#pragma once

#include <cstdint>
#include <vector>

#include "dilnet/tensor.hpp"

namespace dilnet {

// Per-class pixel counts, rows = ground truth, cols = prediction. Matrices
// are mergeable values: accumulate per thread or per image set, then add.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int64_t num_classes)
      : num_classes_(num_classes),
        counts_(static_cast<size_t>(num_classes * num_classes), 0) {}

  int64_t num_classes() const { return num_classes_; }
  uint64_t at(int64_t gt, int64_t pred) const { return counts_[gt * num_classes_ + pred]; }
  uint64_t& at(int64_t gt, int64_t pred) { return counts_[gt * num_classes_ + pred]; }

  uint64_t total() const {
    uint64_t t = 0;
    for (uint64_t v : counts_) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

 private:
  int64_t num_classes_ = 0;
  std::vector<uint64_t> counts_;
};

// Adds one prediction/ground-truth pair; pixels whose ground truth or
// prediction equals ignore_label are skipped.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                int32_t ignore_label = kIgnoreLabel);

struct MeanIouResult {
  double miou = 0.0;
  // One entry per class; NaN marks classes with an empty TP+FP+FN
  // denominator, which are excluded from the mean. Empty when no class was
  // scored at all.
  std::vector<double> per_class;
};

MeanIouResult mean_iou(const ConfusionMatrix& cm);

}  // namespace dilnet
