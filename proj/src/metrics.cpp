#include "dilnet/metrics.hpp"

#include <cmath>
#include <limits>

#include "dilnet/errors.hpp"

namespace dilnet {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_)
    throw ArgumentError("confusion matrix class counts differ");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                int32_t ignore_label) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
    throw ArgumentError("accumulate: prediction and ground truth shapes differ");
  const int64_t C = cm.num_classes();
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const int32_t g = gt.data[i], p = pred.data[i];
    if (g == ignore_label || p == ignore_label) continue;
    if (g < 0 || g >= C || p < 0 || p >= C)
      throw DataError("class id out of range: gt=" + std::to_string(g) +
                      " pred=" + std::to_string(p) + " with " + std::to_string(C) + " classes");
    ++cm.at(g, p);
  }
}

MeanIouResult mean_iou(const ConfusionMatrix& cm) {
  MeanIouResult res;
  const int64_t C = cm.num_classes();
  double sum = 0.0;
  int64_t valid = 0;
  res.per_class.assign(static_cast<size_t>(C), std::numeric_limits<double>::quiet_NaN());
  for (int64_t c = 0; c < C; ++c) {
    uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int64_t o = 0; o < C; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class never appeared; excluded from the mean
    double iou = static_cast<double>(tp) / static_cast<double>(denom);
    res.per_class[static_cast<size_t>(c)] = iou;
    sum += iou;
    ++valid;
  }
  if (valid == 0) {
    res.per_class.clear();
    res.miou = 0.0;
  } else {
    res.miou = sum / static_cast<double>(valid);
  }
  return res;
}

}  // namespace dilnet
