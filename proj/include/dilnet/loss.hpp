#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dilnet/errors.hpp"
#include "dilnet/tensor.hpp"

namespace dilnet {

template <class T>
struct XentResultT {
  double loss = 0.0;
  TensorT<T> grad_logits;
};

// Per-pixel softmax cross-entropy, averaged over non-ignored pixels. The
// gradient is softmax-minus-onehot scaled by 1/(#non-ignored), zero at
// ignored pixels. With every pixel ignored the loss is 0 with a zero
// gradient.
template <class T>
XentResultT<T> softmax_xent(const TensorT<T>& logits, const LabelMap& labels,
                            int32_t ignore_label = kIgnoreLabel) {
  const int64_t N = logits.shape.n, C = logits.shape.c, H = logits.shape.h, W = logits.shape.w;
  if (labels.n != N || labels.h != H || labels.w != W)
    throw ArgumentError("softmax_xent: label map (" + std::to_string(labels.n) + "," +
                        std::to_string(labels.h) + "," + std::to_string(labels.w) +
                        ") does not match logits " + logits.shape.str());
  XentResultT<T> res;
  res.grad_logits = TensorT<T>(logits.shape, T(0));

  int64_t scored = 0;
  for (int32_t v : labels.data)
    if (v != ignore_label) {
      if (v < 0 || v >= C)
        throw DataError("label " + std::to_string(v) + " out of range for " + std::to_string(C) +
                        " classes");
      ++scored;
    }
  if (scored == 0) return res;

  const double inv_m = 1.0 / static_cast<double>(scored);
  double total = 0.0;
  std::vector<double> z(static_cast<size_t>(C));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int32_t lab = labels.at(n, y, x);
        if (lab == ignore_label) continue;
        double m = -1e300;
        for (int64_t c = 0; c < C; ++c) {
          z[c] = static_cast<double>(logits.at(n, c, y, x));
          if (z[c] > m) m = z[c];
        }
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) denom += std::exp(z[c] - m);
        total += std::log(denom) - (z[lab] - m);
        for (int64_t c = 0; c < C; ++c) {
          double p = std::exp(z[c] - m) / denom;
          res.grad_logits.at(n, c, y, x) =
              static_cast<T>((p - (c == lab ? 1.0 : 0.0)) * inv_m);
        }
      }
  res.loss = total * inv_m;
  return res;
}

using XentResult = XentResultT<float>;

}  // namespace dilnet
