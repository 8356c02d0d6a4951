#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dilnet/errors.hpp"
#include "dilnet/rng.hpp"

namespace dilnet {

// Extents of a dense rank-4 feature-map stack: batch, channels, height,
// width. Storage is row-major with w fastest, then h, then c, then n.
struct Shape {
  int64_t n = 0;
  int64_t c = 0;
  int64_t h = 0;
  int64_t w = 0;

  bool operator==(const Shape&) const = default;

  int64_t elems() const { return n * c * h * w; }

  void validate() const {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ArgumentError("shape extents must all be >= 1, got " + str());
    // Reject element counts that overflow a signed 64-bit index.
    __int128 total = static_cast<__int128>(n) * c * h * w;
    if (total > INT64_MAX / static_cast<int64_t>(sizeof(double)))
      throw ArgumentError("shape " + str() + " exceeds addressable size");
  }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

template <class T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape s, T init = T{}) : shape(s) {
    s.validate();
    data.assign(static_cast<size_t>(s.elems()), init);
  }

  Shape shape{};
  std::vector<T> data;

  int64_t idx(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return ((n * shape.c + c) * shape.h + y) * shape.w + x;
  }
  T& at(int64_t n, int64_t c, int64_t y, int64_t x) { return data[idx(n, c, y, x)]; }
  T at(int64_t n, int64_t c, int64_t y, int64_t x) const { return data[idx(n, c, y, x)]; }

  const T* row(int64_t n, int64_t c, int64_t y) const { return data.data() + idx(n, c, y, 0); }
  T* row(int64_t n, int64_t c, int64_t y) { return data.data() + idx(n, c, y, 0); }

  bool is_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;

// Per-pixel integer class ids over (batch, height, width). Value 255 is the
// conventional ignore label.
struct LabelMap {
  int64_t n = 0;
  int64_t h = 0;
  int64_t w = 0;
  std::vector<int32_t> data;

  LabelMap() = default;
  LabelMap(int64_t n_, int64_t h_, int64_t w_, int32_t init = 0)
      : n(n_), h(h_), w(w_), data(static_cast<size_t>(n_ * h_ * w_), init) {}

  int64_t idx(int64_t n_, int64_t y, int64_t x) const { return (n_ * h + y) * w + x; }
  int32_t& at(int64_t n_, int64_t y, int64_t x) { return data[idx(n_, y, x)]; }
  int32_t at(int64_t n_, int64_t y, int64_t x) const { return data[idx(n_, y, x)]; }
};

inline constexpr int32_t kIgnoreLabel = 255;

template <class T>
TensorT<T> tensor_fill(Shape shape, T value) {
  return TensorT<T>(shape, value);
}

// Uniform values in [low, high); a (shape, seed, low, high) tuple fully
// determines the result.
template <class T>
TensorT<T> tensor_random(Shape shape, uint64_t seed, T low, T high) {
  if (!(low < high)) throw ArgumentError("tensor_random requires low < high");
  TensorT<T> out(shape);
  SplitMix64 rng(seed);
  for (auto& v : out.data) {
    v = static_cast<T>(rng.uniform(static_cast<double>(low), static_cast<double>(high)));
    if (v >= high) v = std::nextafter(high, low);
  }
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return out;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!(a.shape == b.shape))
    throw ArgumentError("max_abs_diff: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = std::fabs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    if (d > m) m = d;
  }
  return m;
}

// Binary tensor file: magic "DILT", u32 version 1, four u64 extents
// (n,c,h,w), then IEEE-754 f32 payload in layout order. Little-endian.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace dilnet
