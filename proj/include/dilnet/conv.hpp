#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "dilnet/errors.hpp"
#include "dilnet/tensor.hpp"

namespace dilnet {

enum class PadMode { zero, reflect };

struct PaddingSpec {
  int64_t width = 0;
  PadMode mode = PadMode::zero;

  bool operator==(const PaddingSpec&) const = default;
};

// Learnable filter bank: weights (out_channels, in_channels, kh, kw) plus one
// bias per output channel. Kernel extents are odd.
template <class T>
struct ConvFilterT {
  int64_t out_channels = 0;
  int64_t in_channels = 0;
  int64_t kh = 0;
  int64_t kw = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvFilterT() = default;
  ConvFilterT(int64_t out_c, int64_t in_c, int64_t kh_, int64_t kw_)
      : out_channels(out_c), in_channels(in_c), kh(kh_), kw(kw_) {
    if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
      throw ArgumentError("kernel extents must be odd and >= 1");
    if (out_c < 1 || in_c < 1) throw ArgumentError("channel counts must be >= 1");
    weights.assign(static_cast<size_t>(out_c * in_c * kh * kw), T(0));
    bias.assign(static_cast<size_t>(out_c), T(0));
  }

  int64_t widx(int64_t b, int64_t a, int64_t ty, int64_t tx) const {
    return ((b * in_channels + a) * kh + ty) * kw + tx;
  }
  T& wat(int64_t b, int64_t a, int64_t ty, int64_t tx) { return weights[widx(b, a, ty, tx)]; }
  T wat(int64_t b, int64_t a, int64_t ty, int64_t tx) const { return weights[widx(b, a, ty, tx)]; }
};

using ConvFilter = ConvFilterT<float>;

template <class T>
struct ConvGradsT {
  TensorT<T> grad_x;
  std::vector<T> grad_w;  // same layout as ConvFilterT::weights
  std::vector<T> grad_b;
};

inline int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t dilation, int64_t stride) {
  int64_t eff = (kernel - 1) * dilation + 1;
  if (in < eff) return 0;
  return (in - eff) / stride + 1;
}

// Pads the two spatial axes. Zero mode fills with 0; reflect mode mirrors
// about each edge excluding the edge pixel itself (coordinate -j reads +j),
// which demands width <= extent-1.
template <class T>
TensorT<T> pad2d(const TensorT<T>& x, const PaddingSpec& spec) {
  if (spec.width < 0) throw ArgumentError("padding width must be >= 0");
  if (spec.width == 0) return x;
  const int64_t p = spec.width;
  if (spec.mode == PadMode::reflect && (p > x.shape.h - 1 || p > x.shape.w - 1))
    throw ArgumentError("reflect padding width " + std::to_string(p) +
                        " too large for input " + x.shape.str());
  TensorT<T> out({x.shape.n, x.shape.c, x.shape.h + 2 * p, x.shape.w + 2 * p});
  auto mirror = [](int64_t i, int64_t extent) {
    if (i < 0) return -i;
    if (i >= extent) return 2 * (extent - 1) - i;
    return i;
  };
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < x.shape.c; ++c)
      for (int64_t y = 0; y < out.shape.h; ++y) {
        T* orow = out.row(n, c, y);
        const int64_t sy = y - p;
        if (spec.mode == PadMode::zero) {
          if (sy < 0 || sy >= x.shape.h) continue;  // row stays zero
          const T* irow = x.row(n, c, sy);
          for (int64_t xx = 0; xx < out.shape.w; ++xx) {
            int64_t sx = xx - p;
            orow[xx] = (sx >= 0 && sx < x.shape.w) ? irow[sx] : T(0);
          }
        } else {
          const T* irow = x.row(n, c, mirror(sy, x.shape.h));
          for (int64_t xx = 0; xx < out.shape.w; ++xx)
            orow[xx] = irow[mirror(xx - p, x.shape.w)];
        }
      }
  return out;
}

// Backward map of pad2d: folds a gradient on the padded tensor back onto the
// unpadded one. Reflected positions accumulate into their mirror sources.
template <class T>
TensorT<T> pad2d_backward(const TensorT<T>& grad_padded, const PaddingSpec& spec, Shape in_shape) {
  if (spec.width == 0) return grad_padded;
  const int64_t p = spec.width;
  TensorT<T> grad(in_shape, T(0));
  auto mirror = [](int64_t i, int64_t extent) {
    if (i < 0) return -i;
    if (i >= extent) return 2 * (extent - 1) - i;
    return i;
  };
  for (int64_t n = 0; n < in_shape.n; ++n)
    for (int64_t c = 0; c < in_shape.c; ++c)
      for (int64_t y = 0; y < grad_padded.shape.h; ++y) {
        const int64_t sy = y - p;
        if (spec.mode == PadMode::zero) {
          if (sy < 0 || sy >= in_shape.h) continue;
          const T* grow = grad_padded.row(n, c, y);
          T* orow = grad.row(n, c, sy);
          for (int64_t xx = 0; xx < in_shape.w; ++xx) orow[xx] += grow[xx + p];
        } else {
          const T* grow = grad_padded.row(n, c, y);
          T* orow = grad.row(n, c, mirror(sy, in_shape.h));
          for (int64_t xx = 0; xx < grad_padded.shape.w; ++xx)
            orow[mirror(xx - p, in_shape.w)] += grow[xx];
        }
      }
  return grad;
}

namespace detail {

template <class T>
void check_conv_args(const TensorT<T>& x, const ConvFilterT<T>& f, int64_t dilation, int64_t stride) {
  if (dilation < 1 || stride < 1) throw ArgumentError("dilation and stride must be >= 1");
  if (x.shape.c != f.in_channels)
    throw ArgumentError("conv channel mismatch: input has " + std::to_string(x.shape.c) +
                        ", filter expects " + std::to_string(f.in_channels));
  int64_t eff_h = (f.kh - 1) * dilation + 1;
  int64_t eff_w = (f.kw - 1) * dilation + 1;
  if (eff_h > x.shape.h || eff_w > x.shape.w)
    throw ArgumentError("effective kernel " + std::to_string(eff_h) + "x" + std::to_string(eff_w) +
                        " exceeds input " + x.shape.str());
}

}  // namespace detail

// Dilated 2-D cross-correlation, valid mode: taps are spaced `dilation`
// pixels apart in the input and no dilated filter is materialized.
// Summation order per output element is fixed (channel-major, then kernel
// rows, then kernel columns), so the result does not depend on the parallel
// schedule. Each output row accumulates in a local buffer, which keeps that
// order while letting the compiler vectorize across output columns.
template <class T>
TensorT<T> conv2d_dilated(const TensorT<T>& x, const ConvFilterT<T>& f, int64_t dilation,
                          int64_t stride) {
  detail::check_conv_args(x, f, dilation, stride);
  const int64_t oh = conv_out_extent(x.shape.h, f.kh, dilation, stride);
  const int64_t ow = conv_out_extent(x.shape.w, f.kw, dilation, stride);
  TensorT<T> out({x.shape.n, f.out_channels, oh, ow});
  const int64_t N = x.shape.n, B = f.out_channels, A = f.in_channels;
#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t oy = 0; oy < oh; ++oy) {
        std::vector<double> acc(static_cast<size_t>(ow), static_cast<double>(f.bias[b]));
        double* arow = acc.data();
        for (int64_t a = 0; a < A; ++a)
          for (int64_t ty = 0; ty < f.kh; ++ty) {
            const T* xrow = x.row(n, a, oy * stride + ty * dilation);
            const T* wrow = &f.weights[f.widx(b, a, ty, 0)];
            for (int64_t tx = 0; tx < f.kw; ++tx) {
              const double wv = static_cast<double>(wrow[tx]);
              const T* xs = xrow + tx * dilation;
              if (stride == 1) {
                for (int64_t ox = 0; ox < ow; ++ox) arow[ox] += static_cast<double>(xs[ox]) * wv;
              } else {
                for (int64_t ox = 0; ox < ow; ++ox)
                  arow[ox] += static_cast<double>(xs[ox * stride]) * wv;
              }
            }
          }
        T* orow = out.row(n, b, oy);
        for (int64_t ox = 0; ox < ow; ++ox) orow[ox] = static_cast<T>(arow[ox]);
      }
  return out;
}

// Materializes the zero-inserted filter of extent (k-1)*dilation+1 with the
// original taps at multiples of `dilation`. Test-path helper for the oracle.
template <class T>
ConvFilterT<T> dilate_filter_explicit(const ConvFilterT<T>& f, int64_t dilation) {
  ConvFilterT<T> df(f.out_channels, f.in_channels, (f.kh - 1) * dilation + 1,
                    (f.kw - 1) * dilation + 1);
  df.bias = f.bias;
  for (int64_t b = 0; b < f.out_channels; ++b)
    for (int64_t a = 0; a < f.in_channels; ++a)
      for (int64_t ty = 0; ty < f.kh; ++ty)
        for (int64_t tx = 0; tx < f.kw; ++tx)
          df.wat(b, a, ty * dilation, tx * dilation) = f.wat(b, a, ty, tx);
  return df;
}

// Serial reference: builds the explicit zero-inserted filter and applies a
// plain triple-loop correlation. Kept independent of conv2d_dilated so the
// two can check each other; also the baseline for the benchmark tool.
template <class T>
TensorT<T> conv2d_oracle(const TensorT<T>& x, const ConvFilterT<T>& f, int64_t dilation,
                         int64_t stride) {
  detail::check_conv_args(x, f, dilation, stride);
  ConvFilterT<T> df = dilate_filter_explicit(f, dilation);
  const int64_t oh = conv_out_extent(x.shape.h, df.kh, 1, stride);
  const int64_t ow = conv_out_extent(x.shape.w, df.kw, 1, stride);
  TensorT<T> out({x.shape.n, df.out_channels, oh, ow});
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t b = 0; b < df.out_channels; ++b)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double acc = static_cast<double>(df.bias[b]);
          for (int64_t a = 0; a < df.in_channels; ++a)
            for (int64_t ty = 0; ty < df.kh; ++ty)
              for (int64_t tx = 0; tx < df.kw; ++tx)
                acc += static_cast<double>(x.at(n, a, oy * stride + ty, ox * stride + tx)) *
                       static_cast<double>(df.wat(b, a, ty, tx));
          out.at(n, b, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

// Analytic gradients of the forward map. All three outputs are computed as
// gather loops (one writer per element, fixed inner order), so the results
// are identical for any thread count.
template <class T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& x, const ConvFilterT<T>& f, int64_t dilation,
                              int64_t stride, const TensorT<T>& grad_out) {
  detail::check_conv_args(x, f, dilation, stride);
  const int64_t oh = conv_out_extent(x.shape.h, f.kh, dilation, stride);
  const int64_t ow = conv_out_extent(x.shape.w, f.kw, dilation, stride);
  if (!(grad_out.shape == Shape{x.shape.n, f.out_channels, oh, ow}))
    throw ArgumentError("conv2d_backward: grad_out shape " + grad_out.shape.str() +
                        " does not match forward output " +
                        Shape{x.shape.n, f.out_channels, oh, ow}.str());

  ConvGradsT<T> g;
  g.grad_x = TensorT<T>(x.shape, T(0));
  g.grad_w.assign(f.weights.size(), T(0));
  g.grad_b.assign(f.bias.size(), T(0));
  const int64_t N = x.shape.n, B = f.out_channels, A = f.in_channels;

#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t n = 0; n < N; ++n)
    for (int64_t a = 0; a < A; ++a)
      for (int64_t iy = 0; iy < x.shape.h; ++iy) {
        std::vector<double> acc(static_cast<size_t>(x.shape.w), 0.0);
        double* arow = acc.data();
        for (int64_t b = 0; b < B; ++b)
          for (int64_t ty = 0; ty < f.kh; ++ty) {
            const int64_t ry = iy - ty * dilation;
            if (ry < 0 || ry % stride != 0) continue;
            const int64_t py = ry / stride;
            if (py >= oh) continue;
            const T* gorow = grad_out.row(n, b, py);
            for (int64_t tx = 0; tx < f.kw; ++tx) {
              const double wv = static_cast<double>(f.wat(b, a, ty, tx));
              const int64_t off = tx * dilation;
              if (stride == 1) {
                // contributing output column is ix - off
                const int64_t lo = off, hi = std::min(x.shape.w, ow + off);
                for (int64_t ix = lo; ix < hi; ++ix)
                  arow[ix] += static_cast<double>(gorow[ix - off]) * wv;
              } else {
                for (int64_t ix = off; ix < x.shape.w; ++ix) {
                  const int64_t rx = ix - off;
                  if (rx % stride != 0) continue;
                  const int64_t px = rx / stride;
                  if (px >= ow) continue;
                  arow[ix] += static_cast<double>(gorow[px]) * wv;
                }
              }
            }
          }
        T* grow = g.grad_x.row(n, a, iy);
        for (int64_t ix = 0; ix < x.shape.w; ++ix) grow[ix] = static_cast<T>(arow[ix]);
      }

  // Weight and bias gradients are per-entry reductions; the simd reduction
  // has a fixed lane count per build, so results stay deterministic and
  // thread-count independent.
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < B; ++b)
    for (int64_t a = 0; a < A; ++a)
      for (int64_t ty = 0; ty < f.kh; ++ty)
        for (int64_t tx = 0; tx < f.kw; ++tx) {
          double acc = 0.0;
          for (int64_t n = 0; n < N; ++n)
            for (int64_t oy = 0; oy < oh; ++oy) {
              const T* gorow = grad_out.row(n, b, oy);
              const T* xrow = x.row(n, a, oy * stride + ty * dilation);
              if (stride == 1) {
                const T* xs = xrow + tx * dilation;
#pragma omp simd reduction(+ : acc)
                for (int64_t ox = 0; ox < ow; ++ox)
                  acc += static_cast<double>(gorow[ox]) * static_cast<double>(xs[ox]);
              } else {
                for (int64_t ox = 0; ox < ow; ++ox)
                  acc += static_cast<double>(gorow[ox]) *
                         static_cast<double>(xrow[ox * stride + tx * dilation]);
              }
            }
          g.grad_w[f.widx(b, a, ty, tx)] = static_cast<T>(acc);
        }

#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t oy = 0; oy < oh; ++oy) {
        const T* gorow = grad_out.row(n, b, oy);
#pragma omp simd reduction(+ : acc)
        for (int64_t ox = 0; ox < ow; ++ox) acc += static_cast<double>(gorow[ox]);
      }
    g.grad_b[b] = static_cast<T>(acc);
  }
  return g;
}

}  // namespace dilnet
