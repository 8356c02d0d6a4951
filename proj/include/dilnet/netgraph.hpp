#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dilnet/conv.hpp"
#include "dilnet/tensor.hpp"

namespace dilnet {

// One convolution stage: pad -> dilated conv -> optional truncation
// max(.,0). `padding` applies to this layer's input.
struct ConvLayerSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 0;  // square, odd
  int64_t dilation = 1;
  int64_t stride = 1;
  PaddingSpec padding{};
  bool truncation = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct PoolLayerSpec {
  int64_t kernel = 0;
  int64_t stride = 1;
  // kind: max (the only pooling the rewriter needs to ablate)

  bool operator==(const PoolLayerSpec&) const = default;
};

using Layer = std::variant<ConvLayerSpec, PoolLayerSpec>;

struct NetworkSpec {
  std::vector<Layer> layers;

  void validate() const;
  int64_t input_channels() const;
  int64_t output_channels() const;
  size_t conv_count() const;
};

template <class T>
struct NetworkWeightsT {
  std::vector<ConvFilterT<T>> filters;  // one per conv layer, in layer order
};

using NetworkWeights = NetworkWeightsT<float>;

// Zero-valued weights shaped for `net` (also the container for gradients and
// momentum buffers).
template <class T>
NetworkWeightsT<T> zero_weights(const NetworkSpec& net) {
  NetworkWeightsT<T> w;
  for (const auto& layer : net.layers)
    if (const auto* cl = std::get_if<ConvLayerSpec>(&layer))
      w.filters.emplace_back(cl->out_channels, cl->in_channels, cl->kernel, cl->kernel);
  return w;
}

// Uniform init in +-sqrt(3/fan_in); biases zero.
template <class T>
NetworkWeightsT<T> random_weights(const NetworkSpec& net, uint64_t seed) {
  NetworkWeightsT<T> w = zero_weights<T>(net);
  SplitMix64 rng(seed);
  for (auto& f : w.filters) {
    double bound = std::sqrt(3.0 / static_cast<double>(f.in_channels * f.kh * f.kw));
    for (auto& v : f.weights) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return w;
}

struct ReceptiveFieldEntry {
  int64_t rf_h = 1;
  int64_t rf_w = 1;
  int64_t jump = 1;                // cumulative stride after this layer
  int64_t resolution_divisor = 1;  // output grid spacing in input pixels
};

struct ReceptiveFieldReport {
  std::vector<ReceptiveFieldEntry> per_layer;

  int64_t final_rf() const { return per_layer.empty() ? 1 : per_layer.back().rf_h; }
  int64_t final_jump() const { return per_layer.empty() ? 1 : per_layer.back().jump; }
};

// Receptive-field recurrence: rf += (kernel-1)*dilation*jump, then
// jump *= stride. Pool layers contribute with dilation 1.
ReceptiveFieldReport receptive_field(const NetworkSpec& net);

enum class RewriteMode { remove_pool, keep_pool_unstride };

// Converts a classification-style net to dense prediction: each ablated
// pool/stride layer is deleted (remove_pool) or set to stride 1
// (keep_pool_unstride), every conv after it has its dilation multiplied by
// the ablated stride (compounding across ablations), and intermediate conv
// padding is dropped. An empty ablation set returns the net unchanged.
NetworkSpec rewrite_dense(const NetworkSpec& net, const std::set<size_t>& ablate, RewriteMode mode);

template <class T>
struct ForwardCache {
  std::vector<TensorT<T>> padded_inputs;  // per layer, after that layer's padding
  std::vector<TensorT<T>> outputs;        // per layer, after activation
};

template <class T>
struct BackwardResult {
  NetworkWeightsT<T> grads;
  TensorT<T> grad_x;
};

namespace detail {

inline int64_t pool_out_extent(int64_t in, int64_t kernel, int64_t stride) {
  if (in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

template <class T>
TensorT<T> maxpool_forward(const TensorT<T>& x, const PoolLayerSpec& p) {
  const int64_t oh = pool_out_extent(x.shape.h, p.kernel, p.stride);
  const int64_t ow = pool_out_extent(x.shape.w, p.kernel, p.stride);
  TensorT<T> out({x.shape.n, x.shape.c, oh, ow});
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < x.shape.c; ++c)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T best = x.at(n, c, oy * p.stride, ox * p.stride);
          for (int64_t ky = 0; ky < p.kernel; ++ky)
            for (int64_t kx = 0; kx < p.kernel; ++kx) {
              T v = x.at(n, c, oy * p.stride + ky, ox * p.stride + kx);
              if (v > best) best = v;
            }
          out.at(n, c, oy, ox) = best;
        }
  return out;
}

// Routes each output gradient to the first maximal element in scan order.
template <class T>
TensorT<T> maxpool_backward(const TensorT<T>& x, const PoolLayerSpec& p, const TensorT<T>& grad_out) {
  TensorT<T> grad(x.shape, T(0));
  const int64_t oh = grad_out.shape.h, ow = grad_out.shape.w;
  for (int64_t n = 0; n < x.shape.n; ++n)
    for (int64_t c = 0; c < x.shape.c; ++c)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          int64_t by = oy * p.stride, bx = ox * p.stride;
          T best = x.at(n, c, by, bx);
          for (int64_t ky = 0; ky < p.kernel; ++ky)
            for (int64_t kx = 0; kx < p.kernel; ++kx) {
              T v = x.at(n, c, oy * p.stride + ky, ox * p.stride + kx);
              if (v > best) {
                best = v;
                by = oy * p.stride + ky;
                bx = ox * p.stride + kx;
              }
            }
          grad.at(n, c, by, bx) += grad_out.at(n, c, oy, ox);
        }
  return grad;
}

}  // namespace detail

// Applies the layers in order. When `cache` is non-null the per-layer
// activations needed by backward() are retained.
template <class T>
TensorT<T> forward(const NetworkSpec& net, const NetworkWeightsT<T>& w, const TensorT<T>& x,
                   ForwardCache<T>* cache = nullptr) {
  net.validate();
  if (w.filters.size() != net.conv_count())
    throw ArgumentError("weights carry " + std::to_string(w.filters.size()) +
                        " filters, net has " + std::to_string(net.conv_count()) + " conv layers");
  if (cache) {
    cache->padded_inputs.clear();
    cache->outputs.clear();
  }
  TensorT<T> cur = x;
  size_t filter_idx = 0;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const bool spatial_ok = cur.shape.h >= 1 && cur.shape.w >= 1;
    if (!spatial_ok)
      throw ArgumentError("layer " + std::to_string(i) + ": empty spatial input");
    if (const auto* cl = std::get_if<ConvLayerSpec>(&net.layers[i])) {
      TensorT<T> padded = pad2d(cur, cl->padding);
      const int64_t eff = (cl->kernel - 1) * cl->dilation + 1;
      if (eff > padded.shape.h || eff > padded.shape.w)
        throw ArgumentError("layer " + std::to_string(i) + " (conv): input " +
                            padded.shape.str() + " smaller than effective kernel " +
                            std::to_string(eff) + "x" + std::to_string(eff));
      TensorT<T> out = conv2d_dilated(padded, w.filters[filter_idx], cl->dilation, cl->stride);
      if (cl->truncation) out = relu(out);
      if (cache) {
        cache->padded_inputs.push_back(std::move(padded));
        cache->outputs.push_back(out);
      }
      cur = std::move(out);
      ++filter_idx;
    } else {
      const auto& pl = std::get<PoolLayerSpec>(net.layers[i]);
      if (pl.kernel > cur.shape.h || pl.kernel > cur.shape.w)
        throw ArgumentError("layer " + std::to_string(i) + " (pool): input " + cur.shape.str() +
                            " smaller than kernel " + std::to_string(pl.kernel));
      TensorT<T> out = detail::maxpool_forward(cur, pl);
      if (cache) {
        cache->padded_inputs.push_back(std::move(cur));
        cache->outputs.push_back(out);
      }
      cur = std::move(out);
    }
  }
  return cur;
}

// Reverse-mode chain through the layer list. `cache` must come from a
// forward() call with activations kept.
template <class T>
BackwardResult<T> backward(const NetworkSpec& net, const NetworkWeightsT<T>& w,
                           const ForwardCache<T>& cache, const TensorT<T>& grad_y) {
  if (cache.outputs.size() != net.layers.size() || cache.padded_inputs.size() != net.layers.size())
    throw StateError("backward: cache missing or not produced by forward(keep_activations)");
  BackwardResult<T> res;
  res.grads = zero_weights<T>(net);
  TensorT<T> grad = grad_y;
  size_t filter_idx = net.conv_count();
  for (size_t i = net.layers.size(); i-- > 0;) {
    if (const auto* cl = std::get_if<ConvLayerSpec>(&net.layers[i])) {
      --filter_idx;
      if (cl->truncation) {
        const TensorT<T>& out = cache.outputs[i];
        for (size_t k = 0; k < grad.data.size(); ++k)
          if (!(out.data[k] > T(0))) grad.data[k] = T(0);
      }
      ConvGradsT<T> cg =
          conv2d_backward(cache.padded_inputs[i], w.filters[filter_idx], cl->dilation, cl->stride, grad);
      res.grads.filters[filter_idx].weights = std::move(cg.grad_w);
      res.grads.filters[filter_idx].bias = std::move(cg.grad_b);
      Shape unpadded{cache.padded_inputs[i].shape.n, cache.padded_inputs[i].shape.c,
                     cache.padded_inputs[i].shape.h - 2 * cl->padding.width,
                     cache.padded_inputs[i].shape.w - 2 * cl->padding.width};
      grad = pad2d_backward(cg.grad_x, cl->padding, unpadded);
    } else {
      const auto& pl = std::get<PoolLayerSpec>(net.layers[i]);
      grad = detail::maxpool_backward(cache.padded_inputs[i], pl, grad);
    }
  }
  res.grad_x = std::move(grad);
  return res;
}

// Text format: one layer per line,
//   conv in=<n> out=<n> k=<n> d=<n> s=<n> pad=<n>:<zero|reflect> relu=<0|1>
//   pool k=<n> s=<n>
// '#' starts a comment; blank lines are ignored.
std::string write_netspec(const NetworkSpec& net);
NetworkSpec parse_netspec(const std::string& text);
void save_netspec(const std::string& path, const NetworkSpec& net);
NetworkSpec load_netspec(const std::string& path);

// Weights file: magic "DILW", u32 version 1, u32 conv-layer count, then per
// conv layer four u32 dims (out,in,kh,kw), f32 weights, f32 biases. All
// little-endian.
void save_weights(const std::string& path, const NetworkWeights& w);
NetworkWeights load_weights(const std::string& path);

}  // namespace dilnet
