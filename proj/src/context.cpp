#include "dilnet/context.hpp"

#include <vector>

namespace dilnet {

namespace {

std::vector<int64_t> dilation_schedule(int depth) {
  // 3x3 layers; the final 1x1 layer is appended separately.
  switch (depth) {
    case 7:  return {1, 1, 2, 4, 8, 1};
    case 8:  return {1, 1, 2, 4, 8, 16, 1};
    case 10: return {1, 1, 2, 4, 8, 16, 32, 64, 1};
    default: throw ArgumentError("context depth must be 7, 8, or 10");
  }
}

}  // namespace

NetworkSpec build_context(const ContextConfig& cfg) {
  if (cfg.C < 1) throw ArgumentError("context channel count C must be >= 1");
  const auto dils = dilation_schedule(cfg.depth);

  std::vector<int64_t> widths;  // output channels per conv layer
  if (cfg.variant == ContextVariant::basic) {
    widths.assign(static_cast<size_t>(cfg.depth), cfg.C);
  } else {
    if (cfg.depth != 8)
      throw ArgumentError("large variant is defined for depth 8 only");
    for (int64_t m : {2, 2, 4, 8, 16, 32, 32})
      widths.push_back(m * cfg.C);
    widths.push_back(cfg.C);
  }
  for (int64_t width : widths)
    if (width % cfg.C != 0) throw ArgumentError("C must divide every layer width");

  NetworkSpec net;
  int64_t in_c = cfg.C;
  for (size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    ConvLayerSpec cl;
    cl.in_channels = in_c;
    cl.out_channels = widths[i];
    cl.kernel = last ? 1 : 3;
    cl.dilation = last ? 1 : dils[i];
    cl.stride = 1;
    cl.padding = PaddingSpec{0, PadMode::zero};
    cl.truncation = !last;
    net.layers.emplace_back(cl);
    in_c = widths[i];
  }
  net.validate();
  return net;
}

NetworkWeights init_identity_basic(const NetworkSpec& spec, int64_t C) {
  NetworkWeights w = zero_weights<float>(spec);
  for (auto& f : w.filters) {
    if (f.in_channels != C || f.out_channels != C)
      throw ArgumentError("identity init requires all layer widths equal to C=" +
                          std::to_string(C));
    const int64_t cy = f.kh / 2, cx = f.kw / 2;
    for (int64_t b = 0; b < C; ++b) f.wat(b, b, cy, cx) = 1.0f;
  }
  return w;
}

NetworkWeights init_identity_general(const NetworkSpec& spec, int64_t C, double sigma_scale,
                                     uint64_t seed) {
  NetworkWeights w = zero_weights<float>(spec);
  SplitMix64 rng(seed);
  for (auto& f : w.filters) {
    if (f.in_channels % C != 0 || f.out_channels % C != 0)
      throw ArgumentError("generalized identity init requires C to divide every layer width");
    const int64_t cy = f.kh / 2, cx = f.kw / 2;
    const double center = static_cast<double>(C) / static_cast<double>(f.out_channels);
    const double sigma = sigma_scale * center;
    for (int64_t b = 0; b < f.out_channels; ++b)
      for (int64_t a = 0; a < f.in_channels; ++a)
        for (int64_t ty = 0; ty < f.kh; ++ty)
          for (int64_t tx = 0; tx < f.kw; ++tx) {
            const bool on_center = ty == cy && tx == cx;
            const bool same_group =
                (a * C) / f.in_channels == (b * C) / f.out_channels;
            if (on_center && same_group)
              f.wat(b, a, ty, tx) = static_cast<float>(center);
            else
              f.wat(b, a, ty, tx) = static_cast<float>(sigma * rng.gauss());
          }
  }
  return w;
}

ParamCount param_count(const NetworkSpec& spec) {
  ParamCount pc;
  for (const auto& l : spec.layers)
    if (const auto* cl = std::get_if<ConvLayerSpec>(&l)) {
      pc.weights += cl->out_channels * cl->in_channels * cl->kernel * cl->kernel;
      pc.biases += cl->out_channels;
    }
  return pc;
}

int64_t context_input_buffer(const NetworkSpec& spec) {
  return (receptive_field(spec).final_rf() - 1) / 2;
}

}  // namespace dilnet
