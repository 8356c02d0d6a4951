#pragma once

#include <cstdint>

#include "dilnet/netgraph.hpp"

namespace dilnet {

enum class ContextVariant { basic, large };

// Multi-scale context module configuration. The 8-layer form stacks 3x3
// convolutions with dilations 1,1,2,4,8,16,1 and a final 1x1 layer; the
// 7-layer form drops the dilation-16 layer and the 10-layer form inserts
// dilation-32 and dilation-64 layers after it. All intermediate padding is
// zero-width; the input buffer is the caller's job.
struct ContextConfig {
  int64_t C = 0;  // class/channel count the module processes
  ContextVariant variant = ContextVariant::basic;
  int depth = 8;  // total conv layers: 7, 8, or 10
  PadMode padding_mode = PadMode::reflect;  // harness buffer mode
};

NetworkSpec build_context(const ContextConfig& cfg);

// Identity init for equal-width modules: center tap 1 on the channel
// diagonal, everything else (and all biases) zero. Each layer passes a
// nonnegative input straight through.
NetworkWeights init_identity_basic(const NetworkSpec& spec, int64_t C);

// Generalized identity init for modules whose widths are multiples of C:
// center tap C/c_out wherever floor(a*C/c_in) == floor(b*C/c_out), all other
// entries drawn from N(0, (sigma_scale*C/c_out)^2). sigma_scale 0 gives the
// exact block-constant filters.
NetworkWeights init_identity_general(const NetworkSpec& spec, int64_t C, double sigma_scale,
                                     uint64_t seed);

struct ParamCount {
  int64_t weights = 0;
  int64_t biases = 0;
};

ParamCount param_count(const NetworkSpec& spec);

// Input buffer width that makes module output match the unpadded input
// extent: (receptive field - 1) / 2.
int64_t context_input_buffer(const NetworkSpec& spec);

}  // namespace dilnet
