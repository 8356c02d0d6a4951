// Times the production dilated-convolution kernels against the serial
// zero-insertion reference on a sweep of dilations, and reports the forward
// and backward throughput. The two paths must agree to 1e-6, which is
// checked on every run.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dilnet/conv.hpp"

using namespace dilnet;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  int64_t extent = argc > 1 ? std::atoll(argv[1]) : 96;
  int64_t channels = argc > 2 ? std::atoll(argv[2]) : 16;
  int reps = argc > 3 ? std::atoi(argv[3]) : 3;

#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (OpenMP disabled)\n");
#endif
  std::printf("input 1x%lldx%lldx%lld, 3x3 filters, %lldx%lld output channels\n\n",
              static_cast<long long>(channels), static_cast<long long>(extent),
              static_cast<long long>(extent), static_cast<long long>(channels),
              static_cast<long long>(channels));
  std::printf("%-9s %-14s %-14s %-9s %-14s %s\n", "dilation", "kernel (ms)", "reference (ms)",
              "speedup", "backward (ms)", "max |diff|");

  for (int64_t d : {1, 2, 4, 8}) {
    Tensor x = tensor_random<float>({1, channels, extent, extent}, 1, -1.0f, 1.0f);
    ConvFilter f(channels, channels, 3, 3);
    {
      SplitMix64 rng(2);
      for (auto& v : f.weights) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    }

    Tensor fast = conv2d_dilated(x, f, d, 1);
    Tensor ref = conv2d_oracle(x, f, d, 1);
    double diff = max_abs_diff(fast, ref);

    double t_fast = time_ms([&] { conv2d_dilated(x, f, d, 1); }, reps);
    double t_ref = time_ms([&] { conv2d_oracle(x, f, d, 1); }, reps);
    Tensor gout = tensor_random<float>(fast.shape, 3, -1.0f, 1.0f);
    double t_back = time_ms([&] { conv2d_backward(x, f, d, 1, gout); }, reps);

    std::printf("%-9lld %-14.2f %-14.2f %-9.2f %-14.2f %.3e\n", static_cast<long long>(d),
                t_fast, t_ref, t_ref / t_fast, t_back, diff);
    if (diff >= 1e-6) {
      std::fprintf(stderr, "kernel/reference mismatch at dilation %lld\n",
                   static_cast<long long>(d));
      return 1;
    }
  }
  return 0;
}
