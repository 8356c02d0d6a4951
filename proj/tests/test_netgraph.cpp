#include <doctest.h>

#include <filesystem>

#include "dilnet/netgraph.hpp"
#include "test_util.hpp"

using namespace dilnet;
using namespace dilnet::testutil;

namespace {

ConvLayerSpec conv_layer(int64_t in, int64_t out, int64_t k, int64_t d = 1, int64_t s = 1,
                         PaddingSpec pad = {0, PadMode::zero}, bool relu = false) {
  return ConvLayerSpec{in, out, k, d, s, pad, relu};
}

// A stack of 3x3 layers with the given dilations plus a final 1x1 layer,
// all single-channel: the receptive-field test rig.
NetworkSpec dilation_stack(const std::vector<int64_t>& dils, bool final_1x1) {
  NetworkSpec net;
  for (int64_t d : dils) net.layers.emplace_back(conv_layer(1, 1, 3, d));
  if (final_1x1) net.layers.emplace_back(conv_layer(1, 1, 1));
  return net;
}

}  // namespace

TEST_SUITE("netgraph") {

TEST_CASE("receptive field of the 8-layer module schedule") {
  NetworkSpec net = dilation_stack({1, 1, 2, 4, 8, 16, 1}, true);
  auto report = receptive_field(net);
  std::vector<int64_t> rf;
  for (const auto& e : report.per_layer) rf.push_back(e.rf_h);
  CHECK(rf == std::vector<int64_t>{3, 5, 9, 17, 33, 65, 67, 67});
}

TEST_CASE("receptive field doubles with exponential dilations") {
  // 3x3 filters with dilation 2^i: rf_i = 2^(i+2) - 1
  std::vector<int64_t> dils;
  for (int i = 0; i < 6; ++i) dils.push_back(1LL << i);
  auto report = receptive_field(dilation_stack(dils, false));
  for (int i = 0; i < 6; ++i)
    CHECK(report.per_layer[i].rf_h == (1LL << (i + 2)) - 1);
  // the first three entries are the 3, 7, 15 ladder
  CHECK(report.per_layer[0].rf_h == 3);
  CHECK(report.per_layer[1].rf_h == 7);
  CHECK(report.per_layer[2].rf_h == 15);
}

TEST_CASE("receptive field of a pointwise layer") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(4, 4, 1));
  auto report = receptive_field(net);
  CHECK(report.per_layer.size() == 1);
  CHECK(report.per_layer[0].rf_h == 1);
  CHECK(report.per_layer[0].jump == 1);
}

TEST_CASE("receptive field tracks pool strides") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 3));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(1, 1, 3));
  auto report = receptive_field(net);
  CHECK(report.per_layer[0].rf_h == 3);   // +2
  CHECK(report.per_layer[1].rf_h == 4);   // +1 at jump 1
  CHECK(report.per_layer[1].jump == 2);
  CHECK(report.per_layer[2].rf_h == 8);   // +2 at jump 2
  CHECK(report.per_layer[2].resolution_divisor == 2);
}

TEST_CASE("rewrite removes pools and compounds dilation") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 3, 1));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(1, 1, 3, 1));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(1, 1, 3, 1));
  NetworkSpec out = rewrite_dense(net, {1, 3}, RewriteMode::remove_pool);
  REQUIRE(out.layers.size() == 3);
  CHECK(std::get<ConvLayerSpec>(out.layers[0]).dilation == 1);
  CHECK(std::get<ConvLayerSpec>(out.layers[1]).dilation == 2);
  CHECK(std::get<ConvLayerSpec>(out.layers[2]).dilation == 4);
}

TEST_CASE("rewrite with no ablations is the identity") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 3, 3, 1, 1, {1, PadMode::reflect}, true));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(3, 2, 3));
  NetworkSpec out = rewrite_dense(net, {}, RewriteMode::remove_pool);
  CHECK(out.layers == net.layers);
}

TEST_CASE("rewrite rejects non-pool targets") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 3));
  net.layers.emplace_back(PoolLayerSpec{2, 1});  // stride 1
  CHECK_THROWS_AS(rewrite_dense(net, {0}, RewriteMode::remove_pool), ArgumentError);
  CHECK_THROWS_AS(rewrite_dense(net, {1}, RewriteMode::remove_pool), ArgumentError);
  CHECK_THROWS_AS(rewrite_dense(net, {5}, RewriteMode::remove_pool), ArgumentError);
}

TEST_CASE("unstride rewrite preserves the strided grid") {
  // truncation-free nets: rewritten output subsampled at the ablated stride
  // equals the original output
  for (uint64_t seed = 0; seed < 4; ++seed) {
    SplitMix64 rng(700 + seed);
    const int64_t c1 = 1 + static_cast<int64_t>(rng.next_below(3));
    const int64_t c2 = 1 + static_cast<int64_t>(rng.next_below(3));
    NetworkSpec net;
    net.layers.emplace_back(conv_layer(2, c1, 3));
    net.layers.emplace_back(PoolLayerSpec{2, 2});
    net.layers.emplace_back(conv_layer(c1, c2, 3));
    net.layers.emplace_back(conv_layer(c2, 2, 1));

    NetworkWeights w = random_weights<float>(net, 900 + seed);
    NetworkSpec dense = rewrite_dense(net, {1}, RewriteMode::keep_pool_unstride);
    CHECK(dense.layers.size() == net.layers.size());

    Tensor x = tensor_random<float>({1, 2, 21, 21}, 800 + seed, -1.0f, 1.0f);
    Tensor y = forward(net, w, x);
    Tensor yd = forward(dense, w, x);
    Tensor sub = subsample_spatial(yd, 2, y.shape.h, y.shape.w);
    CHECK(max_abs_diff(y, sub) < 1e-5);
  }
}

TEST_CASE("removing strided pools raises output resolution") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 2, 3));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(2, 2, 3));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(2, 1, 3));
  NetworkSpec dense = rewrite_dense(net, {1, 3}, RewriteMode::remove_pool);

  NetworkWeights w = random_weights<float>(net, 1);
  Tensor x = tensor_random<float>({1, 1, 32, 32}, 2, -1.0f, 1.0f);
  Tensor y = forward(net, w, x);
  Tensor yd = forward(dense, w, x);
  // 32 -> 30 -> 15 -> 13 -> 6 -> 4 against 32 -> 30 -> 26 -> 18
  CHECK(y.shape.h == 4);
  CHECK(yd.shape.h == 18);
  CHECK(yd.shape.h >= 4 * y.shape.h);
}

TEST_CASE("forward: zero weights emit the bias") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 1, 3));
  NetworkWeights w = zero_weights<float>(net);
  w.filters[0].bias[0] = 0.75f;
  Tensor x = tensor_random<float>({1, 2, 5, 5}, 3, -1.0f, 1.0f);
  Tensor y = forward(net, w, x);
  for (float v : y.data) CHECK(v == 0.75f);
}

TEST_CASE("forward: pointwise layers compose") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 1));
  net.layers.emplace_back(conv_layer(1, 1, 1));
  NetworkWeights w = zero_weights<float>(net);
  w.filters[0].weights[0] = 1.5f;
  w.filters[1].weights[0] = -2.0f;
  Tensor x = tensor_random<float>({1, 1, 4, 4}, 4, -1.0f, 1.0f);
  Tensor y = forward(net, w, x);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(-3.0f * x.data[i]));
}

TEST_CASE("forward names the layer that underflows") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 3));
  net.layers.emplace_back(conv_layer(1, 1, 3, 4));  // effective kernel 9
  NetworkWeights w = zero_weights<float>(net);
  Tensor x = tensor_random<float>({1, 1, 8, 8}, 5, -1.0f, 1.0f);
  try {
    forward(net, w, x);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("forward is deterministic") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(3, 4, 3, 2, 1, {2, PadMode::reflect}, true));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(4, 2, 3, 1, 1, {0, PadMode::zero}, false));
  NetworkWeights w = random_weights<float>(net, 6);
  Tensor x = tensor_random<float>({2, 3, 19, 19}, 7, -1.0f, 1.0f);
  Tensor y1 = forward(net, w, x);
  Tensor y2 = forward(net, w, x);
  CHECK(y1.data == y2.data);
}

TEST_CASE("backward: zero upstream gradient zeroes everything") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 3, 3, 1, 1, {1, PadMode::reflect}, true));
  net.layers.emplace_back(conv_layer(3, 2, 1));
  NetworkWeights w = random_weights<float>(net, 8);
  Tensor x = tensor_random<float>({1, 2, 8, 8}, 9, -1.0f, 1.0f);
  ForwardCache<float> cache;
  Tensor y = forward(net, w, x, &cache);
  Tensor gy(y.shape);
  BackwardResult<float> back = backward(net, w, cache, gy);
  for (const auto& f : back.grads.filters) {
    for (float v : f.weights) CHECK(v == 0.0f);
    for (float v : f.bias) CHECK(v == 0.0f);
  }
  for (float v : back.grad_x.data) CHECK(v == 0.0f);
}

TEST_CASE("backward without a cache is a state error") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 1, 3));
  NetworkWeights w = random_weights<float>(net, 10);
  ForwardCache<float> empty;
  Tensor gy({1, 1, 3, 3});
  CHECK_THROWS_AS(backward(net, w, empty, gy), StateError);
}

TEST_CASE("backward through one layer matches conv2d_backward") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 3, 3, 2));
  NetworkWeights w = random_weights<float>(net, 11);
  Tensor x = tensor_random<float>({1, 2, 9, 9}, 12, -1.0f, 1.0f);
  ForwardCache<float> cache;
  Tensor y = forward(net, w, x, &cache);
  Tensor gy = tensor_random<float>(y.shape, 13, -1.0f, 1.0f);
  BackwardResult<float> back = backward(net, w, cache, gy);
  ConvGradsT<float> direct = conv2d_backward(x, w.filters[0], 2, 1, gy);
  CHECK(back.grads.filters[0].weights == direct.grad_w);
  CHECK(back.grads.filters[0].bias == direct.grad_b);
  CHECK(back.grad_x.data == direct.grad_x.data);
}

TEST_CASE("full-network gradient matches finite differences") {
  // 3 layers with reflect padding and truncation, double precision
  const double h = 1e-4;
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 3, 3, 1, 1, {1, PadMode::reflect}, true));
  net.layers.emplace_back(conv_layer(3, 3, 3, 2, 1, {1, PadMode::zero}, true));
  net.layers.emplace_back(conv_layer(3, 2, 1));

  uint64_t seed = 50;
  NetworkWeightsT<double> w;
  TensorT<double> x;
  // keep preactivations clear of the relu kink
  for (;; ++seed) {
    w = random_weights<double>(net, seed);
    x = tensor_random<double>({1, 2, 10, 10}, seed + 1000, -1.0, 1.0);
    if (min_abs_preact(net, w, x) > 1e-3) break;
  }

  TensorT<double> y0 = forward(net, w, x);
  TensorT<double> proj = tensor_random<double>(y0.shape, 60, -1.0, 1.0);
  ForwardCache<double> cache;
  forward(net, w, x, &cache);
  BackwardResult<double> back = backward(net, w, cache, proj);

  double worst = 0.0;
  for (size_t fi = 0; fi < w.filters.size(); ++fi) {
    for (size_t i = 0; i < w.filters[fi].weights.size(); ++i) {
      auto wp = w, wm = w;
      wp.filters[fi].weights[i] += h;
      wm.filters[fi].weights[i] -= h;
      double num = (projection_loss(net, wp, x, proj) - projection_loss(net, wm, x, proj)) / (2 * h);
      worst = std::max(worst, rel_err(num, back.grads.filters[fi].weights[i]));
    }
    for (size_t i = 0; i < w.filters[fi].bias.size(); ++i) {
      auto wp = w, wm = w;
      wp.filters[fi].bias[i] += h;
      wm.filters[fi].bias[i] -= h;
      double num = (projection_loss(net, wp, x, proj) - projection_loss(net, wm, x, proj)) / (2 * h);
      worst = std::max(worst, rel_err(num, back.grads.filters[fi].bias[i]));
    }
  }
  for (size_t i = 0; i < x.data.size(); ++i) {
    auto xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    double num = (projection_loss(net, w, xp, proj) - projection_loss(net, w, xm, proj)) / (2 * h);
    worst = std::max(worst, rel_err(num, back.grad_x.data[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("max-pool gradient routes to the first maximum") {
  NetworkSpec net;
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  NetworkWeights w;  // no conv layers
  Tensor x({1, 1, 2, 4});
  // first window has a tie at 3.0: scan order picks (0,0)
  x.data = {3.0f, 1.0f, 0.0f, 7.0f,
            3.0f, 2.0f, 5.0f, 6.0f};
  ForwardCache<float> cache;
  Tensor y = forward(net, w, x, &cache);
  CHECK(y.data == std::vector<float>{3.0f, 7.0f});
  Tensor gy(y.shape);
  gy.data = {1.0f, 2.0f};
  BackwardResult<float> back = backward(net, w, cache, gy);
  CHECK(back.grad_x.data == std::vector<float>{1.0f, 0.0f, 0.0f, 2.0f,
                                               0.0f, 0.0f, 0.0f, 0.0f});
}

TEST_CASE("pool backward agrees with finite differences away from ties") {
  const double h = 1e-4;
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(1, 2, 3, 1, 1, {0, PadMode::zero}, false));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  NetworkWeightsT<double> w = random_weights<double>(net, 70);
  // distinct input values spaced >> h so no window ties under perturbation
  TensorT<double> x({1, 1, 9, 9});
  SplitMix64 shuffle_rng(71);
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = static_cast<double>(i) * 0.05;
  for (size_t i = x.data.size(); i > 1; --i)
    std::swap(x.data[i - 1], x.data[shuffle_rng.next_below(i)]);

  TensorT<double> y0 = forward(net, w, x);
  TensorT<double> proj = tensor_random<double>(y0.shape, 72, -1.0, 1.0);
  ForwardCache<double> cache;
  forward(net, w, x, &cache);
  BackwardResult<double> back = backward(net, w, cache, proj);

  double worst = 0.0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    auto xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    double num = (projection_loss(net, w, xp, proj) - projection_loss(net, w, xm, proj)) / (2 * h);
    worst = std::max(worst, rel_err(num, back.grad_x.data[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("netspec text round trip") {
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(3, 8, 3, 2, 1, {1, PadMode::reflect}, true));
  net.layers.emplace_back(PoolLayerSpec{2, 2});
  net.layers.emplace_back(conv_layer(8, 5, 1, 1, 1, {0, PadMode::zero}, false));
  std::string text = write_netspec(net);
  NetworkSpec parsed = parse_netspec(text);
  CHECK(parsed.layers == net.layers);
  CHECK(write_netspec(parsed) == text);  // canonical form is stable

  // comments and blank lines are tolerated
  NetworkSpec sparse = parse_netspec("# header\n\n" + text + "\n# trailer\n");
  CHECK(sparse.layers == net.layers);

  CHECK_THROWS_AS(parse_netspec("conv in=1 out=1\n"), DataError);       // incomplete
  CHECK_THROWS_AS(parse_netspec("dense units=3\n"), DataError);        // unknown kind
  CHECK_THROWS_AS(parse_netspec("conv in=1 out=1 k=3 d=1 s=1 pad=1:wrap relu=0\n"), DataError);
}

TEST_CASE("weights binary round trip") {
  namespace fs = std::filesystem;
  NetworkSpec net;
  net.layers.emplace_back(conv_layer(2, 4, 3));
  net.layers.emplace_back(conv_layer(4, 3, 1));
  NetworkWeights w = random_weights<float>(net, 80);
  w.filters[0].bias[1] = 0.5f;

  fs::path dir = fs::temp_directory_path() / "dilnet_netgraph_test";
  fs::create_directories(dir);
  std::string path = (dir / "w.bin").string();
  save_weights(path, w);
  NetworkWeights back = load_weights(path);
  REQUIRE(back.filters.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back.filters[i].weights == w.filters[i].weights);
    CHECK(back.filters[i].bias == w.filters[i].bias);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
