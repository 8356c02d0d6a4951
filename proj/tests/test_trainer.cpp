#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dilnet/trainer.hpp"
#include "test_util.hpp"

using namespace dilnet;
using namespace dilnet::testutil;

namespace {

NetworkSpec pointwise_net(int64_t in_c, int64_t out_c) {
  NetworkSpec net;
  net.layers.emplace_back(ConvLayerSpec{in_c, out_c, 1, 1, 1, {0, PadMode::zero}, false});
  return net;
}

// Two-class set where the label is the argmax of the two input channels:
// separable by a 1x1 layer.
Dataset separable_dataset(int64_t count, uint64_t seed) {
  Dataset ds;
  for (int64_t i = 0; i < count; ++i) {
    Tensor img = tensor_random<float>({1, 2, 8, 8}, mix_seed(seed, i), 0.0f, 1.0f);
    LabelMap lab(1, 8, 8);
    for (int64_t y = 0; y < 8; ++y)
      for (int64_t x = 0; x < 8; ++x)
        lab.at(0, y, x) = img.at(0, 1, y, x) > img.at(0, 0, y, x) ? 1 : 0;
    ds.images.push_back(std::move(img));
    ds.labels.push_back(std::move(lab));
  }
  return ds;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("uniform logits cost ln C per pixel") {
  Tensor logits = tensor_fill<float>({1, 5, 3, 3}, 0.37f);
  LabelMap labels(1, 3, 3, 2);
  XentResult r = softmax_xent(logits, labels);
  CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-6));
}

TEST_CASE("confident correct logits cost nothing") {
  Tensor logits = tensor_fill<float>({1, 3, 2, 2}, 0.0f);
  LabelMap labels(1, 2, 2, 1);
  for (int64_t y = 0; y < 2; ++y)
    for (int64_t x = 0; x < 2; ++x) logits.at(0, 1, y, x) = 50.0f;
  XentResult r = softmax_xent(logits, labels);
  CHECK(r.loss < 1e-12);
}

TEST_CASE("ignored pixels carry no loss or gradient") {
  Tensor logits = tensor_random<float>({1, 3, 2, 2}, 1, -1.0f, 1.0f);
  LabelMap all_ignored(1, 2, 2, kIgnoreLabel);
  XentResult r = softmax_xent(logits, all_ignored);
  CHECK(r.loss == 0.0);
  for (float v : r.grad_logits.data) CHECK(v == 0.0f);

  LabelMap bad(1, 2, 2, 7);  // out of range for 3 classes
  CHECK_THROWS_AS(softmax_xent(logits, bad), DataError);
}

TEST_CASE("loss gradient matches finite differences") {
  const double h = 1e-4;
  TensorT<double> logits = tensor_random<double>({2, 3, 4, 4}, 2, -2.0, 2.0);
  LabelMap labels(2, 4, 4);
  SplitMix64 rng(3);
  for (auto& v : labels.data) {
    uint64_t draw = rng.next_below(4);
    v = draw == 3 ? kIgnoreLabel : static_cast<int32_t>(draw);
  }
  XentResultT<double> r = softmax_xent(logits, labels);
  double worst = 0.0;
  for (size_t i = 0; i < logits.data.size(); ++i) {
    auto lp = logits, lm = logits;
    lp.data[i] += h;
    lm.data[i] -= h;
    double num =
        (softmax_xent(lp, labels).loss - softmax_xent(lm, labels).loss) / (2 * h);
    worst = std::max(worst, rel_err(num, r.grad_logits.data[i]));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sgd without momentum is plain descent") {
  NetworkSpec net = pointwise_net(2, 2);
  NetworkWeights w = random_weights<float>(net, 4);
  NetworkWeights w0 = w;
  NetworkWeights g = random_weights<float>(net, 5);
  NetworkWeights v = zero_weights<float>(net);
  SGDConfig cfg{0.1, 0.0, 1, 1, 0};
  sgd_step(w, g, v, cfg);
  for (size_t i = 0; i < w.filters[0].weights.size(); ++i)
    CHECK(w.filters[0].weights[i] ==
          doctest::Approx(w0.filters[0].weights[i] - 0.1f * g.filters[0].weights[i]));
}

TEST_CASE("zero gradients leave only decaying velocity") {
  NetworkSpec net = pointwise_net(1, 1);
  NetworkWeights w = zero_weights<float>(net);
  w.filters[0].weights[0] = 1.0f;
  NetworkWeights g = zero_weights<float>(net);
  NetworkWeights v = zero_weights<float>(net);
  v.filters[0].weights[0] = 0.5f;
  SGDConfig cfg{0.1, 0.5, 1, 1, 0};
  // w_k = 1 + 0.5*(0.5 + 0.25 + ...) converges to 1.5
  for (int k = 0; k < 60; ++k) sgd_step(w, g, v, cfg);
  CHECK(w.filters[0].weights[0] == doctest::Approx(1.5f));
  CHECK(std::fabs(v.filters[0].weights[0]) < 1e-12f);
}

TEST_CASE("two momentum steps accumulate (2 + mu) gradients") {
  const double mu = 0.9, lr = 0.01;
  NetworkSpec net = pointwise_net(1, 1);
  NetworkWeights w = zero_weights<float>(net);
  const float w0 = 0.3f;
  w.filters[0].weights[0] = w0;
  NetworkWeights g = zero_weights<float>(net);
  g.filters[0].weights[0] = 2.0f;
  NetworkWeights v = zero_weights<float>(net);
  SGDConfig cfg{lr, mu, 1, 1, 0};
  sgd_step(w, g, v, cfg);
  sgd_step(w, g, v, cfg);
  CHECK(w.filters[0].weights[0] ==
        doctest::Approx(w0 - lr * 2.0 * (2.0 + mu)).epsilon(1e-6));
}

TEST_CASE("zero-iteration plan leaves weights bit-identical") {
  NetworkSpec net = pointwise_net(2, 2);
  NetworkWeights w = random_weights<float>(net, 6);
  Dataset ds = separable_dataset(4, 7);
  TrainStagePlan plan;
  plan.stages.push_back({StageScope::joint, {0.1, 0.9, 1, 0, 1}});
  CropSampler crop{8, {0, PadMode::zero}, 2};
  TrainResult res = train(net, w, ds, plan, crop);
  CHECK(res.loss_history.empty());
  for (size_t i = 0; i < w.filters.size(); ++i) {
    CHECK(res.weights.filters[i].weights == w.filters[i].weights);
    CHECK(res.weights.filters[i].bias == w.filters[i].bias);
  }
}

TEST_CASE("training reduces the loss on a separable task") {
  NetworkSpec net = pointwise_net(2, 2);
  NetworkWeights w = random_weights<float>(net, 8);
  Dataset ds = separable_dataset(16, 9);
  TrainStagePlan plan;
  plan.stages.push_back({StageScope::joint, {0.5, 0.9, 2, 200, 10}});
  CropSampler crop{8, {0, PadMode::zero}, 11};
  TrainResult res = train(net, w, ds, plan, crop);
  REQUIRE(res.loss_history.size() == 200);
  double head = std::accumulate(res.loss_history.begin(), res.loss_history.begin() + 20, 0.0) / 20;
  double tail = std::accumulate(res.loss_history.end() - 20, res.loss_history.end(), 0.0) / 20;
  CHECK(tail < 0.5 * head);
}

TEST_CASE("front-scope stage leaves context weights bit-unchanged") {
  NetworkSpec net;
  net.layers.emplace_back(ConvLayerSpec{2, 3, 3, 1, 1, {0, PadMode::zero}, true});
  net.layers.emplace_back(ConvLayerSpec{3, 2, 1, 1, 1, {0, PadMode::zero}, false});
  NetworkWeights w = random_weights<float>(net, 12);
  const std::vector<float> context_w = w.filters[1].weights;
  const std::vector<float> context_b = w.filters[1].bias;
  Dataset ds = separable_dataset(4, 13);
  TrainStagePlan plan;
  plan.context_start = 1;
  plan.stages.push_back({StageScope::front, {0.05, 0.9, 1, 25, 14}});
  CropSampler crop{8, {0, PadMode::zero}, 15};
  TrainResult res = train(net, w, ds, plan, crop);
  CHECK(res.weights.filters[1].weights == context_w);
  CHECK(res.weights.filters[1].bias == context_b);
  // and the front end did move
  CHECK(res.weights.filters[0].weights != w.filters[0].weights);
}

TEST_CASE("identical seeds give a bit-identical loss history") {
  NetworkSpec net;
  net.layers.emplace_back(ConvLayerSpec{2, 4, 3, 1, 1, {0, PadMode::zero}, true});
  net.layers.emplace_back(ConvLayerSpec{4, 2, 1, 1, 1, {0, PadMode::zero}, false});
  Dataset ds = separable_dataset(8, 16);
  TrainStagePlan plan;
  plan.stages.push_back({StageScope::joint, {0.05, 0.9, 2, 30, 17}});
  CropSampler crop{6, {1, PadMode::reflect}, 18};
  NetworkWeights w = random_weights<float>(net, 19);
  TrainResult a = train(net, w, ds, plan, crop);
  TrainResult b = train(net, w, ds, plan, crop);
  CHECK(a.loss_history == b.loss_history);
  for (size_t i = 0; i < a.weights.filters.size(); ++i)
    CHECK(a.weights.filters[i].weights == b.weights.filters[i].weights);
}

TEST_CASE("a tiny step along the gradient does not increase the loss") {
  NetworkSpec net;
  net.layers.emplace_back(ConvLayerSpec{2, 3, 3, 1, 1, {0, PadMode::zero}, true});
  net.layers.emplace_back(ConvLayerSpec{3, 2, 1, 1, 1, {0, PadMode::zero}, false});
  for (uint64_t seed = 0; seed < 10; ++seed) {
    NetworkWeights w = random_weights<float>(net, 100 + seed);
    Tensor batch = tensor_random<float>({2, 2, 7, 7}, 200 + seed, 0.0f, 1.0f);
    LabelMap labels(2, 5, 5);
    SplitMix64 rng(300 + seed);
    for (auto& v : labels.data) v = static_cast<int32_t>(rng.next_below(2));

    ForwardCache<float> cache;
    Tensor logits = forward(net, w, batch, &cache);
    XentResult before = softmax_xent(logits, labels);
    BackwardResult<float> back = backward(net, w, cache, before.grad_logits);
    NetworkWeights velocity = zero_weights<float>(net);
    sgd_step(w, back.grads, velocity, {1e-6, 0.0, 1, 1, 0});
    XentResult after = softmax_xent(forward(net, w, batch), labels);
    CHECK(after.loss <= before.loss + 1e-12);
  }
}

TEST_CASE("crop anchors stay in bounds and are uniform") {
  SplitMix64 rng(21);
  const int64_t padded = 11, S = 8;  // 4x4 anchor grid
  std::vector<int64_t> counts(16, 0);
  const int64_t draws = 1600;
  for (int64_t i = 0; i < draws; ++i) {
    auto [ay, ax] = draw_crop_anchor(rng, padded, padded, S);
    CHECK(ay >= 0);
    CHECK(ax >= 0);
    CHECK(ay + S <= padded);
    CHECK(ax + S <= padded);
    ++counts[ay * 4 + ax];
  }
  // chi-square against uniform, df 15; 37.7 is the 0.1% critical value
  double chi2 = 0.0;
  const double expect = static_cast<double>(draws) / 16.0;
  for (int64_t c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 37.7);
}

TEST_CASE("train config parsing") {
  const std::string text =
      "# two stages\n"
      "seed = 5\n"
      "crop_size = 40\n"
      "pad_width = 8\n"
      "pad_mode = reflect\n"
      "context_start = 4\n"
      "stage1.scope = front\n"
      "stage1.lr = 0.01\n"
      "stage1.momentum = 0.9\n"
      "stage1.batch_size = 2\n"
      "stage1.iterations = 2000\n"
      "stage2.scope = joint\n"
      "stage2.lr = 0.001\n"
      "stage2.momentum = 0.9\n"
      "stage2.batch_size = 1\n"
      "stage2.iterations = 1000\n";
  TrainConfig cfg = parse_train_config(text);
  CHECK(cfg.crop.crop_size == 40);
  CHECK(cfg.crop.padding.width == 8);
  CHECK(cfg.crop.padding.mode == PadMode::reflect);
  CHECK(cfg.crop.seed == 5);
  CHECK(cfg.plan.context_start == 4);
  REQUIRE(cfg.plan.stages.size() == 2);
  CHECK(cfg.plan.stages[0].scope == StageScope::front);
  CHECK(cfg.plan.stages[0].sgd.learning_rate == doctest::Approx(0.01));
  CHECK(cfg.plan.stages[0].sgd.iterations == 2000);
  CHECK(cfg.plan.stages[1].scope == StageScope::joint);
  CHECK(cfg.plan.stages[1].sgd.batch_size == 1);

  CHECK_THROWS_AS(parse_train_config("crop_size = 8\n"), DataError);
  CHECK_THROWS_AS(parse_train_config(text + "stage2.scope = sideways\n"), DataError);
}

TEST_CASE("prediction breaks ties toward the lowest class") {
  NetworkSpec net = pointwise_net(2, 3);
  NetworkWeights w = zero_weights<float>(net);  // all logits equal zero
  Tensor img = tensor_random<float>({1, 2, 4, 4}, 22, 0.0f, 1.0f);
  LabelMap pred = predict(net, w, img, PadMode::reflect);
  CHECK(pred.h == 4);
  for (int32_t v : pred.data) CHECK(v == 0);
}

}  // TEST_SUITE
