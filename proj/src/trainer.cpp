#include "dilnet/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dilnet/rng.hpp"

namespace dilnet {

void sgd_step(NetworkWeights& w, const NetworkWeights& grads, NetworkWeights& velocity,
              const SGDConfig& cfg) {
  cfg.validate();
  if (grads.filters.size() != w.filters.size() || velocity.filters.size() != w.filters.size())
    throw ArgumentError("sgd_step: weight/grad/velocity layer counts differ");
  const double mu = cfg.momentum, lr = cfg.learning_rate;
  for (size_t i = 0; i < w.filters.size(); ++i) {
    auto& wf = w.filters[i];
    const auto& gf = grads.filters[i];
    auto& vf = velocity.filters[i];
    if (gf.weights.size() != wf.weights.size() || vf.weights.size() != wf.weights.size())
      throw ArgumentError("sgd_step: filter " + std::to_string(i) + " shape mismatch");
    for (size_t k = 0; k < wf.weights.size(); ++k) {
      double v = mu * static_cast<double>(vf.weights[k]) - lr * static_cast<double>(gf.weights[k]);
      vf.weights[k] = static_cast<float>(v);
      wf.weights[k] = static_cast<float>(static_cast<double>(wf.weights[k]) + v);
    }
    for (size_t k = 0; k < wf.bias.size(); ++k) {
      double v = mu * static_cast<double>(vf.bias[k]) - lr * static_cast<double>(gf.bias[k]);
      vf.bias[k] = static_cast<float>(v);
      wf.bias[k] = static_cast<float>(static_cast<double>(wf.bias[k]) + v);
    }
  }
}

namespace {

struct TrainableRange {
  size_t lo, hi;  // filter indices [lo, hi)
};

TrainableRange scope_range(StageScope scope, int64_t context_start, size_t filter_count) {
  if (context_start < 0) {
    if (scope == StageScope::context)
      throw ArgumentError("stage scope 'context' requires context_start");
    return {0, filter_count};
  }
  const size_t cs = static_cast<size_t>(context_start);
  if (cs > filter_count) throw ArgumentError("context_start past the last conv layer");
  switch (scope) {
    case StageScope::front: return {0, cs};
    case StageScope::context: return {cs, filter_count};
    case StageScope::joint: return {0, filter_count};
  }
  return {0, filter_count};
}

}  // namespace

std::pair<int64_t, int64_t> draw_crop_anchor(SplitMix64& rng, int64_t padded_h, int64_t padded_w,
                                             int64_t crop_size) {
  if (crop_size > padded_h || crop_size > padded_w)
    throw ArgumentError("crop size exceeds padded plane");
  int64_t ay = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(padded_h - crop_size + 1)));
  int64_t ax = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(padded_w - crop_size + 1)));
  return {ay, ax};
}

namespace {

LabelMap pad_labels(const LabelMap& labels, int64_t width, int32_t ignore_label) {
  if (width == 0) return labels;
  LabelMap out(labels.n, labels.h + 2 * width, labels.w + 2 * width, ignore_label);
  for (int64_t n = 0; n < labels.n; ++n)
    for (int64_t y = 0; y < labels.h; ++y)
      for (int64_t x = 0; x < labels.w; ++x)
        out.at(n, y + width, x + width) = labels.at(n, y, x);
  return out;
}

}  // namespace

TrainResult train(const NetworkSpec& net, NetworkWeights w, const Dataset& data,
                  const TrainStagePlan& plan, const CropSampler& crop, int32_t ignore_label) {
  net.validate();
  plan.validate();
  if (data.images.empty()) throw DataError("empty dataset");
  if (data.images.size() != data.labels.size())
    throw DataError("dataset image/label counts differ");

  const auto report = receptive_field(net);
  const int64_t rf = report.final_rf();
  const int64_t jump = report.final_jump();
  const int64_t offset = (rf - 1) / 2;
  if (crop.crop_size < rf)
    throw ArgumentError("crop_size " + std::to_string(crop.crop_size) +
                        " below network minimum input " + std::to_string(rf));

  const int64_t in_c = net.input_channels();
  for (size_t i = 0; i < data.images.size(); ++i) {
    const auto& img = data.images[i];
    const auto& lab = data.labels[i];
    if (img.shape.n != 1 || img.shape.c != in_c)
      throw DataError("sample " + std::to_string(i) + ": image shape " + img.shape.str() +
                      " incompatible with net input channels " + std::to_string(in_c));
    if (lab.n != 1 || lab.h != img.shape.h || lab.w != img.shape.w)
      throw DataError("sample " + std::to_string(i) + ": label map does not match image");
  }

  // Pad once up front; crops index into the padded planes.
  std::vector<Tensor> padded_images;
  std::vector<LabelMap> padded_labels;
  padded_images.reserve(data.images.size());
  padded_labels.reserve(data.labels.size());
  for (size_t i = 0; i < data.images.size(); ++i) {
    padded_images.push_back(pad2d(data.images[i], crop.padding));
    padded_labels.push_back(pad_labels(data.labels[i], crop.padding.width, ignore_label));
  }
  for (const auto& p : padded_images)
    if (p.shape.h < crop.crop_size || p.shape.w < crop.crop_size)
      throw ArgumentError("crop_size " + std::to_string(crop.crop_size) +
                          " exceeds padded image extent " + p.shape.str());

  const int64_t S = crop.crop_size;
  const int64_t oh = conv_out_extent(S, rf, 1, jump);  // output grid of a crop
  if (oh < 1) throw ArgumentError("crop produces empty output");

  TrainResult res;
  res.weights = std::move(w);
  for (size_t stage_idx = 0; stage_idx < plan.stages.size(); ++stage_idx) {
    const TrainStage& stage = plan.stages[stage_idx];
    const TrainableRange range =
        scope_range(stage.scope, plan.context_start, res.weights.filters.size());
    NetworkWeights velocity = zero_weights<float>(net);
    SplitMix64 draw(mix_seed(crop.seed, mix_seed(stage.sgd.seed, stage_idx)));

    for (int64_t iter = 0; iter < stage.sgd.iterations; ++iter) {
      const int64_t B = stage.sgd.batch_size;
      Tensor batch({B, in_c, S, S});
      LabelMap targets(B, oh, oh, ignore_label);
      for (int64_t b = 0; b < B; ++b) {
        const size_t img_idx = static_cast<size_t>(draw.next_below(padded_images.size()));
        const Tensor& pimg = padded_images[img_idx];
        const LabelMap& plab = padded_labels[img_idx];
        const auto [ay, ax] = draw_crop_anchor(draw, pimg.shape.h, pimg.shape.w, S);
        for (int64_t c = 0; c < in_c; ++c)
          for (int64_t y = 0; y < S; ++y) {
            const float* src = pimg.row(0, c, ay + y) + ax;
            std::copy(src, src + S, batch.row(b, c, y));
          }
        for (int64_t py = 0; py < oh; ++py)
          for (int64_t px = 0; px < oh; ++px)
            targets.at(b, py, px) = plab.at(0, ay + offset + py * jump, ax + offset + px * jump);
      }

      ForwardCache<float> cache;
      Tensor logits = forward(net, res.weights, batch, &cache);
      if (logits.shape.h != oh || logits.shape.w != oh)
        throw StateError("crop output grid mismatch");  // receptive-field arithmetic broke
      XentResult xent = softmax_xent(logits, targets, ignore_label);
      BackwardResult<float> back = backward(net, res.weights, cache, xent.grad_logits);

      // Frozen filters: gradients discarded.
      for (size_t i = 0; i < back.grads.filters.size(); ++i)
        if (i < range.lo || i >= range.hi) {
          auto& g = back.grads.filters[i];
          std::fill(g.weights.begin(), g.weights.end(), 0.0f);
          std::fill(g.bias.begin(), g.bias.end(), 0.0f);
        }
      sgd_step(res.weights, back.grads, velocity, stage.sgd);
      res.loss_history.push_back(xent.loss);
    }
  }
  return res;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("train config: bad value '" + v + "' for " + key);
  }
}

int64_t parse_i64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("train config: bad value '" + v + "' for " + key);
  }
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("train config: expected key=value, got: " + line);
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto require = [&](const std::string& key) -> const std::string& {
    const std::string* v = get(key);
    if (!v) throw DataError("train config: missing key '" + key + "'");
    return *v;
  };

  TrainConfig cfg;
  const uint64_t master_seed =
      get("seed") ? static_cast<uint64_t>(parse_i64(*get("seed"), "seed")) : 0;

  cfg.crop.crop_size = parse_i64(require("crop_size"), "crop_size");
  cfg.crop.padding.width = parse_i64(require("pad_width"), "pad_width");
  const std::string& mode = require("pad_mode");
  if (mode == "zero") cfg.crop.padding.mode = PadMode::zero;
  else if (mode == "reflect") cfg.crop.padding.mode = PadMode::reflect;
  else throw DataError("train config: pad_mode must be zero or reflect");
  cfg.crop.seed =
      get("crop_seed") ? static_cast<uint64_t>(parse_i64(*get("crop_seed"), "crop_seed")) : master_seed;
  cfg.plan.context_start =
      get("context_start") ? parse_i64(*get("context_start"), "context_start") : -1;

  for (int n = 1;; ++n) {
    const std::string prefix = "stage" + std::to_string(n) + ".";
    if (!get(prefix + "scope")) break;
    TrainStage stage;
    const std::string& scope = *get(prefix + "scope");
    if (scope == "front") stage.scope = StageScope::front;
    else if (scope == "context") stage.scope = StageScope::context;
    else if (scope == "joint") stage.scope = StageScope::joint;
    else throw DataError("train config: scope must be front, context, or joint");
    stage.sgd.learning_rate = parse_double(require(prefix + "lr"), prefix + "lr");
    stage.sgd.momentum = parse_double(require(prefix + "momentum"), prefix + "momentum");
    stage.sgd.batch_size = parse_i64(require(prefix + "batch_size"), prefix + "batch_size");
    stage.sgd.iterations = parse_i64(require(prefix + "iterations"), prefix + "iterations");
    stage.sgd.seed = get(prefix + "seed")
                         ? static_cast<uint64_t>(parse_i64(*get(prefix + "seed"), prefix + "seed"))
                         : master_seed + static_cast<uint64_t>(n);
    cfg.plan.stages.push_back(stage);
  }
  if (cfg.plan.stages.empty()) throw DataError("train config: no stages defined");
  cfg.plan.validate();
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_train_config(buf.str());
}

void write_loss_csv(const std::string& path, const std::vector<double>& history) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "iter,loss\n";
  char buf[64];
  for (size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, history[i]);
    os << buf;
  }
  if (!os) throw DataError("write failed for " + path);
}

LabelMap predict(const NetworkSpec& net, const NetworkWeights& w, const Tensor& image,
                 PadMode buffer_mode) {
  const auto report = receptive_field(net);
  const int64_t buffer = (report.final_rf() - 1) / 2;
  Tensor padded = pad2d(image, PaddingSpec{buffer, buffer_mode});
  Tensor out = forward(net, w, padded);
  LabelMap pred(out.shape.n, out.shape.h, out.shape.w);
  for (int64_t n = 0; n < out.shape.n; ++n)
    for (int64_t y = 0; y < out.shape.h; ++y)
      for (int64_t x = 0; x < out.shape.w; ++x) {
        int32_t best = 0;
        float best_v = out.at(n, 0, y, x);
        for (int64_t c = 1; c < out.shape.c; ++c) {
          float v = out.at(n, c, y, x);
          if (v > best_v) {
            best_v = v;
            best = static_cast<int32_t>(c);
          }
        }
        pred.at(n, y, x) = best;
      }
  return pred;
}

EvalResult evaluate_dataset(const NetworkSpec& net, const NetworkWeights& w, const Dataset& data,
                            PadMode buffer_mode, int64_t num_classes, int32_t ignore_label) {
  if (data.images.size() != data.labels.size())
    throw DataError("dataset image/label counts differ");
  const int64_t jump = receptive_field(net).final_jump();
  EvalResult res{ConfusionMatrix(num_classes), {}};
  for (size_t i = 0; i < data.images.size(); ++i) {
    LabelMap pred = predict(net, w, data.images[i], buffer_mode);
    const LabelMap& gt = data.labels[i];
    // Output pixel p sits at image coordinate p*jump.
    LabelMap gt_grid(pred.n, pred.h, pred.w, ignore_label);
    for (int64_t y = 0; y < pred.h; ++y)
      for (int64_t x = 0; x < pred.w; ++x) {
        const int64_t iy = y * jump, ix = x * jump;
        if (iy < gt.h && ix < gt.w) gt_grid.at(0, y, x) = gt.at(0, iy, ix);
      }
    accumulate(res.cm, pred, gt_grid, ignore_label);
  }
  res.iou = mean_iou(res.cm);
  return res;
}

}  // namespace dilnet
