// Command-line front end: builds context modules, rewrites nets for dense
// prediction, trains and evaluates on PPM/PGM datasets, and runs the
// finite-difference battery.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "dilnet/context.hpp"
#include "dilnet/metrics.hpp"
#include "dilnet/netgraph.hpp"
#include "dilnet/synth.hpp"
#include "dilnet/trainer.hpp"

using namespace dilnet;

namespace {

PadMode parse_pad_mode(const std::string& s) {
  if (s == "zero") return PadMode::zero;
  if (s == "reflect") return PadMode::reflect;
  throw ArgumentError("pad mode must be zero or reflect, got '" + s + "'");
}

std::string rf_line(int64_t v) { return std::to_string(v) + "x" + std::to_string(v); }

int cmd_rf(const std::string& netspec_path) {
  NetworkSpec net = load_netspec(netspec_path);
  auto report = receptive_field(net);
  std::printf("%-6s %-18s %-8s %-9s %-6s %-16s %s\n", "layer", "type", "kernel", "dilation",
              "relu", "receptive field", "output stride");
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const auto& e = report.per_layer[i];
    std::string type, kernel, dilation, relu;
    if (const auto* cl = std::get_if<ConvLayerSpec>(&net.layers[i])) {
      type = "conv " + std::to_string(cl->in_channels) + "->" + std::to_string(cl->out_channels);
      kernel = std::to_string(cl->kernel) + "x" + std::to_string(cl->kernel);
      dilation = std::to_string(cl->dilation);
      relu = cl->truncation ? "yes" : "no";
    } else {
      const auto& pl = std::get<PoolLayerSpec>(net.layers[i]);
      type = "pool max";
      kernel = std::to_string(pl.kernel) + "x" + std::to_string(pl.kernel);
      dilation = "-";
      relu = "-";
    }
    std::printf("%-6zu %-18s %-8s %-9s %-6s %-16s %lld\n", i + 1, type.c_str(), kernel.c_str(),
                dilation.c_str(), relu.c_str(), rf_line(e.rf_h).c_str(),
                static_cast<long long>(e.resolution_divisor));
  }
  std::printf("\nreceptive field: %s\n", rf_line(report.final_rf()).c_str());
  return 0;
}

int cmd_build(int64_t C, const std::string& variant, int depth, const std::string& init,
              double sigma_scale, uint64_t seed, const std::string& out_net,
              const std::string& out_weights) {
  ContextConfig cfg;
  cfg.C = C;
  cfg.depth = depth;
  if (variant == "basic") cfg.variant = ContextVariant::basic;
  else if (variant == "large") cfg.variant = ContextVariant::large;
  else throw ArgumentError("variant must be basic or large");

  NetworkSpec net = build_context(cfg);
  NetworkWeights w;
  if (init == "identity") {
    w = cfg.variant == ContextVariant::basic ? init_identity_basic(net, C)
                                             : init_identity_general(net, C, 0.0, seed);
  } else if (init == "identity-noise") {
    w = init_identity_general(net, C, sigma_scale, seed);
  } else {
    throw ArgumentError("init must be identity or identity-noise");
  }
  save_netspec(out_net, net);
  save_weights(out_weights, w);
  auto pc = param_count(net);
  std::printf("wrote %s (%d layers) and %s (%lld weights, %lld biases)\n", out_net.c_str(),
              depth, out_weights.c_str(), static_cast<long long>(pc.weights),
              static_cast<long long>(pc.biases));
  return 0;
}

int cmd_rewrite(const std::string& netspec_path, const std::string& ablate_arg,
                const std::string& mode_arg, const std::string& out_path) {
  NetworkSpec net = load_netspec(netspec_path);
  std::set<size_t> ablate;
  if (!ablate_arg.empty() && ablate_arg != "none") {
    std::istringstream is(ablate_arg);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      try {
        ablate.insert(static_cast<size_t>(std::stoull(tok)));
      } catch (const std::exception&) {
        throw ArgumentError("bad layer index '" + tok + "' in --ablate");
      }
    }
  }
  RewriteMode mode;
  if (mode_arg == "remove") mode = RewriteMode::remove_pool;
  else if (mode_arg == "unstride") mode = RewriteMode::keep_pool_unstride;
  else throw ArgumentError("mode must be remove or unstride");
  save_netspec(out_path, rewrite_dense(net, ablate, mode));
  return 0;
}

int cmd_train(const std::string& net_path, const std::string& weights_path,
              bool has_init_seed, uint64_t init_seed, const std::string& data_dir,
              const std::string& config_path, const std::string& stages_arg,
              const std::string& out_weights, const std::string& out_loss) {
  NetworkSpec net = load_netspec(net_path);
  if (weights_path.empty() == !has_init_seed)
    throw ArgumentError("train needs exactly one of --weights or --init-seed");
  NetworkWeights w = weights_path.empty() ? random_weights<float>(net, init_seed)
                                          : load_weights(weights_path);
  Dataset data = load_dataset(data_dir);
  TrainConfig cfg = load_train_config(config_path);
  if (!stages_arg.empty()) {
    // run a subset of the configured stages, e.g. --stages 1 or --stages 1,2
    std::vector<TrainStage> picked;
    std::istringstream is(stages_arg);
    std::string tok;
    while (std::getline(is, tok, ',')) {
      size_t idx;
      try {
        idx = static_cast<size_t>(std::stoull(tok));
      } catch (const std::exception&) {
        throw ArgumentError("bad stage index '" + tok + "' in --stages");
      }
      if (idx < 1 || idx > cfg.plan.stages.size())
        throw ArgumentError("stage index " + tok + " out of range");
      picked.push_back(cfg.plan.stages[idx - 1]);
    }
    cfg.plan.stages = std::move(picked);
  }
  TrainResult res = train(net, std::move(w), data, cfg.plan, cfg.crop);
  save_weights(out_weights, res.weights);
  write_loss_csv(out_loss, res.loss_history);
  if (!res.loss_history.empty())
    std::printf("trained %zu iterations, loss %.6f -> %.6f\n", res.loss_history.size(),
                res.loss_history.front(), res.loss_history.back());
  return 0;
}

int cmd_eval(const std::string& net_path, const std::string& weights_path,
             const std::string& data_dir, const std::string& pad_mode_arg,
             const std::string& csv_path) {
  NetworkSpec net = load_netspec(net_path);
  NetworkWeights w = load_weights(weights_path);
  Dataset data = load_dataset(data_dir);
  EvalResult res =
      evaluate_dataset(net, w, data, parse_pad_mode(pad_mode_arg), net.output_channels());
  std::printf("%-8s %s\n", "class", "IoU");
  for (size_t c = 0; c < res.iou.per_class.size(); ++c) {
    if (std::isnan(res.iou.per_class[c]))
      std::printf("%-8zu %s\n", c, "-");
    else
      std::printf("%-8zu %.6f\n", c, res.iou.per_class[c]);
  }
  std::printf("mean IoU: %.6f\n", res.iou.miou);
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    if (!os) throw DataError("cannot write " + csv_path);
    os << "class,iou\n";
    char buf[64];
    for (size_t c = 0; c < res.iou.per_class.size(); ++c)
      if (!std::isnan(res.iou.per_class[c])) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g\n", c, res.iou.per_class[c]);
        os << buf;
      }
    std::snprintf(buf, sizeof(buf), "mean,%.12g\n", res.iou.miou);
    os << buf;
  }
  return 0;
}

int cmd_infer(const std::string& net_path, const std::string& weights_path,
              const std::string& image_path, const std::string& out_path,
              const std::string& pad_mode_arg) {
  NetworkSpec net = load_netspec(net_path);
  NetworkWeights w = load_weights(weights_path);
  Tensor image = read_ppm(image_path);
  LabelMap pred = predict(net, w, image, parse_pad_mode(pad_mode_arg));
  write_pgm(out_path, pred);
  return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, int64_t count) {
  ShapesSceneConfig cfg = load_scene_config(config_path);
  write_dataset(out_dir, cfg, count);
  std::printf("wrote %lld samples under %s\n", static_cast<long long>(count), out_dir.c_str());
  return 0;
}

// --- gradcheck ---------------------------------------------------------

double projection_loss(const NetworkSpec& net, const NetworkWeightsT<double>& w,
                       const TensorT<double>& x, const TensorT<double>& proj) {
  TensorT<double> y = forward(net, w, x);
  double acc = 0.0;
  for (size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * proj.data[i];
  return acc;
}

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Worst finite-difference relative error over all weights, biases and input
// entries of a network.
double fd_worst_err(const NetworkSpec& net, const NetworkWeightsT<double>& w,
                    const TensorT<double>& x, uint64_t proj_seed) {
  const double h = 1e-4;
  TensorT<double> y0 = forward(net, w, x);
  TensorT<double> proj = tensor_random<double>(y0.shape, proj_seed, -1.0, 1.0);
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
  return worst;
}

double min_abs_preact(const NetworkSpec& net, const NetworkWeightsT<double>& w,
                      const TensorT<double>& x) {
  ForwardCache<double> cache;
  forward(net, w, x, &cache);
  double m = 1e300;
  size_t fi = 0;
  for (size_t li = 0; li < net.layers.size(); ++li)
    if (const auto* cl = std::get_if<ConvLayerSpec>(&net.layers[li])) {
      if (cl->truncation) {
        TensorT<double> pre =
            conv2d_dilated(cache.padded_inputs[li], w.filters[fi], cl->dilation, cl->stride);
        for (double v : pre.data) m = std::min(m, std::fabs(v));
      }
      ++fi;
    }
  return m;
}

int cmd_gradcheck(const std::string& net_path, uint64_t seed) {
  const double tol = 1e-6;
  bool ok = true;
  auto report = [&](const std::string& name, double err) {
    bool pass = err < tol;
    ok = ok && pass;
    std::printf("%-44s rel err %.3e  %s\n", name.c_str(), err, pass ? "ok" : "FAIL");
  };

  // bare conv layers across dilations, strides and both padding modes
  for (int64_t d : {1, 2, 4})
    for (PadMode mode : {PadMode::zero, PadMode::reflect})
      for (int64_t s : {1, 2}) {
        NetworkSpec net;
        net.layers.emplace_back(ConvLayerSpec{2, 3, 3, d, s, {1, mode}, false});
        const int64_t extent = (3 - 1) * d + 1 + 5;
        TensorT<double> x = tensor_random<double>({1, 2, extent, extent},
                                                  mix_seed(seed, d * 10 + s), -1.0, 1.0);
        NetworkWeightsT<double> w = random_weights<double>(net, mix_seed(seed, d * 100 + s));
        std::string name = "conv d=" + std::to_string(d) + " s=" + std::to_string(s) +
                           (mode == PadMode::zero ? " pad=zero" : " pad=reflect");
        report(name, fd_worst_err(net, w, x, mix_seed(seed, d * 1000 + s)));
      }

  // softmax cross-entropy gradient
  {
    const double h = 1e-4;
    TensorT<double> logits = tensor_random<double>({2, 3, 4, 4}, mix_seed(seed, 7), -2.0, 2.0);
    LabelMap labels(2, 4, 4);
    SplitMix64 rng(mix_seed(seed, 8));
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
      double num = (softmax_xent(lp, labels).loss - softmax_xent(lm, labels).loss) / (2 * h);
      worst = std::max(worst, rel_err(num, r.grad_logits.data[i]));
    }
    report("softmax cross-entropy", worst);
  }

  // 3-layer composite with reflect padding and truncation
  {
    NetworkSpec net;
    net.layers.emplace_back(ConvLayerSpec{2, 3, 3, 1, 1, {1, PadMode::reflect}, true});
    net.layers.emplace_back(ConvLayerSpec{3, 3, 3, 2, 1, {1, PadMode::zero}, true});
    net.layers.emplace_back(ConvLayerSpec{3, 2, 1, 1, 1, {0, PadMode::zero}, false});
    uint64_t s = seed;
    NetworkWeightsT<double> w;
    TensorT<double> x;
    for (;; ++s) {  // keep clear of the truncation kink
      w = random_weights<double>(net, mix_seed(s, 11));
      x = tensor_random<double>({1, 2, 10, 10}, mix_seed(s, 12), -1.0, 1.0);
      if (min_abs_preact(net, w, x) > 1e-3) break;
    }
    report("3-layer composite (reflect pad + relu)", fd_worst_err(net, w, x, mix_seed(s, 13)));
  }

  // caller-supplied network, if any
  if (!net_path.empty()) {
    NetworkSpec net = load_netspec(net_path);
    NetworkWeightsT<double> w = random_weights<double>(net, mix_seed(seed, 21));
    const int64_t need = receptive_field(net).final_rf() + 3;
    TensorT<double> x = tensor_random<double>({1, net.input_channels(), need, need},
                                              mix_seed(seed, 22), 0.05, 1.0);
    report("network " + net_path, fd_worst_err(net, w, x, mix_seed(seed, 23)));
  }

  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dilated-convolution dense prediction engine"};
  app.require_subcommand(1);

  std::string netspec_path, weights_path, data_dir, config_path, image_path;
  std::string out_net, out_weights, out_loss, out_path, csv_path;
  std::string variant = "basic", init = "identity", mode, pad_mode = "reflect", ablate, stages;
  int64_t C = 0, count = 0;
  int depth = 8;
  double sigma_scale = 0.01;
  uint64_t seed = 0;

  auto* rf = app.add_subcommand("rf", "print the receptive-field report for a netspec");
  rf->add_option("netspec", netspec_path, "network spec file")->required();

  auto* build = app.add_subcommand("build", "build and initialize a context module");
  build->add_option("--C", C, "channel/class count")->required();
  build->add_option("--variant", variant, "basic | large");
  build->add_option("--depth", depth, "7 | 8 | 10");
  build->add_option("--init", init, "identity | identity-noise");
  build->add_option("--sigma-scale", sigma_scale, "noise scale relative to the center weight");
  build->add_option("--seed", seed, "noise seed");
  build->add_option("--out-net", out_net, "netspec output path")->required();
  build->add_option("--out-weights", out_weights, "weights output path")->required();

  auto* rewrite = app.add_subcommand("rewrite", "ablate pool/stride layers for dense prediction");
  rewrite->add_option("netspec", netspec_path, "network spec file")->required();
  rewrite->add_option("--ablate", ablate, "comma-separated pool layer indices (or 'none')");
  rewrite->add_option("--mode", mode, "remove | unstride")->required();
  rewrite->add_option("--out", out_path, "output netspec path")->required();

  uint64_t init_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train a network on a PPM/PGM dataset");
  train_cmd->add_option("--net", netspec_path)->required();
  train_cmd->add_option("--weights", weights_path, "initial weights file");
  auto* init_seed_opt =
      train_cmd->add_option("--init-seed", init_seed, "random-init seed instead of --weights");
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--stages", stages, "subset of configured stages to run, e.g. 1,2");
  train_cmd->add_option("--out-weights", out_weights)->required();
  train_cmd->add_option("--out-loss", out_loss)->required();

  auto* eval_cmd = app.add_subcommand("eval", "report per-class and mean IoU on a dataset");
  eval_cmd->add_option("--net", netspec_path)->required();
  eval_cmd->add_option("--weights", weights_path)->required();
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--pad-mode", pad_mode, "zero | reflect input buffer");
  eval_cmd->add_option("--csv", csv_path, "also write per-class IoU as CSV");

  auto* infer = app.add_subcommand("infer", "predict a label map for one image");
  infer->add_option("--net", netspec_path)->required();
  infer->add_option("--weights", weights_path)->required();
  infer->add_option("--image", image_path, "input PPM")->required();
  infer->add_option("--out", out_path, "output PGM")->required();
  infer->add_option("--pad-mode", pad_mode, "zero | reflect input buffer");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--net", netspec_path, "also check this netspec");
  gradcheck->add_option("--seed", seed)->required();

  auto* gen = app.add_subcommand("gen-data", "materialize a synthetic shapes dataset");
  gen->add_option("--config", config_path, "scene config file")->required();
  gen->add_option("--out", out_path, "dataset directory")->required();
  gen->add_option("--count", count, "number of samples")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (rf->parsed()) return cmd_rf(netspec_path);
    if (build->parsed())
      return cmd_build(C, variant, depth, init, sigma_scale, seed, out_net, out_weights);
    if (rewrite->parsed()) return cmd_rewrite(netspec_path, ablate, mode, out_path);
    if (train_cmd->parsed())
      return cmd_train(netspec_path, weights_path, init_seed_opt->count() > 0, init_seed,
                       data_dir, config_path, stages, out_weights, out_loss);
    if (eval_cmd->parsed())
      return cmd_eval(netspec_path, weights_path, data_dir, pad_mode, csv_path);
    if (infer->parsed())
      return cmd_infer(netspec_path, weights_path, image_path, out_path, pad_mode);
    if (gradcheck->parsed()) return cmd_gradcheck(netspec_path, seed);
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, count);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
