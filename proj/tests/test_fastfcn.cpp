#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "semtrack/fastfcn.hpp"
#include "semtrack/rng.hpp"

using namespace semtrack;
namespace fs = std::filesystem;

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("desk-scale architecture contract: 9 conv, 3 pool, 3 deconv, fixed shapes") {
  const fcn::FcnSpec spec = fcn::desk_scale_spec();
  CHECK(spec.count(fcn::LayerKind::kConv) == 9);
  CHECK(spec.count(fcn::LayerKind::kPool) == 3);
  CHECK(spec.count(fcn::LayerKind::kDeconv) == 3);
  CHECK(spec.in_h == 106);
  CHECK(spec.in_w == 128);
  CHECK(spec.in_c == 4);

  // bottleneck: the widest layer must be 13 x 16 x 512
  bool found_bottleneck = false;
  for (const auto& l : spec.layers)
    if (l.cout == 512) {
      CHECK(l.out_h == 13);
      CHECK(l.out_w == 16);
      found_bottleneck = true;
    }
  CHECK(found_bottleneck);

  const auto& out = spec.output_layer();
  CHECK(out.out_h == 106);
  CHECK(out.out_w == 128);
  CHECK(out.cout == 7);
  CHECK_FALSE(out.relu);

  // analytic parameter count from the declared layer plan
  size_t expect = 0;
  const int conv_plan[][2] = {{4, 64},   {64, 64},   {64, 128},  {128, 128}, {128, 256},
                              {256, 256}, {256, 512}, {256, 256}, {64, 7}};
  for (auto [ci, co] : conv_plan) expect += 9u * ci * co + co;
  const int deconv_plan[][2] = {{512, 256}, {256, 128}, {128, 64}};
  for (auto [ci, co] : deconv_plan) expect += 16u * ci * co;
  CHECK(spec.param_count == expect);
  CHECK(spec.param_count == 5672775u);
}

TEST_CASE("builds are seed-deterministic") {
  FastFcn a = build_fast_fcn(77);
  FastFcn b = build_fast_fcn(77);
  FastFcn c = build_fast_fcn(78);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  CHECK(a.params.size() == a.spec.param_count);
  for (float v : a.params) REQUIRE(std::isfinite(v));
}

TEST_CASE("predict: zero params give uniform logits and all-background labels") {
  FastFcn net;
  net.spec = fcn::desk_scale_spec();
  net.params.assign(net.spec.param_count, 0.0f);
  Tensor input(106, 128, 4);
  Rng rng(3);
  for (auto& v : input.data) v = static_cast<float>(rng.uniform());
  PredictResult r = predict(net, input);
  CHECK(r.logits.h == 106);
  CHECK(r.logits.w == 128);
  CHECK(r.logits.c == 7);
  CHECK(r.labels.h == 106);
  CHECK(r.labels.w == 128);
  for (uint8_t l : r.labels.v) CHECK(l == 0);  // ties break to lowest id
  for (float v : r.logits.data) CHECK(v == 0.0f);
}

TEST_CASE("predict rejects non-finite activations") {
  FastFcn net = build_fast_fcn(5);
  // poison the logit layer's bias so the corruption reaches the output
  // (a NaN further upstream can be masked by a ReLU)
  net.params[net.spec.output_layer().bias_off] =
      std::numeric_limits<float>::quiet_NaN();
  Tensor input(106, 128, 4);
  input.fill(0.5f);
  CHECK_THROWS_AS((void)predict(net, input), std::runtime_error);
}

TEST_CASE("miniature end-to-end gradient matches finite differences") {
  const fcn::FcnSpec spec = fcn::miniature_spec();
  CHECK(spec.count(fcn::LayerKind::kConv) == 9);
  CHECK(spec.count(fcn::LayerKind::kPool) == 3);
  CHECK(spec.count(fcn::LayerKind::kDeconv) == 3);
  CHECK(spec.output_layer().out_h == 16);
  CHECK(spec.output_layer().out_w == 14);
  CHECK(spec.output_layer().cout == 7);

  Rng rng(2024);
  std::vector<double> params;
  fcn::he_init(spec, params, rng);
  TensorD input(16, 14, 4);
  for (auto& v : input.data) v = rng.uniform();
  LabelMap truth(16, 14);
  for (auto& v : truth.v) v = static_cast<uint8_t>(rng.uniform_int(7));
  const double lambda = 0.7;

  fcn::FcnGraph<double> graph(spec);
  const auto eval = [&] {
    const TensorD& logits = graph.forward(params.data(), input);
    return nn::segmentation_loss(nn::softmax_pixelwise(logits), truth, lambda).loss;
  };

  const TensorD& logits = graph.forward(params.data(), input);
  auto loss = nn::segmentation_loss(nn::softmax_pixelwise(logits), truth, lambda);
  std::vector<double> grads(spec.param_count);
  graph.backward(params.data(), input, loss.d_logits, grads.data());

  // spot-check a random subset of parameters from every layer (the full
  // sweep runs in the acceptance suite)
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& layer : spec.layers) {
    if (layer.kernel_n == 0) continue;
    for (int rep = 0; rep < 20; ++rep) {
      const size_t k = layer.kernel_off + rng.uniform_int(static_cast<int>(layer.kernel_n));
      const double keep = params[k];
      params[k] = keep + h;
      const double fp = eval();
      params[k] = keep - h;
      const double fm = eval();
      params[k] = keep;
      worst = std::max(worst, rel_err(grads[k], (fp - fm) / (2 * h)));
    }
    for (size_t b = 0; b < layer.bias_n; ++b) {
      const size_t k = layer.bias_off + b;
      const double keep = params[k];
      params[k] = keep + h;
      const double fp = eval();
      params[k] = keep - h;
      const double fm = eval();
      params[k] = keep;
      worst = std::max(worst, rel_err(grads[k], (fp - fm) / (2 * h)));
    }
  }
  CHECK(worst < 1e-3);
  MESSAGE("miniature end-to-end worst rel err: ", worst);
}

TEST_CASE("checkpoint round-trip, digest guard, and corruption detection") {
  const auto dir = fs::temp_directory_path() / "semtrack_test_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "net.ffcn").string();

  FastFcn net = build_fast_fcn(123);
  CheckpointMeta meta;
  meta.epoch = 7;
  meta.loss_history = {1.5, 0.9, 0.4};
  meta.lambda = 2.5;
  meta.seed = 123;
  save_checkpoint(net, meta, path);

  auto [loaded, lmeta] = load_checkpoint(path);
  CHECK(loaded.params == net.params);
  CHECK(loaded.spec.digest() == net.spec.digest());
  CHECK(lmeta.epoch == 7);
  CHECK(lmeta.loss_history == meta.loss_history);
  CHECK(lmeta.lambda == doctest::Approx(2.5));
  CHECK(lmeta.seed == 123);

  // identical predictions after reload
  Tensor input(106, 128, 4);
  Rng rng(9);
  for (auto& v : input.data) v = static_cast<float>(rng.uniform());
  PredictResult a = predict(net, input);
  PredictResult b = predict(loaded, input);
  CHECK(a.logits.data == b.logits.data);
  CHECK(a.labels.v == b.labels.v);

  // flip one parameter byte: crc must catch it
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4 + 4 + 8 + 8 + 1234);
    char c;
    f.seekg(4 + 4 + 8 + 8 + 1234);
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x40);
    f.seekp(4 + 4 + 8 + 8 + 1234);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);

  // truncated file
  save_checkpoint(net, meta, path);
  {
    const auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
  }
  CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);

  // wrong architecture digest
  FastFcn mini;
  mini.spec = fcn::miniature_spec();
  Rng r2(4);
  fcn::he_init(mini.spec, mini.params, r2);
  save_checkpoint(mini, meta, path);
  CHECK_THROWS_AS((void)load_checkpoint(path), std::runtime_error);
  CHECK_NOTHROW((void)load_checkpoint(path, fcn::miniature_spec()));

  fs::remove_all(dir);
}

TEST_CASE("training on a separable miniature task reduces loss deterministically") {
  // depth channel alone separates the two classes
  const auto make_sample = [](int idx) {
    TrainSample s;
    s.input = Tensor(16, 14, 4);
    s.labels = LabelMap(16, 14);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 14; ++x) {
        const bool body = (x + idx) % 2 == 0;
        s.input(y, x, 0) = 0.5f;
        s.input(y, x, 1) = 0.5f;
        s.input(y, x, 2) = 0.5f;
        s.input(y, x, 3) = body ? 0.4f : 0.9f;
        s.labels.at(y, x) = body ? 2 : 0;
      }
    return s;
  };

  const auto run = [&] {
    FastFcn net;
    net.spec = fcn::miniature_spec();
    Rng rng(55);
    fcn::he_init(net.spec, net.params, rng);
    TrainConfig cfg;
    cfg.lambda = 1.0;
    cfg.lr = 3e-3;
    cfg.batch = 2;
    cfg.epochs = 40;
    cfg.seed = 9;
    TrainStats stats = train(net, 2, make_sample, cfg);
    return std::pair(std::move(net), std::move(stats));
  };

  auto [net1, stats1] = run();
  auto [net2, stats2] = run();
  REQUIRE(stats1.steps > 0);
  CHECK_FALSE(stats1.diverged);
  CHECK(stats1.step_loss.back() < 0.5 * stats1.step_loss.front());
  CHECK(stats1.epoch_loss.size() == 40);

  // bit-identical across reruns with the same seed
  CHECK(stats1.step_loss == stats2.step_loss);
  CHECK(net1.params == net2.params);
}

TEST_CASE("train validates inputs") {
  FastFcn net;
  net.spec = fcn::miniature_spec();
  net.params.assign(net.spec.param_count, 0.0f);
  TrainConfig cfg;
  const SampleFn fn = [](int) { return TrainSample{}; };
  CHECK_THROWS_AS((void)train(net, 0, fn, cfg), std::invalid_argument);
  cfg.batch = 0;
  CHECK_THROWS_AS((void)train(net, 1, fn, cfg), std::invalid_argument);
}
