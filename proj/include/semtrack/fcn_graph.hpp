#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "semtrack/nn_ops.hpp"
#include "semtrack/rng.hpp"
#include "semtrack/tensor.hpp"

// Layer-graph description and executor for the segmentation network.
// The spec is a flat ordered layer list; parameters live in one flat
// buffer addressed by per-layer offsets, which keeps the optimizer and
// checkpoint format trivial and lets gradient checks walk every scalar.
namespace semtrack::fcn {

enum class LayerKind { kConv, kPool, kDeconv };

struct Layer {
  LayerKind kind;
  int cin = 0, cout = 0;
  bool relu = false;
  int out_h = 0, out_w = 0;      // spatial dims after this layer
  int target_h = 0, target_w = 0;  // deconv only: requested output dims
  size_t kernel_off = 0, kernel_n = 0;
  size_t bias_off = 0, bias_n = 0;
};

struct FcnSpec {
  int in_h = 0, in_w = 0, in_c = 0;
  std::vector<Layer> layers;
  size_t param_count = 0;

  int count(LayerKind k) const {
    int n = 0;
    for (const auto& l : layers) n += (l.kind == k) ? 1 : 0;
    return n;
  }
  const Layer& output_layer() const { return layers.back(); }

  // stable textual form; its hash guards checkpoints against being loaded
  // into a different architecture
  std::string serialize() const {
    std::string s = "in:" + std::to_string(in_h) + "x" + std::to_string(in_w) + "x" +
                    std::to_string(in_c);
    for (const auto& l : layers) {
      switch (l.kind) {
        case LayerKind::kConv:
          s += "|conv:" + std::to_string(l.cin) + ">" + std::to_string(l.cout);
          break;
        case LayerKind::kPool:
          s += "|pool";
          break;
        case LayerKind::kDeconv:
          s += "|deconv:" + std::to_string(l.cin) + ">" + std::to_string(l.cout) + ":" +
               std::to_string(l.target_h) + "x" + std::to_string(l.target_w);
          break;
      }
      if (l.relu) s += ":r";
    }
    return s;
  }
  uint64_t digest() const {
    const std::string s = serialize();
    return fnv1a64(s.data(), s.size());
  }
};

// Builds layer lists with running shape/offset bookkeeping.
class FcnSpecBuilder {
 public:
  FcnSpecBuilder(int in_h, int in_w, int in_c) {
    spec_.in_h = in_h;
    spec_.in_w = in_w;
    spec_.in_c = in_c;
    h_ = in_h;
    w_ = in_w;
    c_ = in_c;
  }

  FcnSpecBuilder& conv(int cout, bool relu = true) {
    Layer l;
    l.kind = LayerKind::kConv;
    l.cin = c_;
    l.cout = cout;
    l.relu = relu;
    l.kernel_n = static_cast<size_t>(9) * c_ * cout;
    l.bias_n = static_cast<size_t>(cout);
    l.out_h = h_;
    l.out_w = w_;
    push(l);
    c_ = cout;
    return *this;
  }

  FcnSpecBuilder& pool() {
    Layer l;
    l.kind = LayerKind::kPool;
    l.cin = c_;
    l.cout = c_;
    l.out_h = h_ / 2;
    l.out_w = w_ / 2;
    push(l);
    h_ /= 2;
    w_ /= 2;
    return *this;
  }

  FcnSpecBuilder& deconv(int cout, int target_h, int target_w, bool relu = true) {
    Layer l;
    l.kind = LayerKind::kDeconv;
    l.cin = c_;
    l.cout = cout;
    l.relu = relu;
    l.kernel_n = static_cast<size_t>(16) * c_ * cout;
    l.target_h = target_h;
    l.target_w = target_w;
    l.out_h = target_h;
    l.out_w = target_w;
    push(l);
    h_ = target_h;
    w_ = target_w;
    c_ = cout;
    return *this;
  }

  FcnSpec finish() {
    spec_.param_count = off_;
    return spec_;
  }

 private:
  void push(Layer l) {
    l.kernel_off = off_;
    off_ += l.kernel_n;
    l.bias_off = off_;
    off_ += l.bias_n;
    spec_.layers.push_back(l);
  }

  FcnSpec spec_;
  int h_, w_, c_;
  size_t off_ = 0;
};

// Desk-scale network: 128x106x4 input (stored 106 rows x 128 cols),
// 16x13x512 bottleneck, 128x106x7 logits; 9 convolutions, 3 pools,
// 3 deconvolutions. ReLU after every layer except the logit conv.
inline FcnSpec desk_scale_spec() {
  FcnSpecBuilder b(106, 128, 4);
  b.conv(64).conv(64).pool();
  b.conv(128).conv(128).pool();
  b.conv(256).conv(256).pool();
  b.conv(512);                 // bottleneck 13x16x512
  b.deconv(256, 26, 32).conv(256);
  b.deconv(128, 53, 64);       // odd row target, zero-padded bottom row
  b.deconv(64, 106, 128);
  b.conv(7, /*relu=*/false);
  return b.finish();
}

// Same topology shrunk to a 16x14 input for finite-difference checks.
inline FcnSpec miniature_spec() {
  FcnSpecBuilder b(16, 14, 4);
  b.conv(6).conv(6).pool();    // 8x7
  b.conv(8).conv(8).pool();    // 4x3
  b.conv(10).conv(10).pool();  // 2x1
  b.conv(12);
  b.deconv(10, 4, 3).conv(10);
  b.deconv(8, 8, 7);
  b.deconv(6, 16, 14);
  b.conv(7, /*relu=*/false);
  return b.finish();
}

// He initialization: kernel entries ~ N(0, sqrt(2 / fan_in)), biases 0.
template <typename T>
void he_init(const FcnSpec& spec, std::vector<T>& params, Rng& rng) {
  params.assign(spec.param_count, T(0));
  for (const auto& l : spec.layers) {
    if (l.kernel_n == 0) continue;
    const int taps = (l.kind == LayerKind::kConv) ? 9 : 16;
    const double stddev = std::sqrt(2.0 / (static_cast<double>(taps) * l.cin));
    for (size_t i = 0; i < l.kernel_n; ++i)
      params[l.kernel_off + i] = static_cast<T>(rng.normal(0.0, stddev));
  }
}

// Executor holding per-layer activations so backward can reuse them.
// One instance per thread; forward/backward are deterministic.
template <typename T>
class FcnGraph {
 public:
  explicit FcnGraph(const FcnSpec& spec)
      : spec_(&spec), acts_(spec.layers.size()), argmax_(spec.layers.size()) {}

  const FcnSpec& spec() const { return *spec_; }

  const TensorT<T>& forward(const T* params, const TensorT<T>& input) {
    if (input.h != spec_->in_h || input.w != spec_->in_w || input.c != spec_->in_c)
      throw std::invalid_argument("forward: input shape does not match network spec");
    const TensorT<T>* cur = &input;
    for (size_t i = 0; i < spec_->layers.size(); ++i) {
      const Layer& l = spec_->layers[i];
      TensorT<T>& out = acts_[i];
      switch (l.kind) {
        case LayerKind::kConv:
          nn::conv3x3_forward(*cur, params + l.kernel_off, params + l.bias_off,
                              l.cout, out);
          break;
        case LayerKind::kPool:
          nn::maxpool2x2_forward(*cur, out, argmax_[i]);
          break;
        case LayerKind::kDeconv:
          nn::deconv4x4s2_forward(*cur, params + l.kernel_off, l.cout, l.target_h,
                                  l.target_w, out);
          break;
      }
      if (l.relu)
        for (auto& v : out.data) v = v > T(0) ? v : T(0);
      cur = &out;
    }
    return *cur;
  }

  // Gradient of a scalar loss w.r.t. all parameters, given its gradient at
  // the network output. Must follow a forward() with the same params/input.
  // grads is overwritten (param_count entries).
  void backward(const T* params, const TensorT<T>& input, const TensorT<T>& d_logits,
                T* grads) {
    const size_t n = spec_->layers.size();
    d_cur_ = d_logits;
    for (size_t ri = n; ri-- > 0;) {
      const Layer& l = spec_->layers[ri];
      const TensorT<T>& layer_in = (ri == 0) ? input : acts_[ri - 1];
      if (l.relu) {
        // the stored activation is post-ReLU; positive entries pass through
        const TensorT<T>& a = acts_[ri];
        for (size_t i = 0; i < a.size(); ++i)
          if (!(a.data[i] > T(0))) d_cur_.data[i] = T(0);
      }
      TensorT<T>* d_in = (ri == 0) ? nullptr : &d_prev_;
      switch (l.kind) {
        case LayerKind::kConv:
          nn::conv3x3_backward(layer_in, params + l.kernel_off, l.cout, d_cur_, d_in,
                               grads + l.kernel_off, grads + l.bias_off);
          break;
        case LayerKind::kPool:
          if (d_in)
            nn::maxpool2x2_backward(layer_in.h, layer_in.w, layer_in.c, argmax_[ri],
                                    d_cur_, *d_in);
          break;
        case LayerKind::kDeconv:
          nn::deconv4x4s2_backward(layer_in, params + l.kernel_off, l.cout, d_cur_,
                                   d_in, grads + l.kernel_off);
          break;
      }
      if (d_in) std::swap(d_cur_, d_prev_);
    }
  }

 private:
  const FcnSpec* spec_;
  std::vector<TensorT<T>> acts_;
  std::vector<std::vector<int32_t>> argmax_;
  TensorT<T> d_cur_, d_prev_;
};

}  // namespace semtrack::fcn
