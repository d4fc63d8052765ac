#include "semtrack/fastfcn.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "semtrack/parallel.hpp"
#include "semtrack/rng.hpp"

namespace semtrack {

FastFcn build_fast_fcn(uint64_t seed) {
  FastFcn net;
  net.spec = fcn::desk_scale_spec();
  Rng rng(seed);
  fcn::he_init(net.spec, net.params, rng);
  return net;
}

PredictResult predict(const FastFcn& net, const Tensor& input) {
  fcn::FcnGraph<float> graph(net.spec);
  const Tensor& logits = graph.forward(net.params.data(), input);
  if (!logits.all_finite())
    throw std::runtime_error("predict: non-finite activations");
  PredictResult r;
  r.logits = logits;
  r.labels = LabelMap(logits.h, logits.w);
  for (int y = 0; y < logits.h; ++y)
    for (int x = 0; x < logits.w; ++x) {
      const float* l = logits.at(y, x);
      int best = 0;
      for (int c = 1; c < logits.c; ++c)
        if (l[c] > l[best]) best = c;  // strict: ties stay at lower id
      r.labels.at(y, x) = static_cast<uint8_t>(best);
    }
  return r;
}

TrainStats train(FastFcn& net, int sample_count, const SampleFn& sample,
                 const TrainConfig& cfg) {
  if (sample_count <= 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch <= 0 || cfg.epochs <= 0)
    throw std::invalid_argument("train: batch and epochs must be positive");

  const int slots = std::max(1, std::min(worker_count(), cfg.batch));
  std::vector<fcn::FcnGraph<float>> graphs(slots, fcn::FcnGraph<float>(net.spec));
  std::vector<std::vector<float>> slot_grads(slots,
                                             std::vector<float>(net.spec.param_count));
  std::vector<std::vector<float>> slot_scratch(
      slots, std::vector<float>(net.spec.param_count));
  std::vector<double> slot_loss(slots);

  std::vector<float> grads(net.spec.param_count);
  std::vector<float> last_good = net.params;
  nn::AdamStateT<float> adam(net.spec.param_count);
  adam.lr = static_cast<float>(cfg.lr);

  Rng rng(cfg.seed);
  std::vector<int> order(sample_count);
  std::iota(order.begin(), order.end(), 0);

  TrainStats stats;
  const float lambda = static_cast<float>(cfg.lambda);
  bool stop = false;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    rng.shuffle(order);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (int start = 0; start < sample_count && !stop; start += cfg.batch) {
      const int bsz = std::min(cfg.batch, sample_count - start);
      for (auto& sg : slot_grads) std::fill(sg.begin(), sg.end(), 0.0f);
      std::fill(slot_loss.begin(), slot_loss.end(), 0.0);

      // each slot owns a contiguous sample range; writes stay slot-local so
      // the result is independent of thread scheduling
      parallel_for(slots, [&](int slot) {
        const int chunk = (bsz + slots - 1) / slots;
        const int b0 = slot * chunk;
        const int b1 = std::min(bsz, b0 + chunk);
        auto& g = graphs[slot];
        auto& sg = slot_grads[slot];
        auto& scratch = slot_scratch[slot];
        for (int b = b0; b < b1; ++b) {
          TrainSample s = sample(order[start + b]);
          const Tensor& logits = g.forward(net.params.data(), s.input);
          Tensor probs = nn::softmax_pixelwise(logits);
          auto lr_ = nn::segmentation_loss(probs, s.labels, lambda);
          slot_loss[slot] += lr_.loss;
          g.backward(net.params.data(), s.input, lr_.d_logits, scratch.data());
          for (size_t i = 0; i < sg.size(); ++i) sg[i] += scratch[i];
        }
      });

      // ordered reduction keeps a fixed thread count bit-reproducible
      std::fill(grads.begin(), grads.end(), 0.0f);
      double loss = 0.0;
      for (int s = 0; s < slots; ++s) {
        loss += slot_loss[s];
        const auto& sg = slot_grads[s];
        for (size_t i = 0; i < grads.size(); ++i) grads[i] += sg[i];
      }
      loss /= bsz;
      const float inv_b = 1.0f / static_cast<float>(bsz);
      for (auto& g : grads) g *= inv_b;

      if (!std::isfinite(loss)) {
        net.params = last_good;
        stats.diverged = true;
        stop = true;
        break;
      }
      last_good = net.params;
      adam_step(net.params, grads, adam);

      stats.step_loss.push_back(loss);
      stats.steps += 1;
      epoch_sum += loss;
      epoch_steps += 1;
      if (cfg.max_steps > 0 && stats.steps >= cfg.max_steps) stop = true;
      if (cfg.target_loss > 0 && loss < cfg.target_loss) stop = true;
    }
    if (epoch_steps > 0) stats.epoch_loss.push_back(epoch_sum / epoch_steps);
  }
  return stats;
}

// --- checkpoint format ------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'F', 'C', 'N'};
constexpr uint32_t kVersion = 1;

void append_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

template <typename T>
void append_pod(std::string& buf, T v) {
  append_bytes(buf, &v, sizeof v);
}

template <typename T>
T read_pod(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size())
    throw std::runtime_error("checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof v);
  off += sizeof v;
  return v;
}

}  // namespace

void save_checkpoint(const FastFcn& net, const CheckpointMeta& meta,
                     const std::string& path) {
  nlohmann::json j;
  j["epoch"] = meta.epoch;
  j["loss_history"] = meta.loss_history;
  j["lambda"] = meta.lambda;
  j["seed"] = meta.seed;
  const std::string meta_str = j.dump();

  std::string buf;
  append_bytes(buf, kMagic, 4);
  append_pod(buf, kVersion);
  append_pod(buf, net.spec.digest());
  append_pod(buf, static_cast<uint64_t>(net.params.size()));
  append_bytes(buf, net.params.data(), net.params.size() * sizeof(float));
  append_pod(buf, static_cast<uint64_t>(meta_str.size()));
  append_bytes(buf, meta_str.data(), meta_str.size());

  const auto crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  append_pod(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::pair<FastFcn, CheckpointMeta> load_checkpoint(const std::string& path,
                                                   const fcn::FcnSpec& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());

  if (buf.size() < 4 + sizeof(uint32_t))
    throw std::runtime_error("checkpoint: truncated file");
  const size_t body = buf.size() - sizeof(uint32_t);
  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + body, sizeof stored_crc);
  const auto crc = static_cast<uint32_t>(crc32(
      0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (crc != stored_crc) throw std::runtime_error("checkpoint: crc mismatch");

  size_t off = 0;
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  off = 4;
  if (read_pod<uint32_t>(buf, off) != kVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  const uint64_t digest = read_pod<uint64_t>(buf, off);
  if (digest != expected.digest())
    throw std::runtime_error("checkpoint: network spec digest mismatch");
  const uint64_t n = read_pod<uint64_t>(buf, off);
  if (n != expected.param_count)
    throw std::runtime_error("checkpoint: parameter count mismatch");
  if (off + n * sizeof(float) > body)
    throw std::runtime_error("checkpoint: truncated parameter block");

  FastFcn net;
  net.spec = expected;
  net.params.resize(n);
  std::memcpy(net.params.data(), buf.data() + off, n * sizeof(float));
  off += n * sizeof(float);

  const uint64_t mlen = read_pod<uint64_t>(buf, off);
  if (off + mlen > body) throw std::runtime_error("checkpoint: truncated metadata");
  const std::string meta_str = buf.substr(off, mlen);

  CheckpointMeta meta;
  const auto j = nlohmann::json::parse(meta_str);
  meta.epoch = j.at("epoch").get<int64_t>();
  meta.loss_history = j.at("loss_history").get<std::vector<double>>();
  meta.lambda = j.at("lambda").get<double>();
  meta.seed = j.at("seed").get<uint64_t>();
  return {std::move(net), meta};
}

std::pair<FastFcn, CheckpointMeta> load_checkpoint(const std::string& path) {
  return load_checkpoint(path, fcn::desk_scale_spec());
}

}  // namespace semtrack
