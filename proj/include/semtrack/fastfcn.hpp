#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "semtrack/fcn_graph.hpp"
#include "semtrack/geometry.hpp"

namespace semtrack {

// Segmentation network: spec plus one flat float parameter buffer.
struct FastFcn {
  fcn::FcnSpec spec;
  std::vector<float> params;
};

// Desk-scale architecture with He-initialized parameters.
FastFcn build_fast_fcn(uint64_t seed);

struct PredictResult {
  Tensor logits;    // 106 x 128 x 7
  LabelMap labels;  // argmax, ties toward the lowest label id
};

// Throws std::runtime_error if activations go non-finite.
PredictResult predict(const FastFcn& net, const Tensor& input);

struct TrainConfig {
  double lambda = 1.0;  // imbalance-term weight in the loss
  double lr = 1e-3;
  int batch = 4;
  int epochs = 1;
  uint64_t seed = 1;
  int max_steps = 0;        // 0 = no cap
  double target_loss = 0;   // > 0: stop once a step's loss drops below
};

struct TrainStats {
  std::vector<double> epoch_loss;  // mean over the epoch's steps
  std::vector<double> step_loss;
  bool diverged = false;  // loss went non-finite; params rolled back
  int steps = 0;
};

// Training sample provider; called from worker threads, must be pure.
struct TrainSample {
  Tensor input;     // 106 x 128 x 4
  LabelMap labels;  // 106 x 128
};
using SampleFn = std::function<TrainSample(int)>;

// Mini-batch Adam on the weighted segmentation loss. Deterministic for a
// fixed seed and thread count. On divergence the last finite-loss
// parameters are restored and stats.diverged is set.
TrainStats train(FastFcn& net, int sample_count, const SampleFn& sample,
                 const TrainConfig& cfg);

struct CheckpointMeta {
  int64_t epoch = 0;
  std::vector<double> loss_history;
  double lambda = 1.0;
  uint64_t seed = 0;
};

// Binary checkpoint: magic FFCN, version, spec digest, f32 parameter
// block (little endian), JSON metadata, crc32 over all of it.
void save_checkpoint(const FastFcn& net, const CheckpointMeta& meta,
                     const std::string& path);
std::pair<FastFcn, CheckpointMeta> load_checkpoint(const std::string& path,
                                                   const fcn::FcnSpec& expected);
std::pair<FastFcn, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace semtrack
