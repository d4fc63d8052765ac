#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "semtrack/tensor.hpp"

namespace semtrack {

// Canonical 7-label set. Order is fixed; label maps and network outputs
// index channels by these ids.
enum class SemanticLabel : uint8_t {
  kBackground = 0,
  kHead = 1,
  kTorso = 2,
  kRightArm = 3,
  kLeftArm = 4,
  kRightLeg = 5,
  kLeftLeg = 6,
};

constexpr int kNumLabels = 7;

const char* label_name(SemanticLabel l);
SemanticLabel label_from_id(int id);  // throws on id outside 0..6

inline const std::array<SemanticLabel, 6>& body_labels() {
  static const std::array<SemanticLabel, 6> v = {
      SemanticLabel::kHead,     SemanticLabel::kTorso,   SemanticLabel::kRightArm,
      SemanticLabel::kLeftArm,  SemanticLabel::kRightLeg, SemanticLabel::kLeftLeg};
  return v;
}

// Network input resolution (width x height = 128 x 106, 4 channels RGBD).
constexpr int kNetRows = 106;
constexpr int kNetCols = 128;
constexpr int kNetChannels = 4;

constexpr double kDefaultMaxRange = 4.5;  // meters

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;

  // Intrinsics for the same camera after a nearest-neighbor resize to
  // new_w x new_h (pixel-center convention).
  CameraIntrinsics scaled(int new_w, int new_h) const;
};

struct LabelMap {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // label ids

  LabelMap() = default;
  LabelMap(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  SemanticLabel label(int y, int x) const { return static_cast<SemanticLabel>(at(y, x)); }
  size_t pixel_count() const { return v.size(); }
};

struct RGBDFrame {
  Tensor color;  // h x w x 3, values in [0,1]
  Tensor depth;  // h x w x 1, meters, 0 = invalid
  CameraIntrinsics intrinsics;
  double max_range = kDefaultMaxRange;

  int rows() const { return depth.h; }
  int cols() const { return depth.w; }
  void validate() const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;      // camera frame, meters
  std::vector<SemanticLabel> labels;
  std::vector<std::pair<int, int>> pixel_origin;  // (row, col)

  size_t size() const { return points.size(); }
  void validate(int rows, int cols) const;
};

// One point per valid-depth pixel at ((u-cx)d/fx, (v-cy)d/fy, d). Labels
// copied from label_map when given, background otherwise.
PointCloud backproject(const RGBDFrame& frame, const LabelMap* label_map = nullptr);

// Pinhole projection to (u,v)=(col,row); nullopt when the point falls
// outside [0,width) x [0,height). Throws for z <= 0.
std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p,
                                       const CameraIntrinsics& intr);

// Nearest-neighbor resize of an HWC tensor.
Tensor resize_nearest(const Tensor& src, int new_h, int new_w);
LabelMap resize_labels(const LabelMap& src, int new_h, int new_w);

// RGBD network input: nearest-neighbor resize to 128x106, channels
// R,G,B,D with depth divided by max_range (invalid depth stays 0).
Tensor resize_and_normalize(const RGBDFrame& frame);

}  // namespace semtrack
