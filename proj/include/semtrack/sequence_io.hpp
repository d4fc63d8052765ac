#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "semtrack/geometry.hpp"

namespace semtrack {

// Per-sequence directory: color_%05d.png (8-bit RGB), depth_%05d.png
// (16-bit millimeters, 0 = invalid), labels_%05d.png (8-bit label ids),
// manifest.json with intrinsics and optional ground truth.
struct SequenceManifest {
  int width = 0, height = 0;
  int frame_count = 0;
  CameraIntrinsics intrinsics;
  double max_range = kDefaultMaxRange;
  double far_plane = 0.0;          // 0 = unknown
  std::string config_digest;       // producing run's config digest, may be empty
  std::vector<std::string> joint_names;                 // empty if no GT
  std::vector<std::vector<Eigen::Vector3d>> gt_joints;  // [frame][joint]
  std::vector<std::vector<double>> gt_poses;            // [frame] pose vector

  bool has_gt() const { return !gt_joints.empty(); }
};

class SequenceWriter {
 public:
  // Creates dir if needed. Frames are appended one at a time so a full
  // 300-frame capture never lives in memory.
  SequenceWriter(std::string dir, const CameraIntrinsics& intr, double max_range,
                 double far_plane, std::string config_digest);

  void add_frame(const RGBDFrame& frame, const LabelMap& labels);
  void add_frame(const RGBDFrame& frame, const LabelMap& labels,
                 const std::vector<Eigen::Vector3d>& joints,
                 const std::vector<double>& pose_vec);
  void set_joint_names(std::vector<std::string> names);

  // Writes manifest.json. Must be called exactly once.
  void finish();

 private:
  std::string dir_;
  SequenceManifest manifest_;
  bool finished_ = false;
};

SequenceManifest load_manifest(const std::string& dir);
RGBDFrame load_frame(const std::string& dir, const SequenceManifest& m, int index);
LabelMap load_labels(const std::string& dir, const SequenceManifest& m, int index);

std::string frame_file(const std::string& dir, const char* prefix, int index);

}  // namespace semtrack
