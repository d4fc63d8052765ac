#include "semtrack/sequence_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "semtrack/png_io.hpp"

namespace semtrack {

using nlohmann::json;

std::string frame_file(const std::string& dir, const char* prefix, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.png", prefix, index);
  return dir + "/" + buf;
}

SequenceWriter::SequenceWriter(std::string dir, const CameraIntrinsics& intr,
                               double max_range, double far_plane,
                               std::string config_digest)
    : dir_(std::move(dir)) {
  intr.validate();
  std::filesystem::create_directories(dir_);
  manifest_.width = intr.width;
  manifest_.height = intr.height;
  manifest_.intrinsics = intr;
  manifest_.max_range = max_range;
  manifest_.far_plane = far_plane;
  manifest_.config_digest = std::move(config_digest);
}

void SequenceWriter::set_joint_names(std::vector<std::string> names) {
  manifest_.joint_names = std::move(names);
}

void SequenceWriter::add_frame(const RGBDFrame& frame, const LabelMap& labels) {
  if (frame.rows() != manifest_.height || frame.cols() != manifest_.width ||
      labels.h != manifest_.height || labels.w != manifest_.width)
    throw std::invalid_argument("sequence writer: frame dimension mismatch");
  const int w = manifest_.width, h = manifest_.height;
  const int i = manifest_.frame_count;

  std::vector<uint8_t> rgb(static_cast<size_t>(w) * h * 3);
  for (size_t p = 0; p < rgb.size(); ++p) {
    float v = frame.color.data[p];
    rgb[p] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }
  write_png_rgb8(frame_file(dir_, "color", i), w, h, rgb);

  std::vector<uint16_t> mm(static_cast<size_t>(w) * h);
  for (size_t p = 0; p < mm.size(); ++p) {
    const double d = frame.depth.data[p];
    mm[p] = d > 0 ? static_cast<uint16_t>(std::lround(std::min(d, 65.0) * 1000.0)) : 0;
  }
  write_png_gray16(frame_file(dir_, "depth", i), w, h, mm);

  write_png_gray8(frame_file(dir_, "labels", i), w, h, labels.v);
  ++manifest_.frame_count;
}

void SequenceWriter::add_frame(const RGBDFrame& frame, const LabelMap& labels,
                               const std::vector<Eigen::Vector3d>& joints,
                               const std::vector<double>& pose_vec) {
  add_frame(frame, labels);
  manifest_.gt_joints.push_back(joints);
  manifest_.gt_poses.push_back(pose_vec);
}

void SequenceWriter::finish() {
  if (finished_) throw std::logic_error("sequence writer: finish called twice");
  finished_ = true;
  if (!manifest_.gt_joints.empty() &&
      manifest_.gt_joints.size() != static_cast<size_t>(manifest_.frame_count))
    throw std::logic_error("sequence writer: ground truth not given for every frame");

  json j;
  j["format_version"] = 1;
  j["width"] = manifest_.width;
  j["height"] = manifest_.height;
  j["frame_count"] = manifest_.frame_count;
  j["intrinsics"] = {{"fx", manifest_.intrinsics.fx},
                     {"fy", manifest_.intrinsics.fy},
                     {"cx", manifest_.intrinsics.cx},
                     {"cy", manifest_.intrinsics.cy}};
  j["max_range"] = manifest_.max_range;
  j["far_plane"] = manifest_.far_plane;
  j["config_digest"] = manifest_.config_digest;
  if (!manifest_.gt_joints.empty()) {
    j["joint_names"] = manifest_.joint_names;
    json frames = json::array();
    for (int f = 0; f < manifest_.frame_count; ++f) {
      json jf;
      json pts = json::array();
      for (const auto& p : manifest_.gt_joints[f]) pts.push_back({p.x(), p.y(), p.z()});
      jf["joints"] = std::move(pts);
      jf["pose"] = manifest_.gt_poses[f];
      frames.push_back(std::move(jf));
    }
    j["frames"] = std::move(frames);
  }
  std::ofstream out(dir_ + "/manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir_);
  out << j.dump(2) << "\n";
}

SequenceManifest load_manifest(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("missing manifest.json in " + dir);
  json j;
  in >> j;
  SequenceManifest m;
  m.width = j.at("width").get<int>();
  m.height = j.at("height").get<int>();
  m.frame_count = j.at("frame_count").get<int>();
  const auto& k = j.at("intrinsics");
  m.intrinsics.fx = k.at("fx").get<double>();
  m.intrinsics.fy = k.at("fy").get<double>();
  m.intrinsics.cx = k.at("cx").get<double>();
  m.intrinsics.cy = k.at("cy").get<double>();
  m.intrinsics.width = m.width;
  m.intrinsics.height = m.height;
  m.max_range = j.at("max_range").get<double>();
  m.far_plane = j.value("far_plane", 0.0);
  m.config_digest = j.value("config_digest", std::string());
  if (j.contains("frames")) {
    m.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    for (const auto& jf : j.at("frames")) {
      std::vector<Eigen::Vector3d> pts;
      for (const auto& p : jf.at("joints"))
        pts.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
      m.gt_joints.push_back(std::move(pts));
      m.gt_poses.push_back(jf.at("pose").get<std::vector<double>>());
    }
    if (m.gt_joints.size() != static_cast<size_t>(m.frame_count))
      throw std::runtime_error("manifest: ground truth frame count mismatch in " + dir);
  }
  m.intrinsics.validate();
  return m;
}

RGBDFrame load_frame(const std::string& dir, const SequenceManifest& m, int index) {
  if (index < 0 || index >= m.frame_count)
    throw std::out_of_range("frame index out of range");
  Png8 c = read_png8(frame_file(dir, "color", index));
  Png16 d = read_png16(frame_file(dir, "depth", index));
  if (c.width != m.width || c.height != m.height || c.channels != 3 ||
      d.width != m.width || d.height != m.height)
    throw std::runtime_error("frame files disagree with manifest in " + dir);
  RGBDFrame f;
  f.intrinsics = m.intrinsics;
  f.max_range = m.max_range;
  f.color = Tensor(m.height, m.width, 3);
  f.depth = Tensor(m.height, m.width, 1);
  for (size_t p = 0; p < c.data.size(); ++p)
    f.color.data[p] = static_cast<float>(c.data[p]) / 255.0f;
  for (size_t p = 0; p < d.data.size(); ++p)
    f.depth.data[p] = static_cast<float>(d.data[p]) / 1000.0f;
  return f;
}

LabelMap load_labels(const std::string& dir, const SequenceManifest& m, int index) {
  if (index < 0 || index >= m.frame_count)
    throw std::out_of_range("frame index out of range");
  Png8 l = read_png8(frame_file(dir, "labels", index));
  if (l.width != m.width || l.height != m.height || l.channels != 1)
    throw std::runtime_error("label file disagrees with manifest in " + dir);
  LabelMap out(m.height, m.width);
  for (size_t p = 0; p < l.data.size(); ++p) {
    if (l.data[p] >= kNumLabels)
      throw std::runtime_error("label file contains invalid id in " + dir);
    out.v[p] = l.data[p];
  }
  return out;
}

}  // namespace semtrack
