#include "semtrack/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace semtrack {

const char* label_name(SemanticLabel l) {
  switch (l) {
    case SemanticLabel::kBackground: return "background";
    case SemanticLabel::kHead: return "head";
    case SemanticLabel::kTorso: return "torso";
    case SemanticLabel::kRightArm: return "right_arm";
    case SemanticLabel::kLeftArm: return "left_arm";
    case SemanticLabel::kRightLeg: return "right_leg";
    case SemanticLabel::kLeftLeg: return "left_leg";
  }
  return "invalid";
}

SemanticLabel label_from_id(int id) {
  if (id < 0 || id >= kNumLabels)
    throw std::invalid_argument("label id out of range: " + std::to_string(id));
  return static_cast<SemanticLabel>(id);
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal length <= 0");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: empty image size");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw std::invalid_argument("intrinsics: principal point outside image");
}

CameraIntrinsics CameraIntrinsics::scaled(int new_w, int new_h) const {
  const double sx = static_cast<double>(new_w) / width;
  const double sy = static_cast<double>(new_h) / height;
  CameraIntrinsics out;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = (cx + 0.5) * sx - 0.5;
  out.cy = (cy + 0.5) * sy - 0.5;
  out.width = new_w;
  out.height = new_h;
  return out;
}

void RGBDFrame::validate() const {
  intrinsics.validate();
  if (color.h != depth.h || color.w != depth.w)
    throw std::invalid_argument("frame: color/depth dimension mismatch");
  if (color.c != 3 || depth.c != 1)
    throw std::invalid_argument("frame: expected 3 color channels and 1 depth channel");
  if (depth.h != intrinsics.height || depth.w != intrinsics.width)
    throw std::invalid_argument("frame: dimensions disagree with intrinsics");
  for (float d : depth.data)
    if (!(d >= 0.0f) || d > max_range + 1e-6)
      throw std::invalid_argument("frame: depth outside [0, max_range]");
}

PointCloud backproject(const RGBDFrame& frame, const LabelMap* label_map) {
  if (label_map && (label_map->h != frame.rows() || label_map->w != frame.cols()))
    throw std::invalid_argument("backproject: label map dimension mismatch");
  const CameraIntrinsics& K = frame.intrinsics;
  PointCloud cloud;
  cloud.points.reserve(frame.depth.size());
  cloud.labels.reserve(frame.depth.size());
  cloud.pixel_origin.reserve(frame.depth.size());
  for (int v = 0; v < frame.rows(); ++v) {
    for (int u = 0; u < frame.cols(); ++u) {
      const double d = frame.depth(v, u, 0);
      if (!(d > 0.0)) continue;
      cloud.points.emplace_back((u - K.cx) * d / K.fx, (v - K.cy) * d / K.fy, d);
      cloud.labels.push_back(label_map ? label_map->label(v, u)
                                       : SemanticLabel::kBackground);
      cloud.pixel_origin.emplace_back(v, u);
    }
  }
  return cloud;
}

void PointCloud::validate(int rows, int cols) const {
  if (labels.size() != points.size() || pixel_origin.size() != points.size())
    throw std::invalid_argument("point cloud: parallel array length mismatch");
  for (size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].z() > 0)) throw std::invalid_argument("point cloud: nonpositive z");
    const auto [r, c] = pixel_origin[i];
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      throw std::invalid_argument("point cloud: pixel origin out of bounds");
  }
}

std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& p,
                                       const CameraIntrinsics& intr) {
  if (!(p.z() > 0)) throw std::invalid_argument("project: z <= 0");
  const double u = intr.fx * p.x() / p.z() + intr.cx;
  const double v = intr.fy * p.y() / p.z() + intr.cy;
  if (u < 0 || u >= intr.width || v < 0 || v >= intr.height) return std::nullopt;
  return Eigen::Vector2d(u, v);
}

namespace {
// source index for destination index i under pixel-center alignment
inline int nn_index(int i, int src_n, int dst_n) {
  const double s = (i + 0.5) * static_cast<double>(src_n) / dst_n - 0.5;
  int j = static_cast<int>(std::lround(s));
  if (j < 0) j = 0;
  if (j >= src_n) j = src_n - 1;
  return j;
}
}  // namespace

Tensor resize_nearest(const Tensor& src, int new_h, int new_w) {
  if (src.h == 0 || src.w == 0) throw std::invalid_argument("resize: empty input");
  Tensor out(new_h, new_w, src.c);
  for (int y = 0; y < new_h; ++y) {
    const int sy = nn_index(y, src.h, new_h);
    for (int x = 0; x < new_w; ++x) {
      const int sx = nn_index(x, src.w, new_w);
      const float* s = src.at(sy, sx);
      float* d = out.at(y, x);
      for (int ch = 0; ch < src.c; ++ch) d[ch] = s[ch];
    }
  }
  return out;
}

LabelMap resize_labels(const LabelMap& src, int new_h, int new_w) {
  if (src.h == 0 || src.w == 0) throw std::invalid_argument("resize: empty label map");
  LabelMap out(new_h, new_w);
  for (int y = 0; y < new_h; ++y) {
    const int sy = nn_index(y, src.h, new_h);
    for (int x = 0; x < new_w; ++x) out.at(y, x) = src.at(sy, nn_index(x, src.w, new_w));
  }
  return out;
}

Tensor resize_and_normalize(const RGBDFrame& frame) {
  if (frame.rows() == 0 || frame.cols() == 0)
    throw std::invalid_argument("resize_and_normalize: empty frame");
  Tensor out(kNetRows, kNetCols, kNetChannels);
  const double inv_range = 1.0 / frame.max_range;
  for (int y = 0; y < kNetRows; ++y) {
    const int sy = nn_index(y, frame.rows(), kNetRows);
    for (int x = 0; x < kNetCols; ++x) {
      const int sx = nn_index(x, frame.cols(), kNetCols);
      const float* c = frame.color.at(sy, sx);
      float* d = out.at(y, x);
      d[0] = c[0];
      d[1] = c[1];
      d[2] = c[2];
      d[3] = static_cast<float>(frame.depth(sy, sx, 0) * inv_range);
    }
  }
  return out;
}

}  // namespace semtrack
