#include "semtrack/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "semtrack/parallel.hpp"
#include "semtrack/png_io.hpp"
#include "semtrack/rng.hpp"

namespace semtrack {

CameraIntrinsics default_sensor_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 366.0;
  intr.cx = 256.0;
  intr.cy = 212.0;
  intr.width = 512;
  intr.height = 424;
  return intr;
}

const std::array<std::array<float, 3>, kNumLabels>& label_palette() {
  static const std::array<std::array<float, 3>, kNumLabels> p = {{
      {0.82f, 0.82f, 0.80f},  // background
      {0.87f, 0.72f, 0.60f},  // head
      {0.25f, 0.35f, 0.75f},  // torso
      {0.80f, 0.25f, 0.25f},  // right arm
      {0.25f, 0.75f, 0.30f},  // left arm
      {0.75f, 0.70f, 0.25f},  // right leg
      {0.60f, 0.30f, 0.70f},  // left leg
  }};
  return p;
}

std::vector<Capsule> posed_capsules(const SkinnedMesh& mesh, const Skeleton& s,
                                    const JointTransforms& world) {
  std::vector<Capsule> out;
  out.reserve(mesh.capsules.size());
  for (const Capsule& c : mesh.capsules) {
    const Eigen::Isometry3d& t = world[c.joint];
    const Eigen::Vector3d& rb = s.rest_pos[c.joint];
    Capsule posed = c;
    posed.p0 = t.linear() * (c.p0 - rb) + t.translation();
    posed.p1 = t.linear() * (c.p1 - rb) + t.translation();
    out.push_back(posed);
  }
  return out;
}

namespace {

// First crossing of the ray t*d (origin at the camera, d unnormalized with
// d.z = 1 so t equals depth) into the capsule; 0 on a miss. The capsule is
// the union of a finite cylinder and two end spheres, and the entry into a
// union is the minimum of the per-primitive entries.
double ray_capsule(const Eigen::Vector3d& d, const Eigen::Vector3d& A, const Eigen::Vector3d& B,
                   double r) {
  double best = 0.0;
  auto consider = [&](double t) {
    if (t > 1e-6 && (best == 0.0 || t < best)) best = t;
  };
  auto sphere = [&](const Eigen::Vector3d& C) {
    const double a = d.squaredNorm();
    const double b = d.dot(-C);
    const double c = C.squaredNorm() - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0) consider((-b - std::sqrt(disc)) / a);
  };

  const Eigen::Vector3d ab = B - A;
  const double len = ab.norm();
  if (len > 1e-12) {
    const Eigen::Vector3d u = ab / len;
    const double du = d.dot(u), au = A.dot(u);
    const double a = d.squaredNorm() - du * du;
    if (a > 1e-14) {
      const double b = d.dot(A) - du * au;  // quadratic is a t^2 - 2 b t + c
      const double c = A.squaredNorm() - au * au - r * r;
      const double disc = b * b - a * c;
      if (disc >= 0) {
        const double t = (b - std::sqrt(disc)) / a;
        const double s = t * du - au;  // axial coordinate of the hit
        if (s >= 0 && s <= len) consider(t);
      }
    }
  }
  sphere(A);
  sphere(B);
  return best;
}

struct PixelBox {
  int u0, u1, v0, v1;  // inclusive
  bool empty() const { return u1 < u0 || v1 < v0; }
};

// Conservative screen bounds of a capsule (corner-of-bounding-cube bound per
// end sphere, both depth extremes).
PixelBox capsule_bbox(const Capsule& c, const CameraIntrinsics& intr) {
  double ulo = 1e18, uhi = -1e18, vlo = 1e18, vhi = -1e18;
  for (const Eigen::Vector3d* p : {&c.p0, &c.p1}) {
    const double zn = p->z() - c.r, zf = p->z() + c.r;
    if (zn <= 0.05) return {0, intr.width - 1, 0, intr.height - 1};
    for (double z : {zn, zf}) {
      ulo = std::min(ulo, intr.fx * (p->x() - c.r) / z + intr.cx);
      uhi = std::max(uhi, intr.fx * (p->x() + c.r) / z + intr.cx);
      vlo = std::min(vlo, intr.fy * (p->y() - c.r) / z + intr.cy);
      vhi = std::max(vhi, intr.fy * (p->y() + c.r) / z + intr.cy);
    }
  }
  PixelBox box;
  box.u0 = std::max(0, static_cast<int>(std::floor(ulo)) - 1);
  box.u1 = std::min(intr.width - 1, static_cast<int>(std::ceil(uhi)) + 1);
  box.v0 = std::max(0, static_cast<int>(std::floor(vlo)) - 1);
  box.v1 = std::min(intr.height - 1, static_cast<int>(std::ceil(vhi)) + 1);
  return box;
}

}  // namespace

void render_frame(const std::vector<Capsule>& capsules_world, const CameraIntrinsics& intr,
                  double far_plane, RGBDFrame* frame, LabelMap* labels) {
  intr.validate();
  if (!(far_plane > 0)) throw std::invalid_argument("render_frame: far plane must be positive");
  frame->intrinsics = intr;
  frame->max_range = std::max(kDefaultMaxRange, far_plane);
  frame->color = Tensor(intr.height, intr.width, 3);
  frame->depth = Tensor(intr.height, intr.width, 1);
  frame->depth.fill(static_cast<float>(far_plane));
  *labels = LabelMap(intr.height, intr.width);

  for (const Capsule& c : capsules_world) {
    if (std::max(c.p0.z(), c.p1.z()) + c.r <= 0.05) continue;  // behind the camera
    const PixelBox box = capsule_bbox(c, intr);
    if (box.empty()) continue;
    parallel_for(box.v1 - box.v0 + 1, [&](int i) {
      const int v = box.v0 + i;
      const double ry = (v - intr.cy) / intr.fy;
      for (int u = box.u0; u <= box.u1; ++u) {
        const Eigen::Vector3d dir((u - intr.cx) / intr.fx, ry, 1.0);
        const double t = ray_capsule(dir, c.p0, c.p1, c.r);
        if (t > 0 && t < frame->depth(v, u, 0)) {
          frame->depth(v, u, 0) = static_cast<float>(t);
          labels->at(v, u) = static_cast<uint8_t>(c.label);
        }
      }
    });
  }

  const auto& palette = label_palette();
  parallel_for(intr.height, [&](int v) {
    for (int u = 0; u < intr.width; ++u) {
      const auto& col = palette[labels->at(v, u)];
      for (int ch = 0; ch < 3; ++ch) frame->color(v, u, ch) = col[ch];
    }
  });
}

Pose script_pose(const MotionScript& script, const Skeleton& s, int frame) {
  if (script.keys.empty()) throw std::invalid_argument("script_pose: empty script");
  const int dim = s.pose_dim();
  for (const Keyframe& k : script.keys)
    if (static_cast<int>(k.q.size()) != dim)
      throw std::invalid_argument("script_pose: keyframe size mismatch");
  Pose p;
  if (frame <= script.keys.front().frame) {
    p.q = script.keys.front().q;
    return p;
  }
  if (frame >= script.keys.back().frame) {
    p.q = script.keys.back().q;
    return p;
  }
  size_t hi = 1;
  while (script.keys[hi].frame < frame) ++hi;
  const Keyframe &a = script.keys[hi - 1], &b = script.keys[hi];
  const double t = static_cast<double>(frame - a.frame) / (b.frame - a.frame);
  p.q.resize(dim);
  for (int i = 0; i < dim; ++i) p.q[i] = (1.0 - t) * a.q[i] + t * b.q[i];
  return p;
}

namespace {

// Root parameters standing the model upright, facing the camera, body
// center at `target` (camera frame: x right, y down, z forward). The model
// is y-up, so the base orientation is a half turn about z; with yaw, the
// composed rotation stays a half turn about the tilted axis
// (-sin(yaw/2), 0, cos(yaw/2)).
void set_root(const Skeleton& s, double height, double subject_z, double yaw,
              std::vector<double>* q) {
  const Eigen::Vector3d axis(-std::sin(yaw / 2), 0.0, std::cos(yaw / 2));
  const Eigen::Vector3d w = M_PI * axis;
  const Eigen::Matrix3d R = Eigen::AngleAxisd(M_PI, axis).toRotationMatrix();
  const Eigen::Vector3d target(0, 0, subject_z);
  const Eigen::Vector3d center(0, height / 2, 0);
  const Eigen::Vector3d off = s.joints[0].offset;
  const Eigen::Vector3d t = target - off - R * (center - off);
  for (int i = 0; i < 3; ++i) {
    (*q)[i] = t[i];
    (*q)[3 + i] = w[i];
  }
}

}  // namespace

MotionScript make_motion_script(const std::string& preset, const Skeleton& s, double subject_z,
                                uint64_t seed) {
  const int head_top = s.index_of("head_top");
  const double height = head_top >= 0 ? s.rest_pos[head_top].y() / 0.94
                                      : s.rest_pos.back().y();
  Rng rng(seed);
  MotionScript script;
  script.name = preset;

  auto key_at = [&](int frame) {
    Keyframe k;
    k.frame = frame;
    k.q.assign(static_cast<size_t>(s.pose_dim()), 0.0);
    return k;
  };
  auto set1 = [&](Keyframe& k, const char* joint, double v) {
    k.q[s.dof_offset(s.index_of(joint))] = v;
  };

  if (preset == "static") {
    for (int f : {0, 1000000}) {
      Keyframe k = key_at(f);
      set_root(s, height, subject_z, 0.0, &k.q);
      script.keys.push_back(k);
    }
    return script;
  }

  const int key_step = 10;
  const int n_keys = 61;  // covers 600 frames, clamped beyond
  const double period = 100.0;
  const double ja = 0.08;  // per-key articulation jitter
  if (preset == "arm_swing") {
    for (int i = 0; i < n_keys; ++i) {
      Keyframe k = key_at(i * key_step);
      const double ph = 2.0 * M_PI * k.frame / period;
      set_root(s, height, subject_z, 0.0, &k.q);
      const int lsh = s.index_of("l_shoulder"), rsh = s.index_of("r_shoulder");
      k.q[s.dof_offset(lsh)] = 0.55 * std::sin(ph) + rng.uniform(-ja, ja);
      k.q[s.dof_offset(rsh)] = -0.55 * std::sin(ph) + rng.uniform(-ja, ja);
      k.q[s.dof_offset(lsh) + 2] = rng.uniform(-ja, ja);
      k.q[s.dof_offset(rsh) + 2] = rng.uniform(-ja, ja);
      set1(k, "l_elbow", 0.7 + 0.5 * std::sin(ph) + rng.uniform(-ja, ja));
      set1(k, "r_elbow", 0.7 - 0.5 * std::sin(ph) + rng.uniform(-ja, ja));
      set1(k, "head_top", rng.uniform(-0.1, 0.1));
      script.keys.push_back(k);
    }
    return script;
  }

  if (preset == "walk") {
    for (int i = 0; i < n_keys; ++i) {
      Keyframe k = key_at(i * key_step);
      const double ph = 2.0 * M_PI * k.frame / period;
      const double yaw = 0.25 * std::sin(0.5 * ph) + rng.uniform(-0.05, 0.05);
      set_root(s, height, subject_z + 0.12 * std::sin(ph), yaw, &k.q);
      k.q[0] += 0.35 * std::sin(0.5 * ph);  // lateral drift
      const int lhip = s.index_of("l_hip"), rhip = s.index_of("r_hip");
      k.q[s.dof_offset(lhip)] = 0.45 * std::sin(ph) + rng.uniform(-ja, ja);
      k.q[s.dof_offset(rhip)] = -0.45 * std::sin(ph) + rng.uniform(-ja, ja);
      set1(k, "l_knee", -0.35 + 0.3 * std::sin(ph + 0.5));
      set1(k, "r_knee", -0.35 - 0.3 * std::sin(ph + 0.5));
      const int lsh = s.index_of("l_shoulder"), rsh = s.index_of("r_shoulder");
      k.q[s.dof_offset(lsh)] = -0.3 * std::sin(ph) + rng.uniform(-ja, ja);
      k.q[s.dof_offset(rsh)] = 0.3 * std::sin(ph) + rng.uniform(-ja, ja);
      set1(k, "l_elbow", 0.4 + rng.uniform(-ja, ja));
      set1(k, "r_elbow", 0.4 + rng.uniform(-ja, ja));
      script.keys.push_back(k);
    }
    return script;
  }

  throw std::invalid_argument("make_motion_script: unknown preset " + preset);
}

void save_motion_script(const MotionScript& script, const std::string& path) {
  nlohmann::json js;
  js["name"] = script.name;
  for (const Keyframe& k : script.keys) js["keys"].push_back({{"frame", k.frame}, {"q", k.q}});
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_motion_script: cannot open " + path);
  f << js.dump(2) << "\n";
}

MotionScript load_motion_script(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_motion_script: cannot open " + path);
  const nlohmann::json js = nlohmann::json::parse(f);
  MotionScript script;
  script.name = js.at("name").get<std::string>();
  for (const auto& kk : js.at("keys")) {
    Keyframe k;
    k.frame = kk.at("frame").get<int>();
    k.q = kk.at("q").get<std::vector<double>>();
    script.keys.push_back(k);
  }
  return script;
}

SequenceGT generate_sequence(const BodyModel& model, const MotionScript& script, int frames,
                             const std::string& out_dir, const std::string& config_digest) {
  if (frames <= 0) throw std::invalid_argument("generate_sequence: frame count must be positive");
  const CameraIntrinsics intr = default_sensor_intrinsics();
  SequenceWriter writer(out_dir, intr, kDefaultMaxRange, kFarPlane, config_digest);
  std::vector<std::string> names;
  for (const Joint& j : model.skeleton.joints) names.push_back(j.name);
  writer.set_joint_names(names);

  SequenceGT gt;
  for (int f = 0; f < frames; ++f) {
    const Pose p = clamp_to_limits(model.skeleton, script_pose(script, model.skeleton, f));
    const auto world = forward_kinematics(model.skeleton, p);
    RGBDFrame frame;
    LabelMap labels;
    render_frame(posed_capsules(model.mesh, model.skeleton, world), intr, kFarPlane, &frame,
                 &labels);
    std::vector<Eigen::Vector3d> joints;
    joints.reserve(world.size());
    for (const auto& t : world) joints.push_back(t.translation());
    writer.add_frame(frame, labels, joints, p.q);
    gt.poses.push_back(p);
    gt.joints.push_back(std::move(joints));
    gt.labels.push_back(std::move(labels));
  }
  writer.finish();
  return gt;
}

void ObjectCrop::validate(double max_range) const {
  if (color.h != depth.h || color.w != depth.w || color.c != 3 || depth.c != 1)
    throw std::invalid_argument("object crop: shape mismatch");
  int opaque = 0;
  for (float d : depth.data) {
    if (d < 0 || d > max_range) throw std::invalid_argument("object crop: depth out of range");
    if (d > 0) opaque++;
  }
  if (opaque == 0) throw std::invalid_argument("object crop: no opaque pixels");
}

ObjectCrop make_builtin_crop(const std::string& name) {
  ObjectCrop crop;
  crop.name = name;
  auto alloc = [&](int h, int w) {
    crop.color = Tensor(h, w, 3);
    crop.depth = Tensor(h, w, 1);
  };
  if (name == "panel") {
    alloc(100, 140);
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 140; ++x) {
        crop.depth(y, x, 0) = 2.0f + 0.10f * x / 140.0f;  // gentle relief
        const float edge = (x < 4 || x >= 136 || y < 4 || y >= 96) ? 0.7f : 1.0f;
        crop.color(y, x, 0) = 0.55f * edge;
        crop.color(y, x, 1) = 0.45f * edge;
        crop.color(y, x, 2) = 0.35f * edge;
      }
  } else if (name == "disk") {
    alloc(130, 130);
    for (int y = 0; y < 130; ++y)
      for (int x = 0; x < 130; ++x) {
        const double dx = x - 64.5, dy = y - 64.5;
        if (dx * dx + dy * dy > 60.0 * 60.0) continue;  // transparent corner
        crop.depth(y, x, 0) = 2.0f;
        crop.color(y, x, 0) = 0.30f;
        crop.color(y, x, 1) = 0.50f;
        crop.color(y, x, 2) = 0.55f;
      }
  } else if (name == "bar") {
    alloc(160, 30);
    for (int y = 0; y < 160; ++y)
      for (int x = 0; x < 30; ++x) {
        crop.depth(y, x, 0) = 2.0f;
        crop.color(y, x, 0) = 0.45f;
        crop.color(y, x, 1) = 0.30f;
        crop.color(y, x, 2) = 0.20f;
      }
  } else {
    throw std::invalid_argument("make_builtin_crop: unknown crop " + name);
  }
  crop.validate();
  return crop;
}

void save_object_crop(const ObjectCrop& crop, const std::string& dir) {
  crop.validate();
  std::filesystem::create_directories(dir);
  const int h = crop.color.h, w = crop.color.w;
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (size_t i = 0; i < rgb.size(); ++i)
    rgb[i] = static_cast<uint8_t>(std::lround(std::clamp(crop.color.data[i], 0.0f, 1.0f) * 255));
  write_png_rgb8(dir + "/color.png", w, h, rgb);
  std::vector<uint16_t> mm(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < mm.size(); ++i)
    mm[i] = static_cast<uint16_t>(std::lround(crop.depth.data[i] * 1000.0));
  write_png_gray16(dir + "/depth.png", w, h, mm);
  nlohmann::json js;
  js["name"] = crop.name;
  js["width"] = w;
  js["height"] = h;
  std::ofstream f(dir + "/crop.json");
  if (!f) throw std::runtime_error("save_object_crop: cannot open descriptor");
  f << js.dump(2) << "\n";
}

ObjectCrop load_object_crop(const std::string& dir) {
  std::ifstream f(dir + "/crop.json");
  if (!f) throw std::runtime_error("load_object_crop: missing descriptor in " + dir);
  const nlohmann::json js = nlohmann::json::parse(f);
  ObjectCrop crop;
  crop.name = js.at("name").get<std::string>();
  const Png8 rgb = read_png8(dir + "/color.png");
  const Png16 mm = read_png16(dir + "/depth.png");
  if (rgb.channels != 3 || rgb.width != mm.width || rgb.height != mm.height)
    throw std::runtime_error("load_object_crop: color/depth mismatch");
  crop.color = Tensor(rgb.height, rgb.width, 3);
  for (size_t i = 0; i < crop.color.data.size(); ++i)
    crop.color.data[i] = rgb.data[i] / 255.0f;
  crop.depth = Tensor(mm.height, mm.width, 1);
  for (size_t i = 0; i < crop.depth.data.size(); ++i)
    crop.depth.data[i] = static_cast<float>(mm.data[i] / 1000.0);
  crop.validate();
  return crop;
}

void insert_object(const AugmentSpec& spec, double subject_depth, RGBDFrame* frame,
                   LabelMap* labels) {
  spec.object.validate(frame->max_range);
  if (!(spec.scale > 0)) throw std::invalid_argument("insert_object: scale must be positive");
  if (frame->depth.h != labels->h || frame->depth.w != labels->w)
    throw std::invalid_argument("insert_object: frame/label shape mismatch");

  const Tensor& cd = spec.object.depth;
  double dmin = 1e18, dmax = 0;
  for (float d : cd.data)
    if (d > 0) {
      dmin = std::min(dmin, static_cast<double>(d));
      dmax = std::max(dmax, static_cast<double>(d));
    }
  const double ref = spec.anchor_furthest ? dmax : dmin;
  const double anchor_depth = subject_depth - spec.depth_offset;
  if (anchor_depth + (dmin - ref) <= 0)
    throw std::invalid_argument("insert_object: placement yields non-positive depth");

  // A rigid push along the view axis scales the footprint by old/new depth.
  const double s_eff = spec.scale * (ref / anchor_depth);
  const double th = spec.rotation_deg * M_PI / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double ccx = cd.w / 2.0, ccy = cd.h / 2.0;

  // destination bounds from the transformed crop corners
  double u0 = 1e18, u1 = -1e18, v0 = 1e18, v1 = -1e18;
  for (int corner = 0; corner < 4; ++corner) {
    const double sx = (corner & 1 ? cd.w : 0) - ccx;
    const double sy = (corner & 2 ? cd.h : 0) - ccy;
    u0 = std::min(u0, spec.anchor_u + s_eff * (cs * sx - sn * sy));
    u1 = std::max(u1, spec.anchor_u + s_eff * (cs * sx - sn * sy));
    v0 = std::min(v0, spec.anchor_v + s_eff * (sn * sx + cs * sy));
    v1 = std::max(v1, spec.anchor_v + s_eff * (sn * sx + cs * sy));
  }
  const int iu0 = std::max(0, static_cast<int>(std::floor(u0)) - 1);
  const int iu1 = std::min(frame->depth.w - 1, static_cast<int>(std::ceil(u1)) + 1);
  const int iv0 = std::max(0, static_cast<int>(std::floor(v0)) - 1);
  const int iv1 = std::min(frame->depth.h - 1, static_cast<int>(std::ceil(v1)) + 1);

  int placed = 0;
  for (int v = iv0; v <= iv1; ++v)
    for (int u = iu0; u <= iu1; ++u) {
      // inverse map, pixel centers
      const double du = (u + 0.5) - spec.anchor_u;
      const double dv = (v + 0.5) - spec.anchor_v;
      const int sx = static_cast<int>(std::floor((cs * du + sn * dv) / s_eff + ccx));
      const int sy = static_cast<int>(std::floor((-sn * du + cs * dv) / s_eff + ccy));
      if (sx < 0 || sx >= cd.w || sy < 0 || sy >= cd.h) continue;
      const double d = cd(sy, sx, 0);
      if (d <= 0) continue;  // transparent
      ++placed;
      const double obj_depth = anchor_depth + (d - ref);
      const double scene = frame->depth(v, u, 0);
      if (scene == 0.0 || obj_depth < scene) {
        frame->depth(v, u, 0) = static_cast<float>(obj_depth);
        for (int ch = 0; ch < 3; ++ch) frame->color(v, u, ch) = spec.object.color(sy, sx, ch);
        labels->at(v, u) = static_cast<uint8_t>(SemanticLabel::kBackground);
      }
    }
  if (placed == 0)
    throw std::invalid_argument("insert_object: no opaque object pixel lands in the frame");
}

double occlusion_fraction(const LabelMap& original, const LabelMap& augmented) {
  if (original.h != augmented.h || original.w != augmented.w)
    throw std::invalid_argument("occlusion_fraction: shape mismatch");
  long body = 0, turned = 0;
  for (size_t i = 0; i < original.v.size(); ++i) {
    if (original.v[i] == 0) continue;
    ++body;
    if (augmented.v[i] == 0) ++turned;
  }
  return body == 0 ? 0.0 : static_cast<double>(turned) / static_cast<double>(body);
}

double mean_body_depth(const RGBDFrame& frame, const LabelMap& labels) {
  double sum = 0;
  long n = 0;
  for (int v = 0; v < labels.h; ++v)
    for (int u = 0; u < labels.w; ++u)
      if (labels.at(v, u) != 0 && frame.depth(v, u, 0) > 0) {
        sum += frame.depth(v, u, 0);
        ++n;
      }
  return n == 0 ? 0.0 : sum / n;
}

std::pair<double, double> body_centroid_pixel(const LabelMap& labels) {
  double su = 0, sv = 0;
  long n = 0;
  for (int v = 0; v < labels.h; ++v)
    for (int u = 0; u < labels.w; ++u)
      if (labels.at(v, u) != 0) {
        su += u;
        sv += v;
        ++n;
      }
  if (n == 0) return {labels.w / 2.0, labels.h / 2.0};
  return {su / n, sv / n};
}

}  // namespace semtrack
