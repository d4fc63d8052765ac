#pragma once

#include <array>
#include <string>
#include <vector>

#include "semtrack/body_model.hpp"
#include "semtrack/geometry.hpp"
#include "semtrack/sequence_io.hpp"
#include "semtrack/tensor.hpp"

namespace semtrack {

// Depth assigned to pixels no surface covers. Deliberately inside the valid
// sensor range so background pixels still backproject to real points.
constexpr double kFarPlane = 4.0;

// 512x424 depth-sensor-like camera used by the renderer.
CameraIntrinsics default_sensor_intrinsics();

// Flat per-label shading (background first, body parts per label id).
const std::array<std::array<float, 3>, kNumLabels>& label_palette();

// Capsules moved rigidly by their bone's skinning transform.
std::vector<Capsule> posed_capsules(const SkinnedMesh& mesh, const Skeleton& s,
                                    const JointTransforms& world);

// Z-buffered capsule raycast: per-pixel depth (far plane where empty), flat
// per-part color, label of the nearest capsule.
void render_frame(const std::vector<Capsule>& capsules_world, const CameraIntrinsics& intr,
                  double far_plane, RGBDFrame* frame, LabelMap* labels);

// Piecewise-linear pose script. Keyframes are sorted by frame; poses between
// keys interpolate componentwise (adequate for the small per-key deltas the
// presets emit), and the ends clamp.
struct Keyframe {
  int frame = 0;
  std::vector<double> q;
};

struct MotionScript {
  std::string name;
  std::vector<Keyframe> keys;
};

Pose script_pose(const MotionScript& script, const Skeleton& s, int frame);

// Presets: "static", "arm_swing", "walk". The subject stands upright facing
// the camera around (0, 0, subject_z); seed jitters the moving presets.
MotionScript make_motion_script(const std::string& preset, const Skeleton& s, double subject_z,
                                uint64_t seed);

void save_motion_script(const MotionScript& script, const std::string& path);
MotionScript load_motion_script(const std::string& path);

struct SequenceGT {
  std::vector<Pose> poses;
  std::vector<std::vector<Eigen::Vector3d>> joints;  // [frame][joint]
  std::vector<LabelMap> labels;
};

// Renders `frames` frames of the scripted motion into out_dir (sequence
// directory format) and returns the ground truth, which is exact by
// construction.
SequenceGT generate_sequence(const BodyModel& model, const MotionScript& script, int frames,
                             const std::string& out_dir, const std::string& config_digest);

// RGB-D cutout of an occluder object; depth 0 marks transparent pixels.
struct ObjectCrop {
  Tensor color;  // h x w x 3
  Tensor depth;  // h x w x 1, meters
  std::string name;
  void validate(double max_range = kDefaultMaxRange) const;
};

// Procedural crops for augmentation and tests: "panel", "disk", "bar".
ObjectCrop make_builtin_crop(const std::string& name);

// Paired color/depth PNG plus a JSON descriptor in `dir`.
void save_object_crop(const ObjectCrop& crop, const std::string& dir);
ObjectCrop load_object_crop(const std::string& dir);

struct AugmentSpec {
  ObjectCrop object;
  double scale = 1.0;
  double rotation_deg = 0.0;
  double depth_offset = 0.30;  // meters in front of the subject (positive = nearer camera)
  double anchor_u = 0.0, anchor_v = 0.0;  // image position of the object center
  // true: the object's furthest point sits depth_offset in front of the
  // subject; false: its nearest point does.
  bool anchor_furthest = true;
};

// Scales (including the perspective factor for the new distance), rotates
// and composites the object with a depth test; replaced pixels become
// background. Throws if no opaque pixel lands inside the frame.
void insert_object(const AugmentSpec& spec, double subject_depth, RGBDFrame* frame,
                   LabelMap* labels);

// (body pixels turned background) / (original body pixels); 0 when the
// original has no body pixels.
double occlusion_fraction(const LabelMap& original, const LabelMap& augmented);

// Mean depth over body-labelled pixels (0 when none) and their centroid
// pixel; used to aim insert_object at the subject.
double mean_body_depth(const RGBDFrame& frame, const LabelMap& labels);
std::pair<double, double> body_centroid_pixel(const LabelMap& labels);

}  // namespace semtrack
