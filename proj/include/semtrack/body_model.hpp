#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <string>
#include <vector>

#include "semtrack/geometry.hpp"

namespace semtrack {

// Kinematic tree with translational rest offsets and rotational joints.
// Root carries an extra global translation. 3-DoF joints use a rotation
// vector; 1-DoF joints rotate about a fixed local axis.
struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // from parent, meters
  int dof = 3;                                       // 1 or 3
  Eigen::Vector3d axis = Eigen::Vector3d::UnitX();   // hinge axis (dof == 1)
  double limit_lo = -2.6, limit_hi = 2.6;            // per-component, radians
};

struct Skeleton {
  std::vector<Joint> joints;  // parents precede children; joints[0] = root
  std::array<int, kNumLabels> center_joint{};  // label id -> joint index (-1 for bg)
  std::vector<Eigen::Vector3d> rest_pos;       // filled by finalize()
  std::vector<uint32_t> ancestors;             // bitmask incl. self, by finalize()

  int index_of(const std::string& name) const;
  int pose_dim() const;
  // offset of joint j's parameters inside the pose vector (root: 3..5 after
  // the global translation 0..2)
  int dof_offset(int j) const;
  bool in_subtree(int ancestor, int j) const {
    return (ancestors[j] >> ancestor) & 1u;
  }
  void finalize();  // computes rest_pos/ancestors, validates the tree
};

// Flat pose vector: [root translation (3), root rotation (3), joint
// parameters in joint order].
struct Pose {
  std::vector<double> q;
};

Pose identity_pose(const Skeleton& s);
// Per-component clamp into each joint's declared limits (root unclamped).
Pose clamp_to_limits(const Skeleton& s, const Pose& p);

struct VertexWeight {
  int joint = 0;
  float w = 0.0f;
};

struct Capsule {
  int joint;  // bone that carries it rigidly
  Eigen::Vector3d p0, p1;  // rest-space axis endpoints
  double r;
  SemanticLabel label;
};

struct SkinnedMesh {
  std::vector<Eigen::Vector3d> rest;
  std::vector<std::array<VertexWeight, 4>> weights;  // padded with w = 0
  std::vector<SemanticLabel> labels;                 // non-background
  std::vector<Capsule> capsules;
  void validate() const;
};

struct BodyModel {
  Skeleton skeleton;
  SkinnedMesh mesh;
};

using JointTransforms = std::vector<Eigen::Isometry3d>;

JointTransforms forward_kinematics(const Skeleton& s, const Pose& p);

// Linear blend skinning: x' = sum_b w_b (R_b (x - rest_b) + t_b).
std::vector<Eigen::Vector3d> skin_vertices(const SkinnedMesh& mesh, const Skeleton& s,
                                           const JointTransforms& world);

// Analytic derivative of posed vertex positions w.r.t. the pose vector;
// rows 3i..3i+2 belong to vertex subset[i].
Eigen::MatrixXd pose_jacobian(const Skeleton& s, const SkinnedMesh& mesh,
                              const Pose& p, const std::vector<int>& subset);

// Same for joint pivot positions (used by the recovery objective).
Eigen::MatrixXd joint_position_jacobian(const Skeleton& s, const Pose& p,
                                        const std::vector<int>& joints);

// Procedural A-pose humanoid, `scale` = standing height in meters. Capsule
// per body segment, ~2000 deterministically sampled surface vertices with
// smooth weights near the joints; labels cover all six body parts.
BodyModel default_human(double scale);

// Model file: JSON skeleton/capsules + binary vertex block, versioned.
void save_body_model(const BodyModel& model, const std::string& path);
BodyModel load_body_model(const std::string& path);

}  // namespace semtrack
