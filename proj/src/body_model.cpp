#include "semtrack/body_model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace semtrack {
namespace {

Eigen::Matrix3d rotvec_to_matrix(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-300) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Right Jacobian of SO(3): exp((w + d)^) ~ exp(w^) exp((Jr(w) d)^).
Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d K = skew(w);
  if (theta < 1e-6) {
    return Eigen::Matrix3d::Identity() - 0.5 * K + (1.0 / 6.0) * K * K;
  }
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() - ((1.0 - std::cos(theta)) / t2) * K +
         ((theta - std::sin(theta)) / (t2 * theta)) * K * K;
}

}  // namespace

int Skeleton::index_of(const std::string& name) const {
  for (size_t i = 0; i < joints.size(); ++i)
    if (joints[i].name == name) return static_cast<int>(i);
  return -1;
}

int Skeleton::pose_dim() const {
  int n = 3;  // root translation
  for (const Joint& j : joints) n += j.dof;
  return n;
}

int Skeleton::dof_offset(int j) const {
  int off = 3;
  for (int i = 0; i < j; ++i) off += joints[i].dof;
  return off;
}

void Skeleton::finalize() {
  const int n = static_cast<int>(joints.size());
  if (n == 0 || joints[0].parent != -1) throw std::invalid_argument("skeleton: bad root");
  if (n > 32) throw std::invalid_argument("skeleton: too many joints for ancestor mask");
  rest_pos.resize(n);
  ancestors.assign(n, 0);
  for (int j = 0; j < n; ++j) {
    const Joint& jt = joints[j];
    if (jt.dof != 1 && jt.dof != 3) throw std::invalid_argument("skeleton: dof must be 1 or 3");
    if (j > 0 && (jt.parent < 0 || jt.parent >= j))
      throw std::invalid_argument("skeleton: parents must precede children");
    if (jt.dof == 1 && std::abs(jt.axis.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("skeleton: hinge axis must be unit length");
    rest_pos[j] = (j == 0) ? jt.offset : Eigen::Vector3d(rest_pos[jt.parent] + jt.offset);
    ancestors[j] = (1u << j) | (j == 0 ? 0u : ancestors[jt.parent]);
  }
}

Pose identity_pose(const Skeleton& s) {
  Pose p;
  p.q.assign(static_cast<size_t>(s.pose_dim()), 0.0);
  return p;
}

Pose clamp_to_limits(const Skeleton& s, const Pose& p) {
  Pose out = p;
  for (size_t j = 1; j < s.joints.size(); ++j) {
    const Joint& jt = s.joints[j];
    const int off = s.dof_offset(static_cast<int>(j));
    for (int d = 0; d < jt.dof; ++d) {
      double& v = out.q[off + d];
      if (!(v >= jt.limit_lo)) v = jt.limit_lo;  // also repairs NaN
      if (v > jt.limit_hi) v = jt.limit_hi;
    }
  }
  return out;
}

void SkinnedMesh::validate() const {
  if (rest.size() != weights.size() || rest.size() != labels.size())
    throw std::invalid_argument("mesh: array size mismatch");
  for (size_t i = 0; i < rest.size(); ++i) {
    if (labels[i] == SemanticLabel::kBackground)
      throw std::invalid_argument("mesh: background-labelled vertex");
    double sum = 0;
    for (const VertexWeight& vw : weights[i]) {
      if (vw.w < 0) throw std::invalid_argument("mesh: negative weight");
      sum += vw.w;
    }
    if (std::abs(sum - 1.0) > 1e-5) throw std::invalid_argument("mesh: weights must sum to 1");
  }
}

JointTransforms forward_kinematics(const Skeleton& s, const Pose& p) {
  if (static_cast<int>(p.q.size()) != s.pose_dim())
    throw std::invalid_argument("forward_kinematics: pose size mismatch");
  JointTransforms world(s.joints.size());
  int off = 3;
  for (size_t j = 0; j < s.joints.size(); ++j) {
    const Joint& jt = s.joints[j];
    Eigen::Isometry3d local = Eigen::Isometry3d::Identity();
    local.translation() = jt.offset;
    if (jt.dof == 3) {
      local.linear() = rotvec_to_matrix(Eigen::Vector3d(p.q[off], p.q[off + 1], p.q[off + 2]));
    } else {
      local.linear() = Eigen::AngleAxisd(p.q[off], jt.axis).toRotationMatrix();
    }
    off += jt.dof;
    if (j == 0) {
      local.translation() += Eigen::Vector3d(p.q[0], p.q[1], p.q[2]);
      world[0] = local;
    } else {
      world[j] = world[jt.parent] * local;
    }
  }
  return world;
}

std::vector<Eigen::Vector3d> skin_vertices(const SkinnedMesh& mesh, const Skeleton& s,
                                           const JointTransforms& world) {
  if (world.size() != s.joints.size())
    throw std::invalid_argument("skin_vertices: transform count mismatch");
  std::vector<Eigen::Vector3d> out(mesh.rest.size());
  for (size_t i = 0; i < mesh.rest.size(); ++i) {
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (const VertexWeight& vw : mesh.weights[i]) {
      if (vw.w == 0.0f) continue;
      const Eigen::Isometry3d& t = world[vw.joint];
      acc += static_cast<double>(vw.w) *
             (t.linear() * (mesh.rest[i] - s.rest_pos[vw.joint]) + t.translation());
    }
    out[i] = acc;
  }
  return out;
}

namespace {

struct PointSpec {
  std::array<VertexWeight, 4> w;
  Eigen::Vector3d rest;
};

// Shared core for vertex and joint-pivot Jacobians. A bone's rigid motion
// under a perturbation of joint k is a rotation about k's world pivot with
// generator g: for a point x below k, dx = g x (x - pivot_k). Generators:
// hinge g = R_world * axis; rotation-vector block G = R_world * Jr(w), one
// column per component. Blended points sum bone contributions, so for each
// joint k we accumulate sum_{bones b under k} w_b * x_b and the matching
// weight mass, then emit -skew(sum - mass * pivot_k) * G.
Eigen::MatrixXd points_jacobian(const Skeleton& s, const Pose& p,
                                const std::vector<PointSpec>& pts) {
  const auto world = forward_kinematics(s, p);
  const int nj = static_cast<int>(s.joints.size());
  const int dim = s.pose_dim();

  std::vector<int> doff(nj);
  std::vector<Eigen::Matrix3d> gen(nj);  // hinge joints use column 0 only
  for (int j = 0, off = 3; j < nj; off += s.joints[j].dof, ++j) {
    doff[j] = off;
    if (s.joints[j].dof == 3) {
      Eigen::Vector3d w(p.q[off], p.q[off + 1], p.q[off + 2]);
      gen[j] = world[j].linear() * so3_right_jacobian(w);
    } else {
      gen[j].col(0) = world[j].linear() * s.joints[j].axis;
    }
  }

  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3 * static_cast<int>(pts.size()), dim);
  std::vector<Eigen::Vector3d> acc(nj);
  std::vector<double> mass(nj);
  for (size_t i = 0; i < pts.size(); ++i) {
    std::fill(mass.begin(), mass.end(), 0.0);
    for (auto& a : acc) a.setZero();
    double total = 0;
    for (const VertexWeight& vw : pts[i].w) {
      if (vw.w == 0.0f) continue;
      const Eigen::Isometry3d& t = world[vw.joint];
      const Eigen::Vector3d xb =
          t.linear() * (pts[i].rest - s.rest_pos[vw.joint]) + t.translation();
      const double w = vw.w;
      total += w;
      for (int k = vw.joint; k >= 0; k = s.joints[k].parent) {
        acc[k] += w * xb;
        mass[k] += w;
      }
    }
    const int row = 3 * static_cast<int>(i);
    J.block<3, 3>(row, 0) = total * Eigen::Matrix3d::Identity();  // root translation
    for (int k = 0; k < nj; ++k) {
      if (mass[k] == 0.0) continue;
      const Eigen::Matrix3d lever = -skew(acc[k] - mass[k] * world[k].translation());
      if (s.joints[k].dof == 3) {
        J.block<3, 3>(row, doff[k]) = lever * gen[k];
      } else {
        J.block<3, 1>(row, doff[k]) = lever * gen[k].col(0);
      }
    }
  }
  return J;
}

}  // namespace

Eigen::MatrixXd pose_jacobian(const Skeleton& s, const SkinnedMesh& mesh, const Pose& p,
                              const std::vector<int>& subset) {
  std::vector<PointSpec> pts(subset.size());
  for (size_t i = 0; i < subset.size(); ++i) {
    const int v = subset[i];
    if (v < 0 || v >= static_cast<int>(mesh.rest.size()))
      throw std::out_of_range("pose_jacobian: vertex index");
    pts[i] = {mesh.weights[v], mesh.rest[v]};
  }
  return points_jacobian(s, p, pts);
}

Eigen::MatrixXd joint_position_jacobian(const Skeleton& s, const Pose& p,
                                        const std::vector<int>& joints) {
  std::vector<PointSpec> pts(joints.size());
  for (size_t i = 0; i < joints.size(); ++i) {
    const int j = joints[i];
    if (j < 0 || j >= static_cast<int>(s.joints.size()))
      throw std::out_of_range("joint_position_jacobian: joint index");
    pts[i].w = {{{j, 1.0f}, {0, 0.0f}, {0, 0.0f}, {0, 0.0f}}};
    pts[i].rest = s.rest_pos[j];
  }
  return points_jacobian(s, p, pts);
}

namespace {

// Deterministic surface sampling of one capsule: rings along the axis plus
// spherical caps, roughly `step` apart in both directions.
void sample_capsule(const Capsule& c, int parent_bone, double blend_r, double step,
                    SkinnedMesh* mesh) {
  const Eigen::Vector3d axis = c.p1 - c.p0;
  const double len = axis.norm();
  const Eigen::Vector3d a = len > 1e-12 ? Eigen::Vector3d(axis / len) : Eigen::Vector3d::UnitY();
  Eigen::Vector3d u = std::abs(a.y()) < 0.9 ? a.cross(Eigen::Vector3d::UnitY()).normalized()
                                            : a.cross(Eigen::Vector3d::UnitX()).normalized();
  Eigen::Vector3d v = a.cross(u);

  auto push = [&](const Eigen::Vector3d& pos, double d_along) {
    std::array<VertexWeight, 4> w{};
    if (parent_bone >= 0 && d_along < blend_r) {
      const float t = static_cast<float>(std::max(d_along, 0.0) / blend_r);
      w[0] = {c.joint, 0.5f + 0.5f * t};
      // 1 - w0 is exact for w0 in [0.5, 1], so the pair sums to exactly 1
      w[1] = {parent_bone, 1.0f - w[0].w};
    } else {
      w[0] = {c.joint, 1.0f};
    }
    mesh->rest.push_back(pos);
    mesh->weights.push_back(w);
    mesh->labels.push_back(c.label);
  };

  const int n_ring = std::max(6, static_cast<int>(std::lround(2.0 * M_PI * c.r / step)));
  auto ring = [&](const Eigen::Vector3d& center, double ring_r, double d_along) {
    for (int k = 0; k < n_ring; ++k) {
      const double ang = 2.0 * M_PI * k / n_ring;
      push(center + ring_r * (std::cos(ang) * u + std::sin(ang) * v), d_along);
    }
  };

  const int n_ax = std::max(2, static_cast<int>(std::lround(len / step)) + 1);
  for (int i = 0; i < n_ax; ++i) {
    const double t = n_ax > 1 ? static_cast<double>(i) / (n_ax - 1) : 0.0;
    ring(c.p0 + t * axis, c.r, t * len);
  }
  for (double lat : {M_PI / 6, M_PI / 3}) {  // cap rings at 30 and 60 degrees
    ring(c.p0 - std::sin(lat) * c.r * a, std::cos(lat) * c.r, -std::sin(lat) * c.r);
    ring(c.p1 + std::sin(lat) * c.r * a, std::cos(lat) * c.r, len + std::sin(lat) * c.r);
  }
  push(c.p0 - c.r * a, -c.r);
  push(c.p1 + c.r * a, len + c.r);
}

}  // namespace

BodyModel default_human(double scale) {
  if (!(scale > 0)) throw std::invalid_argument("default_human: scale must be positive");
  const double s = scale;
  BodyModel m;
  auto& J = m.skeleton.joints;

  auto add = [&](const std::string& name, int parent, Eigen::Vector3d off, int dof,
                 Eigen::Vector3d axis, double lo, double hi) {
    Joint j;
    j.name = name;
    j.parent = parent;
    j.offset = s * off;
    j.dof = dof;
    j.axis = axis;
    j.limit_lo = lo;
    j.limit_hi = hi;
    J.push_back(j);
    return static_cast<int>(J.size()) - 1;
  };
  const Eigen::Vector3d X = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d Z = Eigen::Vector3d::UnitZ();

  const int pelvis = add("pelvis", -1, {0, 0.52, 0}, 3, X, -M_PI, M_PI);
  const int spine = add("spine", pelvis, {0, 0.11, 0}, 3, X, -0.6, 0.6);
  const int chest = add("chest", spine, {0, 0.13, 0}, 3, X, -0.6, 0.6);
  const int skull = add("skull_base", chest, {0, 0.12, 0}, 3, X, -0.7, 0.7);
  const int head_top = add("head_top", skull, {0, 0.06, 0}, 1, X, -0.5, 0.5);
  const int l_sho = add("l_shoulder", chest, {0.12, 0.10, 0}, 3, X, -2.6, 2.6);
  const int l_elb = add("l_elbow", l_sho, {0.18, -0.20, 0}, 1, X, -0.15, 2.6);
  const int l_wri = add("l_wrist", l_elb, {0.14, -0.185, 0}, 1, Z, -0.8, 0.8);
  const int r_sho = add("r_shoulder", chest, {-0.12, 0.10, 0}, 3, X, -2.6, 2.6);
  const int r_elb = add("r_elbow", r_sho, {-0.18, -0.20, 0}, 1, X, -0.15, 2.6);
  const int r_wri = add("r_wrist", r_elb, {-0.14, -0.185, 0}, 1, Z, -0.8, 0.8);
  const int l_hip = add("l_hip", pelvis, {0.065, -0.02, 0}, 3, X, -2.0, 2.0);
  const int l_kne = add("l_knee", l_hip, {0, -0.225, 0}, 1, X, -2.6, 0.15);
  const int l_ank = add("l_ankle", l_kne, {0, -0.23, 0}, 1, X, -0.8, 0.8);
  const int r_hip = add("r_hip", pelvis, {-0.065, -0.02, 0}, 3, X, -2.0, 2.0);
  const int r_kne = add("r_knee", r_hip, {0, -0.225, 0}, 1, X, -2.6, 0.15);
  const int r_ank = add("r_ankle", r_kne, {0, -0.23, 0}, 1, X, -0.8, 0.8);
  m.skeleton.finalize();

  m.skeleton.center_joint.fill(-1);
  auto center = [&](SemanticLabel l, int j) {
    m.skeleton.center_joint[static_cast<int>(l)] = j;
  };
  center(SemanticLabel::kHead, skull);
  center(SemanticLabel::kTorso, chest);
  center(SemanticLabel::kRightArm, r_elb);
  center(SemanticLabel::kLeftArm, l_elb);
  center(SemanticLabel::kRightLeg, r_kne);
  center(SemanticLabel::kLeftLeg, l_kne);

  const auto& P = m.skeleton.rest_pos;
  auto cap = [&](int bone, Eigen::Vector3d p0, Eigen::Vector3d p1, double r, SemanticLabel l) {
    m.mesh.capsules.push_back({bone, p0, p1, s * r, l});
  };
  const SemanticLabel T = SemanticLabel::kTorso;
  cap(pelvis, P[pelvis], P[spine], 0.085, T);
  cap(pelvis, P[l_hip], P[r_hip], 0.075, T);
  cap(spine, P[spine], P[chest], 0.09, T);
  cap(chest, P[l_sho], P[r_sho], 0.065, T);
  cap(chest, P[chest], P[skull], 0.055, T);
  cap(skull, P[skull], P[head_top], 0.06, SemanticLabel::kHead);  // crown at 1.0 * s
  auto arm = [&](int sho, int elb, int wri, double sx, SemanticLabel l) {
    cap(sho, P[sho], P[elb], 0.042, l);
    cap(elb, P[elb], P[wri], 0.036, l);
    cap(wri, P[wri], P[wri] + s * Eigen::Vector3d(sx * 0.055, -0.07, 0), 0.034, l);
  };
  arm(l_sho, l_elb, l_wri, +1, SemanticLabel::kLeftArm);
  arm(r_sho, r_elb, r_wri, -1, SemanticLabel::kRightArm);
  auto leg = [&](int hip, int kne, int ank, SemanticLabel l) {
    cap(hip, P[hip], P[kne], 0.06, l);
    cap(kne, P[kne], P[ank], 0.045, l);  // shin reaches the sole: 0.045 - 0.045 = 0
    cap(ank, P[ank], P[ank] + s * Eigen::Vector3d(0, -0.015, -0.10), 0.03, l);
  };
  leg(l_hip, l_kne, l_ank, SemanticLabel::kLeftLeg);
  leg(r_hip, r_kne, r_ank, SemanticLabel::kRightLeg);

  const double step = 0.024 * s, blend_r = 0.07 * s;
  for (const Capsule& c : m.mesh.capsules) {
    const int parent_bone = m.skeleton.joints[c.joint].parent;
    sample_capsule(c, parent_bone, blend_r, step, &m.mesh);
  }
  m.mesh.validate();
  return m;
}

namespace {
constexpr char kModelMagic[4] = {'S', 'B', 'M', '1'};
constexpr uint32_t kModelVersion = 1;
}  // namespace

void save_body_model(const BodyModel& model, const std::string& path) {
  nlohmann::json js;
  js["version"] = kModelVersion;
  for (const Joint& j : model.skeleton.joints) {
    js["joints"].push_back({{"name", j.name},
                            {"parent", j.parent},
                            {"offset", {j.offset.x(), j.offset.y(), j.offset.z()}},
                            {"dof", j.dof},
                            {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
                            {"limits", {j.limit_lo, j.limit_hi}}});
  }
  js["center_joint"] = model.skeleton.center_joint;
  for (const Capsule& c : model.mesh.capsules) {
    js["capsules"].push_back({{"joint", c.joint},
                              {"p0", {c.p0.x(), c.p0.y(), c.p0.z()}},
                              {"p1", {c.p1.x(), c.p1.y(), c.p1.z()}},
                              {"r", c.r},
                              {"label", static_cast<int>(c.label)}});
  }
  js["vertex_count"] = model.mesh.rest.size();
  const std::string header = js.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_body_model: cannot open " + path);
  f.write(kModelMagic, 4);
  auto put32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put64 = [&](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  put32(kModelVersion);
  put64(header.size());
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (size_t i = 0; i < model.mesh.rest.size(); ++i) {
    double xyz[3] = {model.mesh.rest[i].x(), model.mesh.rest[i].y(), model.mesh.rest[i].z()};
    f.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    const uint8_t lab = static_cast<uint8_t>(model.mesh.labels[i]);
    f.write(reinterpret_cast<const char*>(&lab), 1);
    for (const VertexWeight& vw : model.mesh.weights[i]) {
      const int32_t joint = vw.joint;
      f.write(reinterpret_cast<const char*>(&joint), 4);
      f.write(reinterpret_cast<const char*>(&vw.w), 4);
    }
  }
  if (!f) throw std::runtime_error("save_body_model: write failed");
}

BodyModel load_body_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_body_model: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kModelMagic, 4) != 0)
    throw std::runtime_error("load_body_model: bad magic");
  uint32_t version = 0;
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || version != kModelVersion) throw std::runtime_error("load_body_model: bad version");
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("load_body_model: truncated header");
  const nlohmann::json js = nlohmann::json::parse(header);

  BodyModel m;
  for (const auto& jj : js.at("joints")) {
    Joint j;
    j.name = jj.at("name").get<std::string>();
    j.parent = jj.at("parent").get<int>();
    const auto& o = jj.at("offset");
    j.offset = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
    j.dof = jj.at("dof").get<int>();
    const auto& a = jj.at("axis");
    j.axis = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    j.limit_lo = jj.at("limits")[0].get<double>();
    j.limit_hi = jj.at("limits")[1].get<double>();
    m.skeleton.joints.push_back(j);
  }
  m.skeleton.finalize();
  const auto& cj = js.at("center_joint");
  for (int i = 0; i < kNumLabels; ++i) m.skeleton.center_joint[i] = cj[i].get<int>();
  for (const auto& cc : js.at("capsules")) {
    Capsule c;
    c.joint = cc.at("joint").get<int>();
    const auto &p0 = cc.at("p0"), &p1 = cc.at("p1");
    c.p0 = {p0[0].get<double>(), p0[1].get<double>(), p0[2].get<double>()};
    c.p1 = {p1[0].get<double>(), p1[1].get<double>(), p1[2].get<double>()};
    c.r = cc.at("r").get<double>();
    c.label = label_from_id(cc.at("label").get<int>());
    m.mesh.capsules.push_back(c);
  }

  const size_t n = js.at("vertex_count").get<size_t>();
  m.mesh.rest.resize(n);
  m.mesh.weights.resize(n);
  m.mesh.labels.resize(n);
  for (size_t i = 0; i < n; ++i) {
    double xyz[3];
    f.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    m.mesh.rest[i] = {xyz[0], xyz[1], xyz[2]};
    uint8_t lab = 0;
    f.read(reinterpret_cast<char*>(&lab), 1);
    m.mesh.labels[i] = label_from_id(lab);
    for (VertexWeight& vw : m.mesh.weights[i]) {
      int32_t joint = 0;
      f.read(reinterpret_cast<char*>(&joint), 4);
      f.read(reinterpret_cast<char*>(&vw.w), 4);
      vw.joint = joint;
    }
  }
  if (!f) throw std::runtime_error("load_body_model: truncated vertex block");
  m.mesh.validate();
  return m;
}

}  // namespace semtrack
