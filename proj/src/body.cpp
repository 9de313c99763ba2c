#include "contact4d/body.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace contact4d::body {

namespace {

constexpr double kSumTol = 1e-9;

struct ChainSpec {
  Vec3 direction;
  double total_length;
};

}  // namespace

int BodyTemplate::part_count() const {
  int p = 0;
  for (int v : part_map) p = std::max(p, v + 1);
  return p;
}

void BodyTemplate::validate() const {
  const int V = vertex_count();
  const int J = joint_count();
  require_arg(V >= 1 && J >= 1, "template: empty geometry");
  require_arg(static_cast<int>(parent.size()) == J, "template: parent size != J");
  require_arg(parent[0] == -1, "template: joint 0 must be the root");
  for (int j = 1; j < J; ++j)
    require_arg(parent[j] >= 0 && parent[j] < j, "template: parents must precede children");
  require_arg(skin_weights.rows() == V && skin_weights.cols() == J,
              "template: skin_weights shape mismatch");
  for (int v = 0; v < V; ++v) {
    double sum = 0.0;
    for (int j = 0; j < J; ++j) {
      require_arg(skin_weights(v, j) >= 0.0, "template: negative skin weight");
      sum += skin_weights(v, j);
    }
    require_arg(std::abs(sum - 1.0) <= kSumTol, "template: skin weight row must sum to 1");
  }
  require_arg(joint_regressor.rows() == J && joint_regressor.cols() == V,
              "template: joint_regressor shape mismatch");
  for (int j = 0; j < J; ++j) {
    const double sum = joint_regressor.row(j).sum();
    require_arg(std::abs(sum - 1.0) <= kSumTol, "template: regressor row must sum to 1");
  }
  require_arg(static_cast<int>(part_map.size()) == V, "template: part_map size != V");
  for (int v = 0; v < V; ++v)
    require_arg(part_map[v] >= 0, "template: vertex without part index");
  require_arg(!foot_vertex_ids.empty(), "template: no foot vertices");
  for (int f : foot_vertex_ids)
    require_arg(f >= 0 && f < V, "template: foot vertex id out of range");
  require_arg(rest_vertices.allFinite() && rest_joints.allFinite(),
              "template: non-finite rest geometry");
}

BodyParams BodyParams::zero(int joints, int shape_dims, int expr_dims) {
  BodyParams p;
  p.pose = Mat::Zero(joints, 3);
  p.shape = Vec::Zero(shape_dims);
  p.expression = Vec::Zero(expr_dims);
  p.root_trans_cam = Vec3::Zero();
  return p;
}

void CameraPose::validate(double tol) const {
  require_arg(rotation.allFinite() && translation.allFinite(), "camera: non-finite pose");
  const Mat3 rtr = rotation.transpose() * rotation;
  require_arg((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol,
              "camera: rotation is not orthonormal");
  require_arg(std::abs(rotation.determinant() - 1.0) <= tol,
              "camera: rotation determinant must be +1");
}

CameraPose CameraPose::inverse() const {
  CameraPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(rotation.transpose() * translation);
  return inv;
}

BodyTemplate build_template(int v_per_bone, int joints, std::uint64_t seed,
                            const BuildOptions& opts) {
  require_arg(v_per_bone >= 1, "build_template: v_per_bone must be >= 1");
  require_arg(joints >= 2, "build_template: need at least 2 joints");
  if (opts.total_vertices != 0)
    require_arg(opts.total_vertices >= joints * v_per_bone,
                "build_template: total_vertices smaller than J * v_per_bone");

  Rng rng(seed);
  const int J = joints;

  BodyTemplate t;
  t.rest_joints.resize(J, 3);
  t.parent.assign(J, -1);

  const Vec3 root(0.0, 0.95, 0.0);
  t.rest_joints.row(0) = root;

  // Chains radiating from the root: two legs downward, a spine upward, two
  // arms sideways. Remaining joints are distributed round-robin so any J
  // yields a connected tree with the legs ending lowest.
  const ChainSpec chains[5] = {
      {Vec3(-0.12, -1.0, 0.0).normalized(), 0.92},
      {Vec3(0.12, -1.0, 0.0).normalized(), 0.92},
      {Vec3(0.0, 1.0, 0.0), 0.68},
      {Vec3(-1.0, 0.25, 0.0).normalized(), 0.72},
      {Vec3(1.0, 0.25, 0.0).normalized(), 0.72},
  };
  std::vector<std::vector<int>> chain_joints(5);
  for (int j = 1; j < J; ++j) chain_joints[(j - 1) % 5].push_back(j);

  for (int c = 0; c < 5; ++c) {
    const auto& members = chain_joints[c];
    if (members.empty()) continue;
    const double seg = chains[c].total_length / static_cast<double>(members.size());
    int prev = 0;
    Vec3 pos = root;
    for (int j : members) {
      Vec3 dir = chains[c].direction;
      dir += Vec3(rng.normal(0.0, 0.03), rng.normal(0.0, 0.03), rng.normal(0.0, 0.03));
      dir.normalize();
      pos += seg * dir;
      t.rest_joints.row(j) = pos;
      t.parent[j] = prev;
      prev = j;
    }
  }

  const int V_base = J * v_per_bone;
  const int V = opts.total_vertices > 0 ? opts.total_vertices : V_base;
  t.rest_vertices.resize(V, 3);
  t.part_map.assign(V, 0);
  t.skin_weights = Mat::Zero(V, J);

  auto place_vertex = [&](int v, int bone) {
    const Vec3 jpos = t.rest_joints.row(bone);
    Vec3 base = jpos;
    if (t.parent[bone] >= 0) {
      const Vec3 ppos = t.rest_joints.row(t.parent[bone]);
      base = ppos + rng.uniform(0.15, 0.95) * (jpos - ppos);
    }
    const Vec3 offset(rng.normal(0.0, 0.035), rng.normal(0.0, 0.035), rng.normal(0.0, 0.035));
    t.rest_vertices.row(v) = base + offset;
    t.part_map[v] = bone;
    if (t.parent[bone] >= 0) {
      const double w_own = 0.72 + 0.24 * rng.uniform();
      t.skin_weights(v, bone) = w_own;
      t.skin_weights(v, t.parent[bone]) = 1.0 - w_own;
    } else {
      t.skin_weights(v, bone) = 1.0;
    }
  };

  int v = 0;
  for (int bone = 0; bone < J; ++bone)
    for (int k = 0; k < v_per_bone; ++k) place_vertex(v++, bone);
  for (; v < V; ++v) place_vertex(v, 0);  // padding vertices live on the root bone

  // Regressor: each joint is the centroid of its bone's vertices.
  t.joint_regressor = Mat::Zero(J, V);
  std::vector<int> bone_counts(J, 0);
  for (int vv = 0; vv < V; ++vv) bone_counts[t.part_map[vv]]++;
  for (int vv = 0; vv < V; ++vv)
    t.joint_regressor(t.part_map[vv], vv) = 1.0 / static_cast<double>(bone_counts[t.part_map[vv]]);

  // Feet: vertices of the two lowest leaf bones (or one, for a chain).
  std::vector<bool> is_parent(J, false);
  for (int j = 1; j < J; ++j) is_parent[t.parent[j]] = true;
  std::vector<int> leaves;
  for (int j = 0; j < J; ++j)
    if (!is_parent[j]) leaves.push_back(j);
  std::sort(leaves.begin(), leaves.end(), [&](int a, int b) {
    if (t.rest_joints(a, 1) != t.rest_joints(b, 1)) return t.rest_joints(a, 1) < t.rest_joints(b, 1);
    return a < b;
  });
  const int n_feet = std::min<int>(2, static_cast<int>(leaves.size()));
  for (int i = 0; i < n_feet; ++i)
    for (int vv = 0; vv < V; ++vv)
      if (t.part_map[vv] == leaves[i]) t.foot_vertex_ids.push_back(vv);
  std::sort(t.foot_vertex_ids.begin(), t.foot_vertex_ids.end());

  t.validate();
  return t;
}

BodyTemplate build_default_template(std::uint64_t seed) {
  BuildOptions opts;
  opts.total_vertices = 6890;
  return build_template(287, 24, seed, opts);
}

Vec3 canonicalize_axis_angle(const Vec3& aa) {
  double angle = aa.norm();
  if (angle == 0.0) return Vec3::Zero();
  Vec3 axis = aa / angle;
  angle = std::fmod(angle, 2.0 * M_PI);
  if (angle < 0.0) angle += 2.0 * M_PI;
  if (angle > M_PI) {
    angle = 2.0 * M_PI - angle;
    axis = -axis;
  }
  return axis * angle;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-300) return Mat3::Identity();
  const Vec3 axis = aa / angle;
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * (k * k);
}

SkinnedFrame lbs_forward(const BodyTemplate& tmpl, const BodyParams& params) {
  const int V = tmpl.vertex_count();
  const int J = tmpl.joint_count();
  require_arg(params.pose.rows() == J && params.pose.cols() == 3,
              "lbs_forward: pose shape mismatch");
  require_arg(params.pose.allFinite() && params.shape.allFinite() &&
                  params.expression.allFinite() && params.root_trans_cam.allFinite(),
              "lbs_forward: non-finite parameters");

  const int B = static_cast<int>(params.shape.size());
  std::vector<double> bone_scale(J, 1.0);
  for (int j = 0; j < std::min(B, J); ++j)
    bone_scale[j] = std::clamp(1.0 + params.shape[j], 0.5, 2.0);

  // Global transforms: G_j = G_parent * [R_j | offset_j], rotation acting
  // about the joint's own origin, offsets scaled per bone.
  std::vector<Mat3> rot(J);
  std::vector<Vec3> pos(J);
  for (int j = 0; j < J; ++j) {
    const Mat3 local = axis_angle_to_matrix(canonicalize_axis_angle(params.pose.row(j)));
    if (tmpl.parent[j] < 0) {
      rot[j] = local;
      pos[j] = tmpl.rest_joints.row(j);
    } else {
      const int p = tmpl.parent[j];
      const Vec3 offset =
          bone_scale[j] * (tmpl.rest_joints.row(j) - tmpl.rest_joints.row(p)).transpose();
      rot[j] = rot[p] * local;
      pos[j] = pos[p] + rot[p] * offset;
    }
  }

  SkinnedFrame out;
  out.joints.resize(J, 3);
  for (int j = 0; j < J; ++j) out.joints.row(j) = pos[j] + params.root_trans_cam;

  out.vertices.resize(V, 3);
  for (int v = 0; v < V; ++v) {
    const Vec3 x = tmpl.rest_vertices.row(v);
    Vec3 acc = Vec3::Zero();
    for (int j = 0; j < J; ++j) {
      const double w = tmpl.skin_weights(v, j);
      if (w == 0.0) continue;
      const Vec3 rest_j = tmpl.rest_joints.row(j);
      acc += w * (rot[j] * (x - rest_j) + pos[j]);
    }
    out.vertices.row(v) = acc + params.root_trans_cam;
  }
  return out;
}

MatX3 apply_camera(const MatX3& points_cam, const CameraPose& cam) {
  MatX3 out(points_cam.rows(), 3);
  for (Eigen::Index i = 0; i < points_cam.rows(); ++i)
    out.row(i) = cam.rotation * points_cam.row(i).transpose() + cam.translation;
  return out;
}

SkinnedFrame compose_world(const MatX3& vertices_cam, const MatX3& joints_cam,
                           const CameraPose& cam) {
  cam.validate();
  SkinnedFrame out;
  out.vertices = apply_camera(vertices_cam, cam);
  out.joints = apply_camera(joints_cam, cam);
  return out;
}

MatX3 regress_joints(const BodyTemplate& tmpl, const MatX3& vertices) {
  require_arg(vertices.rows() == tmpl.rest_vertices.rows(),
              "regress_joints: vertex count mismatch");
  return tmpl.joint_regressor * vertices;
}

}  // namespace contact4d::body
