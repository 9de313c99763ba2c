#pragma once

#include "contact4d/common.hpp"

#include <utility>
#include <vector>

namespace contact4d::body {

// Procedural skinned body: fixed rest geometry, a parent tree of joints,
// blend weights and a joint regressor. Stands in for a licensed parametric
// body at desk scale; vertex count and joint count are configurable.
struct BodyTemplate {
  MatX3 rest_vertices;              // V x 3, meters
  MatX3 rest_joints;                // J x 3, meters
  std::vector<int> parent;          // parent[0] == -1, tree rooted at joint 0
  Mat skin_weights;                 // V x J, rows sum to 1
  std::vector<int> part_map;        // V, part index in [0, P)
  std::vector<int> foot_vertex_ids; // vertices of the two lowest leaf bones
  Mat joint_regressor;              // J x V, rows sum to 1

  int vertex_count() const { return static_cast<int>(rest_vertices.rows()); }
  int joint_count() const { return static_cast<int>(rest_joints.rows()); }
  int part_count() const;

  void validate() const;  // throws ArgumentError on any broken invariant
};

struct BodyParams {
  Mat pose;          // J x 3 axis-angle, radians
  Vec shape;         // B, unitless per-bone length scale offsets
  Vec expression;    // E, accepted but inert when E == 0
  Vec3 root_trans_cam = Vec3::Zero();  // meters, camera frame

  static BodyParams zero(int joints, int shape_dims, int expr_dims = 0);
};

// Camera-to-world pose.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  void validate(double tol = 1e-9) const;
  CameraPose inverse() const;
};

struct BuildOptions {
  int total_vertices = 0;  // 0 = exactly J * v_per_bone; extras pad the root bone
};

// Deterministic template construction: a root with leg/spine/arm chains,
// v_per_bone vertices per bone. Feet are the vertices of the two lowest
// leaf bones.
BodyTemplate build_template(int v_per_bone, int joints, std::uint64_t seed,
                            const BuildOptions& opts = {});

// Desk defaults: V=6890, J=24, one part per joint.
BodyTemplate build_default_template(std::uint64_t seed);

// Axis-angle with angle canonicalized into [0, pi].
Vec3 canonicalize_axis_angle(const Vec3& aa);

Mat3 axis_angle_to_matrix(const Vec3& aa);

struct SkinnedFrame {
  MatX3 vertices;  // V x 3, camera frame
  MatX3 joints;    // J x 3, camera frame
};

// Rigid forward kinematics along the parent tree, blended by skin weights,
// translated by root_trans_cam. Shape entries act as per-bone length scales
// (1 + beta clipped to [0.5, 2]); expression is inert.
SkinnedFrame lbs_forward(const BodyTemplate& tmpl, const BodyParams& params);

// World-frame composition x_world = R x_cam + t.
SkinnedFrame compose_world(const MatX3& vertices_cam, const MatX3& joints_cam,
                           const CameraPose& cam);

MatX3 apply_camera(const MatX3& points_cam, const CameraPose& cam);

MatX3 regress_joints(const BodyTemplate& tmpl, const MatX3& vertices);

}  // namespace contact4d::body
