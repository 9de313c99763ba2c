#include "contact4d/body.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <utility>
#include <vector>

using namespace contact4d;

namespace {

Vec3 random_vec3(Rng& rng, double scale) {
  return Vec3(rng.normal(0.0, scale), rng.normal(0.0, scale), rng.normal(0.0, scale));
}

Mat3 rotation_from(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

}  // namespace

TEST_CASE("axis-angle to matrix agrees with Eigen AngleAxis") {
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    const Vec3 aa = random_vec3(rng, 1.5);
    const Mat3 got = body::axis_angle_to_matrix(aa);
    const Mat3 want = rotation_from(aa);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(body::axis_angle_to_matrix(Vec3::Zero()).isApprox(Mat3::Identity()));
}

TEST_CASE("canonicalization caps the angle and keeps the rotation") {
  Rng rng(7);
  for (int i = 0; i < 80; ++i) {
    Vec3 aa = random_vec3(rng, 1.0);
    aa *= rng.uniform(0.0, 4.0 * M_PI) / std::max(aa.norm(), 1e-12);
    const Vec3 canon = body::canonicalize_axis_angle(aa);
    CHECK(canon.norm() <= M_PI + 1e-12);
    CHECK((rotation_from(canon) - rotation_from(aa)).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(body::canonicalize_axis_angle(Vec3::Zero()).norm() == 0.0);
}

TEST_CASE("template invariants hold across sizes") {
  for (auto [vp, joints, total] : std::vector<std::tuple<int, int, int>>{
           {1, 2, 0}, {3, 5, 0}, {2, 7, 20}, {10, 24, 0}}) {
    body::BuildOptions opts;
    opts.total_vertices = total;
    const auto t = body::build_template(vp, joints, 11, opts);
    CHECK(t.joint_count() == joints);
    CHECK(t.vertex_count() == (total > 0 ? total : vp * joints));
    CHECK(t.parent[0] == -1);
    for (int j = 1; j < joints; ++j) {
      CHECK(t.parent[j] >= 0);
      CHECK(t.parent[j] < j);
    }
    for (int v = 0; v < t.vertex_count(); ++v)
      CHECK(std::abs(t.skin_weights.row(v).sum() - 1.0) < 1e-12);
    CHECK(!t.foot_vertex_ids.empty());
  }
}

TEST_CASE("template construction is deterministic in the seed") {
  const auto a = body::build_template(4, 6, 5);
  const auto b = body::build_template(4, 6, 5);
  const auto c = body::build_template(4, 6, 6);
  CHECK((a.rest_vertices - b.rest_vertices).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.rest_joints - b.rest_joints).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.skin_weights - b.skin_weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.rest_vertices - c.rest_vertices).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("joint regressor reproduces per-bone vertex centroids") {
  const auto t = body::build_template(5, 6, 3);
  const MatX3 joints = body::regress_joints(t, t.rest_vertices);
  for (int j = 0; j < t.joint_count(); ++j) {
    Vec3 centroid = Vec3::Zero();
    int count = 0;
    for (int v = 0; v < t.vertex_count(); ++v)
      if (t.part_map[v] == j) {
        centroid += t.rest_vertices.row(v).transpose();
        ++count;
      }
    REQUIRE(count > 0);
    centroid /= static_cast<double>(count);
    CHECK((joints.row(j).transpose() - centroid).norm() < 1e-12);
  }
}

// Independent forward pass: recursive global transforms built with Eigen's
// AngleAxis, then a plain weighted-sum skinning loop.
TEST_CASE("lbs matches a recursive reference implementation") {
  const auto tmpl = body::build_template(4, 6, 3);
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    body::BodyParams p = body::BodyParams::zero(6, 6);
    for (int j = 0; j < 6; ++j) p.pose.row(j) = random_vec3(rng, 0.8).transpose();
    for (int b = 0; b < 6; ++b) p.shape[b] = rng.uniform(-0.7, 1.4);
    p.root_trans_cam = random_vec3(rng, 0.5);

    std::vector<Mat3> rot(6);
    std::vector<Vec3> pos(6);
    for (int j = 0; j < 6; ++j) {
      const Mat3 local = rotation_from(p.pose.row(j));
      const double scale = std::clamp(1.0 + p.shape[j], 0.5, 2.0);
      if (tmpl.parent[j] < 0) {
        rot[j] = local;
        pos[j] = tmpl.rest_joints.row(j);
      } else {
        const int par = tmpl.parent[j];
        const Vec3 off = tmpl.rest_joints.row(j) - tmpl.rest_joints.row(par);
        rot[j] = rot[par] * local;
        pos[j] = pos[par] + rot[par] * (scale * off);
      }
    }

    const auto got = body::lbs_forward(tmpl, p);
    for (int j = 0; j < 6; ++j) {
      const Vec3 want = pos[j] + p.root_trans_cam;
      CHECK((got.joints.row(j).transpose() - want).norm() < 1e-10);
    }
    for (int v = 0; v < tmpl.vertex_count(); ++v) {
      const Vec3 x = tmpl.rest_vertices.row(v);
      Vec3 acc = Vec3::Zero();
      for (int j = 0; j < 6; ++j) {
        const double w = tmpl.skin_weights(v, j);
        if (w == 0.0) continue;
        acc += w * (rot[j] * (x - tmpl.rest_joints.row(j).transpose()) + pos[j]);
      }
      CHECK((got.vertices.row(v).transpose() - (acc + p.root_trans_cam)).norm() < 1e-10);
    }
  }
}

TEST_CASE("bone length scales clamp to [0.5, 2]") {
  const auto tmpl = body::build_template(2, 5, 1);
  auto posed = [&](double beta) {
    body::BodyParams p = body::BodyParams::zero(5, 5);
    p.shape.setConstant(beta);
    return body::lbs_forward(tmpl, p).joints;
  };
  CHECK((posed(1.0) - posed(9.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((posed(-0.5) - posed(-7.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((posed(0.3) - posed(0.4)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lbs rejects misshapen or non-finite parameters") {
  const auto tmpl = body::build_template(2, 4, 1);
  body::BodyParams p = body::BodyParams::zero(3, 4);
  CHECK_THROWS_AS(body::lbs_forward(tmpl, p), ArgumentError);
  p = body::BodyParams::zero(4, 4);
  p.root_trans_cam.x() = std::nan("");
  CHECK_THROWS_AS(body::lbs_forward(tmpl, p), ArgumentError);
}

TEST_CASE("world composition applies R x + t rowwise") {
  Rng rng(3);
  body::CameraPose cam;
  cam.rotation = rotation_from(random_vec3(rng, 1.0));
  cam.translation = random_vec3(rng, 2.0);
  MatX3 pts(4, 3);
  for (int i = 0; i < 4; ++i) pts.row(i) = random_vec3(rng, 1.0).transpose();
  const auto world = body::compose_world(pts, pts, cam);
  for (int i = 0; i < 4; ++i) {
    const Vec3 want = cam.rotation * pts.row(i).transpose() + cam.translation;
    CHECK((world.vertices.row(i).transpose() - want).norm() < 1e-12);
  }
  const auto back = body::apply_camera(world.vertices, cam.inverse());
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("camera validation rejects non-rotations") {
  body::CameraPose cam;
  cam.rotation *= 1.2;
  CHECK_THROWS_AS(cam.validate(), ArgumentError);
  cam.rotation = Mat3::Identity();
  cam.rotation(0, 0) = -1.0;  // orthonormal reflection, det = -1
  CHECK_THROWS_AS(cam.validate(), ArgumentError);
  cam.rotation = Mat3::Identity();
  CHECK_NOTHROW(cam.validate());
}
