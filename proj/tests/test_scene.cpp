#include "contact4d/scene.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

using namespace contact4d;

namespace {

scene::Pointmap grid_map(int h, int w, Rng& rng) {
  scene::Pointmap pm;
  pm.height = h;
  pm.width = w;
  pm.points.resize(static_cast<Eigen::Index>(h) * w, 3);
  pm.valid.assign(static_cast<size_t>(h) * w, 1);
  for (Eigen::Index i = 0; i < pm.points.rows(); ++i)
    pm.points.row(i) << rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0);
  return pm;
}

// Plain restatement of the pooling rule: window x window samples at 1-pixel
// spacing, each sample bilinear over up to 4 pixels; any out-of-range or
// invalid support pixel with nonzero weight kills that sample.
scene::PooledPoint pool_reference(const scene::Pointmap& pm, double u, double v, int window) {
  const int half = (window - 1) / 2;
  Vec3 acc = Vec3::Zero();
  int used = 0;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const double x = u + dx, y = v + dy;
      const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
      const double ax = x - x0, ay = y - y0;
      Vec3 sample = Vec3::Zero();
      bool ok = true;
      for (int iy = 0; iy < 2 && ok; ++iy)
        for (int ix = 0; ix < 2 && ok; ++ix) {
          const double w = (ix == 0 ? 1.0 - ax : ax) * (iy == 0 ? 1.0 - ay : ay);
          if (w == 0.0) continue;
          const int px = x0 + ix, py = y0 + iy;
          if (px < 0 || px >= pm.width || py < 0 || py >= pm.height || !pm.is_valid(py, px))
            ok = false;
          else
            sample += w * pm.at(py, px);
        }
      if (ok) {
        acc += sample;
        ++used;
      }
    }
  scene::PooledPoint out;
  if (used > 0) {
    out.value = acc / static_cast<double>(used);
    out.valid = true;
  }
  return out;
}

}  // namespace

TEST_CASE("roi pooling matches the bilinear reference") {
  Rng rng(21);
  auto pm = grid_map(7, 9, rng);
  pm.valid[5] = 0;
  pm.valid[30] = 0;
  for (int trial = 0; trial < 60; ++trial) {
    scene::Anchor a;
    a.pixel << rng.uniform(0.0, 8.0), rng.uniform(0.0, 6.0);
    const int window = 1 + 2 * (trial % 3);
    const auto got = scene::roi_geo_pool(pm, a, window);
    const auto want = pool_reference(pm, a.pixel.x(), a.pixel.y(), window);
    CHECK(got.valid == want.valid);
    if (got.valid) CHECK((got.value - want.value).norm() < 1e-12);
  }
}

TEST_CASE("roi pooling on a constant map returns the constant") {
  const auto pm = scene::Pointmap::constant(6, 6, Vec3(1.0, 2.0, 3.0));
  scene::Anchor a;
  a.pixel << 2.3, 3.7;
  const auto got = scene::roi_geo_pool(pm, a, 5);
  REQUIRE(got.valid);
  CHECK((got.value - Vec3(1.0, 2.0, 3.0)).norm() < 1e-12);
}

TEST_CASE("roi pooling rejects anchors outside the pixel grid") {
  const auto pm = scene::Pointmap::constant(4, 4, Vec3::Zero());
  scene::Anchor a;
  a.pixel << -1.0, 0.0;
  CHECK_THROWS_AS(scene::roi_geo_pool(pm, a, 3), OutOfBoundsError);
  a.pixel << 0.0, 7.0;
  CHECK_THROWS_AS(scene::roi_geo_pool(pm, a, 3), OutOfBoundsError);
  a.pixel << 1.0, 1.0;
  CHECK_THROWS_AS(scene::roi_geo_pool(pm, a, 4), ArgumentError);
}

TEST_CASE("fully masked neighborhoods pool to invalid") {
  auto pm = scene::Pointmap::constant(5, 5, Vec3::Ones());
  std::fill(pm.valid.begin(), pm.valid.end(), 0);
  scene::Anchor a;
  a.pixel << 2.0, 2.0;
  CHECK_FALSE(scene::roi_geo_pool(pm, a, 3).valid);
}

TEST_CASE("camera to world conversion moves only valid points") {
  Rng rng(5);
  auto pm = grid_map(3, 4, rng);
  pm.valid[7] = 0;
  body::CameraPose cam;
  cam.rotation = Eigen::AngleAxisd(0.7, Vec3(0, 1, 0)).toRotationMatrix();
  cam.translation = Vec3(0.3, -0.2, 1.1);
  const auto world = scene::pointmap_to_world(pm, cam);
  CHECK(world.frame == scene::Frame::World);
  for (Eigen::Index i = 0; i < pm.points.rows(); ++i) {
    if (!pm.valid[static_cast<size_t>(i)]) {
      CHECK((world.points.row(i) - pm.points.row(i)).norm() == 0.0);
      continue;
    }
    const Vec3 want = cam.rotation * pm.points.row(i).transpose() + cam.translation;
    CHECK((world.points.row(i).transpose() - want).norm() < 1e-12);
  }
  CHECK_THROWS_AS(scene::pointmap_to_world(world, cam), ArgumentError);
}

TEST_CASE("kd-tree nearest matches a brute-force scan") {
  Rng rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 300);
    MatX3 pts(n, 3);
    for (int i = 0; i < n; ++i)
      pts.row(i) << rng.normal(0.0, 2.0), rng.normal(0.0, 0.5), rng.normal(0.0, 2.0);
    if (n > 4) pts.row(3) = pts.row(1);  // exact duplicate forces a tie
    const scene::PointIndex index(pts);
    for (int q = 0; q < 40; ++q) {
      const Vec3 query(rng.normal(0.0, 2.5), rng.normal(0.0, 1.0), rng.normal(0.0, 2.5));
      double best = std::numeric_limits<double>::infinity();
      int best_i = -1;
      for (int i = 0; i < n; ++i) {
        const double d = (pts.row(i).transpose() - query).norm();
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      const auto hit = index.nearest(query);
      CHECK(hit.index == best_i);
      CHECK(std::abs(hit.distance - best) < 1e-12);
    }
  }
}

TEST_CASE("kd-tree queries at stored points return distance zero") {
  Rng rng(29);
  MatX3 pts(64, 3);
  for (int i = 0; i < 64; ++i)
    pts.row(i) << rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1);
  const scene::PointIndex index(pts);
  for (int i = 0; i < 64; ++i) {
    const auto hit = index.nearest(pts.row(i).transpose());
    CHECK(hit.distance == 0.0);
    CHECK((pts.row(hit.index) - pts.row(i)).norm() == 0.0);
  }
}

TEST_CASE("ground height estimate is the interpolated 10th percentile") {
  auto naive = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double rank = 0.10 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    const double frac = rank - std::floor(rank);
    if (lo + 1 >= v.size()) return v[lo];
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
  };
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.next_u64() % 40);
    std::vector<double> heights(static_cast<size_t>(n));
    for (auto& h : heights) h = rng.normal(0.1, 0.4);
    CHECK(scene::estimate_ground_height(heights) == doctest::Approx(naive(heights)).epsilon(1e-12));
  }
  CHECK(scene::estimate_ground_height({0.25}) == 0.25);
}
