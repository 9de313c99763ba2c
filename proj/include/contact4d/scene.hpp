#pragma once

#include "contact4d/body.hpp"
#include "contact4d/common.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace contact4d::scene {

enum class Frame { Camera, World };

// H x W grid of 3D points with a validity mask. Points are only required to
// be finite where valid.
struct Pointmap {
  int height = 0;
  int width = 0;
  MatX3 points;                // (H*W) x 3, row-major pixel order
  std::vector<std::uint8_t> valid;
  Frame frame = Frame::Camera;

  static Pointmap constant(int h, int w, const Vec3& p, Frame frame = Frame::Camera);

  Eigen::Index index(int row, int col) const { return static_cast<Eigen::Index>(row) * width + col; }
  Vec3 at(int row, int col) const { return points.row(index(row, col)); }
  bool is_valid(int row, int col) const { return valid[static_cast<size_t>(index(row, col))] != 0; }

  void validate() const;
};

struct Anchor {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();  // (u, v) = (col, row), continuous
  int person = 0;
};

Pointmap pointmap_to_world(const Pointmap& pm, const body::CameraPose& cam);

struct PooledPoint {
  Vec3 value = Vec3::Zero();
  bool valid = false;
};

// RoIAlign-style pooling: window x window bilinear samples at 1-pixel
// spacing centered on the anchor. A sample contributes only if every
// support pixel with nonzero weight is in-bounds and valid; the result is
// the mean over contributing samples.
PooledPoint roi_geo_pool(const Pointmap& pm, const Anchor& anchor, int window);

// Exact nearest-neighbor index over a 3D point set (median-split KD-tree).
// Ties are broken by lowest point index.
class PointIndex {
 public:
  explicit PointIndex(const MatX3& points);

  struct Hit {
    double distance = 0.0;
    int index = -1;
  };

  Hit nearest(const Vec3& query) const;
  int size() const { return static_cast<int>(points_.rows()); }
  const MatX3& points() const { return points_; }

 private:
  struct Node {
    int axis = -1;        // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  void build(int node, int begin, int end, int depth);
  void search(int node, const Vec3& q, Hit& best) const;

  MatX3 points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

inline PointIndex build_index(const MatX3& points) { return PointIndex(points); }

inline PointIndex::Hit nearest_distance(const PointIndex& idx, const Vec3& q) {
  return idx.nearest(q);
}

// 10th percentile (linear interpolation) of per-frame lowest-vertex heights.
double estimate_ground_height(const std::vector<double>& lowest_vertex_per_frame);

}  // namespace contact4d::scene
