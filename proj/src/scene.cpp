#include "contact4d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace contact4d::scene {

Pointmap Pointmap::constant(int h, int w, const Vec3& p, Frame frame) {
  Pointmap pm;
  pm.height = h;
  pm.width = w;
  pm.frame = frame;
  pm.points = p.transpose().replicate(static_cast<Eigen::Index>(h) * w, 1);
  pm.valid.assign(static_cast<size_t>(h) * w, 1);
  return pm;
}

void Pointmap::validate() const {
  require_arg(height >= 1 && width >= 1, "pointmap: H, W must be >= 1");
  const Eigen::Index n = static_cast<Eigen::Index>(height) * width;
  require_arg(points.rows() == n, "pointmap: point buffer size mismatch");
  require_arg(valid.size() == static_cast<size_t>(n), "pointmap: validity mask size mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (valid[static_cast<size_t>(i)])
      require_arg(points.row(i).allFinite(), "pointmap: non-finite point marked valid");
}

Pointmap pointmap_to_world(const Pointmap& pm, const body::CameraPose& cam) {
  require_arg(pm.frame == Frame::Camera, "pointmap_to_world: input must be camera-frame");
  cam.validate();
  Pointmap out = pm;
  out.frame = Frame::World;
  for (Eigen::Index i = 0; i < pm.points.rows(); ++i)
    if (pm.valid[static_cast<size_t>(i)])
      out.points.row(i) = cam.rotation * pm.points.row(i).transpose() + cam.translation;
  return out;
}

namespace {

struct Support {
  int idx[4];
  double weight[4];
  int count = 0;
};

// Bilinear support of a continuous coordinate; a zero-weight side is not
// required, so exact grid nodes keep working at the border.
bool bilinear_support(const Pointmap& pm, double x, double y, Support& s) {
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double ax = x - fx0;
  const double ay = y - fy0;

  int xs[2], ys[2];
  double wx[2], wy[2];
  int nx = 0, ny = 0;
  if (ax == 0.0) {
    xs[nx] = x0; wx[nx++] = 1.0;
  } else {
    xs[nx] = x0; wx[nx++] = 1.0 - ax;
    xs[nx] = x0 + 1; wx[nx++] = ax;
  }
  if (ay == 0.0) {
    ys[ny] = y0; wy[ny++] = 1.0;
  } else {
    ys[ny] = y0; wy[ny++] = 1.0 - ay;
    ys[ny] = y0 + 1; wy[ny++] = ay;
  }

  s.count = 0;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const int px = xs[ix];
      const int py = ys[iy];
      if (px < 0 || px >= pm.width || py < 0 || py >= pm.height) return false;
      if (!pm.is_valid(py, px)) return false;
      s.idx[s.count] = static_cast<int>(pm.index(py, px));
      s.weight[s.count] = wx[ix] * wy[iy];
      ++s.count;
    }
  return true;
}

}  // namespace

PooledPoint roi_geo_pool(const Pointmap& pm, const Anchor& anchor, int window) {
  pm.validate();
  require_arg(window >= 1 && window % 2 == 1, "roi_geo_pool: window must be odd and >= 1");
  const double u = anchor.pixel.x();
  const double v = anchor.pixel.y();
  require_arg(std::isfinite(u) && std::isfinite(v), "roi_geo_pool: non-finite anchor");
  if (u < -0.5 || u > pm.width - 0.5 || v < -0.5 || v > pm.height - 0.5)
    throw OutOfBoundsError("roi_geo_pool: anchor outside the pixel grid");

  const int half = (window - 1) / 2;
  PooledPoint out;
  Vec3 acc = Vec3::Zero();
  int n_valid = 0;
  Support s;
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      if (!bilinear_support(pm, u + dx, v + dy, s)) continue;
      Vec3 sample = Vec3::Zero();
      for (int k = 0; k < s.count; ++k) sample += s.weight[k] * pm.points.row(s.idx[k]).transpose();
      acc += sample;
      ++n_valid;
    }
  if (n_valid > 0) {
    out.value = acc / static_cast<double>(n_valid);
    out.valid = true;
  }
  return out;
}

PointIndex::PointIndex(const MatX3& points) : points_(points) {
  require_arg(points_.rows() >= 1, "build_index: point set is empty");
  require_arg(points_.allFinite(), "build_index: non-finite points");
  const int n = static_cast<int>(points_.rows());
  order_.resize(static_cast<size_t>(n));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(static_cast<size_t>(2 * n));
  nodes_.emplace_back();
  build(0, 0, n, 0);
}

void PointIndex::build(int node, int begin, int end, int depth) {
  constexpr int kLeafSize = 8;
  if (end - begin <= kLeafSize) {
    nodes_[static_cast<size_t>(node)].axis = -1;
    nodes_[static_cast<size_t>(node)].begin = begin;
    nodes_[static_cast<size_t>(node)].end = end;
    return;
  }
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(a, axis) < points_(b, axis); });
  Node& n = nodes_[static_cast<size_t>(node)];
  n.axis = axis;
  n.split = points_(order_[static_cast<size_t>(mid)], axis);
  n.left = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  build(n.left, begin, mid, depth + 1);
  const int right = static_cast<int>(nodes_.size());
  nodes_[static_cast<size_t>(node)].right = right;
  nodes_.emplace_back();
  build(right, mid, end, depth + 1);
}

void PointIndex::search(int node, const Vec3& q, Hit& best) const {
  const Node& n = nodes_[static_cast<size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int idx = order_[static_cast<size_t>(i)];
      const double d2 = (points_.row(idx).transpose() - q).squaredNorm();
      if (d2 < best.distance || (d2 == best.distance && idx < best.index)) {
        best.distance = d2;
        best.index = idx;
      }
    }
    return;
  }
  const double delta = q[n.axis] - n.split;
  const int near = delta < 0.0 ? n.left : n.right;
  const int far = delta < 0.0 ? n.right : n.left;
  search(near, q, best);
  if (delta * delta <= best.distance) search(far, q, best);
}

PointIndex::Hit PointIndex::nearest(const Vec3& query) const {
  require_arg(query.allFinite(), "nearest_distance: non-finite query");
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  search(0, query, best);
  best.distance = std::sqrt(best.distance);
  return best;
}

double estimate_ground_height(const std::vector<double>& lowest_vertex_per_frame) {
  require_arg(!lowest_vertex_per_frame.empty(), "estimate_ground_height: empty input");
  std::vector<double> sorted = lowest_vertex_per_frame;
  for (double h : sorted) require_arg(std::isfinite(h), "estimate_ground_height: non-finite height");
  std::sort(sorted.begin(), sorted.end());
  const double rank = 0.10 * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace contact4d::scene
