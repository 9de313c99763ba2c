#include "contact4d/metrics.hpp"

#include "contact4d/scene.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace contact4d::metrics {

void Trajectory::validate() const {
  require_arg(!joints.empty(), "trajectory: needs at least one frame");
  require_arg(fps > 0.0, "trajectory: fps must be positive");
  const Eigen::Index J = joints.front().rows();
  require_arg(J >= 1, "trajectory: needs at least one joint");
  for (const auto& f : joints) {
    require_arg(f.rows() == J, "trajectory: joint count varies across frames");
    require_arg(f.allFinite(), "trajectory: non-finite joints");
  }
  if (!vertices.empty()) {
    require_arg(vertices.size() == joints.size(), "trajectory: vertex frame count mismatch");
    const Eigen::Index V = vertices.front().rows();
    for (const auto& f : vertices) {
      require_arg(f.rows() == V, "trajectory: vertex count varies across frames");
      require_arg(f.allFinite(), "trajectory: non-finite vertices");
    }
  }
}

std::vector<Segment> split_segments(const Trajectory& pred, const Trajectory& gt, int seg_len) {
  pred.validate();
  gt.validate();
  require_arg(pred.frames() == gt.frames(), "split_segments: frame counts differ");
  require_arg(seg_len >= 2, "split_segments: segment length must be >= 2");
  const int T = pred.frames();
  std::vector<Segment> out;
  int start = 0;
  while (start + seg_len <= T) {
    out.push_back({start, seg_len});
    start += seg_len;
  }
  if (T - start >= 2) out.push_back({start, T - start});
  return out;
}

MatX3 SimilarityTransform::apply(const MatX3& points) const {
  MatX3 out = (points * rotation.transpose()) * scale;
  out.rowwise() += translation.transpose();
  return out;
}

double alignment_residual(const SimilarityTransform& t, const MatX3& src, const MatX3& dst) {
  return (t.apply(src) - dst).rowwise().squaredNorm().sum();
}

namespace {

// Closed-form similarity fit; also reports the covariance singular values
// and centered source variance so the strict entry point can reject
// degenerate configurations. With centroid_fallback a rank-deficient
// covariance (no two independent directions in the correspondence, so the
// rotation is undetermined) yields centroid alignment instead of an
// arbitrary member of the optimal family.
SimilarityTransform fit_core(const MatX3& src, const MatX3& dst, bool with_scale, Vec3* sing,
                             double* src_var, bool centroid_fallback) {
  const double m = static_cast<double>(src.rows());
  const Vec3 mu_s = src.colwise().mean();
  const Vec3 mu_d = dst.colwise().mean();
  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const Vec3 xs = src.row(i).transpose() - mu_s;
    const Vec3 yd = dst.row(i).transpose() - mu_d;
    cov += yd * xs.transpose();
    var_s += xs.squaredNorm();
  }
  cov /= m;
  var_s /= m;
  if (sing) sing->setZero();
  if (src_var) *src_var = var_s;

  SimilarityTransform t;
  if (var_s > 0.0) {
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 d = svd.singularValues();
    if (sing) *sing = d;
    if (!(centroid_fallback && d(1) <= 1e-9 * d(0))) {
      Mat3 S = Mat3::Identity();
      if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
      t.rotation = svd.matrixU() * S * svd.matrixV().transpose();
      if (with_scale) t.scale = (d(0) + d(1) + S(2, 2) * d(2)) / var_s;
    }
  }
  t.translation = mu_d - t.scale * (t.rotation * mu_s);
  return t;
}

}  // namespace

SimilarityTransform fit_similarity(const MatX3& src, const MatX3& dst, bool with_scale) {
  require_arg(src.rows() == dst.rows(), "alignment: point counts differ");
  require_arg(src.rows() >= 1, "alignment: empty point sets");
  const SimilarityTransform fitted = fit_core(src, dst, with_scale, nullptr, nullptr, true);
  const SimilarityTransform identity;
  if (alignment_residual(identity, src, dst) <= alignment_residual(fitted, src, dst))
    return identity;
  return fitted;
}

SimilarityTransform umeyama_align(const MatX3& src, const MatX3& dst, bool with_scale) {
  require_arg(src.rows() == dst.rows(), "umeyama: point counts differ");
  require_arg(src.rows() >= 3, "umeyama: need at least 3 points");
  require_arg(src.allFinite() && dst.allFinite(), "umeyama: non-finite input");
  Vec3 sing;
  double var_s = 0.0;
  const SimilarityTransform fitted = fit_core(src, dst, with_scale, &sing, &var_s, false);
  if (var_s <= 0.0) throw DegenerateInputError("umeyama: source points coincide");
  if (sing(1) <= 1e-12 * std::max(sing(0), 1e-300))
    throw DegenerateInputError("umeyama: rank-deficient covariance");
  const SimilarityTransform identity;
  if (alignment_residual(identity, src, dst) <= alignment_residual(fitted, src, dst))
    return identity;
  return fitted;
}

namespace {

void check_pair_seq(const FrameSeq& pred, const FrameSeq& gt, const char* what) {
  require_arg(pred.size() == gt.size() && !pred.empty(),
              std::string(what) + ": frame counts differ or empty");
  for (size_t t = 0; t < pred.size(); ++t) {
    require_arg(pred[t].rows() == gt[t].rows() && pred[t].rows() >= 1,
                std::string(what) + ": point counts differ");
    require_arg(pred[t].allFinite() && gt[t].allFinite(),
                std::string(what) + ": non-finite input");
  }
}

MatX3 stack_frames(const FrameSeq& seq, size_t start, size_t count) {
  Eigen::Index rows = 0;
  for (size_t t = start; t < start + count; ++t) rows += seq[t].rows();
  MatX3 out(rows, 3);
  Eigen::Index r = 0;
  for (size_t t = start; t < start + count; ++t) {
    out.middleRows(r, seq[t].rows()) = seq[t];
    r += seq[t].rows();
  }
  return out;
}

double mean_row_error(const MatX3& a, const MatX3& b) {
  return (a - b).rowwise().norm().mean();
}

}  // namespace

double pa_mpjpe(const FrameSeq& pred, const FrameSeq& gt) {
  check_pair_seq(pred, gt, "pa_mpjpe");
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const SimilarityTransform f = fit_similarity(pred[t], gt[t], true);
    sum += mean_row_error(f.apply(pred[t]), gt[t]);
  }
  return 1000.0 * sum / static_cast<double>(pred.size());
}

double wa_mpjpe(const FrameSeq& pred, const FrameSeq& gt) {
  check_pair_seq(pred, gt, "wa_mpjpe");
  const MatX3 sp = stack_frames(pred, 0, pred.size());
  const MatX3 sg = stack_frames(gt, 0, gt.size());
  const SimilarityTransform f = fit_similarity(sp, sg, true);
  return 1000.0 * mean_row_error(f.apply(sp), sg);
}

double w_mpjpe(const FrameSeq& pred, const FrameSeq& gt) {
  check_pair_seq(pred, gt, "w_mpjpe");
  const size_t nfit = std::min<size_t>(2, pred.size());
  const SimilarityTransform f =
      fit_similarity(stack_frames(pred, 0, nfit), stack_frames(gt, 0, nfit), false);
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) sum += mean_row_error(f.apply(pred[t]), gt[t]);
  return 1000.0 * sum / static_cast<double>(pred.size());
}

double rte(const MatX3& root_pred, const MatX3& root_gt) {
  require_arg(root_pred.rows() == root_gt.rows() && root_pred.rows() >= 1,
              "rte: trajectory lengths differ or empty");
  require_arg(root_pred.allFinite() && root_gt.allFinite(), "rte: non-finite input");
  double path = 0.0;
  for (Eigen::Index t = 0; t + 1 < root_gt.rows(); ++t)
    path += (root_gt.row(t + 1) - root_gt.row(t)).norm();
  if (path <= 0.0) throw UndefinedMetricError("rte: ground-truth path length is zero");
  const SimilarityTransform f = fit_similarity(root_pred, root_gt, false);
  const double mean_err = mean_row_error(f.apply(root_pred), root_gt);
  return 100.0 * mean_err / path;
}

LocalErrors mpjpe_pve(const Trajectory& pred, const Trajectory& gt, bool root_centered) {
  pred.validate();
  gt.validate();
  require_arg(pred.frames() == gt.frames(), "mpjpe_pve: frame counts differ");
  require_arg(pred.joints.front().rows() == gt.joints.front().rows(),
              "mpjpe_pve: joint counts differ");
  const size_t T = pred.joints.size();
  LocalErrors r;
  double jsum = 0.0;
  for (size_t t = 0; t < T; ++t) {
    MatX3 p = pred.joints[t];
    MatX3 g = gt.joints[t];
    if (root_centered) {
      const Eigen::RowVector3d pr = p.row(0);
      const Eigen::RowVector3d gr = g.row(0);
      p.rowwise() -= pr;
      g.rowwise() -= gr;
    }
    jsum += mean_row_error(p, g);
  }
  r.mpjpe_mm = 1000.0 * jsum / static_cast<double>(T);

  if (pred.has_vertices() && gt.has_vertices()) {
    require_arg(pred.vertices.front().rows() == gt.vertices.front().rows(),
                "mpjpe_pve: vertex counts differ");
    double vsum = 0.0;
    for (size_t t = 0; t < T; ++t) {
      MatX3 p = pred.vertices[t];
      MatX3 g = gt.vertices[t];
      if (root_centered) {
        const Eigen::RowVector3d pr = pred.joints[t].row(0);
        const Eigen::RowVector3d gr = gt.joints[t].row(0);
        p.rowwise() -= pr;
        g.rowwise() -= gr;
      }
      vsum += mean_row_error(p, g);
    }
    r.pve_mm = 1000.0 * vsum / static_cast<double>(T);
  }
  return r;
}

Ground Ground::plane(double h) {
  Ground g;
  g.mode = Mode::Plane;
  g.height = h;
  return g;
}

Ground Ground::point_set(MatX3 pts) {
  Ground g;
  g.mode = Mode::Points;
  g.points = std::move(pts);
  return g;
}

PlausibilityResult plausibility(const FrameSeq& vertices_world, const std::vector<int>& foot_ids,
                                const Ground& ground, double tol) {
  require_arg(!vertices_world.empty(), "plausibility: no frames");
  require_arg(!foot_ids.empty(), "plausibility: empty foot vertex set");
  require_arg(tol >= 0.0, "plausibility: negative tolerance");
  std::optional<scene::PointIndex> index;
  if (ground.mode == Ground::Mode::Points) {
    require_arg(ground.points.rows() >= 1, "plausibility: empty ground point set");
    index.emplace(ground.points);
  }

  const size_t T = vertices_world.size();
  int pen_frames = 0, clear_frames = 0;
  double pen_sum = 0.0, float_sum = 0.0, penmax = 0.0;
  for (size_t t = 0; t < T; ++t) {
    const MatX3& v = vertices_world[t];
    require_arg(v.rows() >= 1, "plausibility: empty vertex frame");
    double min_d = std::numeric_limits<double>::infinity();
    double frame_pen = 0.0;
    int frame_pen_count = 0;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double support = ground.height;
      if (index) support = ground.points(index->nearest(v.row(i).transpose()).index, 1);
      const double d = v(i, 1) - support;
      min_d = std::min(min_d, d);
      penmax = std::max(penmax, -d);
      if (d < -tol) {
        frame_pen += -d;
        ++frame_pen_count;
      }
    }
    if (frame_pen_count > 0) {
      ++pen_frames;
      pen_sum += frame_pen / frame_pen_count;
    } else {
      ++clear_frames;
      float_sum += std::max(0.0, min_d - tol);
    }
  }

  PlausibilityResult r;
  r.coll_percent = 100.0 * pen_frames / static_cast<double>(T);
  r.pen_cm = pen_frames > 0 ? 100.0 * pen_sum / pen_frames : 0.0;
  r.float_cm = clear_frames > 0 ? 100.0 * float_sum / clear_frames : 0.0;
  r.penmax_cm = 100.0 * std::max(0.0, penmax);
  return r;
}

std::optional<double> foot_sliding(const FrameSeq& vertices_world,
                                   const std::vector<int>& foot_ids, double ground_height,
                                   double contact_tol) {
  require_arg(!vertices_world.empty(), "foot_sliding: no frames");
  require_arg(!foot_ids.empty(), "foot_sliding: empty foot vertex set");
  require_arg(contact_tol >= 0.0, "foot_sliding: negative tolerance");
  for (int f : foot_ids)
    require_arg(f >= 0 && f < vertices_world.front().rows(),
                "foot_sliding: foot vertex id out of range");
  double sum = 0.0;
  int count = 0;
  for (size_t t = 0; t + 1 < vertices_world.size(); ++t) {
    const MatX3& a = vertices_world[t];
    const MatX3& b = vertices_world[t + 1];
    for (int f : foot_ids) {
      const double d0 = a(f, 1) - ground_height;
      const double d1 = b(f, 1) - ground_height;
      if (std::abs(d0) <= contact_tol && std::abs(d1) <= contact_tol) {
        const double dx = b(f, 0) - a(f, 0);
        const double dz = b(f, 2) - a(f, 2);
        sum += 1000.0 * std::hypot(dx, dz);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

double jitter(const FrameSeq& joints_world, double fps) {
  require_arg(fps > 0.0, "jitter: fps must be positive");
  const size_t T = joints_world.size();
  if (T < 4) throw UndefinedMetricError("jitter: need at least 4 frames");
  double sum = 0.0;
  long count = 0;
  for (size_t t = 0; t + 3 < T; ++t) {
    const MatX3 jerk = joints_world[t + 3] - 3.0 * joints_world[t + 2] +
                       3.0 * joints_world[t + 1] - joints_world[t];
    sum += jerk.rowwise().norm().sum();
    count += jerk.rows();
  }
  return (sum / static_cast<double>(count)) * fps * fps * fps / 10.0;
}

Prf contact_prf(const Mat& pred, const Mat& gt_labels, double threshold) {
  require_arg(pred.rows() == gt_labels.rows() && pred.cols() == gt_labels.cols(),
              "contact_prf: shape mismatch");
  require_arg(pred.size() > 0, "contact_prf: empty input");
  long tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double g = gt_labels.data()[i];
    require_arg(g == 0.0 || g == 1.0, "contact_prf: GT labels must be binary");
    const bool p = pred.data()[i] > threshold;
    if (p && g == 1.0) ++tp;
    else if (p) ++fp;
    else if (g == 1.0) ++fn;
  }
  Prf r;
  r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : (tp + fn == 0 ? 1.0 : 0.0);
  r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : (tp + fp == 0 ? 1.0 : 0.0);
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double geo_contact_error(const Mat& pred_labels, const Mat& gt_labels,
                         const MatX3& template_vertices, bool one_sided) {
  require_arg(pred_labels.rows() == gt_labels.rows() && pred_labels.cols() == gt_labels.cols(),
              "geo_contact_error: shape mismatch");
  require_arg(pred_labels.size() > 0, "geo_contact_error: empty input");
  require_arg(template_vertices.rows() == pred_labels.cols(),
              "geo_contact_error: template vertex count mismatch");

  double diam = -1.0;
  const auto diameter = [&]() {
    if (diam < 0.0) {
      diam = 0.0;
      for (Eigen::Index i = 0; i < template_vertices.rows(); ++i)
        for (Eigen::Index j = i + 1; j < template_vertices.rows(); ++j)
          diam = std::max(diam, (template_vertices.row(i) - template_vertices.row(j)).norm());
    }
    return diam;
  };
  const auto nearest_in = [&](Eigen::Index v, const std::vector<Eigen::Index>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index u : set)
      best = std::min(best, (template_vertices.row(v) - template_vertices.row(u)).norm());
    return best;
  };

  double fp_sum = 0.0, fn_sum = 0.0;
  long fp_count = 0, fn_count = 0;
  for (Eigen::Index n = 0; n < pred_labels.rows(); ++n) {
    std::vector<Eigen::Index> pred_set, gt_set;
    for (Eigen::Index v = 0; v < pred_labels.cols(); ++v) {
      const double p = pred_labels(n, v), g = gt_labels(n, v);
      require_arg(p == 0.0 || p == 1.0, "geo_contact_error: pred labels must be binary");
      require_arg(g == 0.0 || g == 1.0, "geo_contact_error: GT labels must be binary");
      if (p == 1.0) pred_set.push_back(v);
      if (g == 1.0) gt_set.push_back(v);
    }
    for (Eigen::Index v = 0; v < pred_labels.cols(); ++v) {
      const bool p = pred_labels(n, v) == 1.0, g = gt_labels(n, v) == 1.0;
      if (p && !g) {
        fp_sum += gt_set.empty() ? diameter() : nearest_in(v, gt_set);
        ++fp_count;
      } else if (!p && g) {
        fn_sum += pred_set.empty() ? diameter() : nearest_in(v, pred_set);
        ++fn_count;
      }
    }
  }
  const double dir_p = fp_count > 0 ? fp_sum / fp_count : 0.0;
  const double dir_r = fn_count > 0 ? fn_sum / fn_count : 0.0;
  return 100.0 * (one_sided ? dir_p : 0.5 * (dir_p + dir_r));
}

void ProtocolConfig::validate() const {
  require_arg(segment_length >= 2, "protocol: segment_length must be >= 2");
  require_arg(tolerance >= 0.0, "protocol: negative tolerance");
  require_arg(foot_contact_tol >= 0.0, "protocol: negative foot contact tolerance");
  require_arg(contact_threshold >= 0.0 && contact_threshold <= 1.0,
              "protocol: contact threshold must be in [0,1]");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

FrameSeq slice(const FrameSeq& seq, const Segment& s) {
  return FrameSeq(seq.begin() + s.start, seq.begin() + s.start + s.length);
}

}  // namespace

MetricReport evaluate_bundle(const SequenceBundle& b, const ProtocolConfig& cfg) {
  cfg.validate();
  b.validate();
  MetricReport r;
  r.metadata["segment_length"] = std::to_string(cfg.segment_length);
  r.metadata["tolerance_m"] = fmt_double(cfg.tolerance);
  r.metadata["foot_contact_tol_m"] = fmt_double(cfg.foot_contact_tol);
  r.metadata["contact_threshold"] = fmt_double(cfg.contact_threshold);
  r.metadata["alignment_pa"] = "per_frame_similarity";
  r.metadata["alignment_wa"] = "whole_segment_similarity";
  r.metadata["alignment_w"] = "first_two_frames_rigid";
  r.metadata["rte_normalizer"] = "gt_path_length";
  r.metadata["jitter_unit"] = "10_m_per_s3";
  r.metadata["geo_mode"] = cfg.geo_one_sided ? "one_sided_pred_to_gt" : "symmetric";
  r.metadata["root_joint"] = "0";
  r.metadata["frames"] = std::to_string(b.frames);
  r.metadata["persons"] = std::to_string(b.persons);
  r.metadata["fps"] = fmt_double(b.fps);

  const int N = b.persons;
  std::vector<Trajectory> tp(static_cast<size_t>(N)), tg(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    tp[n].joints = b.pred[n].joints_world;
    tp[n].vertices = b.pred[n].vertices_world;
    tp[n].fps = b.fps;
    tg[n].joints = b.gt[n].joints_world;
    tg[n].vertices = b.gt[n].vertices_world;
    tg[n].fps = b.fps;
  }

  const auto mean_over_persons = [&](const std::function<double(int)>& f) {
    double s = 0.0;
    for (int n = 0; n < N; ++n) s += f(n);
    return s / N;
  };

  const std::vector<Segment> segments = split_segments(tp[0], tg[0], cfg.segment_length);
  if (segments.empty()) {
    r.skipped["wa_mpjpe_mm"] = "sequence shorter than 2 frames";
    r.skipped["w_mpjpe_mm"] = "sequence shorter than 2 frames";
  } else {
    double wa = 0.0, w = 0.0;
    for (int n = 0; n < N; ++n)
      for (const Segment& s : segments) {
        wa += wa_mpjpe(slice(tp[n].joints, s), slice(tg[n].joints, s));
        w += w_mpjpe(slice(tp[n].joints, s), slice(tg[n].joints, s));
      }
    const double denom = static_cast<double>(N) * segments.size();
    r.values["wa_mpjpe_mm"] = wa / denom;
    r.values["w_mpjpe_mm"] = w / denom;
    r.metadata["segments"] = std::to_string(segments.size());
  }

  r.values["pa_mpjpe_mm"] =
      mean_over_persons([&](int n) { return pa_mpjpe(tp[n].joints, tg[n].joints); });

  {
    double sum = 0.0;
    int defined = 0;
    for (int n = 0; n < N; ++n) {
      MatX3 rp(b.frames, 3), rg(b.frames, 3);
      for (int t = 0; t < b.frames; ++t) {
        rp.row(t) = tp[n].joints[static_cast<size_t>(t)].row(0);
        rg.row(t) = tg[n].joints[static_cast<size_t>(t)].row(0);
      }
      try {
        sum += rte(rp, rg);
        ++defined;
      } catch (const UndefinedMetricError&) {
      }
    }
    if (defined > 0)
      r.values["rte_percent"] = sum / defined;
    else
      r.skipped["rte_percent"] = "zero ground-truth path length";
  }

  {
    double mpjpe = 0.0, pve = 0.0;
    bool all_pve = true;
    for (int n = 0; n < N; ++n) {
      const LocalErrors le = mpjpe_pve(tp[n], tg[n], cfg.root_centered);
      mpjpe += le.mpjpe_mm;
      if (le.pve_mm)
        pve += *le.pve_mm;
      else
        all_pve = false;
    }
    r.values["mpjpe_mm"] = mpjpe / N;
    if (all_pve)
      r.values["pve_mm"] = pve / N;
    else
      r.skipped["pve_mm"] = "no vertices in bundle";
    r.metadata["root_centered"] = cfg.root_centered ? "true" : "false";
  }

  const bool have_pred_vertices = !b.pred[0].vertices_world.empty();
  if (have_pred_vertices && !b.foot_vertex_ids.empty()) {
    Ground ground;
    double plane_h = b.ground_height;
    bool ground_ok = true;
    switch (cfg.ground) {
      case ProtocolConfig::GroundMode::PlaneFixed:
        ground = Ground::plane(b.ground_height);
        r.metadata["ground_mode"] = "plane_fixed";
        break;
      case ProtocolConfig::GroundMode::PlaneEstimated: {
        std::vector<double> lowest(static_cast<size_t>(b.frames),
                                   std::numeric_limits<double>::infinity());
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < b.frames; ++t)
            lowest[static_cast<size_t>(t)] =
                std::min(lowest[static_cast<size_t>(t)],
                         tp[n].vertices[static_cast<size_t>(t)].col(1).minCoeff());
        plane_h = scene::estimate_ground_height(lowest);
        ground = Ground::plane(plane_h);
        r.metadata["ground_mode"] = "plane_estimated_from_pred";
        break;
      }
      case ProtocolConfig::GroundMode::Points:
        if (b.scene_points.rows() < 1) {
          ground_ok = false;
          const char* why = "no scene points for point-set ground";
          r.skipped["coll_percent"] = why;
          r.skipped["pen_cm"] = why;
          r.skipped["float_cm"] = why;
          r.skipped["penmax_cm"] = why;
          r.skipped["foot_sliding_mm"] = why;
        } else {
          ground = Ground::point_set(b.scene_points);
          r.metadata["ground_mode"] = "point_set";
        }
        break;
    }
    if (ground_ok) {
      if (ground.mode == Ground::Mode::Plane) r.metadata["ground_height_m"] = fmt_double(plane_h);
      double coll = 0.0, pen = 0.0, flt = 0.0, pmax = 0.0;
      for (int n = 0; n < N; ++n) {
        const PlausibilityResult p =
            plausibility(tp[n].vertices, b.foot_vertex_ids, ground, cfg.tolerance);
        coll += p.coll_percent;
        pen += p.pen_cm;
        flt += p.float_cm;
        pmax += p.penmax_cm;
      }
      r.values["coll_percent"] = coll / N;
      r.values["pen_cm"] = pen / N;
      r.values["float_cm"] = flt / N;
      r.values["penmax_cm"] = pmax / N;

      double slide = 0.0;
      int slide_defined = 0;
      for (int n = 0; n < N; ++n) {
        const auto s =
            foot_sliding(tp[n].vertices, b.foot_vertex_ids, plane_h, cfg.foot_contact_tol);
        if (s) {
          slide += *s;
          ++slide_defined;
        }
      }
      if (slide_defined > 0)
        r.values["foot_sliding_mm"] = slide / slide_defined;
      else
        r.skipped["foot_sliding_mm"] = "no contact frames";
    }
  } else {
    const char* why = have_pred_vertices ? "no foot vertex ids" : "no vertices in bundle";
    r.skipped["coll_percent"] = why;
    r.skipped["pen_cm"] = why;
    r.skipped["float_cm"] = why;
    r.skipped["penmax_cm"] = why;
    r.skipped["foot_sliding_mm"] = why;
  }

  if (b.frames >= 4)
    r.values["jitter_10ms3"] =
        mean_over_persons([&](int n) { return jitter(tp[n].joints, b.fps); });
  else
    r.skipped["jitter_10ms3"] = "fewer than 4 frames";

  const bool have_contact = b.gt[0].contact.size() > 0 && b.pred[0].contact.size() > 0;
  if (have_contact) {
    Mat pred_all(static_cast<Eigen::Index>(N) * b.frames, b.vertices);
    Mat gt_all(pred_all.rows(), pred_all.cols());
    for (int n = 0; n < N; ++n) {
      pred_all.middleRows(static_cast<Eigen::Index>(n) * b.frames, b.frames) = b.pred[n].contact;
      gt_all.middleRows(static_cast<Eigen::Index>(n) * b.frames, b.frames) = b.gt[n].contact;
    }
    const Prf prf = contact_prf(pred_all, gt_all, cfg.contact_threshold);
    r.values["contact_precision"] = prf.precision;
    r.values["contact_recall"] = prf.recall;
    r.values["contact_f1"] = prf.f1;
    if (b.template_vertices.rows() == b.vertices) {
      const Mat pred_bin = pred_all.unaryExpr(
          [&](double v) { return v > cfg.contact_threshold ? 1.0 : 0.0; });
      r.values["geo_cm"] =
          geo_contact_error(pred_bin, gt_all, b.template_vertices, cfg.geo_one_sided);
    } else {
      r.skipped["geo_cm"] = "no template vertices";
    }
  } else {
    r.skipped["contact_precision"] = "no contact channels";
    r.skipped["contact_recall"] = "no contact channels";
    r.skipped["contact_f1"] = "no contact channels";
    r.skipped["geo_cm"] = "no contact channels";
  }

  return r;
}

}  // namespace contact4d::metrics
