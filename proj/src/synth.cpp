#include "contact4d/synth.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace contact4d::synth {

namespace {
constexpr double kPi = std::numbers::pi;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}
}  // namespace

void SynthConfig::validate() const {
  require_arg(frames >= 1, "synth: frames must be >= 1");
  require_arg(persons >= 1, "synth: persons must be >= 1");
  require_arg(fps > 0.0, "synth: fps must be positive");
  require_arg(noise_pose >= 0.0 && noise_trans >= 0.0 && noise_joints >= 0.0,
              "synth: negative noise amplitude");
  require_arg(contact_flip_prob >= 0.0 && contact_flip_prob <= 1.0,
              "synth: contact flip probability must be in [0,1]");
  require_arg(drift_per_frame >= 0.0, "synth: negative drift");
  require_arg(walk_speed >= 0.0, "synth: negative walk speed");
  require_arg(tau > 0.0, "synth: tau must be positive");
  require_arg(pointmap_rows >= 7 && pointmap_cols >= 7,
              "synth: pointmap grid must be at least 7x7 to leave pooling margin");
  require_arg(scene_spacing > 0.0, "synth: scene spacing must be positive");
}

std::string to_string(Terrain t) {
  switch (t) {
    case Terrain::Flat: return "flat";
    case Terrain::Stepped: return "stepped";
    case Terrain::Ramp: return "ramp";
  }
  return "flat";
}

std::string to_string(Motion m) {
  switch (m) {
    case Motion::Stand: return "stand";
    case Motion::Walk: return "walk";
    case Motion::Hop: return "hop";
    case Motion::Drift: return "drift";
  }
  return "stand";
}

Terrain terrain_from_string(const std::string& s) {
  if (s == "flat") return Terrain::Flat;
  if (s == "stepped") return Terrain::Stepped;
  if (s == "ramp") return Terrain::Ramp;
  throw ArgumentError("synth: unknown terrain '" + s + "'");
}

Motion motion_from_string(const std::string& s) {
  if (s == "stand") return Motion::Stand;
  if (s == "walk") return Motion::Walk;
  if (s == "hop") return Motion::Hop;
  if (s == "drift") return Motion::Drift;
  throw ArgumentError("synth: unknown motion '" + s + "'");
}

double terrain_height(Terrain t, double base, double x, double /*z*/) {
  switch (t) {
    case Terrain::Flat: return base;
    case Terrain::Stepped: return base + 0.08 * std::floor(std::max(0.0, x) / 0.6);
    case Terrain::Ramp: return base + 0.08 * x;
  }
  return base;
}

Vec contact_oracle(const MatX3& vertices_world, const scene::PointIndex& index, double tau) {
  require_arg(tau > 0.0, "contact_oracle: tau must be positive");
  require_arg(index.size() >= 1, "contact_oracle: empty scene");
  Vec out(vertices_world.rows());
  for (Eigen::Index v = 0; v < vertices_world.rows(); ++v)
    out[v] = index.nearest(vertices_world.row(v).transpose()).distance <= tau ? 1.0 : 0.0;
  return out;
}

namespace {

body::CameraPose look_at(const Vec3& eye, const Vec3& target) {
  Vec3 fwd = target - eye;
  if (fwd.norm() < 1e-12) fwd = Vec3(0, 0, 1);
  fwd.normalize();
  Vec3 right = Vec3(0, 1, 0).cross(fwd);
  if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
  right.normalize();
  const Vec3 up = fwd.cross(right);
  body::CameraPose cam;
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = up;
  cam.rotation.col(2) = fwd;
  cam.translation = eye;
  return cam;
}

struct PathPoint {
  double x = 0.0;
  double z = 0.0;
  double lift = 0.0;
};

PathPoint path_point(const SynthConfig& cfg, int person, int frame) {
  PathPoint p;
  const double t = static_cast<double>(frame);
  switch (cfg.motion) {
    case Motion::Stand:
      p.x = 0.5 * person;
      p.z = 0.4 * person;
      break;
    case Motion::Hop: {
      p.x = 0.5 * person;
      p.z = 0.4 * person;
      const double period = std::max(4.0, cfg.fps / 2.0);
      p.lift = 0.15 * std::max(0.0, std::sin(2.0 * kPi * t / period));
      break;
    }
    case Motion::Walk: {
      const double r = 1.2 + 0.3 * person;
      const double th = 2.0 * kPi * person / cfg.persons + cfg.walk_speed / r * t;
      p.x = r * std::cos(th);
      p.z = r * std::sin(th);
      break;
    }
    case Motion::Drift:
      p.x = cfg.walk_speed * t;
      p.z = 0.4 * person;
      break;
  }
  return p;
}

Mat gt_pose(const SynthConfig& cfg, int person, int frame, int joints) {
  Mat pose = Mat::Zero(joints, 3);
  for (int j = 1; j < joints; ++j) pose(j, 2) = 0.04 * (j % 3 - 1);
  const double t = static_cast<double>(frame);
  const double phase = 2.0 * kPi * person / cfg.persons;
  if (cfg.motion == Motion::Walk) {
    for (int j = 1; j < joints; ++j)
      pose(j, 0) += 0.25 * std::sin(2.0 * kPi * t / 16.0 + phase) * (j % 2 ? 1.0 : -1.0);
  } else if (cfg.motion == Motion::Hop) {
    const double period = std::max(4.0, cfg.fps / 2.0);
    const double crouch = 0.15 * std::max(0.0, std::sin(2.0 * kPi * t / period));
    for (int j = 1; j < joints; ++j) pose(j, 0) += crouch * (j % 2 ? 1.0 : -1.0);
  }
  return pose;
}

Mat flatten_pose(const Mat& pose) {
  Mat row(1, pose.rows() * 3);
  for (Eigen::Index j = 0; j < pose.rows(); ++j)
    for (int k = 0; k < 3; ++k) row(0, 3 * j + k) = pose(j, k);
  return row;
}

}  // namespace

SequenceBundle gen_sequence(const SynthConfig& cfg, const body::BodyTemplate& tmpl) {
  cfg.validate();
  tmpl.validate();
  const int T = cfg.frames, N = cfg.persons;
  const int J = tmpl.joint_count(), V = tmpl.vertex_count();

  double x0 = 1e300, x1 = -1e300, z0 = 1e300, z1 = -1e300;
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t) {
      const PathPoint p = path_point(cfg, n, t);
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      z0 = std::min(z0, p.z);
      z1 = std::max(z1, p.z);
    }
  x0 -= 1.6;
  x1 += 1.6;
  z0 -= 1.6;
  z1 += 1.6;

  const auto lattice = [&](int nx, int nz) {
    MatX3 pts(static_cast<Eigen::Index>(nx) * nz, 3);
    Eigen::Index i = 0;
    for (int r = 0; r < nz; ++r)
      for (int c = 0; c < nx; ++c, ++i) {
        const double x = x0 + (x1 - x0) * c / (nx - 1);
        const double z = z0 + (z1 - z0) * r / (nz - 1);
        pts.row(i) << x, terrain_height(cfg.terrain, cfg.base_height, x, z), z;
      }
    return pts;
  };
  const auto axis_count = [&](double lo, double hi) {
    return std::clamp(static_cast<int>(std::floor((hi - lo) / cfg.scene_spacing)) + 1, 2, 400);
  };
  const MatX3 scene_points = lattice(axis_count(x0, x1), axis_count(z0, z1));
  const scene::PointIndex scene_index(scene_points);

  scene::Pointmap pm;
  pm.height = cfg.pointmap_rows;
  pm.width = cfg.pointmap_cols;
  pm.points = lattice(cfg.pointmap_cols, cfg.pointmap_rows);
  pm.valid.assign(static_cast<size_t>(pm.height) * pm.width, 1);
  pm.frame = scene::Frame::World;

  SequenceBundle b;
  b.name = "synth-" + to_string(cfg.motion) + "-" + to_string(cfg.terrain) + "-s" +
           std::to_string(cfg.seed);
  b.fps = cfg.fps;
  b.tau = cfg.tau;
  b.ground_height = cfg.base_height;
  b.frames = T;
  b.persons = N;
  b.joints = J;
  b.vertices = V;
  b.shape_dims = J;
  b.expr_dims = 0;
  b.template_vertices = tmpl.rest_vertices;
  b.foot_vertex_ids = tmpl.foot_vertex_ids;
  b.part_map = tmpl.part_map;
  b.scene_points = scene_points;
  b.pointmaps.assign(static_cast<size_t>(T), pm);
  b.cameras.resize(static_cast<size_t>(T));
  b.gt.resize(static_cast<size_t>(N));
  b.pred.resize(static_cast<size_t>(N));

  Vec3 center(0.5 * (x0 + x1), cfg.base_height + 1.0, 0.5 * (z0 + z1));
  for (int t = 0; t < T; ++t) {
    Vec3 eye;
    const bool orbit =
        cfg.orbit_camera && (cfg.motion == Motion::Walk || cfg.motion == Motion::Hop);
    if (orbit)
      eye = center + Vec3(4.0 * std::cos(0.012 * t + 0.4), 2.2, 4.0 * std::sin(0.012 * t + 0.4));
    else
      eye = center + Vec3(3.2, 2.2, 3.4);
    b.cameras[static_cast<size_t>(t)] = look_at(eye, center);
  }

  const Vec3 j0 = tmpl.rest_joints.row(0).transpose();
  const double px = (x1 - x0) / (pm.width - 1);
  const double pz = (z1 - z0) / (pm.height - 1);

  for (int n = 0; n < N; ++n) {
    PersonTrack& g = b.gt[static_cast<size_t>(n)];
    g.pose.resize(T, 3 * J);
    g.shape.resize(T, J);
    g.expression.resize(T, 0);
    g.root_trans.resize(T, 3);
    g.anchor.resize(T, 2);
    g.joints_world.resize(static_cast<size_t>(T));
    g.vertices_world.resize(static_cast<size_t>(T));
    g.contact.resize(T, V);

    Rng shape_rng(hash_combine(cfg.seed, hash_combine(0x53, static_cast<std::uint64_t>(n))));
    Vec shape(J);
    for (int k = 0; k < J; ++k) shape[k] = shape_rng.uniform(-0.08, 0.08);

    for (int t = 0; t < T; ++t) {
      const PathPoint p = path_point(cfg, n, t);
      const double support = terrain_height(cfg.terrain, cfg.base_height, p.x, p.z);
      const body::CameraPose& cam = b.cameras[static_cast<size_t>(t)];

      body::BodyParams params = body::BodyParams::zero(J, J, 0);
      params.pose = gt_pose(cfg, n, t, J);
      params.shape = shape;
      const Vec3 guess(p.x, support + p.lift + 1.0, p.z);
      params.root_trans_cam = cam.rotation.transpose() * (guess - cam.translation) - j0;

      body::SkinnedFrame sf = body::lbs_forward(tmpl, params);
      body::SkinnedFrame world = body::compose_world(sf.vertices, sf.joints, cam);
      // Exact vertical pin in world space: the lowest vertex lands on the
      // support height bit-for-bit, which the zero-noise fixed point needs.
      const double shift = (support + p.lift) - world.vertices.col(1).minCoeff();
      world.vertices.col(1).array() += shift;
      world.joints.col(1).array() += shift;
      params.root_trans_cam += cam.rotation.transpose() * Vec3(0.0, shift, 0.0);

      g.pose.row(t) = flatten_pose(params.pose);
      g.shape.row(t) = shape.transpose();
      g.root_trans.row(t) = params.root_trans_cam.transpose();
      g.anchor(t, 0) = std::clamp((p.x - x0) / px, 3.0, static_cast<double>(pm.width - 4));
      g.anchor(t, 1) = std::clamp((p.z - z0) / pz, 3.0, static_cast<double>(pm.height - 4));
      g.joints_world[static_cast<size_t>(t)] = world.joints;
      g.vertices_world[static_cast<size_t>(t)] = world.vertices;
      g.contact.row(t) = contact_oracle(world.vertices, scene_index, cfg.tau).transpose();
    }
  }

  const bool param_noise = cfg.noise_pose > 0.0 || cfg.noise_trans > 0.0;
  Rng noise_rng(hash_combine(cfg.seed, 0xA11CE));
  Rng flip_rng(hash_combine(cfg.seed, 0xF11B));
  for (int n = 0; n < N; ++n) {
    const PersonTrack& g = b.gt[static_cast<size_t>(n)];
    PersonTrack& q = b.pred[static_cast<size_t>(n)];
    q = g;
    if (param_noise) {
      for (int t = 0; t < T; ++t) {
        body::BodyParams params = body::BodyParams::zero(J, J, 0);
        for (int j = 0; j < J; ++j)
          for (int k = 0; k < 3; ++k)
            params.pose(j, k) = g.pose(t, 3 * j + k) + noise_rng.normal(0.0, cfg.noise_pose);
        params.shape = g.shape.row(t).transpose();
        for (int k = 0; k < 3; ++k)
          params.root_trans_cam[k] = g.root_trans(t, k) + noise_rng.normal(0.0, cfg.noise_trans);
        q.pose.row(t) = flatten_pose(params.pose);
        q.root_trans.row(t) = params.root_trans_cam.transpose();
        const body::CameraPose& cam = b.cameras[static_cast<size_t>(t)];
        body::SkinnedFrame sf = body::lbs_forward(tmpl, params);
        body::SkinnedFrame world = body::compose_world(sf.vertices, sf.joints, cam);
        q.joints_world[static_cast<size_t>(t)] = world.joints;
        q.vertices_world[static_cast<size_t>(t)] = world.vertices;
      }
    }
    if (cfg.noise_joints > 0.0) {
      for (int t = 0; t < T; ++t) {
        MatX3& jw = q.joints_world[static_cast<size_t>(t)];
        for (Eigen::Index j = 0; j < jw.rows(); ++j)
          for (int k = 0; k < 3; ++k) jw(j, k) += noise_rng.normal(0.0, cfg.noise_joints);
      }
    }
    if (cfg.motion == Motion::Drift) {
      for (int t = 0; t < T; ++t) {
        const double dy = cfg.drift_per_frame * t;
        q.joints_world[static_cast<size_t>(t)].col(1).array() += dy;
        q.vertices_world[static_cast<size_t>(t)].col(1).array() += dy;
        const body::CameraPose& cam = b.cameras[static_cast<size_t>(t)];
        q.root_trans.row(t) += (cam.rotation.transpose() * Vec3(0.0, dy, 0.0)).transpose();
      }
    }
    if (cfg.contact_flip_prob > 0.0) {
      for (int t = 0; t < T; ++t)
        for (int v = 0; v < V; ++v)
          if (flip_rng.uniform() < cfg.contact_flip_prob)
            q.contact(t, v) = 1.0 - q.contact(t, v);
    }
  }

  b.meta["generator"] = "synth-v1";
  b.meta["motion"] = to_string(cfg.motion);
  b.meta["terrain"] = to_string(cfg.terrain);
  b.meta["seed"] = std::to_string(cfg.seed);
  b.meta["tau_m"] = fmt_double(cfg.tau);
  b.meta["noise_pose_rad"] = fmt_double(cfg.noise_pose);
  b.meta["noise_trans_m"] = fmt_double(cfg.noise_trans);
  b.meta["noise_joints_m"] = fmt_double(cfg.noise_joints);
  b.meta["contact_flip_prob"] = fmt_double(cfg.contact_flip_prob);
  b.meta["drift_per_frame_m"] = fmt_double(cfg.motion == Motion::Drift ? cfg.drift_per_frame : 0.0);
  b.meta["walk_speed_m"] = fmt_double(cfg.walk_speed);
  b.meta["base_height_m"] = fmt_double(cfg.base_height);
  b.validate();
  return b;
}

namespace {

// Quaternion (Horn) closed-form similarity fit plus random candidate
// search. Independent of the SVD path in the metrics module.
struct BruteFit {
  double s = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

double brute_residual(const BruteFit& f, const std::vector<Vec3>& src,
                      const std::vector<Vec3>& dst) {
  double r = 0.0;
  for (size_t i = 0; i < src.size(); ++i) r += (f.s * (f.R * src[i]) + f.t - dst[i]).squaredNorm();
  return r;
}

Mat3 quat_to_rot(double w, double x, double y, double z) {
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

BruteFit brute_fit(const std::vector<Vec3>& src, const std::vector<Vec3>& dst, bool with_scale,
                   int starts, Rng& rng) {
  const double m = static_cast<double>(src.size());
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= m;
  mu_d /= m;
  Mat3 M = Mat3::Zero();
  double den = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - mu_s;
    const Vec3 bb = dst[i] - mu_d;
    M += a * bb.transpose();
    den += a.squaredNorm();
  }

  // A rank-deficient correspondence admits a whole family of optimal
  // rotations; the protocol settles on centroid alignment there, so the
  // candidate search must stay out of it as well.
  bool degenerate = !(den > 0.0);
  if (!degenerate) {
    Eigen::JacobiSVD<Mat3> msvd(M);
    const Vec3 d = msvd.singularValues();
    degenerate = d(1) <= 1e-9 * d(0);
  }

  BruteFit best;
  if (!degenerate) {
    Eigen::Matrix4d N;
    const double sxx = M(0, 0), sxy = M(0, 1), sxz = M(0, 2);
    const double syx = M(1, 0), syy = M(1, 1), syz = M(1, 2);
    const double szx = M(2, 0), szy = M(2, 1), szz = M(2, 2);
    N << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(N);
    const Eigen::Vector4d q = eig.eigenvectors().col(3);
    best.R = quat_to_rot(q(0), q(1), q(2), q(3));
    if (with_scale) {
      double num = 0.0;
      for (size_t i = 0; i < src.size(); ++i)
        num += (dst[i] - mu_d).dot(best.R * (src[i] - mu_s));
      best.s = num / den;
    }
  }
  best.t = mu_d - best.s * (best.R * mu_s);
  double best_r = brute_residual(best, src, dst);
  const Mat3 R0 = best.R;
  const double s0 = best.s;

  static constexpr double kMag[4] = {1.2, 0.4, 0.05, 0.005};
  const int search = degenerate ? 0 : starts;
  for (int k = 0; k < search; ++k) {
    const double mag = kMag[k % 4];
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Vec3(1, 0, 0);
    axis.normalize();
    BruteFit cand;
    cand.R = body::axis_angle_to_matrix(axis * rng.normal(0.0, mag)) * R0;
    cand.s = with_scale ? s0 * std::exp(rng.normal(0.0, 0.5 * mag)) : 1.0;
    cand.t = mu_d - cand.s * (cand.R * mu_s);
    const double r = brute_residual(cand, src, dst);
    if (r < best_r) {
      best = cand;
      best_r = r;
    }
  }
  return best;
}

std::vector<Vec3> seq_rows(const FrameSeq& seq, size_t start, size_t count) {
  std::vector<Vec3> out;
  for (size_t t = start; t < start + count; ++t)
    for (Eigen::Index i = 0; i < seq[t].rows(); ++i) out.push_back(seq[t].row(i).transpose());
  return out;
}

double mean_fit_error(const BruteFit& f, const std::vector<Vec3>& src,
                      const std::vector<Vec3>& dst) {
  double sum = 0.0;
  for (size_t i = 0; i < src.size(); ++i) sum += (f.s * (f.R * src[i]) + f.t - dst[i]).norm();
  return sum / static_cast<double>(src.size());
}

double naive_percentile10(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double rank = 0.10 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v[lo];
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

double naive_support(const metrics::Ground& g, const Vec3& p) {
  if (g.mode == metrics::Ground::Mode::Plane) return g.height;
  double best = 1e300;
  Eigen::Index arg = 0;
  for (Eigen::Index i = 0; i < g.points.rows(); ++i) {
    const double d = (g.points.row(i).transpose() - p).squaredNorm();
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  return g.points(arg, 1);
}

}  // namespace

metrics::MetricReport brute_oracles(const SequenceBundle& b, const metrics::ProtocolConfig& cfg,
                                    int starts) {
  cfg.validate();
  b.validate();
  require_arg(b.frames <= 10, "brute_oracles: bundle too long (T <= 10)");
  require_arg(b.joints <= 4, "brute_oracles: too many joints (J <= 4)");
  require_arg(b.vertices <= 20, "brute_oracles: too many vertices (V <= 20)");
  require_arg(starts >= 0, "brute_oracles: negative start count");

  metrics::MetricReport r;
  r.metadata["oracle"] = "brute";
  const int N = b.persons, T = b.frames;
  Rng rng(0xB1713u);

  const auto fit_mm = [&](const FrameSeq& p, const FrameSeq& g, size_t start, size_t count,
                          bool with_scale) {
    const std::vector<Vec3> src = seq_rows(p, start, count);
    const std::vector<Vec3> dst = seq_rows(g, start, count);
    const BruteFit f = brute_fit(src, dst, with_scale, starts, rng);
    return 1000.0 * mean_fit_error(f, src, dst);
  };

  struct Seg {
    int start, length;
  };
  std::vector<Seg> segs;
  {
    int start = 0;
    while (start + cfg.segment_length <= T) {
      segs.push_back({start, cfg.segment_length});
      start += cfg.segment_length;
    }
    if (T - start >= 2) segs.push_back({start, T - start});
  }

  if (segs.empty()) {
    r.skipped["wa_mpjpe_mm"] = "sequence shorter than 2 frames";
    r.skipped["w_mpjpe_mm"] = "sequence shorter than 2 frames";
  } else {
    double wa = 0.0, w = 0.0;
    for (int n = 0; n < N; ++n) {
      const FrameSeq& jp = b.pred[static_cast<size_t>(n)].joints_world;
      const FrameSeq& jg = b.gt[static_cast<size_t>(n)].joints_world;
      for (const Seg& s : segs) {
        wa += fit_mm(jp, jg, static_cast<size_t>(s.start), static_cast<size_t>(s.length), true);
        const size_t nfit = std::min<size_t>(2, static_cast<size_t>(s.length));
        const std::vector<Vec3> fs = seq_rows(jp, static_cast<size_t>(s.start), nfit);
        const std::vector<Vec3> fd = seq_rows(jg, static_cast<size_t>(s.start), nfit);
        const BruteFit f = brute_fit(fs, fd, false, starts, rng);
        const std::vector<Vec3> as = seq_rows(jp, static_cast<size_t>(s.start),
                                              static_cast<size_t>(s.length));
        const std::vector<Vec3> ad = seq_rows(jg, static_cast<size_t>(s.start),
                                              static_cast<size_t>(s.length));
        w += 1000.0 * mean_fit_error(f, as, ad);
      }
    }
    const double denom = static_cast<double>(N) * segs.size();
    r.values["wa_mpjpe_mm"] = wa / denom;
    r.values["w_mpjpe_mm"] = w / denom;
  }

  {
    double pa = 0.0;
    for (int n = 0; n < N; ++n) {
      const FrameSeq& jp = b.pred[static_cast<size_t>(n)].joints_world;
      const FrameSeq& jg = b.gt[static_cast<size_t>(n)].joints_world;
      double sum = 0.0;
      for (int t = 0; t < T; ++t) sum += fit_mm(jp, jg, static_cast<size_t>(t), 1, true);
      pa += sum / T;
    }
    r.values["pa_mpjpe_mm"] = pa / N;
  }

  {
    double sum = 0.0;
    int defined = 0;
    for (int n = 0; n < N; ++n) {
      std::vector<Vec3> rp, rg;
      for (int t = 0; t < T; ++t) {
        rp.push_back(b.pred[static_cast<size_t>(n)].joints_world[static_cast<size_t>(t)]
                         .row(0).transpose());
        rg.push_back(b.gt[static_cast<size_t>(n)].joints_world[static_cast<size_t>(t)]
                         .row(0).transpose());
      }
      double path = 0.0;
      for (int t = 0; t + 1 < T; ++t) path += (rg[static_cast<size_t>(t) + 1] - rg[static_cast<size_t>(t)]).norm();
      if (path <= 0.0) continue;
      const BruteFit f = brute_fit(rp, rg, false, starts, rng);
      sum += 100.0 * mean_fit_error(f, rp, rg) / path;
      ++defined;
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
      const PersonTrack& p = b.pred[static_cast<size_t>(n)];
      const PersonTrack& g = b.gt[static_cast<size_t>(n)];
      double jsum = 0.0;
      for (int t = 0; t < T; ++t) {
        const MatX3& jp = p.joints_world[static_cast<size_t>(t)];
        const MatX3& jg = g.joints_world[static_cast<size_t>(t)];
        double fsum = 0.0;
        for (Eigen::Index j = 0; j < jp.rows(); ++j) {
          Vec3 dp = jp.row(j).transpose(), dg = jg.row(j).transpose();
          if (cfg.root_centered) {
            dp -= jp.row(0).transpose();
            dg -= jg.row(0).transpose();
          }
          fsum += (dp - dg).norm();
        }
        jsum += fsum / static_cast<double>(jp.rows());
      }
      mpjpe += 1000.0 * jsum / T;
      if (p.vertices_world.empty() || g.vertices_world.empty()) {
        all_pve = false;
        continue;
      }
      double vsum = 0.0;
      for (int t = 0; t < T; ++t) {
        const MatX3& vp = p.vertices_world[static_cast<size_t>(t)];
        const MatX3& vg = g.vertices_world[static_cast<size_t>(t)];
        double fsum = 0.0;
        for (Eigen::Index v = 0; v < vp.rows(); ++v) {
          Vec3 dp = vp.row(v).transpose(), dg = vg.row(v).transpose();
          if (cfg.root_centered) {
            dp -= p.joints_world[static_cast<size_t>(t)].row(0).transpose();
            dg -= g.joints_world[static_cast<size_t>(t)].row(0).transpose();
          }
          fsum += (dp - dg).norm();
        }
        vsum += fsum / static_cast<double>(vp.rows());
      }
      pve += 1000.0 * vsum / T;
    }
    r.values["mpjpe_mm"] = mpjpe / N;
    if (all_pve)
      r.values["pve_mm"] = pve / N;
    else
      r.skipped["pve_mm"] = "no vertices in bundle";
  }

  const bool have_pred_vertices = !b.pred[0].vertices_world.empty();
  if (have_pred_vertices && !b.foot_vertex_ids.empty()) {
    metrics::Ground ground;
    double plane_h = b.ground_height;
    bool ground_ok = true;
    switch (cfg.ground) {
      case metrics::ProtocolConfig::GroundMode::PlaneFixed:
        ground = metrics::Ground::plane(b.ground_height);
        break;
      case metrics::ProtocolConfig::GroundMode::PlaneEstimated: {
        std::vector<double> lowest;
        for (int t = 0; t < T; ++t) {
          double lo = 1e300;
          for (int n = 0; n < N; ++n) {
            const MatX3& v = b.pred[static_cast<size_t>(n)].vertices_world[static_cast<size_t>(t)];
            for (Eigen::Index i = 0; i < v.rows(); ++i) lo = std::min(lo, v(i, 1));
          }
          lowest.push_back(lo);
        }
        plane_h = naive_percentile10(lowest);
        ground = metrics::Ground::plane(plane_h);
        break;
      }
      case metrics::ProtocolConfig::GroundMode::Points:
        if (b.scene_points.rows() < 1) {
          ground_ok = false;
          const char* why = "no scene points for point-set ground";
          r.skipped["coll_percent"] = why;
          r.skipped["pen_cm"] = why;
          r.skipped["float_cm"] = why;
          r.skipped["penmax_cm"] = why;
          r.skipped["foot_sliding_mm"] = why;
        } else {
          ground = metrics::Ground::point_set(b.scene_points);
        }
        break;
    }
    if (ground_ok) {
      double coll = 0.0, pen = 0.0, flt = 0.0, pmax = 0.0;
      for (int n = 0; n < N; ++n) {
        const FrameSeq& verts = b.pred[static_cast<size_t>(n)].vertices_world;
        int pen_frames = 0, clear_frames = 0;
        double pen_sum = 0.0, float_sum = 0.0, worst = 0.0;
        for (int t = 0; t < T; ++t) {
          const MatX3& v = verts[static_cast<size_t>(t)];
          double min_d = 1e300, frame_pen = 0.0;
          int cnt = 0;
          for (Eigen::Index i = 0; i < v.rows(); ++i) {
            const double d = v(i, 1) - naive_support(ground, v.row(i).transpose());
            min_d = std::min(min_d, d);
            worst = std::max(worst, -d);
            if (d < -cfg.tolerance) {
              frame_pen += -d;
              ++cnt;
            }
          }
          if (cnt > 0) {
            ++pen_frames;
            pen_sum += frame_pen / cnt;
          } else {
            ++clear_frames;
            float_sum += std::max(0.0, min_d - cfg.tolerance);
          }
        }
        coll += 100.0 * pen_frames / static_cast<double>(T);
        pen += pen_frames > 0 ? 100.0 * pen_sum / pen_frames : 0.0;
        flt += clear_frames > 0 ? 100.0 * float_sum / clear_frames : 0.0;
        pmax += 100.0 * std::max(0.0, worst);
      }
      r.values["coll_percent"] = coll / N;
      r.values["pen_cm"] = pen / N;
      r.values["float_cm"] = flt / N;
      r.values["penmax_cm"] = pmax / N;

      double slide = 0.0;
      int slide_defined = 0;
      for (int n = 0; n < N; ++n) {
        const FrameSeq& verts = b.pred[static_cast<size_t>(n)].vertices_world;
        double sum = 0.0;
        int count = 0;
        for (int t = 0; t + 1 < T; ++t)
          for (int f : b.foot_vertex_ids) {
            const double d0 = verts[static_cast<size_t>(t)](f, 1) - plane_h;
            const double d1 = verts[static_cast<size_t>(t) + 1](f, 1) - plane_h;
            if (std::abs(d0) <= cfg.foot_contact_tol && std::abs(d1) <= cfg.foot_contact_tol) {
              const double dx = verts[static_cast<size_t>(t) + 1](f, 0) - verts[static_cast<size_t>(t)](f, 0);
              const double dz = verts[static_cast<size_t>(t) + 1](f, 2) - verts[static_cast<size_t>(t)](f, 2);
              sum += 1000.0 * std::sqrt(dx * dx + dz * dz);
              ++count;
            }
          }
        if (count > 0) {
          slide += sum / count;
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

  if (T >= 4) {
    double jit = 0.0;
    for (int n = 0; n < N; ++n) {
      const FrameSeq& joints = b.pred[static_cast<size_t>(n)].joints_world;
      double sum = 0.0;
      long count = 0;
      for (int t = 0; t + 3 < T; ++t)
        for (Eigen::Index j = 0; j < joints[0].rows(); ++j) {
          double d2 = 0.0;
          for (int k = 0; k < 3; ++k) {
            const double jerk = joints[static_cast<size_t>(t) + 3](j, k) -
                                3.0 * joints[static_cast<size_t>(t) + 2](j, k) +
                                3.0 * joints[static_cast<size_t>(t) + 1](j, k) -
                                joints[static_cast<size_t>(t)](j, k);
            d2 += jerk * jerk;
          }
          sum += std::sqrt(d2);
          ++count;
        }
      jit += (sum / static_cast<double>(count)) * b.fps * b.fps * b.fps / 10.0;
    }
    r.values["jitter_10ms3"] = jit / N;
  } else {
    r.skipped["jitter_10ms3"] = "fewer than 4 frames";
  }

  const bool have_contact = b.gt[0].contact.size() > 0 && b.pred[0].contact.size() > 0;
  if (have_contact) {
    long tp = 0, fp = 0, fn = 0;
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < T; ++t)
        for (int v = 0; v < b.vertices; ++v) {
          const bool p = b.pred[static_cast<size_t>(n)].contact(t, v) > cfg.contact_threshold;
          const bool g = b.gt[static_cast<size_t>(n)].contact(t, v) == 1.0;
          if (p && g) ++tp;
          else if (p) ++fp;
          else if (g) ++fn;
        }
    const double prec =
        (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : (tp + fn == 0 ? 1.0 : 0.0);
    const double rec =
        (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : (tp + fp == 0 ? 1.0 : 0.0);
    r.values["contact_precision"] = prec;
    r.values["contact_recall"] = rec;
    r.values["contact_f1"] = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;

    if (b.template_vertices.rows() == b.vertices) {
      double diam = 0.0;
      for (Eigen::Index i = 0; i < b.template_vertices.rows(); ++i)
        for (Eigen::Index j = i + 1; j < b.template_vertices.rows(); ++j)
          diam = std::max(diam,
                          (b.template_vertices.row(i) - b.template_vertices.row(j)).norm());
      double fp_sum = 0.0, fn_sum = 0.0;
      long fp_count = 0, fn_count = 0;
      for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t) {
          std::vector<int> ps, gs;
          for (int v = 0; v < b.vertices; ++v) {
            if (b.pred[static_cast<size_t>(n)].contact(t, v) > cfg.contact_threshold)
              ps.push_back(v);
            if (b.gt[static_cast<size_t>(n)].contact(t, v) == 1.0) gs.push_back(v);
          }
          const auto nearest = [&](int v, const std::vector<int>& set) {
            double bestd = 1e300;
            for (int u : set)
              bestd = std::min(bestd,
                               (b.template_vertices.row(v) - b.template_vertices.row(u)).norm());
            return bestd;
          };
          for (int v = 0; v < b.vertices; ++v) {
            const bool p = b.pred[static_cast<size_t>(n)].contact(t, v) > cfg.contact_threshold;
            const bool g = b.gt[static_cast<size_t>(n)].contact(t, v) == 1.0;
            if (p && !g) {
              fp_sum += gs.empty() ? diam : nearest(v, gs);
              ++fp_count;
            } else if (!p && g) {
              fn_sum += ps.empty() ? diam : nearest(v, ps);
              ++fn_count;
            }
          }
        }
      const double dir_p = fp_count > 0 ? fp_sum / fp_count : 0.0;
      const double dir_r = fn_count > 0 ? fn_sum / fn_count : 0.0;
      r.values["geo_cm"] = 100.0 * (cfg.geo_one_sided ? dir_p : 0.5 * (dir_p + dir_r));
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

}  // namespace contact4d::synth
