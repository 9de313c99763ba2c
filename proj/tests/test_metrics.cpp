#include "contact4d/metrics.hpp"

#include "contact4d/synth.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <vector>

using namespace contact4d;
using metrics::SimilarityTransform;

namespace {

MatX3 random_cloud(Rng& rng, int n, double scale = 1.0) {
  MatX3 m(n, 3);
  for (int i = 0; i < n; ++i)
    m.row(i) << rng.normal(0.0, scale), rng.normal(0.0, scale), rng.normal(0.0, scale);
  return m;
}

Mat3 random_rotation(Rng& rng) {
  const Vec3 axis = Vec3(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)).normalized();
  return Eigen::AngleAxisd(rng.uniform(0.0, M_PI), axis).toRotationMatrix();
}

// Horn's closed form: rotation from the dominant eigenvector of the 4x4
// quaternion matrix. Fully independent of the SVD route in the library.
SimilarityTransform horn_align(const MatX3& src, const MatX3& dst, bool with_scale) {
  const Eigen::RowVector3d mu_s = src.colwise().mean();
  const Eigen::RowVector3d mu_d = dst.colwise().mean();
  const MatX3 a = src.rowwise() - mu_s;
  const MatX3 b = dst.rowwise() - mu_d;
  const Mat3 M = a.transpose() * b;
  Eigen::Matrix4d N;
  const double sxx = M(0, 0), sxy = M(0, 1), sxz = M(0, 2);
  const double syx = M(1, 0), syy = M(1, 1), syz = M(1, 2);
  const double szx = M(2, 0), szy = M(2, 1), szz = M(2, 2);
  N << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
       syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
       szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
       sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(N);
  const Eigen::Vector4d q = es.eigenvectors().col(3);  // largest eigenvalue
  const Eigen::Quaterniond quat(q(0), q(1), q(2), q(3));
  SimilarityTransform t;
  t.rotation = quat.normalized().toRotationMatrix();
  if (with_scale) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      num += b.row(i).dot((t.rotation * a.row(i).transpose()).transpose());
      den += a.row(i).squaredNorm();
    }
    t.scale = den > 0.0 ? num / den : 1.0;
  }
  t.translation = mu_d.transpose() - t.scale * (t.rotation * mu_s.transpose());
  return t;
}

}  // namespace

TEST_CASE("umeyama recovers generated similarity transforms") {
  Rng rng(19);
  for (int trial = 0; trial < 40; ++trial) {
    const MatX3 src = random_cloud(rng, 4 + static_cast<int>(rng.next_u64() % 12));
    const double s = rng.uniform(0.3, 2.5);
    const Mat3 R = random_rotation(rng);
    const Vec3 t(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    MatX3 dst(src.rows(), 3);
    for (Eigen::Index i = 0; i < src.rows(); ++i)
      dst.row(i) = (s * (R * src.row(i).transpose()) + t).transpose();
    const auto got = metrics::umeyama_align(src, dst, true);
    CHECK(std::abs(got.scale - s) < 1e-9 * s);
    CHECK((got.rotation - R).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((got.translation - t).norm() < 1e-9);
  }
}

TEST_CASE("umeyama agrees with Horn's quaternion method") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 3 + static_cast<int>(rng.next_u64() % 10);
    const MatX3 src = random_cloud(rng, n);
    const MatX3 dst = random_cloud(rng, n) * 0.7;
    for (const bool with_scale : {true, false}) {
      const auto a = metrics::fit_similarity(src, dst, with_scale);
      const auto b = horn_align(src, dst, with_scale);
      const double ra = metrics::alignment_residual(a, src, dst);
      const double rb = metrics::alignment_residual(b, src, dst);
      CHECK(ra <= rb + 1e-9 * std::max(1.0, rb));
      CHECK(std::abs(ra - rb) <= 1e-7 * std::max(1.0, rb));
    }
  }
}

TEST_CASE("identical clouds align with the exact identity") {
  Rng rng(29);
  const MatX3 pts = random_cloud(rng, 6);
  const auto t = metrics::fit_similarity(pts, pts, true);
  CHECK(t.scale == 1.0);
  CHECK((t.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.translation.norm() == 0.0);
  CHECK(metrics::alignment_residual(t, pts, pts) == 0.0);
}

TEST_CASE("degenerate alignment inputs are rejected or tolerated by design") {
  MatX3 two(2, 3);
  two << 0, 0, 0, 1, 0, 0;
  CHECK_THROWS_AS(metrics::umeyama_align(two, two, true), ArgumentError);

  MatX3 line(5, 3);
  for (int i = 0; i < 5; ++i) line.row(i) << i, 0.0, 0.0;
  CHECK_THROWS_AS(metrics::umeyama_align(line, line * 2.0, true), DegenerateInputError);

  // The tolerant fit keeps the rotation at identity for collinear clouds.
  MatX3 lifted = line;
  lifted.col(1).array() += 0.7;
  const auto cf = metrics::fit_similarity(line, lifted, false);
  CHECK((cf.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cf.scale == 1.0);
  CHECK((cf.translation - Vec3(0.0, 0.7, 0.0)).norm() < 1e-12);

  MatX3 point = MatX3::Zero(4, 3);
  CHECK_THROWS_AS(metrics::umeyama_align(point, point, true), DegenerateInputError);
  MatX3 moved = point;
  moved.col(0).array() += 3.0;
  const auto t = metrics::fit_similarity(point, moved, true);
  CHECK(metrics::alignment_residual(t, point, moved) == 0.0);

  MatX3 bad = MatX3::Zero(4, 3);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(metrics::umeyama_align(bad, MatX3::Zero(4, 3), true), ArgumentError);
}

TEST_CASE("segment splitting follows the remainder rule") {
  auto traj = [](int T) {
    metrics::Trajectory t;
    t.joints.assign(static_cast<size_t>(T), MatX3::Zero(2, 3));
    return t;
  };
  auto segs = metrics::split_segments(traj(250), traj(250), 100);
  REQUIRE(segs.size() == 3);
  CHECK(segs[2].start == 200);
  CHECK(segs[2].length == 50);
  CHECK(metrics::split_segments(traj(100), traj(100), 100).size() == 1);
  segs = metrics::split_segments(traj(101), traj(101), 100);
  REQUIRE(segs.size() == 1);  // length-1 remainder dropped
  CHECK(segs[0].length == 100);
  CHECK(metrics::split_segments(traj(5), traj(5), 100).size() == 1);
  CHECK_THROWS_AS(metrics::split_segments(traj(4), traj(5), 100), ArgumentError);
}

TEST_CASE("pa-mpjpe is zero under exact per-frame similarity and matches a hand case") {
  Rng rng(31);
  FrameSeq gt, pred;
  for (int t = 0; t < 4; ++t) {
    const MatX3 g = random_cloud(rng, 5);
    gt.push_back(g);
    const Mat3 R = random_rotation(rng);
    MatX3 p(5, 3);
    for (int i = 0; i < 5; ++i)
      p.row(i) = (1.7 * (R * g.row(i).transpose()) + Vec3(0.1 * t, -2, 3)).transpose();
    pred.push_back(p);
  }
  CHECK(metrics::pa_mpjpe(pred, gt) < 1e-6);
  CHECK(metrics::wa_mpjpe(pred, gt) > 1.0);  // one transform cannot undo four

  // Square stretched 2x in x only; by symmetry the optimum keeps R = I and
  // picks s = <pred, gt> / |pred|^2 = 12/20, so each corner misses by
  // (0.2, 0.4) and the error is sqrt(0.2) meters.
  MatX3 square(4, 3), wide(4, 3);
  square << 1, 1, 0, 1, -1, 0, -1, 1, 0, -1, -1, 0;
  wide << 2, 1, 0, 2, -1, 0, -2, 1, 0, -2, -1, 0;
  const double got = metrics::pa_mpjpe({wide}, {square});
  CHECK(got == doctest::Approx(1000.0 * std::sqrt(0.2)).epsilon(1e-9));
}

TEST_CASE("w-mpjpe anchors the fit on the first two frames") {
  Rng rng(37);
  const MatX3 base = random_cloud(rng, 4);
  const Mat3 R = random_rotation(rng);
  const Vec3 off(0.4, -0.1, 0.9);
  FrameSeq gt, rigid, drift;
  const int T = 6;
  for (int t = 0; t < T; ++t) {
    MatX3 g = base;
    g.col(0).array() += 0.05 * t;
    gt.push_back(g);
    MatX3 p(4, 3);
    for (int i = 0; i < 4; ++i) p.row(i) = (R * g.row(i).transpose() + off).transpose();
    rigid.push_back(p);
    MatX3 d = g;
    if (t >= 2) d.col(2).array() += 0.01 * t;
    drift.push_back(d);
  }
  CHECK(metrics::w_mpjpe(rigid, gt) < 1e-6);
  double want = 0.0;
  for (int t = 2; t < T; ++t) want += 0.01 * t;
  want = 1000.0 * want / T;
  CHECK(metrics::w_mpjpe(drift, gt) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("rte matches the closed form for a diverging straight walk") {
  // A collinear ground-truth path pins no rotation, so the fit reduces to
  // centroid alignment and the error is the centered lateral drift.
  const int T = 6;
  const double v = 0.05, drift = 0.02;
  MatX3 gt(T, 3), pred(T, 3);
  for (int t = 0; t < T; ++t) {
    gt.row(t) << v * t, 0.0, 0.0;
    pred.row(t) << v * t, drift * t, 0.0;
  }
  double mean_dev = 0.0;
  for (int t = 0; t < T; ++t) mean_dev += std::abs(t - 0.5 * (T - 1)) * drift / T;
  const double want = 100.0 * mean_dev / ((T - 1) * v);
  CHECK(metrics::rte(pred, gt) == doctest::Approx(want).epsilon(1e-9));

  MatX3 still = MatX3::Zero(T, 3);
  CHECK_THROWS_AS(metrics::rte(pred, still), UndefinedMetricError);
}

TEST_CASE("rigid alignment absorbs a constant trajectory offset") {
  const int T = 101;
  MatX3 gt(T, 3), pred(T, 3);
  for (int t = 0; t < T; ++t) {
    gt.row(t) << 0.1 * t, 0.0, 0.0;
    pred.row(t) << 0.1 * t, 0.0, 0.1;
  }
  CHECK(metrics::rte(pred, gt) < 1e-9);
}

TEST_CASE("root centering cancels uniform offsets in mpjpe and pve") {
  Rng rng(41);
  metrics::Trajectory gt, pred;
  gt.fps = pred.fps = 30.0;
  for (int t = 0; t < 3; ++t) {
    const MatX3 j = random_cloud(rng, 4);
    const MatX3 v = random_cloud(rng, 7);
    gt.joints.push_back(j);
    gt.vertices.push_back(v);
    MatX3 jo = j, vo = v;
    jo.rowwise() += Eigen::RowVector3d(0.05, -0.02, 0.4);
    vo.rowwise() += Eigen::RowVector3d(0.05, -0.02, 0.4);
    pred.joints.push_back(jo);
    pred.vertices.push_back(vo);
  }
  const auto centered = metrics::mpjpe_pve(pred, gt, true);
  CHECK(centered.mpjpe_mm < 1e-9);
  REQUIRE(centered.pve_mm.has_value());
  CHECK(*centered.pve_mm < 1e-9);
  const auto raw = metrics::mpjpe_pve(pred, gt, false);
  const double off = 1000.0 * Vec3(0.05, -0.02, 0.4).norm();
  CHECK(raw.mpjpe_mm == doctest::Approx(off).epsilon(1e-12));
}

TEST_CASE("plausibility reproduces the three constructed scenes") {
  const double h = 0.2, tol = 0.005;
  const std::vector<int> feet = {0};
  auto frame = [&](std::vector<double> ys) {
    MatX3 v(static_cast<Eigen::Index>(ys.size()), 3);
    for (size_t i = 0; i < ys.size(); ++i) v.row(static_cast<Eigen::Index>(i)) << 0.1, ys[i], 0.3;
    return v;
  };

  // resting exactly at h
  FrameSeq rest = {frame({h, h + 0.4}), frame({h, h + 0.3}), frame({h, h + 0.2})};
  auto r = metrics::plausibility(rest, feet, metrics::Ground::plane(h), tol);
  CHECK(r.coll_percent == 0.0);
  CHECK(r.pen_cm == 0.0);
  CHECK(r.float_cm == 0.0);
  CHECK(r.penmax_cm == 0.0);

  // one of five frames dips 2 cm under
  FrameSeq dip = {frame({h, h + 0.1}), frame({h, h + 0.1}), frame({h - 0.02, h + 0.1}),
                  frame({h, h + 0.1}), frame({h, h + 0.1})};
  r = metrics::plausibility(dip, feet, metrics::Ground::plane(h), tol);
  CHECK(r.coll_percent == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(r.pen_cm == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.float_cm == 0.0);
  CHECK(r.penmax_cm == doctest::Approx(2.0).epsilon(1e-9));

  // hovering 10 cm above
  FrameSeq hover = {frame({h + 0.1, h + 0.5}), frame({h + 0.1, h + 0.4})};
  r = metrics::plausibility(hover, feet, metrics::Ground::plane(h), tol);
  CHECK(r.coll_percent == 0.0);
  CHECK(r.float_cm == doctest::Approx(9.5).epsilon(1e-9));
  CHECK(r.penmax_cm == 0.0);
}

TEST_CASE("point-set ground uses the nearest support height") {
  // two terraces: y=0 near x=0, y=0.3 near x=2
  MatX3 scene(2, 3);
  scene << 0, 0, 0, 2, 0.3, 0;
  MatX3 v(2, 3);
  v << 0.1, 0.02, 0.0,   // 2 cm over the low terrace
       1.9, 0.25, 0.0;   // 5 cm under the high terrace
  const auto r =
      metrics::plausibility({v}, {0}, metrics::Ground::point_set(scene), 0.005);
  CHECK(r.coll_percent == 100.0);
  CHECK(r.pen_cm == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(r.penmax_cm == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(r.float_cm == 0.0);
}

TEST_CASE("foot sliding averages horizontal motion over contact pairs") {
  const double h = 0.0;
  FrameSeq seq;
  for (int t = 0; t < 4; ++t) {
    MatX3 v(2, 3);
    v.row(0) << 0.003 * t, 0.002, 0.0;  // grounded, slides 3 mm per frame
    v.row(1) << 0.0, 0.5, 0.0;          // airborne
    seq.push_back(v);
  }
  const auto s = metrics::foot_sliding(seq, {0, 1}, h, 0.005);
  REQUIRE(s.has_value());
  CHECK(*s == doctest::Approx(3.0).epsilon(1e-9));

  FrameSeq airborne(seq);
  for (auto& v : airborne) v.col(1).array() += 1.0;
  CHECK_FALSE(metrics::foot_sliding(airborne, {0, 1}, h, 0.005).has_value());
}

TEST_CASE("jitter vanishes on quadratics and matches the cubic closed form") {
  FrameSeq quad, cubic;
  for (int t = 0; t < 8; ++t) {
    MatX3 q(2, 3), c(2, 3);
    const double td = t;
    q.row(0) << 0.25 * td * td + 2.0 * td, -0.5 * td * td, 4.0;
    q.row(1) << 0.125 * td * td, 8.0 * td, td * td;
    c.row(0) << td * td * td, 0.0, 0.0;
    c.row(1) << 0.0, 2.0 * td * td * td, 0.0;
    quad.push_back(q);
    cubic.push_back(c);
  }
  CHECK(metrics::jitter(quad, 30.0) == 0.0);
  // third difference of t^3 is exactly 6; per-joint norms 6 and 12
  const double want = 0.5 * (6.0 + 12.0) * (2.0 * 2.0 * 2.0) / 10.0;
  CHECK(metrics::jitter(cubic, 2.0) == doctest::Approx(want).epsilon(1e-12));
  CHECK_THROWS_AS(metrics::jitter(FrameSeq(3, MatX3::Zero(1, 3)), 30.0), UndefinedMetricError);
}

TEST_CASE("contact prf matches a confusion-matrix oracle") {
  Rng rng(47);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2, v = 20;
    Mat pred(n, v), gt(n, v);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      pred.data()[i] = rng.uniform();
      gt.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    long tp = 0, fp = 0, fn = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      const bool p = pred.data()[i] > 0.5, g = gt.data()[i] == 1.0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const auto r = metrics::contact_prf(pred, gt, 0.5);
    const double wp = (tp + fp) > 0 ? double(tp) / double(tp + fp) : (tp + fn ? 0.0 : 1.0);
    const double wr = (tp + fn) > 0 ? double(tp) / double(tp + fn) : (tp + fp ? 0.0 : 1.0);
    CHECK(r.precision == doctest::Approx(wp).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(wr).epsilon(1e-12));
    const double wf = (wp + wr) > 0 ? 2 * wp * wr / (wp + wr) : 0.0;
    CHECK(r.f1 == doctest::Approx(wf).epsilon(1e-12));
  }
}

TEST_CASE("contact prf edge conventions") {
  Mat zeros = Mat::Zero(1, 4), ones = Mat::Ones(1, 4);
  auto r = metrics::contact_prf(zeros, zeros, 0.5);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);
  r = metrics::contact_prf(zeros, ones, 0.5);
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  r = metrics::contact_prf(ones, zeros, 0.5);
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  // binarization is strictly greater-than
  Mat half = Mat::Constant(1, 4, 0.5);
  r = metrics::contact_prf(half, zeros, 0.5);
  CHECK(r.precision == 1.0);
  Mat bad = zeros;
  bad(0, 1) = 0.5;
  CHECK_THROWS_AS(metrics::contact_prf(zeros, bad, 0.5), ArgumentError);
}

TEST_CASE("geo contact error matches a brute oracle and its hand case") {
  Rng rng(53);
  const int V = 9;
  const MatX3 tmpl = random_cloud(rng, V, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    Mat pred(2, V), gt(2, V);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      pred.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      gt.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    double diam = 0.0;
    for (int i = 0; i < V; ++i)
      for (int j = 0; j < V; ++j)
        diam = std::max(diam, (tmpl.row(i) - tmpl.row(j)).norm());
    double fp_sum = 0, fn_sum = 0;
    long fp_n = 0, fn_n = 0;
    for (int n = 0; n < 2; ++n)
      for (int v = 0; v < V; ++v) {
        const bool p = pred(n, v) == 1.0, g = gt(n, v) == 1.0;
        if (p == g) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int u = 0; u < V; ++u) {
          const bool ref = p ? gt(n, u) == 1.0 : pred(n, u) == 1.0;
          if (ref) best = std::min(best, (tmpl.row(v) - tmpl.row(u)).norm());
        }
        if (!std::isfinite(best)) best = diam;
        (p ? fp_sum : fn_sum) += best;
        ++(p ? fp_n : fn_n);
      }
    const double dir_p = fp_n ? fp_sum / fp_n : 0.0;
    const double dir_r = fn_n ? fn_sum / fn_n : 0.0;
    const double want = 100.0 * 0.5 * (dir_p + dir_r);
    CHECK(metrics::geo_contact_error(pred, gt, tmpl) == doctest::Approx(want).epsilon(1e-12));
    CHECK(metrics::geo_contact_error(pred, gt, tmpl, true) ==
          doctest::Approx(100.0 * dir_p).epsilon(1e-12));
  }

  // single FP 3 cm from the only GT contact, no FNs -> (3 + 0) / 2 = 1.5 cm
  MatX3 line(3, 3);
  line << 0, 0, 0, 0.03, 0, 0, 0.5, 0, 0;
  Mat p1(1, 3), g1(1, 3);
  p1 << 1, 1, 0;
  g1 << 1, 0, 0;
  CHECK(metrics::geo_contact_error(p1, g1, line) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("geo error charges the diameter when a side has no reference") {
  MatX3 tmpl(3, 3);
  tmpl << 0, 0, 0, 1, 0, 0, 0, 2, 0;  // diameter sqrt(5)
  Mat pred(1, 3), gt(1, 3);
  pred << 1, 0, 0;
  gt << 0, 0, 0;
  const double diam = std::sqrt(5.0);
  CHECK(metrics::geo_contact_error(pred, gt, tmpl) ==
        doctest::Approx(100.0 * 0.5 * diam).epsilon(1e-12));
}

TEST_CASE("per-frame alignment never loses to the whole-segment transform") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    const int T = 5, J = 4;
    FrameSeq gt, pred;
    for (int t = 0; t < T; ++t) {
      gt.push_back(random_cloud(rng, J));
      pred.push_back(random_cloud(rng, J));
    }
    MatX3 all_p(T * J, 3), all_g(T * J, 3);
    for (int t = 0; t < T; ++t) {
      all_p.middleRows(t * J, J) = pred[static_cast<size_t>(t)];
      all_g.middleRows(t * J, J) = gt[static_cast<size_t>(t)];
    }
    const auto whole = metrics::fit_similarity(all_p, all_g, true);
    for (int t = 0; t < T; ++t) {
      const auto per = metrics::fit_similarity(pred[static_cast<size_t>(t)],
                                               gt[static_cast<size_t>(t)], true);
      const double r_per =
          metrics::alignment_residual(per, pred[static_cast<size_t>(t)], gt[static_cast<size_t>(t)]);
      const double r_whole = metrics::alignment_residual(whole, pred[static_cast<size_t>(t)],
                                                         gt[static_cast<size_t>(t)]);
      CHECK(r_per <= r_whole + 1e-9 * std::max(1.0, r_whole));
    }
  }
}

TEST_CASE("evaluate_bundle agrees with the brute oracles on sampled bundles") {
  for (int i = 0; i < 5; ++i) {
    synth::SynthConfig sc;
    sc.frames = 4 + i;
    sc.persons = 1 + i % 2;
    sc.motion = static_cast<synth::Motion>(i % 4);
    sc.terrain = static_cast<synth::Terrain>(i % 3);
    sc.noise_pose = 0.05;
    sc.noise_trans = 0.01;
    sc.noise_joints = 0.01;
    sc.contact_flip_prob = 0.1;
    sc.seed = 500 + static_cast<std::uint64_t>(i);
    sc.pointmap_rows = 8;
    sc.pointmap_cols = 9;
    const auto tmpl = body::build_template(4, 3, 42 + static_cast<std::uint64_t>(i));
    const auto b = synth::gen_sequence(sc, tmpl);
    metrics::ProtocolConfig pc;
    pc.segment_length = 3;
    if (i == 2) pc.ground = metrics::ProtocolConfig::GroundMode::Points;
    if (i == 3) pc.ground = metrics::ProtocolConfig::GroundMode::PlaneFixed;
    const auto fast = metrics::evaluate_bundle(b, pc);
    const auto brute = synth::brute_oracles(b, pc, 4000);
    REQUIRE(fast.values.size() == brute.values.size());
    for (const auto& [key, val] : fast.values) {
      REQUIRE(brute.values.count(key) == 1);
      const double bv = brute.values.at(key);
      INFO("bundle " << i << " key " << key);
      CHECK(std::abs(val - bv) <= 1e-9 * std::max({std::abs(val), std::abs(bv), 1.0}));
    }
    CHECK(fast.skipped == brute.skipped);
  }
}

TEST_CASE("evaluate_bundle skips metrics it cannot compute and says why") {
  synth::SynthConfig sc;
  sc.frames = 3;
  sc.motion = synth::Motion::Stand;
  const auto tmpl = body::build_template(3, 3, 9);
  auto b = synth::gen_sequence(sc, tmpl);
  for (auto& track : b.pred) track.vertices_world.clear();
  for (auto& track : b.gt) track.vertices_world.clear();
  for (auto& track : b.pred) track.contact = Mat();
  for (auto& track : b.gt) track.contact = Mat();
  b.validate();
  const auto rep = metrics::evaluate_bundle(b, {});
  CHECK(rep.values.count("mpjpe_mm") == 1);
  CHECK(rep.values.count("pve_mm") == 0);
  CHECK(rep.skipped.at("pve_mm") == "no vertices in bundle");
  CHECK(rep.skipped.count("coll_percent") == 1);
  CHECK(rep.skipped.count("contact_f1") == 1);
  CHECK(rep.skipped.at("rte_percent") == "zero ground-truth path length");
  CHECK(rep.values.count("jitter_10ms3") == 0);  // stand keeps joints still, but T=3 skips first
  CHECK(rep.skipped.at("jitter_10ms3") == "fewer than 4 frames");
  CHECK(rep.metadata.at("root_joint") == "0");
}

TEST_CASE("trajectory validation rejects inconsistent shapes") {
  metrics::Trajectory t;
  t.joints = {MatX3::Zero(3, 3), MatX3::Zero(4, 3)};
  CHECK_THROWS_AS(t.validate(), ArgumentError);
  t.joints = {MatX3::Zero(3, 3), MatX3::Zero(3, 3)};
  CHECK_NOTHROW(t.validate());
  t.vertices = {MatX3::Zero(5, 3)};
  CHECK_THROWS_AS(t.validate(), ArgumentError);
}
