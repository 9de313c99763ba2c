#pragma once

#include "contact4d/bundle.hpp"
#include "contact4d/common.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace contact4d::metrics {

struct Trajectory {
  FrameSeq joints;    // T entries of J x 3, meters
  FrameSeq vertices;  // empty, or T entries of V x 3
  double fps = 30.0;

  int frames() const { return static_cast<int>(joints.size()); }
  bool has_vertices() const { return !vertices.empty(); }
  void validate() const;
};

struct Segment {
  int start = 0;
  int length = 0;
};

// Non-overlapping consecutive spans of seg_len frames; a final remainder is
// kept when it has at least 2 frames, otherwise dropped.
std::vector<Segment> split_segments(const Trajectory& pred, const Trajectory& gt,
                                    int seg_len = 100);

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  MatX3 apply(const MatX3& points) const;
};

// Strict closed-form least-squares similarity: requires M >= 3 and a
// covariance of rank >= 2, else throws DegenerateInputError.
SimilarityTransform umeyama_align(const MatX3& src, const MatX3& dst, bool with_scale);

// Tolerant fit used inside the metrics: never throws on degenerate inputs.
// A rank-deficient covariance (collinear or coincident clouds) keeps the
// rotation at identity and aligns centroids only, and the identity transform
// wins whenever the fit does not beat it (so identical clouds align with
// exactly zero residual).
SimilarityTransform fit_similarity(const MatX3& src, const MatX3& dst, bool with_scale);

double alignment_residual(const SimilarityTransform& t, const MatX3& src, const MatX3& dst);

// Per-frame similarity alignment, mean joint error, averaged over frames.
double pa_mpjpe(const FrameSeq& pred, const FrameSeq& gt);  // mm

// One similarity alignment over all joints of all frames of the segment.
double wa_mpjpe(const FrameSeq& pred, const FrameSeq& gt);  // mm

// Rigid alignment fit on the first two frames only, applied to the segment.
double w_mpjpe(const FrameSeq& pred, const FrameSeq& gt);  // mm

// Rigid full-trajectory alignment; mean root error as a percentage of the
// ground-truth path length. Zero path length -> UndefinedMetricError.
double rte(const MatX3& root_pred, const MatX3& root_gt);  // percent

struct LocalErrors {
  double mpjpe_mm = 0.0;
  std::optional<double> pve_mm;
};

LocalErrors mpjpe_pve(const Trajectory& pred, const Trajectory& gt, bool root_centered = true);

struct Ground {
  enum class Mode { Plane, Points };
  Mode mode = Mode::Plane;
  double height = 0.0;  // plane mode
  MatX3 points;         // point-set mode

  static Ground plane(double h);
  static Ground point_set(MatX3 pts);
};

struct PlausibilityResult {
  double coll_percent = 0.0;
  double pen_cm = 0.0;
  double float_cm = 0.0;
  double penmax_cm = 0.0;
};

// Signed height d = vertex height minus local support height. A frame
// penetrates when any vertex has d < -tol. All vertices participate;
// foot ids are validated for interface parity with the contact metrics.
PlausibilityResult plausibility(const FrameSeq& vertices_world, const std::vector<int>& foot_ids,
                                const Ground& ground, double tol = 0.005);

// Mean horizontal displacement (mm) of foot vertices between consecutive
// frames in which that vertex stays within contact_tol of the ground.
// No contact pair anywhere -> absent.
std::optional<double> foot_sliding(const FrameSeq& vertices_world,
                                   const std::vector<int>& foot_ids, double ground_height,
                                   double contact_tol = 0.005);

// Mean third-finite-difference magnitude scaled by fps^3, in units of
// 10 m/s^3. Requires at least 4 frames.
double jitter(const FrameSeq& joints_world, double fps);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Pooled over all rows and vertices; binarized at threshold. Conventions:
// no predicted positives -> precision 1 when no GT positives else 0, and
// symmetrically for recall; F1 = 0 when P + R = 0.
Prf contact_prf(const Mat& pred, const Mat& gt_labels, double threshold = 0.5);

// Rest-template distance from false positives to the nearest GT-contact
// vertex and from false negatives to the nearest predicted-contact vertex,
// averaged over the two directions (or FP direction only when one_sided).
// An empty reference set charges the template diameter per offending vertex.
double geo_contact_error(const Mat& pred_labels, const Mat& gt_labels,
                         const MatX3& template_vertices, bool one_sided = false);  // cm

struct ProtocolConfig {
  int segment_length = 100;
  double tolerance = 0.005;          // plausibility tolerance, m
  double foot_contact_tol = 0.005;   // contact band for foot sliding, m
  double contact_threshold = 0.5;    // contact binarization
  enum class GroundMode { PlaneEstimated, PlaneFixed, Points };
  GroundMode ground = GroundMode::PlaneEstimated;
  bool geo_one_sided = false;
  bool root_centered = true;

  void validate() const;
};

struct MetricReport {
  std::map<std::string, double> values;         // unit embedded in the key
  std::map<std::string, std::string> metadata;  // protocol choices
  std::map<std::string, std::string> skipped;   // metric -> reason
};

// Runs segment splitting and every metric the bundle supports; anything
// lacking inputs lands in `skipped` with a reason, never as a silent zero.
MetricReport evaluate_bundle(const SequenceBundle& bundle, const ProtocolConfig& cfg = {});

}  // namespace contact4d::metrics
