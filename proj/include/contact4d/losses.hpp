#pragma once

#include "contact4d/body.hpp"
#include "contact4d/common.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace contact4d::loss {

struct LossConfig {
  double lambda_c = 1.0;
  double lambda_p = 0.5;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  // Term weights for the body loss; 0 disables a term.
  double w_param = 1.0;
  double w_vertex = 1.0;
  double w_joint = 1.0;
  double w_reproj = 1.0;

  void validate() const;
};

struct CameraIntrinsics {
  double fx = 1000.0, fy = 1000.0;
  double cx = 500.0, cy = 500.0;
};

// Alpha-balanced focal binary cross-entropy over logits, mean over all
// entries. Evaluated in log-sum-exp form, stable for large |logit|.
double focal_bce(const Mat& logits, const Mat& labels, double gamma, double alpha);

// d focal_bce / d logits, same reduction.
Mat focal_bce_grad(const Mat& logits, const Mat& labels, double gamma, double alpha);

// DECO-style part pooling: per part, max over vertex probabilities and max
// over labels, then mean BCE over the pooled pairs. Empty parts are skipped.
double part_level_loss(const Mat& probs, const Mat& labels, const std::vector<int>& part_map);

Mat part_level_loss_grad(const Mat& probs, const Mat& labels, const std::vector<int>& part_map);

double contact_loss(const Mat& logits, const Mat& labels, const std::vector<int>& part_map,
                    const LossConfig& cfg);

// d contact_loss / d logits (part term chained through the sigmoid).
Mat contact_loss_grad(const Mat& logits, const Mat& labels, const std::vector<int>& part_map,
                      const LossConfig& cfg);

// One person's predicted or ground-truth body with derived geometry in the
// camera frame.
struct BodyFrame {
  body::BodyParams params;
  MatX3 vertices;  // V x 3
  MatX3 joints;    // J x 3
};

struct SmplxLossResult {
  double total = 0.0;
  double param = 0.0;
  double vertex = 0.0;
  double joint = 0.0;
  double reproj = 0.0;
  int joints_behind_camera = 0;
};

SmplxLossResult smplx_loss(const BodyFrame& pred, const BodyFrame& gt,
                           const CameraIntrinsics& intr, const LossConfig& cfg);

// Pluggable slot for the inherited 4D reconstruction losses; defaults to 0.
using FourDLossFn = std::function<double()>;

struct FramePrediction {
  std::vector<BodyFrame> bodies;
  Mat contact_logits;  // N x V
};

struct FrameTruth {
  std::vector<BodyFrame> bodies;
  Mat contact_labels;  // N x V, binary
};

struct TotalLossResult {
  double total = 0.0;
  std::map<std::string, double> breakdown;  // entries sum to total
};

TotalLossResult total_loss(const FramePrediction& pred, const FrameTruth& gt,
                           const std::vector<int>& part_map, const CameraIntrinsics& intr,
                           const LossConfig& cfg, const FourDLossFn& l4d = nullptr);

}  // namespace contact4d::loss
