#include "contact4d/losses.hpp"

#include <algorithm>
#include <cmath>

namespace contact4d::loss {

namespace {

constexpr double kProbEps = 1e-7;  // clamp inside logs

double clamped_log(double p) { return std::log(std::max(p, kProbEps)); }

void check_pair(const Mat& a, const Mat& b, const char* what) {
  require_arg(a.rows() == b.rows() && a.cols() == b.cols(), std::string(what) + ": shape mismatch");
  require_arg(a.size() > 0, std::string(what) + ": empty input");
}

void check_labels(const Mat& labels, const char* what) {
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double y = labels.data()[i];
    require_arg(y == 0.0 || y == 1.0, std::string(what) + ": labels must be binary");
  }
}

}  // namespace

void LossConfig::validate() const {
  require_arg(lambda_c >= 0.0 && lambda_p >= 0.0, "loss config: weights must be >= 0");
  require_arg(focal_gamma >= 0.0, "loss config: focal_gamma must be >= 0");
  require_arg(focal_alpha >= 0.0 && focal_alpha <= 1.0, "loss config: focal_alpha in [0,1]");
  require_arg(w_param >= 0.0 && w_vertex >= 0.0 && w_joint >= 0.0 && w_reproj >= 0.0,
              "loss config: term weights must be >= 0");
}

double focal_bce(const Mat& logits, const Mat& labels, double gamma, double alpha) {
  check_pair(logits, labels, "focal_bce");
  check_labels(labels, "focal_bce");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double s = logits.data()[i];
    const double y = labels.data()[i];
    const double log_p = log_sigmoid(s);
    const double log_q = log_sigmoid(-s);  // log(1 - p)
    if (y == 1.0) {
      const double one_minus_p = sigmoid(-s);
      sum += -alpha * std::pow(one_minus_p, gamma) * log_p;
    } else {
      const double p = sigmoid(s);
      sum += -(1.0 - alpha) * std::pow(p, gamma) * log_q;
    }
  }
  return sum / static_cast<double>(logits.size());
}

Mat focal_bce_grad(const Mat& logits, const Mat& labels, double gamma, double alpha) {
  check_pair(logits, labels, "focal_bce_grad");
  Mat grad(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double s = logits.data()[i];
    const double y = labels.data()[i];
    const double p = sigmoid(s);
    const double q = 1.0 - p;
    double g;
    if (y == 1.0) {
      // l = -alpha (1-p)^g log p
      g = alpha * gamma * p * std::pow(q, gamma) * log_sigmoid(s) - alpha * std::pow(q, gamma + 1.0);
    } else {
      // l = -(1-alpha) p^g log(1-p)
      g = -(1.0 - alpha) * gamma * q * std::pow(p, gamma) * log_sigmoid(-s) +
          (1.0 - alpha) * std::pow(p, gamma + 1.0);
    }
    grad.data()[i] = g * inv_n;
  }
  return grad;
}

namespace {

int num_parts(const std::vector<int>& part_map) {
  int p = 0;
  for (int v : part_map) p = std::max(p, v + 1);
  return p;
}

}  // namespace

double part_level_loss(const Mat& probs, const Mat& labels, const std::vector<int>& part_map) {
  check_pair(probs, labels, "part_level_loss");
  check_labels(labels, "part_level_loss");
  require_arg(static_cast<Eigen::Index>(part_map.size()) == probs.cols(),
              "part_level_loss: part_map size must equal vertex count");
  const int P = num_parts(part_map);
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    for (int p = 0; p < P; ++p) {
      double q = -1.0, y = 0.0;
      for (Eigen::Index v = 0; v < probs.cols(); ++v) {
        if (part_map[static_cast<size_t>(v)] != p) continue;
        q = std::max(q, probs(n, v));
        y = std::max(y, labels(n, v));
      }
      if (q < 0.0) continue;  // empty part
      sum += -(y * clamped_log(q) + (1.0 - y) * clamped_log(1.0 - q));
      ++count;
    }
  }
  require_arg(count > 0, "part_level_loss: all parts empty");
  return sum / static_cast<double>(count);
}

Mat part_level_loss_grad(const Mat& probs, const Mat& labels, const std::vector<int>& part_map) {
  check_pair(probs, labels, "part_level_loss_grad");
  const int P = num_parts(part_map);
  Mat grad = Mat::Zero(probs.rows(), probs.cols());

  // First pass: count non-empty parts for the mean.
  std::vector<int> part_size(static_cast<size_t>(P), 0);
  for (int v : part_map) part_size[static_cast<size_t>(v)]++;
  int nonempty = 0;
  for (int c : part_size)
    if (c > 0) ++nonempty;
  require_arg(nonempty > 0, "part_level_loss_grad: all parts empty");
  const double inv_count = 1.0 / static_cast<double>(nonempty * probs.rows());

  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    for (int p = 0; p < P; ++p) {
      if (part_size[static_cast<size_t>(p)] == 0) continue;
      double q = -1.0, y = 0.0;
      Eigen::Index argmax = -1;
      for (Eigen::Index v = 0; v < probs.cols(); ++v) {
        if (part_map[static_cast<size_t>(v)] != p) continue;
        if (probs(n, v) > q) {
          q = probs(n, v);
          argmax = v;
        }
        y = std::max(y, labels(n, v));
      }
      double dq = 0.0;
      if (y == 1.0) {
        if (q >= kProbEps) dq = -1.0 / q;
      } else {
        if (1.0 - q >= kProbEps) dq = 1.0 / (1.0 - q);
      }
      grad(n, argmax) += dq * inv_count;
    }
  }
  return grad;
}

double contact_loss(const Mat& logits, const Mat& labels, const std::vector<int>& part_map,
                    const LossConfig& cfg) {
  cfg.validate();
  double l = focal_bce(logits, labels, cfg.focal_gamma, cfg.focal_alpha);
  if (cfg.lambda_p != 0.0) {
    const Mat probs = logits.unaryExpr([](double s) { return sigmoid(s); });
    l += cfg.lambda_p * part_level_loss(probs, labels, part_map);
  }
  return l;
}

Mat contact_loss_grad(const Mat& logits, const Mat& labels, const std::vector<int>& part_map,
                      const LossConfig& cfg) {
  cfg.validate();
  Mat grad = focal_bce_grad(logits, labels, cfg.focal_gamma, cfg.focal_alpha);
  if (cfg.lambda_p != 0.0) {
    const Mat probs = logits.unaryExpr([](double s) { return sigmoid(s); });
    const Mat dprobs = part_level_loss_grad(probs, labels, part_map);
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      const double p = probs.data()[i];
      grad.data()[i] += cfg.lambda_p * dprobs.data()[i] * p * (1.0 - p);
    }
  }
  return grad;
}

SmplxLossResult smplx_loss(const BodyFrame& pred, const BodyFrame& gt,
                           const CameraIntrinsics& intr, const LossConfig& cfg) {
  cfg.validate();
  require_arg(pred.vertices.rows() == gt.vertices.rows(), "smplx_loss: vertex count mismatch");
  require_arg(pred.joints.rows() == gt.joints.rows(), "smplx_loss: joint count mismatch");
  require_arg(pred.params.pose.rows() == gt.params.pose.rows(), "smplx_loss: pose size mismatch");
  require_arg(pred.params.shape.size() == gt.params.shape.size(),
              "smplx_loss: shape size mismatch");

  SmplxLossResult r;

  if (cfg.w_param > 0.0) {
    double sum = (pred.params.pose - gt.params.pose).squaredNorm();
    sum += (pred.params.shape - gt.params.shape).squaredNorm();
    sum += (pred.params.expression - gt.params.expression).squaredNorm();
    sum += (pred.params.root_trans_cam - gt.params.root_trans_cam).squaredNorm();
    const double n = static_cast<double>(pred.params.pose.size() + pred.params.shape.size() +
                                         pred.params.expression.size() + 3);
    r.param = sum / n;
  }
  if (cfg.w_vertex > 0.0 && pred.vertices.rows() > 0)
    r.vertex = (pred.vertices - gt.vertices).rowwise().squaredNorm().mean();
  if (cfg.w_joint > 0.0 && pred.joints.rows() > 0)
    r.joint = (pred.joints - gt.joints).rowwise().squaredNorm().mean();

  if (cfg.w_reproj > 0.0 && pred.joints.rows() > 0) {
    double sum = 0.0;
    int used = 0;
    for (Eigen::Index j = 0; j < pred.joints.rows(); ++j) {
      const Vec3 a = pred.joints.row(j);
      const Vec3 b = gt.joints.row(j);
      if (a.z() <= 1e-6 || b.z() <= 1e-6) {
        ++r.joints_behind_camera;
        continue;
      }
      const double du = (intr.fx * a.x() / a.z() + intr.cx) - (intr.fx * b.x() / b.z() + intr.cx);
      const double dv = (intr.fy * a.y() / a.z() + intr.cy) - (intr.fy * b.y() / b.z() + intr.cy);
      sum += std::abs(du) + std::abs(dv);
      ++used;
    }
    if (used > 0) r.reproj = sum / static_cast<double>(used);
  }

  r.total = cfg.w_param * r.param + cfg.w_vertex * r.vertex + cfg.w_joint * r.joint +
            cfg.w_reproj * r.reproj;
  return r;
}

TotalLossResult total_loss(const FramePrediction& pred, const FrameTruth& gt,
                           const std::vector<int>& part_map, const CameraIntrinsics& intr,
                           const LossConfig& cfg, const FourDLossFn& l4d) {
  require_arg(pred.bodies.size() == gt.bodies.size(), "total_loss: person count mismatch");
  TotalLossResult out;

  const double four_d = l4d ? l4d() : 0.0;
  out.breakdown["l4d"] = four_d;

  double smplx = 0.0;
  for (size_t n = 0; n < pred.bodies.size(); ++n)
    smplx += smplx_loss(pred.bodies[n], gt.bodies[n], intr, cfg).total;
  if (!pred.bodies.empty()) smplx /= static_cast<double>(pred.bodies.size());
  out.breakdown["smplx"] = smplx;

  double contact = 0.0;
  if (cfg.lambda_c != 0.0 && pred.contact_logits.size() > 0)
    contact = cfg.lambda_c * contact_loss(pred.contact_logits, gt.contact_labels, part_map, cfg);
  out.breakdown["contact"] = contact;

  out.total = four_d + smplx + contact;
  return out;
}

}  // namespace contact4d::loss
