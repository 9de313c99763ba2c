#include "contact4d/bundle.hpp"

namespace contact4d {

namespace {

void check_track(const PersonTrack& p, const SequenceBundle& b, const std::string& who) {
  const auto T = static_cast<Eigen::Index>(b.frames);
  require_arg(p.pose.rows() == T && p.pose.cols() == 3 * b.joints,
              who + ": pose must be T x 3J");
  require_arg(p.shape.rows() == T && p.shape.cols() == b.shape_dims,
              who + ": shape must be T x B");
  require_arg(p.expression.rows() == T && p.expression.cols() == b.expr_dims,
              who + ": expression must be T x E");
  require_arg(p.root_trans.rows() == T && p.root_trans.cols() == 3,
              who + ": root translation must be T x 3");
  require_arg(p.anchor.size() == 0 || (p.anchor.rows() == T && p.anchor.cols() == 2),
              who + ": anchor must be T x 2 or empty");
  require_arg(p.joints_world.size() == static_cast<size_t>(b.frames),
              who + ": world joints must have one entry per frame");
  for (const auto& j : p.joints_world) {
    require_arg(j.rows() == b.joints, who + ": world joint count mismatch");
    require_arg(j.allFinite(), who + ": non-finite world joints");
  }
  require_arg(p.vertices_world.empty() || p.vertices_world.size() == static_cast<size_t>(b.frames),
              who + ": world vertices must be empty or one entry per frame");
  for (const auto& v : p.vertices_world) {
    require_arg(v.rows() == b.vertices, who + ": world vertex count mismatch");
    require_arg(v.allFinite(), who + ": non-finite world vertices");
  }
  require_arg(p.contact.size() == 0 || (p.contact.rows() == T && p.contact.cols() == b.vertices),
              who + ": contact must be T x V or empty");
  require_arg(p.pose.allFinite() && p.shape.allFinite() && p.expression.allFinite() &&
                  p.root_trans.allFinite(),
              who + ": non-finite parameters");
  require_arg(p.contact.size() == 0 || p.contact.allFinite(), who + ": non-finite contact");
}

}  // namespace

void SequenceBundle::validate() const {
  require_arg(frames >= 1, "bundle: needs at least one frame");
  require_arg(persons >= 1, "bundle: needs at least one person");
  require_arg(joints >= 1, "bundle: needs at least one joint");
  require_arg(vertices >= 0 && shape_dims >= 0 && expr_dims >= 0, "bundle: negative dimensions");
  require_arg(fps > 0.0, "bundle: fps must be positive");
  require_arg(tau >= 0.0, "bundle: negative contact threshold");
  require_arg(gt.size() == static_cast<size_t>(persons), "bundle: GT track count mismatch");
  require_arg(pred.size() == static_cast<size_t>(persons), "bundle: pred track count mismatch");
  require_arg(template_vertices.rows() == 0 || template_vertices.rows() == vertices,
              "bundle: template vertex count mismatch");
  require_arg(part_map.empty() || part_map.size() == static_cast<size_t>(vertices),
              "bundle: part map size mismatch");
  for (int f : foot_vertex_ids)
    require_arg(f >= 0 && f < vertices, "bundle: foot vertex id out of range");
  require_arg(cameras.empty() || cameras.size() == static_cast<size_t>(frames),
              "bundle: camera count mismatch");
  require_arg(pointmaps.empty() || pointmaps.size() == static_cast<size_t>(frames),
              "bundle: pointmap count mismatch");
  for (int n = 0; n < persons; ++n) {
    check_track(gt[static_cast<size_t>(n)], *this, "bundle GT person " + std::to_string(n));
    check_track(pred[static_cast<size_t>(n)], *this, "bundle pred person " + std::to_string(n));
  }
  for (const auto* channel : {&gt, &pred}) {
    const PersonTrack& first = channel->front();
    for (const PersonTrack& p : *channel) {
      require_arg(p.vertices_world.empty() == first.vertices_world.empty(),
                  "bundle: vertex presence differs across persons");
      require_arg((p.contact.size() == 0) == (first.contact.size() == 0),
                  "bundle: contact presence differs across persons");
      require_arg((p.anchor.size() == 0) == (first.anchor.size() == 0),
                  "bundle: anchor presence differs across persons");
    }
  }
}

}  // namespace contact4d
