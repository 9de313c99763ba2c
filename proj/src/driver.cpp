#include "contact4d/driver.hpp"

#include "contact4d/synth.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <iterator>
#include <mutex>
#include <set>
#include <string>
#include <thread>

namespace contact4d::driver {

namespace {

std::uint64_t meta_u64(const SequenceBundle& b, const std::string& key) {
  const auto it = b.meta.find(key);
  if (it == b.meta.end())
    throw ArgumentError("bundle meta lacks '" + key + "'; regenerate it with the synth command");
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ArgumentError("bundle meta '" + key + "' is not an unsigned integer: " + it->second);
  }
}

void require_dims_match(const SequenceBundle& b, const pipeline::PipelineConfig& pc) {
  if (pc.joint_count == b.joints && pc.vertex_count == b.vertices &&
      pc.shape_dims == b.shape_dims && pc.expr_dims == b.expr_dims)
    return;
  throw ArgumentError(
      "weights were built for J=" + std::to_string(pc.joint_count) + " V=" +
      std::to_string(pc.vertex_count) + " B=" + std::to_string(pc.shape_dims) + " E=" +
      std::to_string(pc.expr_dims) + " but the bundle carries J=" + std::to_string(b.joints) +
      " V=" + std::to_string(b.vertices) + " B=" + std::to_string(b.shape_dims) +
      " E=" + std::to_string(b.expr_dims));
}

std::vector<pipeline::FrameInput> frames_from_bundle(const SequenceBundle& b,
                                                     const pipeline::PipelineConfig& pc) {
  for (const auto& track : b.gt)
    if (track.anchor.rows() != b.frames)
      throw ArgumentError("bundle has no anchor tracks; the pipeline needs per-person detections");
  std::vector<pipeline::FrameInput> frames(static_cast<size_t>(b.frames));
  for (int t = 0; t < b.frames; ++t) {
    auto& fi = frames[static_cast<size_t>(t)];
    fi.image_tokens = pipeline::make_image_tokens(pc.image_tokens, t, pc.provider_seed, pc.width);
    fi.anchors.resize(static_cast<size_t>(b.persons));
    for (int n = 0; n < b.persons; ++n) {
      fi.anchors[static_cast<size_t>(n)].pixel = b.gt[static_cast<size_t>(n)].anchor.row(t).transpose();
      fi.anchors[static_cast<size_t>(n)].person = n;
    }
    fi.camera = b.cameras[static_cast<size_t>(t)];
    if (!b.pointmaps.empty()) fi.pointmap = b.pointmaps[static_cast<size_t>(t)];
  }
  return frames;
}

}  // namespace

body::BodyTemplate template_for_config(const io::RunConfig& cfg) {
  body::BuildOptions opts;
  opts.total_vertices = cfg.pipeline.vertex_count;
  const int vpb = std::max(1, cfg.pipeline.vertex_count / cfg.pipeline.joint_count);
  return body::build_template(vpb, cfg.pipeline.joint_count, cfg.seed, opts);
}

body::BodyTemplate template_from_meta(const SequenceBundle& b) {
  body::BuildOptions opts;
  opts.total_vertices = static_cast<int>(meta_u64(b, "template_total_vertices"));
  return body::build_template(static_cast<int>(meta_u64(b, "template_v_per_bone")),
                              static_cast<int>(meta_u64(b, "template_joints")),
                              meta_u64(b, "template_seed"), opts);
}

pipeline::PipelineWeights weights_for(const std::string& weights_dir, const io::RunConfig& cfg,
                                      const SequenceBundle& b) {
  if (!weights_dir.empty()) {
    pipeline::PipelineWeights w = io::load_weights(weights_dir);
    require_dims_match(b, w.config);
    return w;
  }
  pipeline::PipelineConfig pc = cfg.pipeline;
  pc.joint_count = b.joints;
  pc.vertex_count = b.vertices;
  pc.shape_dims = b.shape_dims;
  pc.expr_dims = b.expr_dims;
  return pipeline::PipelineWeights::init(pc, cfg.seed);
}

SequenceBundle run_pipeline_over(const SequenceBundle& in, const pipeline::PipelineWeights& w,
                                 const body::BodyTemplate& tmpl, double* fps_out) {
  require_dims_match(in, w.config);
  if (tmpl.joint_count() != in.joints || tmpl.vertex_count() != in.vertices)
    throw ArgumentError("template dimensions do not match the bundle");
  const auto frames = frames_from_bundle(in, w.config);

  const auto t0 = std::chrono::steady_clock::now();
  const auto outputs = pipeline::run_sequence(frames, w);
  const auto t1 = std::chrono::steady_clock::now();
  if (fps_out != nullptr) {
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    *fps_out = sec > 0.0 ? static_cast<double>(in.frames) / sec : 0.0;
  }

  SequenceBundle out = in;
  const int T = in.frames;
  const int J = in.joints;
  for (int n = 0; n < in.persons; ++n) {
    PersonTrack& q = out.pred[static_cast<size_t>(n)];
    q.pose = Mat::Zero(T, 3 * J);
    q.shape = Mat::Zero(T, in.shape_dims);
    q.expression = Mat::Zero(T, in.expr_dims);
    q.root_trans = Mat::Zero(T, 3);
    q.anchor = in.gt[static_cast<size_t>(n)].anchor;
    q.joints_world.assign(static_cast<size_t>(T), MatX3());
    q.vertices_world.assign(static_cast<size_t>(T), MatX3());
    q.contact = Mat::Zero(T, in.vertices);
    for (int t = 0; t < T; ++t) {
      const auto& params = outputs[static_cast<size_t>(t)].bodies[static_cast<size_t>(n)];
      for (int j = 0; j < J; ++j)
        for (int k = 0; k < 3; ++k) q.pose(t, 3 * j + k) = params.pose(j, k);
      q.shape.row(t) = params.shape.transpose();
      if (in.expr_dims > 0) q.expression.row(t) = params.expression.transpose();
      q.root_trans.row(t) = params.root_trans_cam.transpose();
      const auto skinned = body::lbs_forward(tmpl, params);
      const auto world = body::compose_world(skinned.vertices, skinned.joints,
                                             in.cameras[static_cast<size_t>(t)]);
      q.joints_world[static_cast<size_t>(t)] = world.joints;
      q.vertices_world[static_cast<size_t>(t)] = world.vertices;
      q.contact.row(t) = outputs[static_cast<size_t>(t)].contact_probs.row(n);
    }
  }
  out.meta["pipeline_seed"] = std::to_string(w.seed);
  out.meta["pipeline_width"] = std::to_string(w.config.width);
  out.validate();
  return out;
}

std::vector<std::string> synth_bundles(const io::RunConfig& cfg, const std::string& out_dir,
                                       int count, int jobs) {
  if (count < 1) throw ArgumentError("bundle count must be at least 1");
  if (jobs < 1) throw ArgumentError("jobs must be at least 1");
  const body::BodyTemplate tmpl = template_for_config(cfg);
  std::vector<std::string> written(static_cast<size_t>(count));

  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  const auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        synth::SynthConfig sc = cfg.synth;
        sc.seed = cfg.synth.seed + static_cast<std::uint64_t>(i);
        SequenceBundle b = synth::gen_sequence(sc, tmpl);
        b.meta["template_v_per_bone"] =
            std::to_string(std::max(1, cfg.pipeline.vertex_count / cfg.pipeline.joint_count));
        b.meta["template_joints"] = std::to_string(cfg.pipeline.joint_count);
        b.meta["template_seed"] = std::to_string(cfg.seed);
        b.meta["template_total_vertices"] = std::to_string(cfg.pipeline.vertex_count);
        const std::string dir = out_dir + "/" + b.name;
        io::save_bundle(b, dir);
        written[static_cast<size_t>(i)] = dir;
      } catch (...) {
        const std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1 || count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < std::min(jobs, count); ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return written;
}

void keep_contact_metrics(metrics::MetricReport& rep) {
  const std::set<std::string> keep = {"contact_precision", "contact_recall", "contact_f1",
                                      "geo_cm"};
  for (auto it = rep.values.begin(); it != rep.values.end();)
    it = keep.count(it->first) ? std::next(it) : rep.values.erase(it);
  for (auto it = rep.skipped.begin(); it != rep.skipped.end();)
    it = keep.count(it->first) ? std::next(it) : rep.skipped.erase(it);
}

std::vector<std::pair<std::string, std::string>> grad_check_plan(const std::string& group) {
  const std::vector<std::pair<std::string, std::string>> known = {
      {"contact_head", "contact"},
      {"gate", "contact"},
      {"fusion", "contact"},
      {"residual_head", "composite"},
  };
  if (group == "all") return known;
  const std::string wanted = group == "residual" ? "residual_head" : group;
  for (const auto& k : known)
    if (k.first == wanted) return {k};
  throw ArgumentError("unknown gradient group '" + group +
                      "' (expected all, contact_head, gate, fusion or residual)");
}

}  // namespace contact4d::driver
