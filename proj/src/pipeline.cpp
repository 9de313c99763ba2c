#include "contact4d/pipeline.hpp"

#include "contact4d/losses.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace contact4d::pipeline {

void PipelineConfig::validate() const {
  require_arg(width >= 1, "config: width must be >= 1");
  require_arg(heads >= 1 && width % heads == 0, "config: heads must divide width");
  require_arg(depth >= 0, "config: depth must be >= 0");
  require_arg(state_tokens >= 1, "config: state_tokens must be >= 1");
  require_arg(prior_width >= 1, "config: prior_width must be >= 1");
  require_arg(image_tokens >= 1, "config: image_tokens must be >= 1");
  require_arg(pool_window >= 1 && pool_window % 2 == 1, "config: pool_window must be odd");
  require_arg(vertex_count >= 1, "config: vertex_count must be >= 1");
  require_arg(joint_count >= 1, "config: joint_count must be >= 1");
  require_arg(shape_dims >= 0 && expr_dims >= 0, "config: negative param dims");
}

Mat LinearLayer::apply(const Mat& x) const {
  require_arg(x.cols() == weight.rows(), "linear layer: input width mismatch");
  Mat y = x * weight;
  y.rowwise() += bias.row(0);
  return y;
}

Mat Mlp::apply(const Mat& x) const {
  const Mat hidden = l1.apply(x).unaryExpr([](double v) { return gelu(v); });
  return l2.apply(hidden);
}

namespace {

struct LinearCache {
  Mat x;
};

Mat linear_fwd(const LinearLayer& l, const Mat& x, LinearCache* c) {
  if (c) c->x = x;
  return l.apply(x);
}

struct MlpCache {
  Mat x, pre, hidden;
};

Mat mlp_fwd(const Mlp& m, const Mat& x, MlpCache* c) {
  Mat pre = m.l1.apply(x);
  Mat hidden = pre.unaryExpr([](double v) { return gelu(v); });
  Mat y = m.l2.apply(hidden);
  if (c) {
    c->x = x;
    c->pre = std::move(pre);
    c->hidden = std::move(hidden);
  }
  return y;
}

// Input gradient; weight gradients only where requested.
Mat mlp_back(const Mlp& m, const MlpCache& c, const Mat& dy, Mat* dw1 = nullptr,
             Mat* db1 = nullptr, Mat* dw2 = nullptr, Mat* db2 = nullptr) {
  if (dw2) *dw2 = c.hidden.transpose() * dy;
  if (db2) *db2 = dy.colwise().sum();
  const Mat dh = dy * m.l2.weight.transpose();
  const Mat dpre =
      dh.cwiseProduct(c.pre.unaryExpr([](double v) { return gelu_grad(v); }));
  if (dw1) *dw1 = c.x.transpose() * dpre;
  if (db1) *db1 = dpre.colwise().sum();
  return dpre * m.l1.weight.transpose();
}

struct AttnCache {
  Mat q_in, kv_in, Q, K, V, O;
  std::vector<Mat> P;  // per-head row-stochastic attention
};

Mat softmax_rows(const Mat& s) {
  Mat p(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    Eigen::RowVectorXd e = (s.row(r).array() - m).exp();
    p.row(r) = e / e.sum();
  }
  return p;
}

Mat attn_fwd(const AttentionWeights& w, const Mat& q_in, const Mat& kv_in, AttnCache* c,
             AttentionTrace* trace) {
  require_arg(kv_in.rows() >= 1, "attention: key/value set is empty");
  require_arg(q_in.cols() == w.q.weight.rows() && kv_in.cols() == w.k.weight.rows(),
              "attention: token width mismatch");
  const int width = static_cast<int>(w.q.weight.cols());
  const int heads = w.heads;
  const int hd = width / heads;
  const Mat Q = w.q.apply(q_in);
  const Mat K = w.k.apply(kv_in);
  const Mat V = w.v.apply(kv_in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Mat O(q_in.rows(), width);
  if (c) c->P.clear();
  for (int h = 0; h < heads; ++h) {
    const auto Qh = Q.middleCols(h * hd, hd);
    const auto Kh = K.middleCols(h * hd, hd);
    const Mat P = softmax_rows(Qh * Kh.transpose() * scale);
    O.middleCols(h * hd, hd) = P * V.middleCols(h * hd, hd);
    if (c) c->P.push_back(P);
    if (trace) trace->head_probs.push_back(P);
  }
  if (c) {
    c->q_in = q_in;
    c->kv_in = kv_in;
    c->Q = Q;
    c->K = K;
    c->V = V;
    c->O = O;
  }
  return w.o.apply(O);
}

struct AttnGrads {
  Mat dq_in, dkv_in;
};

AttnGrads attn_back(const AttentionWeights& w, const AttnCache& c, const Mat& dout) {
  const int width = static_cast<int>(w.q.weight.cols());
  const int heads = w.heads;
  const int hd = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat dO = dout * w.o.weight.transpose();
  Mat dQ = Mat::Zero(c.Q.rows(), width);
  Mat dK = Mat::Zero(c.K.rows(), width);
  Mat dV = Mat::Zero(c.V.rows(), width);
  for (int h = 0; h < heads; ++h) {
    const auto dOh = dO.middleCols(h * hd, hd);
    const auto Vh = c.V.middleCols(h * hd, hd);
    const Mat& P = c.P[static_cast<size_t>(h)];
    const Mat dP = dOh * Vh.transpose();
    dV.middleCols(h * hd, hd) = P.transpose() * dOh;
    const Vec rowdot = (P.cwiseProduct(dP)).rowwise().sum();
    const Mat dS = P.cwiseProduct(dP - rowdot.replicate(1, P.cols()));
    dQ.middleCols(h * hd, hd) = dS * c.K.middleCols(h * hd, hd) * scale;
    dK.middleCols(h * hd, hd) = dS.transpose() * c.Q.middleCols(h * hd, hd) * scale;
  }
  AttnGrads g;
  g.dq_in = dQ * w.q.weight.transpose();
  g.dkv_in = dK * w.k.weight.transpose() + dV * w.v.weight.transpose();
  return g;
}

struct BlockCache {
  AttnCache sa, ca;
  MlpCache ff;
};

Mat block_fwd(const DecoderBlockWeights& b, const Mat& x0, const Mat& state, BlockCache* c) {
  const Mat x1 = x0 + attn_fwd(b.self_attn, x0, x0, c ? &c->sa : nullptr, nullptr);
  const Mat x2 = x1 + attn_fwd(b.cross_attn, x1, state, c ? &c->ca : nullptr, nullptr);
  return x2 + mlp_fwd(b.ff, x2, c ? &c->ff : nullptr);
}

// Gradient w.r.t. the block's token input; the state branch is dropped
// (constant along the checked paths).
Mat block_back(const DecoderBlockWeights& b, const BlockCache& c, const Mat& dx3) {
  const Mat dx2 = dx3 + mlp_back(b.ff, c.ff, dx3);
  const AttnGrads ca = attn_back(b.cross_attn, c.ca, dx2);
  const Mat dx1 = dx2 + ca.dq_in;
  const AttnGrads sa = attn_back(b.self_attn, c.sa, dx1);
  return dx1 + sa.dq_in + sa.dkv_in;
}

LinearLayer init_linear(std::uint64_t seed, const std::string& name, int in, int out) {
  Rng rng(hash_combine(seed, fnv1a(name)));
  LinearLayer l;
  l.weight = random_matrix(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  l.bias = Mat::Zero(1, out);
  return l;
}

Mlp init_mlp(std::uint64_t seed, const std::string& name, int in, int out) {
  Mlp m;
  m.l1 = init_linear(seed, name + ".l1", in, 2 * in);
  m.l2 = init_linear(seed, name + ".l2", 2 * in, out);
  return m;
}

AttentionWeights init_attn(std::uint64_t seed, const std::string& name, int width, int heads) {
  AttentionWeights a;
  a.q = init_linear(seed, name + ".q", width, width);
  a.k = init_linear(seed, name + ".k", width, width);
  a.v = init_linear(seed, name + ".v", width, width);
  a.o = init_linear(seed, name + ".o", width, width);
  a.heads = heads;
  return a;
}

Mat token_matrix(std::uint64_t seed, const std::string& name, int rows, int cols) {
  Rng rng(hash_combine(seed, fnv1a(name)));
  return random_matrix(rng, rows, cols, 0.5);
}

std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

Mat stack_rows(std::initializer_list<const Mat*> parts, Eigen::Index cols) {
  Eigen::Index rows = 0;
  for (const Mat* p : parts) rows += p->rows();
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Mat* p : parts) {
    require_arg(p->cols() == cols, "token stack: width mismatch");
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

}  // namespace

PipelineWeights PipelineWeights::init(const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  PipelineWeights w;
  w.config = config;
  w.seed = seed;
  const int c = config.width;
  w.pose_token = token_matrix(seed, "pose_token", 1, c);
  w.state_init = token_matrix(seed, "state.init", config.state_tokens, c);
  w.ca_curr = init_attn(seed, "scene.ca_curr", c, config.heads);
  w.ca_mem = init_attn(seed, "scene.ca_mem", c, config.heads);
  w.gate = init_mlp(seed, "scene.gate", 3 * c, c);
  w.geometry = init_mlp(seed, "geometry", 3, c);
  w.momentum = init_mlp(seed, "momentum", c, c);
  w.fusion = init_mlp(seed, "fusion", 4 * c, c);
  for (int d = 0; d < config.depth; ++d) {
    const std::string base = "decoder.block" + std::to_string(d);
    DecoderBlockWeights b;
    b.self_attn = init_attn(seed, base + ".self", c, config.heads);
    b.cross_attn = init_attn(seed, base + ".cross", c, config.heads);
    b.ff = init_mlp(seed, base + ".ff", c, c);
    w.blocks.push_back(std::move(b));
  }
  w.state_update = init_attn(seed, "decoder.state_update", c, config.heads);
  w.augment_human = init_linear(seed, "augment.human", c + config.prior_width, c);
  w.augment_contact = init_linear(seed, "augment.contact", c + config.prior_width, c);
  w.contact_head = init_mlp(seed, "head.contact", c, config.vertex_count);
  w.residual_head = init_mlp(seed, "head.residual", c, c);
  w.human_head = init_linear(seed, "head.human", c, config.body_param_dims());
  return w;
}

namespace {

template <typename Ref, typename Self>
std::vector<Ref> enumerate_arrays(Self& w) {
  std::vector<Ref> out;
  auto add = [&out](const std::string& name, auto* m, bool frozen) {
    out.push_back(Ref{name, m, frozen});
  };
  auto add_linear = [&add](const std::string& name, auto& l, bool frozen) {
    add(name + ".weight", &l.weight, frozen);
    add(name + ".bias", &l.bias, frozen);
  };
  auto add_mlp = [&add_linear](const std::string& name, auto& m, bool frozen) {
    add_linear(name + ".l1", m.l1, frozen);
    add_linear(name + ".l2", m.l2, frozen);
  };
  auto add_attn = [&add_linear](const std::string& name, auto& a, bool frozen) {
    add_linear(name + ".q", a.q, frozen);
    add_linear(name + ".k", a.k, frozen);
    add_linear(name + ".v", a.v, frozen);
    add_linear(name + ".o", a.o, frozen);
  };
  add("pose_token", &w.pose_token, true);
  add("state.init", &w.state_init, true);
  add_attn("scene.ca_curr", w.ca_curr, false);
  add_attn("scene.ca_mem", w.ca_mem, false);
  add_mlp("scene.gate", w.gate, false);
  add_mlp("geometry", w.geometry, false);
  add_mlp("momentum", w.momentum, false);
  add_mlp("fusion", w.fusion, false);
  for (size_t d = 0; d < w.blocks.size(); ++d) {
    const std::string base = "decoder.block" + std::to_string(d);
    add_attn(base + ".self", w.blocks[d].self_attn, true);
    add_attn(base + ".cross", w.blocks[d].cross_attn, true);
    add_mlp(base + ".ff", w.blocks[d].ff, true);
  }
  add_attn("decoder.state_update", w.state_update, true);
  add_linear("augment.human", w.augment_human, false);
  add_linear("augment.contact", w.augment_contact, false);
  add_mlp("head.contact", w.contact_head, false);
  add_mlp("head.residual", w.residual_head, false);
  add_linear("head.human", w.human_head, false);
  return out;
}

}  // namespace

std::vector<PipelineWeights::ArrayRef> PipelineWeights::arrays() {
  return enumerate_arrays<ArrayRef>(*this);
}

std::vector<PipelineWeights::ConstArrayRef> PipelineWeights::arrays() const {
  return enumerate_arrays<ConstArrayRef>(*this);
}

Mat cross_attend(const Mat& queries, const Mat& keys_values, const AttentionWeights& w,
                 AttentionTrace* trace) {
  return attn_fwd(w, queries, keys_values, nullptr, trace);
}

namespace {

struct FrameCache {
  Mat H, F;
  AttnCache ca_curr, ca_mem;
  MlpCache gate_mlp;
  Mat gamma, u_curr, u_mem;
  MlpCache fusion_mlp;
  std::vector<BlockCache> blocks;
  LinearCache aug_h, aug_c;
  MlpCache contact_mlp, residual_mlp;
  LinearCache human_lin;
};

SceneContextResult scene_fwd(const Mat& H, const Mat& F, const Mat& state,
                             const PipelineWeights& w, FrameCache* cc) {
  const int c = w.config.width;
  require_arg(H.cols() == c && F.cols() == c && state.cols() == c,
              "scene context: token width mismatch");
  require_arg(H.rows() >= 1, "scene context: no human tokens");
  SceneContextResult r;
  r.u_curr = attn_fwd(w.ca_curr, H, F, cc ? &cc->ca_curr : nullptr, nullptr);
  r.u_mem = attn_fwd(w.ca_mem, H, state, cc ? &cc->ca_mem : nullptr, nullptr);
  Mat gate_in(H.rows(), 3 * c);
  gate_in.leftCols(c) = H;
  gate_in.middleCols(c, c) = r.u_curr;
  gate_in.rightCols(c) = r.u_mem;
  const Mat pre = mlp_fwd(w.gate, gate_in, cc ? &cc->gate_mlp : nullptr);
  r.gamma = pre.unaryExpr([](double v) { return sigmoid(v); });
  r.u_scene = r.gamma.cwiseProduct(r.u_curr) +
              (Mat::Ones(r.gamma.rows(), r.gamma.cols()) - r.gamma).cwiseProduct(r.u_mem);
  if (cc) {
    cc->gamma = r.gamma;
    cc->u_curr = r.u_curr;
    cc->u_mem = r.u_mem;
  }
  return r;
}

std::vector<body::BodyParams> unpack_bodies(const Mat& Y, const PipelineConfig& cfg) {
  const int J = cfg.joint_count, B = cfg.shape_dims, E = cfg.expr_dims;
  require_arg(Y.cols() == cfg.body_param_dims(), "body readout: width mismatch");
  std::vector<body::BodyParams> out;
  out.reserve(static_cast<size_t>(Y.rows()));
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    body::BodyParams p = body::BodyParams::zero(J, B, E);
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < 3; ++k) p.pose(j, k) = Y(n, 3 * j + k);
    for (int b = 0; b < B; ++b) p.shape(b) = Y(n, 3 * J + b);
    for (int e = 0; e < E; ++e) p.expression(e) = Y(n, 3 * J + B + e);
    p.root_trans_cam = Vec3(Y(n, 3 * J + B + E), Y(n, 3 * J + B + E + 1), Y(n, 3 * J + B + E + 2));
    out.push_back(std::move(p));
  }
  return out;
}

FrameOutput forward_frame(const Mat& H, const Mat& F, const std::vector<scene::Anchor>& anchors,
                          const std::optional<scene::Pointmap>& pm_prev,
                          const std::optional<Mat>& c_prev, const Mat& s_prev, const Mat& prior,
                          const PipelineWeights& w, FrameCache* cc) {
  const auto& cfg = w.config;
  const int c = cfg.width;
  const Eigen::Index N = H.rows();
  require_arg(N >= 1 && H.cols() == c, "human tokens: bad shape");
  require_arg(F.rows() >= 1 && F.cols() == c, "image tokens: bad shape");
  require_arg(s_prev.rows() == cfg.state_tokens && s_prev.cols() == c, "state: size mismatch");
  require_arg(prior.rows() == N && prior.cols() == cfg.prior_width, "prior: bad shape");
  require_arg(static_cast<Eigen::Index>(anchors.size()) == N, "anchors: person count mismatch");
  if (cc) {
    cc->H = H;
    cc->F = F;
  }

  FrameOutput out;
  Mat u_scene = Mat::Zero(N, c);
  out.gamma = Mat::Zero(N, c);
  if (cfg.use_scene_context) {
    const SceneContextResult sctx = scene_fwd(H, F, s_prev, w, cc);
    u_scene = sctx.u_scene;
    out.gamma = sctx.gamma;
  }
  const Mat geo = cfg.use_geometry ? geometry_token(pm_prev, anchors, w) : Mat::Zero(N, c);
  const Mat mom =
      cfg.use_momentum ? temporal_momentum(c_prev, static_cast<int>(N), w) : Mat::Zero(N, c);

  Mat fusion_in(N, 4 * c);
  fusion_in.leftCols(c) = H;
  fusion_in.middleCols(c, c) = u_scene;
  fusion_in.middleCols(2 * c, c) = geo;
  fusion_in.rightCols(c) = mom;
  const Mat C = mlp_fwd(w.fusion, fusion_in, cc ? &cc->fusion_mlp : nullptr);

  Mat x = stack_rows({&F, &w.pose_token, &H, &C}, c);
  if (cc) cc->blocks.resize(static_cast<size_t>(cfg.depth));
  for (int d = 0; d < cfg.depth; ++d)
    x = block_fwd(w.blocks[static_cast<size_t>(d)], x, s_prev,
                  cc ? &cc->blocks[static_cast<size_t>(d)] : nullptr);
  out.image = x.topRows(F.rows());
  out.pose = x.middleRows(F.rows(), 1);
  out.human = x.middleRows(F.rows() + 1, N);
  out.contact = x.bottomRows(N);
  out.state = s_prev + attn_fwd(w.state_update, s_prev, x, nullptr, nullptr);

  Mat aug_h_in(N, c + cfg.prior_width);
  aug_h_in.leftCols(c) = out.human;
  aug_h_in.rightCols(cfg.prior_width) = prior;
  Mat aug_c_in(N, c + cfg.prior_width);
  aug_c_in.leftCols(c) = out.contact;
  aug_c_in.rightCols(cfg.prior_width) = prior;
  out.human_aug = linear_fwd(w.augment_human, aug_h_in, cc ? &cc->aug_h : nullptr);
  const Mat contact_aug = linear_fwd(w.augment_contact, aug_c_in, cc ? &cc->aug_c : nullptr);

  out.contact_logits = mlp_fwd(w.contact_head, contact_aug, cc ? &cc->contact_mlp : nullptr);
  out.contact_probs = out.contact_logits.unaryExpr([](double v) { return sigmoid(v); });

  if (cfg.use_refinement) {
    out.delta = mlp_fwd(w.residual_head, contact_aug, cc ? &cc->residual_mlp : nullptr);
    out.human_refined = out.human_aug + out.delta;
  } else {
    out.delta = Mat::Zero(N, c);
    out.human_refined = out.human_aug;
  }
  const Mat Y = linear_fwd(w.human_head, out.human_refined, cc ? &cc->human_lin : nullptr);
  out.bodies = unpack_bodies(Y, cfg);
  return out;
}

}  // namespace

SceneContextResult scene_context(const Mat& human_tokens, const Mat& image_tokens,
                                 const Mat& state_prev, const PipelineWeights& w) {
  return scene_fwd(human_tokens, image_tokens, state_prev, w, nullptr);
}

Mat geometry_token(const std::optional<scene::Pointmap>& pm_prev,
                   const std::vector<scene::Anchor>& anchors, const PipelineWeights& w) {
  require_arg(!anchors.empty(), "geometry_token: anchors must be nonempty");
  Mat pooled = Mat::Zero(static_cast<Eigen::Index>(anchors.size()), 3);
  if (pm_prev) {
    for (size_t n = 0; n < anchors.size(); ++n) {
      const scene::PooledPoint pp = scene::roi_geo_pool(*pm_prev, anchors[n], w.config.pool_window);
      if (pp.valid) pooled.row(static_cast<Eigen::Index>(n)) = pp.value.transpose();
    }
  }
  return w.geometry.apply(pooled);
}

Mat temporal_momentum(const std::optional<Mat>& contact_prev_refined, int persons,
                      const PipelineWeights& w) {
  require_arg(persons >= 1, "temporal_momentum: persons must be >= 1");
  const int c = w.config.width;
  if (!contact_prev_refined) return Mat::Zero(persons, c);
  const Mat& prev = *contact_prev_refined;
  require_arg(prev.cols() == c, "temporal_momentum: token width mismatch");
  Mat aligned = Mat::Zero(persons, c);
  const Eigen::Index keep = std::min<Eigen::Index>(persons, prev.rows());
  aligned.topRows(keep) = prev.topRows(keep);
  return w.momentum.apply(aligned);
}

Mat fuse_contact_prompt(const Mat& human_tokens, const Mat& u_scene, const Mat& geo,
                        const Mat& momentum, const PipelineWeights& w) {
  const int c = w.config.width;
  const Eigen::Index N = human_tokens.rows();
  require_arg(human_tokens.cols() == c && u_scene.cols() == c && geo.cols() == c &&
                  momentum.cols() == c,
              "fuse: token width mismatch");
  require_arg(u_scene.rows() == N && geo.rows() == N && momentum.rows() == N,
              "fuse: person count mismatch");
  Mat in(N, 4 * c);
  in.leftCols(c) = human_tokens;
  in.middleCols(c, c) = u_scene;
  in.middleCols(2 * c, c) = geo;
  in.rightCols(c) = momentum;
  return w.fusion.apply(in);
}

DecodeResult decoder_step(const Mat& image_tokens, const Mat& pose_token, const Mat& human_tokens,
                          const Mat& contact_tokens, const Mat& state_prev,
                          const PipelineWeights& w) {
  const int c = w.config.width;
  require_arg(state_prev.rows() == w.config.state_tokens && state_prev.cols() == c,
              "decoder_step: state size mismatch");
  Mat x = stack_rows({&image_tokens, &pose_token, &human_tokens, &contact_tokens}, c);
  require_arg(x.rows() >= 1, "decoder_step: no tokens");
  for (const auto& b : w.blocks) x = block_fwd(b, x, state_prev, nullptr);
  DecodeResult r;
  r.image = x.topRows(image_tokens.rows());
  r.pose = x.middleRows(image_tokens.rows(), pose_token.rows());
  r.human = x.middleRows(image_tokens.rows() + pose_token.rows(), human_tokens.rows());
  r.contact = x.bottomRows(contact_tokens.rows());
  r.state = state_prev + attn_fwd(w.state_update, state_prev, x, nullptr, nullptr);
  return r;
}

AugmentResult augment_with_prior(const Mat& human_refined, const Mat& contact_refined,
                                 const Mat& prior, const PipelineWeights& w) {
  const int c = w.config.width;
  const Eigen::Index N = human_refined.rows();
  require_arg(human_refined.cols() == c && contact_refined.cols() == c,
              "augment: token width mismatch");
  require_arg(contact_refined.rows() == N && prior.rows() == N, "augment: person count mismatch");
  require_arg(prior.cols() == w.config.prior_width, "augment: prior width mismatch");
  Mat h_in(N, c + w.config.prior_width);
  h_in.leftCols(c) = human_refined;
  h_in.rightCols(w.config.prior_width) = prior;
  Mat c_in(N, c + w.config.prior_width);
  c_in.leftCols(c) = contact_refined;
  c_in.rightCols(w.config.prior_width) = prior;
  AugmentResult r;
  r.human = w.augment_human.apply(h_in);
  r.contact = w.augment_contact.apply(c_in);
  return r;
}

ContactHeadResult contact_head(const Mat& contact_aug, const PipelineWeights& w) {
  ContactHeadResult r;
  r.logits = w.contact_head.apply(contact_aug);
  r.probs = r.logits.unaryExpr([](double v) { return sigmoid(v); });
  return r;
}

RefineResult latent_refine(const Mat& contact_aug, const Mat& human_aug,
                           const PipelineWeights& w) {
  require_arg(contact_aug.rows() == human_aug.rows() && human_aug.cols() == w.config.width,
              "latent_refine: shape mismatch");
  RefineResult r;
  r.delta = w.residual_head.apply(contact_aug);
  r.refined = human_aug + r.delta;
  return r;
}

std::vector<body::BodyParams> human_head(const Mat& human_refined, const PipelineWeights& w) {
  return unpack_bodies(w.human_head.apply(human_refined), w.config);
}

Mat default_prior_features(const std::vector<scene::Anchor>& anchors, int frame,
                           std::uint64_t seed, int width) {
  const std::uint64_t base =
      hash_combine(hash_combine(seed, 0x50u), static_cast<std::uint64_t>(frame));
  Mat m(static_cast<Eigen::Index>(anchors.size()), width);
  for (size_t n = 0; n < anchors.size(); ++n) {
    std::uint64_t key = hash_combine(base, static_cast<std::uint64_t>(anchors[n].person));
    key = hash_combine(key, double_bits(anchors[n].pixel.x()));
    key = hash_combine(key, double_bits(anchors[n].pixel.y()));
    Rng rng(key);
    for (int c = 0; c < width; ++c) m(static_cast<Eigen::Index>(n), c) = rng.normal(0.0, 0.5);
  }
  return m;
}

Mat embed_anchor_tokens(const std::vector<scene::Anchor>& anchors, int frame, std::uint64_t seed,
                        int width) {
  const std::uint64_t base =
      hash_combine(hash_combine(seed, 0x48u), static_cast<std::uint64_t>(frame));
  Mat m(static_cast<Eigen::Index>(anchors.size()), width);
  for (size_t n = 0; n < anchors.size(); ++n) {
    std::uint64_t key = hash_combine(base, static_cast<std::uint64_t>(anchors[n].person));
    key = hash_combine(key, double_bits(anchors[n].pixel.x()));
    key = hash_combine(key, double_bits(anchors[n].pixel.y()));
    Rng rng(key);
    for (int c = 0; c < width; ++c) m(static_cast<Eigen::Index>(n), c) = rng.normal(0.0, 0.5);
  }
  return m;
}

Mat make_image_tokens(int count, int frame, std::uint64_t seed, int width) {
  require_arg(count >= 1, "make_image_tokens: count must be >= 1");
  const std::uint64_t base =
      hash_combine(hash_combine(seed, 0x46u), static_cast<std::uint64_t>(frame));
  Mat m(count, width);
  for (int r = 0; r < count; ++r) {
    Rng rng(hash_combine(base, static_cast<std::uint64_t>(r)));
    for (int c = 0; c < width; ++c) m(r, c) = rng.normal(0.0, 0.5);
  }
  return m;
}

std::vector<FrameOutput> run_sequence(const std::vector<FrameInput>& frames,
                                      const PipelineWeights& w, const PriorProvider& prior) {
  require_arg(!frames.empty(), "run_sequence: frames must be nonempty");
  w.config.validate();
  const auto& cfg = w.config;
  Mat state = w.state_init;
  std::optional<Mat> contact_prev;
  std::optional<scene::Pointmap> pm_prev;
  std::vector<FrameOutput> outputs;
  outputs.reserve(frames.size());
  for (size_t t = 0; t < frames.size(); ++t) {
    const std::string tag = "frame " + std::to_string(t) + ": ";
    try {
      const FrameInput& fi = frames[t];
      require_arg(!fi.anchors.empty(), "no anchors");
      const int frame_no = static_cast<int>(t) + 1;
      const Mat H = embed_anchor_tokens(fi.anchors, frame_no, cfg.provider_seed, cfg.width);
      const Mat P = prior ? prior(fi.anchors, frame_no)
                          : default_prior_features(fi.anchors, frame_no, cfg.provider_seed,
                                                   cfg.prior_width);
      FrameOutput out = forward_frame(H, fi.image_tokens, fi.anchors, pm_prev, contact_prev,
                                      state, P, w, nullptr);
      state = out.state;
      contact_prev = out.contact;
      if (fi.pointmap) {
        pm_prev = fi.pointmap->frame == scene::Frame::World
                      ? *fi.pointmap
                      : scene::pointmap_to_world(*fi.pointmap, fi.camera);
      } else {
        pm_prev.reset();
      }
      outputs.push_back(std::move(out));
    } catch (const OutOfBoundsError& e) {
      throw OutOfBoundsError(tag + e.what());
    } catch (const ArgumentError& e) {
      throw ArgumentError(tag + e.what());
    } catch (const NumericError& e) {
      throw NumericError(tag + e.what());
    }
  }
  return outputs;
}

namespace {

struct GradScenario {
  std::vector<scene::Anchor> anchors;
  scene::Pointmap pm;
  Mat H, F, prior, c_prev;
  Mat labels;
  std::vector<int> part_map;
  loss::LossConfig lcfg;
};

GradScenario build_scenario(const PipelineConfig& cfg, std::uint64_t seed) {
  GradScenario sc;
  sc.anchors = {scene::Anchor{{1.2, 1.0}, 0}, scene::Anchor{{2.6, 1.7}, 1}};
  sc.pm.height = 4;
  sc.pm.width = 5;
  sc.pm.frame = scene::Frame::World;
  sc.pm.points.resize(20, 3);
  sc.pm.valid.assign(20, 1);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c)
      sc.pm.points.row(sc.pm.index(r, c)) = Vec3(0.1 * c, 0.05 * (r + c), 0.1 * r).transpose();
  sc.H = embed_anchor_tokens(sc.anchors, 1, cfg.provider_seed, cfg.width);
  sc.F = make_image_tokens(cfg.image_tokens, 1, cfg.provider_seed, cfg.width);
  sc.prior = default_prior_features(sc.anchors, 1, cfg.provider_seed, cfg.prior_width);
  Rng rng(hash_combine(seed, 0xC0FFEEu));
  sc.c_prev = random_matrix(rng, 2, cfg.width, 0.5);
  sc.labels = Mat(2, cfg.vertex_count);
  for (Eigen::Index i = 0; i < sc.labels.size(); ++i)
    sc.labels.data()[i] = rng.uniform() < 0.35 ? 1.0 : 0.0;
  sc.part_map.resize(static_cast<size_t>(cfg.vertex_count));
  const int parts = std::min(cfg.vertex_count, 6);
  for (int v = 0; v < cfg.vertex_count; ++v) sc.part_map[static_cast<size_t>(v)] = v % parts;
  return sc;
}

double eval_loss(const std::string& id, const FrameOutput& out, const GradScenario& sc,
                 const PipelineWeights& w, Mat* dlogits, Mat* dY) {
  const Mat Y = w.human_head.apply(out.human_refined);
  if (dlogits) dlogits->setZero(out.contact_logits.rows(), out.contact_logits.cols());
  if (dY) dY->setZero(Y.rows(), Y.cols());
  if (id == "zero") return 0.0;
  if (id == "body_sum") {
    if (dY) dY->setConstant(1.0 / static_cast<double>(Y.size()));
    return Y.sum() / static_cast<double>(Y.size());
  }
  const bool want_contact = id == "contact" || id == "composite";
  const bool want_body = id == "body" || id == "composite";
  require_arg(want_contact || want_body, "grad_check: unknown loss id '" + id + "'");
  double v = 0.0;
  if (want_contact) {
    v += loss::contact_loss(out.contact_logits, sc.labels, sc.part_map, sc.lcfg);
    if (dlogits)
      *dlogits += loss::contact_loss_grad(out.contact_logits, sc.labels, sc.part_map, sc.lcfg);
  }
  if (want_body) {
    v += Y.squaredNorm() / static_cast<double>(Y.size());
    if (dY) *dY += (2.0 / static_cast<double>(Y.size())) * Y;
  }
  return v;
}

// Analytic gradients for the trainable groups on the contact/body loss path.
std::map<std::string, Mat> backward_frame(const PipelineWeights& w, const FrameCache& c,
                                          const Mat& dlogits, const Mat& dY) {
  const auto& cfg = w.config;
  const int cw = cfg.width;
  const Eigen::Index N = c.H.rows();
  std::map<std::string, Mat> g;

  g["head.human.weight"] = c.human_lin.x.transpose() * dY;
  g["head.human.bias"] = dY.colwise().sum();
  const Mat dHbar = dY * w.human_head.weight.transpose();

  const Mat& dHt = dHbar;
  Mat dCt = Mat::Zero(N, cw);
  if (cfg.use_refinement) {
    Mat dw1, db1, dw2, db2;
    dCt += mlp_back(w.residual_head, c.residual_mlp, dHbar, &dw1, &db1, &dw2, &db2);
    g["head.residual.l1.weight"] = std::move(dw1);
    g["head.residual.l1.bias"] = std::move(db1);
    g["head.residual.l2.weight"] = std::move(dw2);
    g["head.residual.l2.bias"] = std::move(db2);
  } else {
    g["head.residual.l1.weight"] = Mat::Zero(w.residual_head.l1.weight.rows(),
                                             w.residual_head.l1.weight.cols());
    g["head.residual.l1.bias"] = Mat::Zero(1, w.residual_head.l1.bias.cols());
    g["head.residual.l2.weight"] = Mat::Zero(w.residual_head.l2.weight.rows(),
                                             w.residual_head.l2.weight.cols());
    g["head.residual.l2.bias"] = Mat::Zero(1, w.residual_head.l2.bias.cols());
  }
  {
    Mat dw1, db1, dw2, db2;
    dCt += mlp_back(w.contact_head, c.contact_mlp, dlogits, &dw1, &db1, &dw2, &db2);
    g["head.contact.l1.weight"] = std::move(dw1);
    g["head.contact.l1.bias"] = std::move(db1);
    g["head.contact.l2.weight"] = std::move(dw2);
    g["head.contact.l2.bias"] = std::move(db2);
  }

  const Mat dHp = (dHt * w.augment_human.weight.transpose()).leftCols(cw);
  const Mat dCp = (dCt * w.augment_contact.weight.transpose()).leftCols(cw);

  Mat dX = Mat::Zero(c.F.rows() + 1 + 2 * N, cw);
  dX.middleRows(c.F.rows() + 1, N) = dHp;
  dX.bottomRows(N) = dCp;
  for (int d = cfg.depth - 1; d >= 0; --d)
    dX = block_back(w.blocks[static_cast<size_t>(d)], c.blocks[static_cast<size_t>(d)], dX);
  const Mat dC = dX.bottomRows(N);

  Mat dw1, db1, dw2, db2;
  const Mat dfusion_in = mlp_back(w.fusion, c.fusion_mlp, dC, &dw1, &db1, &dw2, &db2);
  g["fusion.l1.weight"] = std::move(dw1);
  g["fusion.l1.bias"] = std::move(db1);
  g["fusion.l2.weight"] = std::move(dw2);
  g["fusion.l2.bias"] = std::move(db2);

  if (cfg.use_scene_context) {
    const Mat dU = dfusion_in.middleCols(cw, cw);
    const Mat dgamma = dU.cwiseProduct(c.u_curr - c.u_mem);
    const Mat dpre =
        (dgamma.array() * c.gamma.array() * (1.0 - c.gamma.array())).matrix();
    Mat gw1, gb1, gw2, gb2;
    mlp_back(w.gate, c.gate_mlp, dpre, &gw1, &gb1, &gw2, &gb2);
    g["scene.gate.l1.weight"] = std::move(gw1);
    g["scene.gate.l1.bias"] = std::move(gb1);
    g["scene.gate.l2.weight"] = std::move(gw2);
    g["scene.gate.l2.bias"] = std::move(gb2);
  } else {
    g["scene.gate.l1.weight"] = Mat::Zero(w.gate.l1.weight.rows(), w.gate.l1.weight.cols());
    g["scene.gate.l1.bias"] = Mat::Zero(1, w.gate.l1.bias.cols());
    g["scene.gate.l2.weight"] = Mat::Zero(w.gate.l2.weight.rows(), w.gate.l2.weight.cols());
    g["scene.gate.l2.bias"] = Mat::Zero(1, w.gate.l2.bias.cols());
  }
  return g;
}

const std::map<std::string, std::string>& group_prefixes() {
  static const std::map<std::string, std::string> m = {
      {"gate", "scene.gate."},        {"fusion", "fusion."},
      {"contact_head", "head.contact."}, {"residual_head", "head.residual."},
      {"human_head", "head.human."},
  };
  return m;
}

}  // namespace

GradCheckResult grad_check(const std::string& loss_id, const PipelineWeights& weights,
                           const std::string& group, double eps, double tolerance,
                           std::uint64_t seed) {
  require_arg(eps >= 1e-7 && eps <= 1e-3, "grad_check: eps must be in [1e-7, 1e-3]");
  require_arg(tolerance > 0.0, "grad_check: tolerance must be positive");
  weights.config.validate();
  const auto it = group_prefixes().find(group);
  require_arg(it != group_prefixes().end(), "grad_check: unknown weight group '" + group + "'");
  const std::string& prefix = it->second;

  const GradScenario sc = build_scenario(weights.config, seed);
  const std::optional<scene::Pointmap> pm(sc.pm);
  const std::optional<Mat> c_prev(sc.c_prev);

  FrameCache cache;
  const FrameOutput base_out =
      forward_frame(sc.H, sc.F, sc.anchors, pm, c_prev, weights.state_init, sc.prior, weights,
                    &cache);
  Mat dlogits, dY;
  const double base = eval_loss(loss_id, base_out, sc, weights, &dlogits, &dY);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");
  const std::map<std::string, Mat> grads = backward_frame(weights, cache, dlogits, dY);

  PipelineWeights perturbed = weights;
  std::vector<PipelineWeights::ArrayRef> refs;
  for (auto& r : perturbed.arrays())
    if (!r.frozen && r.name.rfind(prefix, 0) == 0) refs.push_back(r);
  require_arg(!refs.empty(), "grad_check: group has no trainable arrays");

  std::vector<std::pair<size_t, Eigen::Index>> coords;
  for (size_t a = 0; a < refs.size(); ++a)
    for (Eigen::Index i = 0; i < refs[a].mat->size(); ++i) coords.emplace_back(a, i);
  Rng rng(hash_combine(seed, 0x99u));
  if (coords.size() > 64) {
    for (size_t i = 0; i < 64; ++i) {
      const size_t j = i + static_cast<size_t>(rng.uniform_int(
                               0, static_cast<int>(coords.size() - 1 - i)));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(64);
  }

  const auto loss_of = [&](const PipelineWeights& wx) {
    const FrameOutput o =
        forward_frame(sc.H, sc.F, sc.anchors, pm, c_prev, wx.state_init, sc.prior, wx, nullptr);
    const double v = eval_loss(loss_id, o, sc, wx, nullptr, nullptr);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };

  GradCheckResult result;
  result.coords_checked = static_cast<int>(coords.size());
  for (const auto& [a, i] : coords) {
    Mat& m = *refs[a].mat;
    const double orig = m.data()[i];
    m.data()[i] = orig + eps;
    const double lp = loss_of(perturbed);
    m.data()[i] = orig - eps;
    const double lm = loss_of(perturbed);
    m.data()[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double analytic = grads.at(refs[a].name).data()[i];
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace contact4d::pipeline
