#pragma once

#include "contact4d/body.hpp"
#include "contact4d/common.hpp"
#include "contact4d/scene.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace contact4d::pipeline {

struct PipelineConfig {
  int width = 64;           // token width c
  int heads = 4;
  int depth = 2;            // decoder blocks
  int state_tokens = 16;    // persistent state rows K
  int prior_width = 32;     // prior feature width
  int image_tokens = 24;    // image token stand-ins per frame
  int pool_window = 5;      // geometry pooling window, pixels
  int vertex_count = 6890;  // contact head output width
  int joint_count = 24;
  int shape_dims = 10;
  int expr_dims = 10;
  std::uint64_t provider_seed = 7;  // drives token/prior stand-in streams

  // Cue toggles. A disabled cue contributes an exact zero block to the
  // fusion input; disabled refinement leaves the human latent untouched.
  bool use_scene_context = true;
  bool use_geometry = true;
  bool use_momentum = true;
  bool use_refinement = true;

  int body_param_dims() const { return 3 * joint_count + shape_dims + expr_dims + 3; }
  void validate() const;
};

struct LinearLayer {
  Mat weight;  // in x out
  Mat bias;    // 1 x out

  Mat apply(const Mat& x) const;
};

// Two layers, hidden width = 2x input, erf GELU between, biases on.
struct Mlp {
  LinearLayer l1, l2;

  Mat apply(const Mat& x) const;
};

struct AttentionWeights {
  LinearLayer q, k, v, o;
  int heads = 1;
};

struct DecoderBlockWeights {
  AttentionWeights self_attn;
  AttentionWeights cross_attn;  // queries = tokens, keys/values = state
  Mlp ff;
};

// All parameters of the pipeline, deterministic from (config dims, seed).
// Groups tagged frozen stand in for the pretrained 4D backbone and are
// excluded from gradient checks; the rest are the trainable additions.
struct PipelineWeights {
  PipelineConfig config;
  std::uint64_t seed = 0;

  Mat pose_token;  // 1 x c
  Mat state_init;  // K x c
  AttentionWeights ca_curr, ca_mem;
  Mlp gate, geometry, momentum, fusion;
  std::vector<DecoderBlockWeights> blocks;
  AttentionWeights state_update;
  LinearLayer augment_human, augment_contact;
  Mlp contact_head, residual_head;
  LinearLayer human_head;

  static PipelineWeights init(const PipelineConfig& config, std::uint64_t seed);

  struct ArrayRef {
    std::string name;
    Mat* mat;
    bool frozen;
  };
  struct ConstArrayRef {
    std::string name;
    const Mat* mat;
    bool frozen;
  };
  std::vector<ArrayRef> arrays();
  std::vector<ConstArrayRef> arrays() const;
};

struct AttentionTrace {
  std::vector<Mat> head_probs;  // per head, Nq x Nk, rows sum to 1
};

// Multi-head scaled dot-product attention; rows are tokens.
Mat cross_attend(const Mat& queries, const Mat& keys_values, const AttentionWeights& w,
                 AttentionTrace* trace = nullptr);

struct SceneContextResult {
  Mat u_curr, u_mem;  // N x c
  Mat gamma;          // N x c, strictly in (0,1)
  Mat u_scene;        // N x c, elementwise convex combination
};

// Gated blend of current-frame context (attention over image tokens) and
// memory context (attention over the persistent state).
SceneContextResult scene_context(const Mat& human_tokens, const Mat& image_tokens,
                                 const Mat& state_prev, const PipelineWeights& w);

// Per-person lift of a pooled local 3D neighborhood into prompt space.
// A missing pointmap or invalid pooling falls back to the zero 3-vector.
Mat geometry_token(const std::optional<scene::Pointmap>& pm_prev,
                   const std::vector<scene::Anchor>& anchors, const PipelineWeights& w);

// Previous refined contact tokens aligned to the current person count by
// truncation/zero-padding, then lifted. No previous frame: exact zeros.
Mat temporal_momentum(const std::optional<Mat>& contact_prev_refined, int persons,
                      const PipelineWeights& w);

// Row-wise fusion of human, scene, geometry and momentum cues.
Mat fuse_contact_prompt(const Mat& human_tokens, const Mat& u_scene, const Mat& geo,
                        const Mat& momentum, const PipelineWeights& w);

struct DecodeResult {
  Mat image, pose, human, contact;  // refined tokens, same row counts as inputs
  Mat state;                        // updated persistent state, K x c
};

// Frozen stand-in decoder stack: per block, residual self-attention over the
// joint token sequence, residual cross-attention to the previous state, and
// a residual feed-forward; then a residual state update attending from the
// previous state to the refined tokens.
DecodeResult decoder_step(const Mat& image_tokens, const Mat& pose_token,
                          const Mat& human_tokens, const Mat& contact_tokens,
                          const Mat& state_prev, const PipelineWeights& w);

struct AugmentResult {
  Mat human;    // N x c
  Mat contact;  // N x c
};

// Concatenate prior features onto the refined tokens, project back to width c.
AugmentResult augment_with_prior(const Mat& human_refined, const Mat& contact_refined,
                                 const Mat& prior, const PipelineWeights& w);

struct ContactHeadResult {
  Mat logits;  // N x V
  Mat probs;   // N x V, sigmoid of logits
};

ContactHeadResult contact_head(const Mat& contact_aug, const PipelineWeights& w);

struct RefineResult {
  Mat delta;    // N x c
  Mat refined;  // N x c, human_aug + delta
};

RefineResult latent_refine(const Mat& contact_aug, const Mat& human_aug,
                           const PipelineWeights& w);

// Linear readout of per-person body parameters from the refined latent.
std::vector<body::BodyParams> human_head(const Mat& human_refined, const PipelineWeights& w);

struct FrameInput {
  Mat image_tokens;                    // M x c stand-ins
  std::vector<scene::Anchor> anchors;  // one per person, stable index order
  body::CameraPose camera;
  std::optional<scene::Pointmap> pointmap;  // current-frame pointmap
};

struct FrameOutput {
  Mat image, pose, human, contact;  // refined tokens
  Mat state;                        // persistent state after this frame
  Mat gamma;                        // N x c gate values (zeros when gating disabled)
  Mat contact_logits, contact_probs;  // N x V
  Mat human_aug;                    // N x c, prior-augmented human latent
  Mat delta;                        // N x c residual
  Mat human_refined;                // N x c
  std::vector<body::BodyParams> bodies;
};

using PriorProvider = std::function<Mat(const std::vector<scene::Anchor>&, int frame)>;

// Deterministic stand-in streams: every row is a pure hash of
// (seed, role, frame, person identity), so reordering persons reorders rows.
Mat default_prior_features(const std::vector<scene::Anchor>& anchors, int frame,
                           std::uint64_t seed, int width);
Mat embed_anchor_tokens(const std::vector<scene::Anchor>& anchors, int frame,
                        std::uint64_t seed, int width);
Mat make_image_tokens(int count, int frame, std::uint64_t seed, int width);

// Strictly online loop: state, momentum and the geometry pointmap are
// threaded from frame t-1 to frame t. Per-frame failures are rethrown with
// the frame index attached.
std::vector<FrameOutput> run_sequence(const std::vector<FrameInput>& frames,
                                      const PipelineWeights& w,
                                      const PriorProvider& prior = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
  bool passed = false;
};

// Compares the hand-derived backward pass against central finite differences
// on up to 64 sampled coordinates of one weight group. Loss ids: "contact"
// (focal + part-pooled contact loss), "body" (mean squared body readout),
// "body_sum" (linear readout sum), "composite" (contact + body), "zero".
// Groups: "gate", "fusion", "contact_head", "residual_head", "human_head".
GradCheckResult grad_check(const std::string& loss_id, const PipelineWeights& weights,
                           const std::string& group, double eps, double tolerance,
                           std::uint64_t seed = 1234);

}  // namespace contact4d::pipeline
