#pragma once

#include "encoders.hpp"
#include "nn.hpp"
#include "scene.hpp"

namespace argus {

// Query count shared by the per-view extractor, the fusion queries, and the
// 3D-aware stage downstream; fixed, not a tunable.
constexpr int kQueryCount = 32;
// Depth of the view aggregation stack.
constexpr int kAggLayers = 4;

struct FusionCfg {
  int d = 64;
  int heads = 4;
  int qf_blocks = 2;
};

enum class Aggregator { attention, mean, max };

inline const char* aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::attention: return "attention";
    case Aggregator::mean: return "mean";
    case Aggregator::max: return "max";
  }
  return "?";
}

// ---- initialization ---------------------------------------------------------

template <typename T>
void init_qformer2d(ParameterStore<T>& s, Rng& rng, const std::string& p,
                    const FusionCfg& cfg) {
  s.add(p + ".query", randn_scaled<T>(kQueryCount, cfg.d, rng, 0.02));
  for (int b = 0; b < cfg.qf_blocks; ++b)
    nn::init_block(s, rng, p + ".blk" + std::to_string(b), cfg.d, /*cross=*/true);
}

// Flattened 4x4 pose through hidden width d to an output of width d; exactly
// two affine maps with a nonlinearity between them.
template <typename T>
void init_pose_mlp(ParameterStore<T>& s, Rng& rng, const std::string& p,
                   const FusionCfg& cfg) {
  nn::init_linear(s, rng, p + ".fc1", 16, cfg.d);
  nn::init_linear(s, rng, p + ".fc2", cfg.d, cfg.d);
}

template <typename T>
void init_aggregator(ParameterStore<T>& s, Rng& rng, const std::string& p,
                     const FusionCfg& cfg) {
  s.add(p + ".query", randn_scaled<T>(kQueryCount, cfg.d, rng, 0.02));
  for (int l = 0; l < kAggLayers; ++l)
    nn::init_block(s, rng, p + ".layer" + std::to_string(l), cfg.d, /*cross=*/true);
  nn::init_linear(s, rng, p + ".proj", cfg.d, cfg.d);
}

template <typename T>
void init_fusion(ParameterStore<T>& s, Rng& rng, const std::string& p,
                 const FusionCfg& cfg) {
  if (cfg.d < 1 || cfg.heads < 1 || cfg.d % cfg.heads != 0)
    throw InvalidConfig("fusion: head count must divide d");
  if (cfg.qf_blocks < 1) throw InvalidConfig("fusion: need at least one block");
  init_qformer2d(s, rng, p + ".qf2d", cfg);
  init_pose_mlp(s, rng, p + ".pose", cfg);
  init_aggregator(s, rng, p + ".agg", cfg);
}

// ---- per-view extraction ----------------------------------------------------

// Instruction rows that enter attention. Pad positions are dropped outright,
// so an all-pad (or absent) instruction contributes nothing at all.
template <typename T>
int instruction_context(ModelCtx<T>& mc, const TextEmb& instr) {
  if (instr.node < 0) return -1;
  std::vector<int> keep;
  for (size_t i = 0; i < instr.mask.size(); ++i)
    if (instr.mask[i]) keep.push_back(static_cast<int>(i));
  if (keep.empty()) return -1;
  if (keep.size() == instr.mask.size()) return instr.node;
  return ad::rows_gather(mc.tape, instr.node, keep);
}

// 32 learnable queries and the instruction share each block's self-attention;
// only the query rows cross-attend to the image tokens, and only the query
// rows come out.
template <typename T>
int extract_view_features(ModelCtx<T>& mc, int image_tokens,
                          const TextEmb& instr, const std::string& p,
                          const FusionCfg& cfg) {
  check_shape(mc.tape.val(image_tokens).cols() == cfg.d,
              "extract_view_features: image token width != d");
  int q = mc.P(p + ".query");
  int ctx = instruction_context(mc, instr);
  for (int b = 0; b < cfg.qf_blocks; ++b) {
    nn::QfOut out = nn::qf_block(mc, q, ctx, image_tokens,
                                 p + ".blk" + std::to_string(b), cfg.heads);
    q = out.queries;
    ctx = out.context;
  }
  return q;
}

// ---- camera pose ------------------------------------------------------------

// Row-major flatten of the world-to-camera matrix, then the two-layer MLP.
template <typename T>
int pose_embedding(ModelCtx<T>& mc, const CameraPose& pose,
                   const std::string& p) {
  Mat<T> flat(1, 16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      flat(0, 4 * r + c) = static_cast<T>(pose.world_to_cam(r, c));
  int x = ad::input(mc.tape, std::move(flat));
  x = nn::linear(mc, x, p + ".fc1");
  return nn::linear(mc, ad::gelu(mc.tape, x), p + ".fc2");
}

// The camera embedding is added to every query row. This is the only place
// view identity enters; downstream aggregation stays order-free.
template <typename T>
int fuse_pose(ModelCtx<T>& mc, int view, int pos_emb) {
  return ad::add_rowvec(mc.tape, view, pos_emb);
}

// ---- aggregation ------------------------------------------------------------

template <typename T>
void check_view_stack(ModelCtx<T>& mc, const std::vector<int>& views,
                      const char* who) {
  if (views.empty()) throw EmptyInputError(std::string(who) + ": no views");
  const Eigen::Index d = mc.tape.val(views[0]).cols();
  for (int v : views)
    if (mc.tape.val(v).rows() != kQueryCount || mc.tape.val(v).cols() != d)
      throw ShapeError(std::string(who) + ": every view must be 32 x d");
}

// All view tokens are pooled into one sequence with no sequence positions;
// camera embeddings are the only thing telling views apart, which makes the
// result invariant to view order. Each layer: self-attention over the fusion
// queries, cross-attention into the pool, feed-forward. One projection after
// the stack.
template <typename T>
int aggregate_views(ModelCtx<T>& mc, const std::vector<int>& views,
                    const std::string& p, const FusionCfg& cfg) {
  check_view_stack(mc, views, "aggregate_views");
  check_shape(mc.tape.val(views[0]).cols() == cfg.d,
              "aggregate_views: view width != d");
  int pooled = views.size() == 1
                   ? views[0]
                   : ad::concat_rows(mc.tape, views);
  int x = mc.P(p + ".query");
  for (int l = 0; l < kAggLayers; ++l)
    x = nn::transformer_block(mc, x, p + ".layer" + std::to_string(l),
                              cfg.heads, pooled);
  return nn::linear(mc, x, p + ".proj");
}

// Parameter-free elementwise reduction across the view axis.
template <typename T>
int aggregate_baseline(ModelCtx<T>& mc, const std::vector<int>& views,
                       Aggregator mode) {
  if (mode == Aggregator::attention)
    throw InvalidConfig("aggregate_baseline: mean or max only");
  check_view_stack(mc, views, "aggregate_baseline");
  int acc = views[0];
  for (size_t i = 1; i < views.size(); ++i)
    acc = mode == Aggregator::max ? ad::emax(mc.tape, acc, views[i])
                                  : ad::add(mc.tape, acc, views[i]);
  if (mode == Aggregator::mean && views.size() > 1)
    acc = ad::scale(mc.tape, acc,
                    static_cast<T>(1.0 / static_cast<double>(views.size())));
  return acc;
}

// ---- composition ------------------------------------------------------------

// One rendered view to its 32 pose-fused tokens. with_pose=false skips the
// camera embedding (ablation path).
template <typename T>
int view_feature(ModelCtx<T>& mc, const View& v, const TextEmb& instr,
                 const std::string& enc_p, const std::string& fus_p,
                 const ImageEncoderCfg& icfg, const FusionCfg& fcfg,
                 bool with_pose = true) {
  int img = encode_image(mc, v, enc_p, icfg);
  int q = extract_view_features(mc, img, instr, fus_p + ".qf2d", fcfg);
  if (!with_pose) return q;
  return fuse_pose(mc, q, pose_embedding(mc, v.pose, fus_p + ".pose"));
}

// Whole multi-view stack to the 32 scene tokens.
template <typename T>
int view_as_scene(ModelCtx<T>& mc, const std::vector<View>& views,
                  const TextEmb& instr, const std::string& enc_p,
                  const std::string& fus_p, const ImageEncoderCfg& icfg,
                  const FusionCfg& fcfg,
                  Aggregator agg = Aggregator::attention,
                  bool with_pose = true) {
  if (views.empty()) throw EmptyInputError("view_as_scene: no views");
  std::vector<int> feats;
  feats.reserve(views.size());
  for (const View& v : views)
    feats.push_back(
        view_feature(mc, v, instr, enc_p, fus_p, icfg, fcfg, with_pose));
  return agg == Aggregator::attention
             ? aggregate_views(mc, feats, fus_p + ".agg", fcfg)
             : aggregate_baseline(mc, feats, agg);
}

}  // namespace argus
