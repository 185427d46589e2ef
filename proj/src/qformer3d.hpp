#pragma once

#include "fusion.hpp"

namespace argus {

struct QFormer3DCfg {
  int d = 64;
  int heads = 4;
  int blocks = 2;
  int d_llm = 128;
};

// Which inputs produced a scene embedding; carried through evaluation logs.
enum class SceneMode { full, views_only, points_only };

inline const char* scene_mode_name(SceneMode m) {
  switch (m) {
    case SceneMode::full: return "full";
    case SceneMode::views_only: return "views_only";
    case SceneMode::points_only: return "points_only";
  }
  return "?";
}

struct SceneEmbedding {
  int tokens = -1;  // tape node, 32 x d_llm
  SceneMode mode = SceneMode::full;
};

template <typename T>
void init_qformer3d(ParameterStore<T>& s, Rng& rng, const std::string& p,
                    const QFormer3DCfg& cfg) {
  if (cfg.d < 1 || cfg.heads < 1 || cfg.d % cfg.heads != 0)
    throw InvalidConfig("qformer3d: head count must divide d");
  if (cfg.blocks < 1 || cfg.d_llm < 1)
    throw InvalidConfig("qformer3d: blocks and d_llm must be positive");
  s.add(p + ".query", randn_scaled<T>(kQueryCount, cfg.d, rng, 0.02));
  for (int b = 0; b < cfg.blocks; ++b)
    nn::init_block(s, rng, p + ".blk" + std::to_string(b), cfg.d, /*cross=*/true);
  nn::init_linear(s, rng, p + ".proj", cfg.d, cfg.d_llm);
}

// The affine map into the language model's embedding width.
template <typename T>
int project_to_llm(ModelCtx<T>& mc, int tokens, const std::string& p) {
  return nn::linear(mc, tokens, p);
}

// Pre-projection forward: 32 queries share each block's self-attention with
// the scene tokens and the instruction, and cross-attend to the point tokens
// when any are given. Context rows ride along through the shared layer.
// Pass -1 for an absent input.
template <typename T>
int qformer3d_tokens(ModelCtx<T>& mc, int vas, const TextEmb& instr,
                     int points, const std::string& p,
                     const QFormer3DCfg& cfg) {
  if (vas < 0 && points < 0)
    throw EmptyInputError("qformer3d: need view or point features");
  if (vas >= 0 && (mc.tape.val(vas).rows() != kQueryCount ||
                   mc.tape.val(vas).cols() != cfg.d))
    throw ShapeError("qformer3d: scene tokens must be 32 x d");
  if (points >= 0 && mc.tape.val(points).cols() != cfg.d)
    throw ShapeError("qformer3d: point token width != d");

  int ictx = instruction_context(mc, instr);
  std::vector<int> parts;
  if (vas >= 0) parts.push_back(vas);
  if (ictx >= 0) parts.push_back(ictx);
  int ctx = parts.empty() ? -1
            : parts.size() == 1 ? parts[0]
                                : ad::concat_rows(mc.tape, parts);
  int q = mc.P(p + ".query");
  for (int b = 0; b < cfg.blocks; ++b) {
    nn::QfOut out = nn::qf_block(mc, q, ctx, points,
                                 p + ".blk" + std::to_string(b), cfg.heads);
    q = out.queries;
    ctx = out.context;
  }
  return q;
}

template <typename T>
SceneEmbedding forward_3d_aware(ModelCtx<T>& mc, int vas, const TextEmb& instr,
                                int points, const std::string& p,
                                const QFormer3DCfg& cfg) {
  SceneEmbedding out;
  int q = qformer3d_tokens(mc, vas, instr, points, p, cfg);
  out.tokens = project_to_llm(mc, q, p + ".proj");
  out.mode = vas >= 0 ? (points >= 0 ? SceneMode::full : SceneMode::views_only)
                      : SceneMode::points_only;
  return out;
}

// Copies the query bank and every block tensor from a trained per-view
// Q-Former into this one; the projector keeps its fresh initialization (the
// source has no counterpart for it). Source and target must agree exactly on
// width and depth; head count lives in the configs and must match by the
// caller's contract since the tensors cannot express it.
template <typename T>
void init_from_2d(ParameterStore<T>& s, const std::string& target,
                  const std::string& source) {
  auto suffixes = [&](const std::string& prefix, bool drop_proj) {
    std::vector<std::string> out;
    for (const auto& [name, e] : s) {
      if (name.rfind(prefix + ".", 0) != 0) continue;
      std::string suf = name.substr(prefix.size());
      if (drop_proj && suf.rfind(".proj.", 0) == 0) continue;
      out.push_back(suf);
    }
    return out;
  };
  std::vector<std::string> src = suffixes(source, false);
  std::vector<std::string> dst = suffixes(target, true);
  if (src.empty()) throw TransferError("init_from_2d: no source parameters");
  if (src != dst)
    throw TransferError("init_from_2d: source and target layouts differ");
  for (const std::string& suf : src) {
    const Mat<T>& from = s.tensor(source + suf);
    Mat<T>& to = s.tensor(target + suf);
    if (from.rows() != to.rows() || from.cols() != to.cols())
      throw TransferError("init_from_2d: shape mismatch at " + suf);
    to = from;
  }
}

}  // namespace argus
