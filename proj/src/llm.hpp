#pragma once

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fusion.hpp"
#include "qformer3d.hpp"

namespace argus {

// Small frozen encoder-decoder language model. The encoder reads 32 scene
// positions (projected queries, or their text stand-ins during stub
// pretraining) followed by the instruction; the decoder is causal with
// cross-attention to the encoder output and a head tied to the embedding.
struct LmCfg {
  int vocab = 0;
  int d_llm = 128;
  int heads = 4;
  int enc_blocks = 2;
  int dec_blocks = 2;
};

struct GenerationConfig {
  int max_new_tokens = 8;
  int eos = Vocab::eos;
};

template <typename T>
void init_lm(ParameterStore<T>& s, Rng& rng, const std::string& p,
             const LmCfg& cfg) {
  if (cfg.vocab < 5) throw InvalidConfig("lm: vocab too small");
  if (cfg.d_llm < 1 || cfg.heads < 1 || cfg.d_llm % cfg.heads != 0)
    throw InvalidConfig("lm: head count must divide d_llm");
  if (cfg.enc_blocks < 1 || cfg.dec_blocks < 1)
    throw InvalidConfig("lm: need encoder and decoder blocks");
  s.add(p + ".embed", randn_scaled<T>(cfg.vocab, cfg.d_llm, rng, 0.02));
  for (int b = 0; b < cfg.enc_blocks; ++b)
    nn::init_block(s, rng, p + ".enc" + std::to_string(b), cfg.d_llm,
                   /*cross=*/false);
  nn::init_layernorm(s, p + ".enc_ln", cfg.d_llm);
  for (int b = 0; b < cfg.dec_blocks; ++b)
    nn::init_block(s, rng, p + ".dec" + std::to_string(b), cfg.d_llm,
                   /*cross=*/true);
  nn::init_layernorm(s, p + ".dec_ln", cfg.d_llm);
}

// Token rows without positions; positions go onto assembled sequences.
template <typename T>
int lm_embed_rows(ModelCtx<T>& mc, const std::vector<int>& ids,
                  const std::string& p) {
  if (ids.empty()) throw EmptyInputError("lm: no token ids");
  int table = mc.P(p + ".embed");
  const Eigen::Index V = mc.tape.val(table).rows();
  for (int id : ids)
    if (id < 0 || id >= V)
      throw VocabError("lm: token id " + std::to_string(id) +
                       " outside vocab of " + std::to_string(V));
  return ad::rows_gather(mc.tape, table, ids);
}

// Encoder sequence: [32-row prefix if given, bare context ids if given,
// instruction ids], with sinusoidal positions over the assembled whole. The
// projected scene tokens and their 32-word text stand-ins land on the same
// positions, which is what lets one frozen model serve both regimes.
template <typename T>
int lm_encoder_input(ModelCtx<T>& mc, int prefix,
                     const std::vector<int>& context_ids,
                     const std::vector<int>& instr_ids, const std::string& p,
                     const LmCfg& cfg) {
  if (instr_ids.empty()) throw EmptyInputError("lm: no instruction ids");
  if (prefix >= 0 && (mc.tape.val(prefix).rows() != kQueryCount ||
                      mc.tape.val(prefix).cols() != cfg.d_llm))
    throw ShapeError("lm: prefix must be 32 x d_llm");
  std::vector<int> parts;
  if (prefix >= 0) parts.push_back(prefix);
  if (!context_ids.empty()) parts.push_back(lm_embed_rows(mc, context_ids, p));
  parts.push_back(lm_embed_rows(mc, instr_ids, p));
  int x = parts.size() == 1 ? parts[0] : ad::concat_rows(mc.tape, parts);
  Mat<T> pe = nn::sinusoidal_pe<T>(mc.tape.val(x).rows(), cfg.d_llm);
  return ad::add(mc.tape, x, ad::input(mc.tape, std::move(pe)));
}

template <typename T>
int lm_encode(ModelCtx<T>& mc, int enc_input, const std::string& p,
              const LmCfg& cfg) {
  int x = enc_input;
  for (int b = 0; b < cfg.enc_blocks; ++b)
    x = nn::transformer_block(mc, x, p + ".enc" + std::to_string(b), cfg.heads);
  return nn::layernorm(mc, x, p + ".enc_ln");
}

template <typename T>
int lm_decode(ModelCtx<T>& mc, const std::vector<int>& dec_ids, int enc_out,
              const std::string& p, const LmCfg& cfg) {
  int x = lm_embed_rows(mc, dec_ids, p);
  Mat<T> pe = nn::sinusoidal_pe<T>(mc.tape.val(x).rows(), cfg.d_llm);
  x = ad::add(mc.tape, x, ad::input(mc.tape, std::move(pe)));
  for (int b = 0; b < cfg.dec_blocks; ++b)
    x = nn::transformer_block(mc, x, p + ".dec" + std::to_string(b), cfg.heads,
                              enc_out, /*causal=*/true);
  return nn::layernorm(mc, x, p + ".dec_ln");
}

// Tied head: decoder states against the embedding table.
template <typename T>
int lm_logits(ModelCtx<T>& mc, int dec_out, const std::string& p) {
  return ad::matmul_nt(mc.tape, dec_out, mc.P(p + ".embed"));
}

// Teacher-forced sequence loss. answer_ids comes bos-wrapped from
// encode_text; an answer with no real token between the markers has nothing
// to predict.
template <typename T>
int lm_loss_node(ModelCtx<T>& mc, int prefix,
                 const std::vector<int>& context_ids,
                 const std::vector<int>& instr_ids,
                 const std::vector<int>& answer_ids, const std::string& p,
                 const LmCfg& cfg) {
  if (answer_ids.size() < 3)
    throw UndefinedLossError("lm: empty answer");
  int enc = lm_encode(mc, lm_encoder_input(mc, prefix, context_ids, instr_ids,
                                           p, cfg),
                      p, cfg);
  std::vector<int> dec_in(answer_ids.begin(), answer_ids.end() - 1);
  std::vector<int> targets(answer_ids.begin() + 1, answer_ids.end());
  int dec = lm_decode(mc, dec_in, enc, p, cfg);
  return ad::cross_entropy(mc.tape, lm_logits(mc, dec, p), targets,
                           Vocab::pad);
}

// Loss against a projected scene embedding; the prefix is always 32 tokens.
template <typename T>
int lm_loss(ModelCtx<T>& mc, const SceneEmbedding& scene,
            const std::vector<int>& instr_ids,
            const std::vector<int>& answer_ids, const std::string& p,
            const LmCfg& cfg) {
  if (scene.tokens < 0) throw ShapeError("lm: missing scene prefix");
  return lm_loss_node(mc, scene.tokens, {}, instr_ids, answer_ids, p, cfg);
}

// Greedy decoding until eos or the budget runs out. Returns decoded text
// (specials stripped).
template <typename T>
std::string lm_generate(ModelCtx<T>& mc, int prefix,
                        const std::vector<int>& context_ids,
                        const std::vector<int>& instr_ids, const Vocab& v,
                        const std::string& p, const LmCfg& cfg,
                        const GenerationConfig& gen) {
  if (gen.max_new_tokens < 1)
    throw InvalidConfig("lm: max_new_tokens must be at least 1");
  int enc = lm_encode(mc, lm_encoder_input(mc, prefix, context_ids, instr_ids,
                                           p, cfg),
                      p, cfg);
  std::vector<int> out_ids = {Vocab::bos};
  for (int step = 0; step < gen.max_new_tokens; ++step) {
    int dec = lm_decode(mc, out_ids, enc, p, cfg);
    int logits = lm_logits(mc, dec, p);
    const Mat<T>& L = mc.tape.val(logits);
    Eigen::Index next = 0;
    L.row(L.rows() - 1).maxCoeff(&next);
    out_ids.push_back(static_cast<int>(next));
    if (static_cast<int>(next) == gen.eos) break;
  }
  return decode_text(v, out_ids);
}

template <typename T>
std::string lm_generate(ModelCtx<T>& mc, const SceneEmbedding& scene,
                        const std::vector<int>& instr_ids, const Vocab& v,
                        const std::string& p, const LmCfg& cfg,
                        const GenerationConfig& gen) {
  if (scene.tokens < 0) throw ShapeError("lm: missing scene prefix");
  return lm_generate<T>(mc, scene.tokens, {}, instr_ids, v, p, cfg, gen);
}

// ---- stub pretraining -------------------------------------------------------

// Context text carries the 32 scene-description words followed by the
// question; answers are plain text.
struct StubPair {
  std::string context;
  std::string answer;
};

// Splits a stub context into the 32 bare description ids and the bos-wrapped
// remainder.
inline std::pair<std::vector<int>, std::vector<int>> split_stub_context(
    const Vocab& v, const std::string& context, int max_len) {
  std::istringstream in(context);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);
  if (static_cast<int>(words.size()) <= kQueryCount)
    throw InvalidConfig("stub context needs 32 description words + a question");
  std::vector<int> desc;
  for (int i = 0; i < kQueryCount; ++i) desc.push_back(v.id(words[static_cast<size_t>(i)]));
  std::string rest;
  for (size_t i = kQueryCount; i < words.size(); ++i) {
    if (!rest.empty()) rest += ' ';
    rest += words[i];
  }
  return {desc, encode_text(v, rest, max_len)};
}

// Text-only seq2seq training of the stub, then a permanent freeze. Constant
// learning rate; the published warmup/decay schedules belong to the later
// stages, not to this plumbing. Returns the per-step mean losses.
template <typename T>
std::vector<double> pretrain_stub(ParameterStore<T>& ps, const Vocab& v,
                                  const std::vector<StubPair>& pairs,
                                  const std::string& p, const LmCfg& cfg,
                                  int steps, int batch, uint64_t seed,
                                  double lr = 1e-3, int max_len = 24) {
  if (pairs.empty()) throw EmptyInputError("pretrain_stub: no pairs");
  if (steps < 1 || batch < 1)
    throw InvalidConfig("pretrain_stub: steps and batch must be positive");
  Rng init_rng = make_rng(seed, "stub-init");
  init_lm(ps, init_rng, p, cfg);
  Rng batch_rng = make_rng(seed, "stub-batch");
  OptimizerState<T> opt;
  std::vector<double> losses;
  const int n = static_cast<int>(pairs.size());
  for (int step = 0; step < steps; ++step) {
    Tape<T> t;
    ModelCtx<T> mc{t, ps, true};
    std::vector<int> parts;
    for (int b = 0; b < batch; ++b) {
      const StubPair& pair = pairs[static_cast<size_t>(uniform_int(batch_rng, 0, n - 1))];
      auto [desc, instr] = split_stub_context(v, pair.context, max_len);
      std::vector<int> answer = encode_text(v, pair.answer, max_len);
      parts.push_back(lm_loss_node(mc, -1, desc, instr, answer, p, cfg));
    }
    int loss = ad::average_scalars(t, parts);
    losses.push_back(static_cast<double>(t.val(loss)(0, 0)));
    t.backward(loss);
    GradStore<T> grads;
    mc.flush_grads(grads);
    adamw_step(ps, grads, opt, lr);
  }
  ps.set_frozen_prefix(p, true);
  return losses;
}

}  // namespace argus
