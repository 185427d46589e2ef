#pragma once

#include <string>
#include <vector>

#include "params.hpp"
#include "tape.hpp"

namespace argus {
namespace nn {

// ---- parameter registration -------------------------------------------------

template <typename T>
void init_linear(ParameterStore<T>& s, Rng& rng, const std::string& p,
                 Eigen::Index in, Eigen::Index out) {
  s.add(p + ".W", randn_scaled<T>(in, out, rng, 1.0 / std::sqrt(double(in))));
  s.add(p + ".b", zeros<T>(1, out));
}

template <typename T>
void init_layernorm(ParameterStore<T>& s, const std::string& p, Eigen::Index d) {
  s.add(p + ".g", Mat<T>::Ones(1, d));
  s.add(p + ".b", zeros<T>(1, d));
}

// The key projection carries no bias: a key bias shifts every score in a
// softmax row by the same amount, so its gradient is identically zero and it
// would only add dead parameters.
template <typename T>
void init_attention(ParameterStore<T>& s, Rng& rng, const std::string& p,
                    Eigen::Index d) {
  init_linear(s, rng, p + ".q", d, d);
  s.add(p + ".k.W", randn_scaled<T>(d, d, rng, 1.0 / std::sqrt(double(d))));
  init_linear(s, rng, p + ".v", d, d);
  init_linear(s, rng, p + ".o", d, d);
}

// Pre-norm transformer block: self-attention, optional cross-attention,
// feed-forward with 4x hidden width.
template <typename T>
void init_block(ParameterStore<T>& s, Rng& rng, const std::string& p,
                Eigen::Index d, bool cross) {
  init_layernorm(s, p + ".ln1", d);
  init_attention(s, rng, p + ".attn", d);
  if (cross) {
    init_layernorm(s, p + ".ln2", d);
    init_attention(s, rng, p + ".xattn", d);
  }
  init_layernorm(s, p + ".ln3", d);
  init_linear(s, rng, p + ".ffn1", d, 4 * d);
  init_linear(s, rng, p + ".ffn2", 4 * d, d);
}

// ---- forward pieces ---------------------------------------------------------

template <typename T>
int linear(ModelCtx<T>& mc, int x, const std::string& p) {
  return ad::add_rowvec(mc.tape, ad::matmul(mc.tape, x, mc.P(p + ".W")),
                        mc.P(p + ".b"));
}

template <typename T>
int layernorm(ModelCtx<T>& mc, int x, const std::string& p) {
  return ad::layer_norm(mc.tape, x, mc.P(p + ".g"), mc.P(p + ".b"));
}

// Multi-head scaled dot-product attention over already-projected q/k/v,
// followed by the output projection. d must divide evenly into heads.
template <typename T>
int attention(Tape<T>& t, int q, int k, int v, int heads, int wo, int bo,
              bool causal = false) {
  const Eigen::Index d = t.val(q).cols();
  check_shape(heads > 0 && d % heads == 0, "attention: heads must divide d");
  check_shape(t.val(k).cols() == d && t.val(v).cols() == d,
              "attention: q/k/v dims differ");
  check_shape(t.val(k).rows() == t.val(v).rows(),
              "attention: k/v row counts differ");
  const Eigen::Index dh = d / heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<int> head_out;
  head_out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    int qh = ad::slice_cols(t, q, h * dh, dh);
    int kh = ad::slice_cols(t, k, h * dh, dh);
    int vh = ad::slice_cols(t, v, h * dh, dh);
    int scores = ad::scale(t, ad::matmul_nt(t, qh, kh), inv_sqrt);
    int probs = ad::softmax_rows(t, scores, causal);
    head_out.push_back(ad::matmul(t, probs, vh));
  }
  int cat = heads == 1 ? head_out[0] : ad::concat_cols(t, head_out);
  return ad::add_rowvec(t, ad::matmul(t, cat, wo), bo);
}

// q/k/v projections + attention under one prefix. kv == x gives
// self-attention.
template <typename T>
int mha(ModelCtx<T>& mc, int x, int kv, const std::string& p, int heads,
        bool causal = false) {
  int q = linear(mc, x, p + ".q");
  int k = ad::matmul(mc.tape, kv, mc.P(p + ".k.W"));
  int v = linear(mc, kv, p + ".v");
  return attention(mc.tape, q, k, v, heads, mc.P(p + ".o.W"), mc.P(p + ".o.b"),
                   causal);
}

template <typename T>
int ffn(ModelCtx<T>& mc, int x, const std::string& p) {
  return linear(mc, ad::gelu(mc.tape, linear(mc, x, p + ".ffn1")), p + ".ffn2");
}

// Pre-norm block. ctx >= 0 enables the cross-attention sublayer (queries from
// the running stream, keys/values from ctx). causal applies to self-attention.
template <typename T>
int transformer_block(ModelCtx<T>& mc, int x, const std::string& p, int heads,
                      int ctx = -1, bool causal = false) {
  Tape<T>& t = mc.tape;
  int a_in = layernorm(mc, x, p + ".ln1");
  int h = ad::add(t, x, mha(mc, a_in, a_in, p + ".attn", heads, causal));
  if (ctx >= 0) {
    int c_in = layernorm(mc, h, p + ".ln2");
    h = ad::add(t, h, mha(mc, c_in, ctx, p + ".xattn", heads));
  }
  int f_in = layernorm(mc, h, p + ".ln3");
  return ad::add(t, h, ffn(mc, f_in, p));
}

// Q-Former style block: one self-attention shared across query and context
// rows (they are concatenated and attended jointly), then cross-attention and
// the feed-forward on the query rows only. Context rows propagate with the
// self-attention update. Returns {queries, context}; context id is -1 when
// none was given.
struct QfOut {
  int queries;
  int context;
};

template <typename T>
QfOut qf_block(ModelCtx<T>& mc, int queries, int ctx, int kv,
               const std::string& p, int heads) {
  Tape<T>& t = mc.tape;
  const Eigen::Index nq = t.val(queries).rows();
  int joint = ctx >= 0 ? ad::concat_rows(t, std::vector<int>{queries, ctx})
                       : queries;
  int a_in = layernorm(mc, joint, p + ".ln1");
  int a = ad::add(t, joint, mha(mc, a_in, a_in, p + ".attn", heads));
  int qrows = ctx >= 0 ? ad::slice_rows(t, a, 0, nq) : a;
  int crows = ctx >= 0 ? ad::slice_rows(t, a, nq, t.val(a).rows() - nq) : -1;
  if (kv >= 0) {
    int c_in = layernorm(mc, qrows, p + ".ln2");
    qrows = ad::add(t, qrows, mha(mc, c_in, kv, p + ".xattn", heads));
  }
  int f_in = layernorm(mc, qrows, p + ".ln3");
  qrows = ad::add(t, qrows, ffn(mc, f_in, p));
  return {qrows, crows};
}

// ---- position encodings -----------------------------------------------------

// Standard sinusoidal position encoding for sequence positions 0..len-1.
template <typename T>
Mat<T> sinusoidal_pe(Eigen::Index len, Eigen::Index d) {
  Mat<T> pe = Mat<T>::Zero(len, d);
  for (Eigen::Index pos = 0; pos < len; ++pos) {
    for (Eigen::Index i = 0; i < d; i += 2) {
      double div = std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<T>(std::sin(pos / div));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(pos / div));
    }
  }
  return pe;
}

// Sinusoidal encoding of 3D coordinates (meters). d/6 frequency pairs per
// axis, octave-spaced; leftover dims stay zero.
template <typename T>
Mat<T> sincos_3d(const Mat<T>& xyz, Eigen::Index d) {
  check_shape(xyz.cols() == 3, "sincos_3d: positions must be N x 3");
  const Eigen::Index pairs = d / 6;
  Mat<T> pe = Mat<T>::Zero(xyz.rows(), d);
  for (Eigen::Index n = 0; n < xyz.rows(); ++n) {
    Eigen::Index c = 0;
    for (int axis = 0; axis < 3; ++axis) {
      for (Eigen::Index j = 0; j < pairs; ++j) {
        double f = std::pow(2.0, static_cast<double>(j));
        double v = static_cast<double>(xyz(n, axis)) * f;
        pe(n, c++) = static_cast<T>(std::sin(v));
        pe(n, c++) = static_cast<T>(std::cos(v));
      }
    }
  }
  return pe;
}

}  // namespace nn
}  // namespace argus
