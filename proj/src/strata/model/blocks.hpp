#pragma once
// Shared transformer building blocks: affine layer norm, multi-head attention
// over the second-to-last axis, and pre-norm residual MLPs. All builders take
// the parameter store explicitly so modules stay stateless between calls.
#include <cmath>
#include <string>
#include <vector>

#include "strata/core/graph.hpp"
#include "strata/core/params.hpp"

namespace strata::model {

using namespace strata;

struct LnIds {
  int g = -1, b = -1;
};
struct AttnIds {
  LnIds ln;
  int wq = -1, wk = -1, wv = -1, wo = -1;
};
struct MlpIds {
  LnIds ln;
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

template <typename T>
LnIds add_ln(ParamStore<T>& ps, const std::string& p, int d) {
  return {ps.add(p + ".ln_g", Shape{int64_t(d)}, Init::Ones),
          ps.add(p + ".ln_b", Shape{int64_t(d)}, Init::Zeros)};
}

// Attention projecting queries from width dq and keys/values from width dkv
// into `inner` (= heads * head_dim), with output projected back to dq.
template <typename T>
AttnIds add_attn(ParamStore<T>& ps, const std::string& p, int dq, int dkv, int inner) {
  AttnIds a;
  a.ln = add_ln(ps, p, dq);
  a.wq = ps.add(p + ".wq", Shape{int64_t(dq), int64_t(inner)}, Init::Xavier);
  a.wk = ps.add(p + ".wk", Shape{int64_t(dkv), int64_t(inner)}, Init::Xavier);
  a.wv = ps.add(p + ".wv", Shape{int64_t(dkv), int64_t(inner)}, Init::Xavier);
  a.wo = ps.add(p + ".wo", Shape{int64_t(inner), int64_t(dq)}, Init::Xavier);
  return a;
}

template <typename T>
MlpIds add_mlp(ParamStore<T>& ps, const std::string& p, int d, int hidden) {
  MlpIds m;
  m.ln = add_ln(ps, p, d);
  m.w1 = ps.add(p + ".w1", Shape{int64_t(d), int64_t(hidden)}, Init::Xavier);
  m.b1 = ps.add(p + ".b1", Shape{int64_t(hidden)}, Init::Zeros);
  m.w2 = ps.add(p + ".w2", Shape{int64_t(hidden), int64_t(d)}, Init::Xavier);
  m.b2 = ps.add(p + ".b2", Shape{int64_t(d)}, Init::Zeros);
  return m;
}

template <typename T>
Var<T> ln_affine(Graph<T>& g, ParamStore<T>& ps, LnIds ids, Var<T> x) {
  return badd(bmul(layernorm(x), g.param(ps, ids.g)), g.param(ps, ids.b));
}

// Split [..., S, inner] into heads: [..., H, S, dh].
template <typename T>
Var<T> split_heads(Var<T> x, int heads) {
  const Shape s = x.g->val(x).shape;
  int r = int(s.size());
  int64_t S = s[size_t(r - 2)], inner = s[size_t(r - 1)];
  Shape hs(s.begin(), s.end() - 1);
  hs.push_back(heads);
  hs.push_back(inner / heads);
  Var<T> y = reshape(x, hs);  // [..., S, H, dh]
  std::vector<int> axes(size_t(r + 1));
  for (int i = 0; i < r - 2; ++i) axes[size_t(i)] = i;
  axes[size_t(r - 2)] = r - 1;  // H
  axes[size_t(r - 1)] = r - 2;  // S
  axes[size_t(r)] = r;          // dh
  (void)S;
  return permute(y, axes);
}

// Inverse of split_heads: [..., H, S, dh] -> [..., S, H*dh].
template <typename T>
Var<T> merge_heads(Var<T> x) {
  const Shape s = x.g->val(x).shape;
  int r = int(s.size());
  std::vector<int> axes(static_cast<size_t>(r));
  for (int i = 0; i < r - 3; ++i) axes[size_t(i)] = i;
  axes[size_t(r - 3)] = r - 2;  // S
  axes[size_t(r - 2)] = r - 3;  // H
  axes[size_t(r - 1)] = r - 1;  // dh
  Var<T> y = permute(x, axes);  // [..., S, H, dh]
  const Shape ys = y.g->val(y).shape;
  Shape os(ys.begin(), ys.end() - 2);
  os.push_back(ys[size_t(r - 2)] * ys[size_t(r - 1)]);
  return reshape(y, os);
}

// Multi-head attention: queries from xq [..., Q, dq], keys/values from
// xkv [..., S, dkv] (matching leading dims). Optional additive mask broadcast
// over the trailing [Q, S] logits; optional rotary phases on q and k (self-
// attention over time). When `capture` is non-null the pre-mask scaled logits
// [..., H, Q, S] are copied out (debug/test hook).
template <typename T>
Var<T> mha(Graph<T>& g, ParamStore<T>& ps, const AttnIds& a, Var<T> xq, Var<T> xkv, int heads,
           const Tensor<T>* addmask = nullptr, bool rope = false, int64_t rope_offset = 0,
           std::vector<Tensor<T>>* capture = nullptr) {
  int64_t inner = ps[a.wq].w.shape[1];
  int64_t dh = inner / heads;
  Var<T> q = split_heads(matmul(xq, g.param(ps, a.wq)), heads);   // [..., H, Q, dh]
  Var<T> k = split_heads(matmul(xkv, g.param(ps, a.wk)), heads);  // [..., H, S, dh]
  Var<T> v = split_heads(matmul(xkv, g.param(ps, a.wv)), heads);
  if (rope) {
    q = rotary(q, rope_offset);
    k = rotary(k, rope_offset);
  }
  Var<T> logits = scale(matmul(q, transpose_last(k)), T(1) / std::sqrt(T(dh)));
  if (capture) capture->push_back(g.val(logits));
  Var<T> att = softmax_last(logits, addmask);
  Var<T> ctx = merge_heads(matmul(att, v));  // [..., Q, inner]
  return matmul(ctx, g.param(ps, a.wo));
}

// Pre-norm residual attention: x + MHA(LN(x)) with x as both queries and kv.
template <typename T>
Var<T> self_attn_block(Graph<T>& g, ParamStore<T>& ps, const AttnIds& a, Var<T> x, int heads,
                       const Tensor<T>* addmask = nullptr, bool rope = false,
                       int64_t rope_offset = 0, std::vector<Tensor<T>>* capture = nullptr) {
  Var<T> h = ln_affine(g, ps, a.ln, x);
  return add(x, mha(g, ps, a, h, h, heads, addmask, rope, rope_offset, capture));
}

// Pre-norm residual cross-attention: x + MHA(LN(x), ctx).
template <typename T>
Var<T> cross_attn_block(Graph<T>& g, ParamStore<T>& ps, const AttnIds& a, Var<T> x, Var<T> ctx,
                        int heads) {
  return add(x, mha(g, ps, a, ln_affine(g, ps, a.ln, x), ctx, heads));
}

// Pre-norm residual MLP: x + W2 silu(W1 LN(x) + b1) + b2.
template <typename T>
Var<T> mlp_block(Graph<T>& g, ParamStore<T>& ps, const MlpIds& m, Var<T> x) {
  Var<T> h = linear(ln_affine(g, ps, m.ln, x), g.param(ps, m.w1), g.param(ps, m.b1));
  return add(x, linear(silu(h), g.param(ps, m.w2), g.param(ps, m.b2)));
}

// Plain 2-layer per-row MLP head: silu hidden, affine out.
struct Mlp2Ids {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
template <typename T>
Mlp2Ids add_mlp2(ParamStore<T>& ps, const std::string& p, int din, int hidden, int dout) {
  Mlp2Ids m;
  m.w1 = ps.add(p + ".w1", Shape{int64_t(din), int64_t(hidden)}, Init::Xavier);
  m.b1 = ps.add(p + ".b1", Shape{int64_t(hidden)}, Init::Zeros);
  m.w2 = ps.add(p + ".w2", Shape{int64_t(hidden), int64_t(dout)}, Init::Xavier);
  m.b2 = ps.add(p + ".b2", Shape{int64_t(dout)}, Init::Zeros);
  return m;
}
template <typename T>
Var<T> mlp2(Graph<T>& g, ParamStore<T>& ps, const Mlp2Ids& m, Var<T> x) {
  return linear(silu(linear(x, g.param(ps, m.w1), g.param(ps, m.b1))), g.param(ps, m.w2),
                g.param(ps, m.b2));
}

}  // namespace strata::model
