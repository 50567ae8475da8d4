#pragma once
// Fusion decoder: recombines predicted structure (queries), content memory and
// the initial-frame embedding (contexts, in that order) into the next visual
// embedding. Zero tensors are legal stand-ins for either context — the
// structure-only decode mode — so nothing here special-cases them. Learned
// spatial codes are added to queries and both contexts; consistently permuting
// patches and code rows permutes the output identically.
#include <string>
#include <vector>

#include "strata/model/blocks.hpp"
#include "strata/model/config.hpp"

namespace strata::model {

template <typename T>
struct Fusion {
  struct Block {
    AttnIds self_a, cross_m, cross_e;
    MlpIds mlp;
  };
  int ws = -1, bs = -1;                    // d_s -> D_e query projection
  int pos_q = -1, pos_c = -1, pos_e = -1;  // learned spatial codes
  std::vector<Block> blocks;
  LnIds ln_f;
  int w_out = -1, b_out = -1;
  int heads = 4;

  Fusion() = default;
  Fusion(ParamStore<T>& ps, const ModelConfig& c, const std::string& p) : heads(c.fus_heads) {
    int64_t de = c.d_e, dc = c.d_c, P = c.P();
    ws = ps.add(p + ".q.w", Shape{int64_t(c.d_s), de}, Init::Xavier);
    bs = ps.add(p + ".q.b", Shape{de}, Init::Zeros);
    pos_q = ps.add(p + ".pos_q", Shape{P, de}, Init::Normal, 0.02);
    pos_c = ps.add(p + ".pos_c", Shape{P, dc}, Init::Normal, 0.02);
    pos_e = ps.add(p + ".pos_e", Shape{P, de}, Init::Normal, 0.02);
    for (int i = 0; i < c.fus_depth; ++i) {
      Block bl;
      std::string base = p + ".block" + std::to_string(i);
      bl.self_a = add_attn(ps, base + ".self", c.d_e, c.d_e, c.d_e);
      bl.cross_m = add_attn(ps, base + ".xmem", c.d_e, c.d_c, c.d_e);
      bl.cross_e = add_attn(ps, base + ".xinit", c.d_e, c.d_e, c.d_e);
      bl.mlp = add_mlp(ps, base + ".mlp", c.d_e, c.mlp_ratio * c.d_e);
      blocks.push_back(bl);
    }
    ln_f = add_ln(ps, p + ".final", c.d_e);
    w_out = ps.add(p + ".out.w", Shape{de, de}, Init::Xavier);
    b_out = ps.add(p + ".out.b", Shape{de}, Init::Zeros);
  }

  // s_hat: [B, S, P, d_s] predicted structure; e0: [B, P, D_e] raw initial
  // embedding; c_mem: [B, S, P, d_c] content memory through each step.
  // Returns [B, S, P, D_e].
  Var<T> fuse(Graph<T>& g, ParamStore<T>& ps, Var<T> s_hat, Var<T> e0, Var<T> c_mem) const {
    const Shape ss = g.val(s_hat).shape;
    STRATA_CHECK(ss.size() == 4, "fusion expects [B,S,P,d_s]");
    int64_t B = ss[0], S = ss[1], P = ss[2];
    int64_t de = ps[ws].w.shape[1], dc = g.val(c_mem).shape.back();
    Var<T> x = badd(linear(s_hat, g.param(ps, ws), g.param(ps, bs)), g.param(ps, pos_q));
    Var<T> cm = badd(c_mem, g.param(ps, pos_c));
    Var<T> e0p = badd(e0, g.param(ps, pos_e));
    // flatten steps: contexts attach per (batch, step); e0 repeats across steps
    Var<T> xf = reshape(x, {B * S, P, de});
    Var<T> cmf = reshape(cm, {B * S, P, dc});
    Var<T> e0f = repeat_lead(e0p, S);  // [B*S, P, D_e], batch-major
    for (const Block& bl : blocks) {
      xf = self_attn_block(g, ps, bl.self_a, xf, heads);
      xf = cross_attn_block(g, ps, bl.cross_m, xf, cmf, heads);
      xf = cross_attn_block(g, ps, bl.cross_e, xf, e0f, heads);
      xf = mlp_block(g, ps, bl.mlp, xf);
    }
    Var<T> out = linear(ln_affine(g, ps, ln_f, xf), g.param(ps, w_out), g.param(ps, b_out));
    return reshape(out, {B, S, P, de});
  }
};

}  // namespace strata::model
