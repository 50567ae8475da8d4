#pragma once
// The dual-pathway world model: backbone token refinement, structure pathway
// (encoder + IDM + FDM + optional bottleneck), content pathway (encoder +
// gated linear recurrence memory), and the fusion decoder. Owns the parameter
// store; exposes the teacher-forced training pass, autoregressive rollouts
// (cached inference path and recomputing training path), and inference
// helpers used by the experiment drivers.
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "strata/model/backbone.hpp"
#include "strata/model/config.hpp"
#include "strata/model/dynamics.hpp"
#include "strata/model/fusion.hpp"
#include "strata/model/memory.hpp"

namespace strata::model {

template <typename T>
struct TeacherOut {
  Var<T> tokens;     // [B, T, P, D_e] backbone outputs
  Var<T> s;          // [B, T, P, d_s]
  Var<T> ds;         // [B, S, P, d_s], S = T-1  (dynamics only)
  Var<T> z_raw;      // [B, S, d_z] teacher IDM outputs (dynamics only)
  Var<T> z;          // post-bottleneck actions fed to the FDM
  Var<T> z_bwd_raw;  // IDM of the time-reversed, negated differences, re-aligned
  Var<T> z_student;  // IDM(s_hat_{t+1} - s_t)
  Var<T> fdm_res;    // [B, S, P, d_s] residual FDM output
  Var<T> s_hat;      // [B, S, P, d_s] predicted next structure
  Var<T> c_mem;      // [B, T, P, d_c] (content pathway only)
  Var<T> e_hat;      // [B, S, P, D_e] predicted embeddings
  Var<T> bneck_loss; // scalar (when has_bneck)
  bool has_dyn = true, has_content = true, has_bneck = false;
};

template <typename T>
struct RolloutOut {
  Tensor<T> e_hat;  // [B, H, P, D_e]
  Tensor<T> s_hat;  // [B, H, P, d_s]
};

template <typename T>
struct TrainRollout {
  Var<T> e_hat;  // [B, H, P, D_e]
  Var<T> s_hat;  // [B, H, P, d_s]
};

template <typename T>
struct WorldModel {
  ModelConfig cfg;
  ParamStore<T> ps;
  uint64_t tok_hash = 0;  // frozen tokenizer weight hash this model is bound to

  Backbone<T> backbone;
  Mlp2Ids enc_s;
  Idm<T> idm;
  Fdm<T> fdm;
  BottleneckIds bneck;
  Mlp2Ids enc_c;
  Memory<T> memory;
  Fusion<T> fusion;

  WorldModel(const ModelConfig& c, uint64_t seed, uint64_t tokenizer_hash)
      : cfg(c), ps(seed), tok_hash(tokenizer_hash) {
    cfg.validate();
    backbone = Backbone<T>(ps, cfg, "backbone");
    enc_s = add_mlp2(ps, "enc_s", cfg.d_e, cfg.enc_hidden, cfg.d_s);
    if (cfg.ablation != Ablation::NoIdmFdm) {
      idm = Idm<T>(ps, cfg, "idm");
      fdm = Fdm<T>(ps, cfg, "fdm");
      bneck = add_bottleneck(ps, cfg, "bneck");
    }
    if (cfg.ablation != Ablation::NoContent) {
      enc_c = add_mlp2(ps, "enc_c", cfg.d_e, cfg.enc_hidden, cfg.d_c);
      memory = Memory<T>(ps, cfg, "memory");
    }
    fusion = Fusion<T>(ps, cfg, "fusion");
  }

  bool has_dyn() const { return cfg.ablation != Ablation::NoIdmFdm; }
  bool has_content() const { return cfg.ablation != Ablation::NoContent; }

  // -------------------------------------------------------------------------
  // Teacher-forced pass over a clip. e: [B, T, P, D_e] with T >= 2.
  // `bneck_noise`: standard-normal [B, T-1, d_z] for stochastic bottlenecks
  // during training; nullptr selects the deterministic inference variant.
  TeacherOut<T> teacher_forward(Graph<T>& g, Var<T> e, const Tensor<T>* bneck_noise = nullptr) {
    const Shape es = g.val(e).shape;
    STRATA_CHECK(es.size() == 4 && es[1] >= 2, "teacher pass expects [B,T,P,D_e], T >= 2");
    int64_t B = es[0], Tt = es[1], P = es[2], S = Tt - 1;
    TeacherOut<T> out;
    out.has_dyn = has_dyn();
    out.has_content = has_content();

    out.tokens = backbone.refine(g, ps, e);
    out.s = mlp2(g, ps, enc_s, out.tokens);  // [B,T,P,d_s]
    Var<T> s_prev = slice_axis(out.s, 1, 0, S);
    Var<T> s_next = slice_axis(out.s, 1, 1, S);

    if (out.has_dyn) {
      out.ds = sub(s_next, s_prev);
      out.z_raw = idm.infer(g, ps, out.ds);
      BottleneckOut<T> bo = apply_bottleneck(g, ps, bneck, cfg, out.z_raw, bneck_noise);
      out.z = bo.z;
      out.has_bneck = bo.has_loss;
      if (bo.has_loss) out.bneck_loss = bo.extra_loss;
      out.fdm_res = fdm.forward_seq(g, ps, s_prev, out.z);
      out.s_hat = add(s_prev, out.fdm_res);
      // backward actions: reverse time, negate differences, re-align
      out.z_bwd_raw = reverse_axis(idm.infer(g, ps, neg(reverse_axis(out.ds, 1))), 1);
      out.z_student = idm.infer(g, ps, sub(out.s_hat, s_prev));
    } else {
      out.s_hat = s_next;  // structure passthrough: true next structure
    }

    Var<T> c_ctx;
    if (out.has_content) {
      Var<T> c = mlp2(g, ps, enc_c, out.tokens);   // [B,T,P,d_c]
      out.c_mem = memory.forward(g, ps, c);        // [B,T,P,d_c]
      c_ctx = slice_axis(out.c_mem, 1, 0, S);      // memory through t for e_hat_{t+1}
    } else {
      c_ctx = g.leaf(Tensor<T>(Shape{B, S, P, int64_t(cfg.d_c)}));
    }
    Var<T> e0 = reshape(slice_axis(e, 1, 0, 1), {B, P, es[3]});  // raw first frame
    out.e_hat = fusion.fuse(g, ps, out.s_hat, e0, c_ctx);
    return out;
  }

  // -------------------------------------------------------------------------
  // Latent actions of a clip (post-bottleneck, deterministic inference
  // variant): e [B, T, P, D_e] -> [B, T-1, d_z].
  Tensor<T> infer_actions(const Tensor<T>& e) {
    STRATA_CHECK(has_dyn(), "structure passthrough has no latent actions");
    Graph<T> g(false);
    Var<T> ev = g.leaf(e);
    Var<T> x = backbone.refine(g, ps, ev);
    Var<T> s = mlp2(g, ps, enc_s, x);
    int64_t S = e.shape[1] - 1;
    Var<T> ds = sub(slice_axis(s, 1, 1, S), slice_axis(s, 1, 0, S));
    Var<T> z_raw = idm.infer(g, ps, ds);
    return g.val(apply_bottleneck(g, ps, bneck, cfg, z_raw, nullptr).z);
  }

  // Structure sequence of a clip: [B,T,P,D_e] -> [B,T,P,d_s].
  Tensor<T> encode_structure(const Tensor<T>& e) {
    Graph<T> g(false);
    Var<T> x = backbone.refine(g, ps, g.leaf(e));
    return g.val(mlp2(g, ps, enc_s, x));
  }

  // Content memory sequence: [B,T,P,D_e] -> [B,T,P,d_c] (zeros when the
  // content pathway is disabled).
  Tensor<T> content_memory(const Tensor<T>& e) {
    if (!has_content())
      return Tensor<T>(Shape{e.shape[0], e.shape[1], e.shape[2], int64_t(cfg.d_c)});
    Graph<T> g(false);
    Var<T> x = backbone.refine(g, ps, g.leaf(e));
    Var<T> c = mlp2(g, ps, enc_c, x);
    return g.val(memory.forward(g, ps, c));
  }

  // Fusion decode of arbitrary (structure, initial embedding, content memory)
  // values; zero tensors are legal for e0 / c_mem. s_hat [B,S,P,d_s],
  // e0 [B,P,D_e], c_mem [B,S,P,d_c] -> [B,S,P,D_e].
  Tensor<T> decode(const Tensor<T>& s_hat, const Tensor<T>& e0, const Tensor<T>& c_mem) {
    Graph<T> g(false);
    return g.val(fusion.fuse(g, ps, g.leaf(s_hat), g.leaf(e0), g.leaf(c_mem)));
  }

  // -------------------------------------------------------------------------
  // Autoregressive rollout (inference path, cached FDM decoding).
  // e_ctx: [B, k, P, D_e] context frames (k >= 1); z_seq: [B, k-1+H, d_z]
  // post-bottleneck actions for transitions 0 .. k+H-2. Predicts frames
  // k .. k+H-1.
  RolloutOut<T> rollout(const Tensor<T>& e_ctx, const Tensor<T>& z_seq, int64_t H) {
    STRATA_CHECK(has_dyn(), "structure passthrough cannot roll out");
    int64_t B = e_ctx.shape[0], k = e_ctx.shape[1], P = e_ctx.shape[2], De = e_ctx.shape[3];
    STRATA_CHECK(H >= 1 && z_seq.shape[1] == k - 1 + H, "rollout needs actions for every transition");
    Graph<T> g(false);
    Var<T> ev = g.leaf(e_ctx);
    Var<T> x = backbone.refine(g, ps, ev);
    Var<T> s_ctx = mlp2(g, ps, enc_s, x);  // [B,k,P,d_s]
    Var<T> zv = g.leaf(z_seq);

    // content memory over the context
    typename Memory<T>::StateV mst;
    Var<T> c_mem_cur;  // [B,P,d_c] memory output at the newest step
    if (has_content()) {
      Var<T> c = mlp2(g, ps, enc_c, x);
      mst = memory.init_state(g, B, P);
      for (int64_t t = 0; t < k; ++t) {
        auto [o, nx] = memory.step(g, ps, reshape(slice_axis(c, 1, t, 1), {B, P, int64_t(cfg.d_c)}), mst);
        mst = nx;
        c_mem_cur = o;
      }
    } else {
      c_mem_cur = g.leaf(Tensor<T>(Shape{B, P, int64_t(cfg.d_c)}));
    }
    Var<T> e0 = reshape(slice_axis(ev, 1, 0, 1), {B, P, De});

    // First horizon step through the batched sequence path — structurally the
    // same computation as the teacher pass, so the recursion base case matches
    // teacher forcing exactly. The incremental cache takes over afterwards.
    typename Fdm<T>::Cache cache = fdm.make_cache();
    for (int64_t t = 0; t < k; ++t)
      (void)fdm.forward_step(g, ps, slice_axis(s_ctx, 1, t, 1), slice_axis(zv, 1, t, 1), cache);

    Tensor<T> e_out = Tensor<T>::uninit(Shape{B, H, P, De});
    Tensor<T> s_out = Tensor<T>::uninit(Shape{B, H, P, int64_t(cfg.d_s)});
    Var<T> s_cur = slice_axis(s_ctx, 1, k - 1, 1);  // [B,1,P,d_s]
    for (int64_t j = 0; j < H; ++j) {
      Var<T> res;
      if (j == 0) {
        Var<T> res_seq = fdm.forward_seq(g, ps, s_ctx, slice_axis(zv, 1, 0, k));
        res = slice_axis(res_seq, 1, k - 1, 1);
      } else {
        res = fdm.forward_step(g, ps, s_cur, slice_axis(zv, 1, k - 1 + j, 1), cache);
      }
      Var<T> s_nx = add(s_cur, res);
      Var<T> e_hat = fusion.fuse(g, ps, s_nx, e0, reshape(c_mem_cur, {B, 1, P, int64_t(cfg.d_c)}));
      copy_block(e_out, j, g.val(e_hat));
      copy_block(s_out, j, g.val(s_nx));
      if (has_content() && j + 1 < H) {
        // re-encode the predicted embedding for the content stream
        Var<T> c_nx = mlp2(g, ps, enc_c, reshape(e_hat, {B, P, De}));
        auto [o, nx] = memory.step(g, ps, c_nx, mst);
        mst = nx;
        c_mem_cur = o;
      }
      s_cur = s_nx;
    }
    return {std::move(e_out), std::move(s_out)};
  }

  // Stage-2 fine-tuning pass over a full clip: the first k transitions use
  // teacher structure inputs, later ones feed the model's own chained
  // predictions back in (the content memory likewise receives re-encoded
  // generations past the context). Outputs mirror the teacher pass, with `ds`
  // generalized to (s_next - input actually fed to the dynamics) so the same
  // objective applies; with k = T-1 every input is a teacher value and the
  // pass reduces exactly to teacher_forward. e: [B,T,P,D_e]; 1 <= k <= T-1.
  TeacherOut<T> stage2_forward(Graph<T>& g, Var<T> e, int64_t k,
                               const Tensor<T>* bneck_noise = nullptr) {
    STRATA_CHECK(has_dyn(), "structure passthrough cannot roll out");
    const Shape es = g.val(e).shape;
    STRATA_CHECK(es.size() == 4 && es[1] >= 2, "stage-2 pass expects [B,T,P,D_e], T >= 2");
    int64_t B = es[0], Tt = es[1], P = es[2], De = es[3], S = Tt - 1;
    STRATA_CHECK(k >= 1 && k <= S, "context length must lie in [1, T-1]");
    int64_t H = Tt - k;  // 1 teacher-forced block + H-1 chained predictions

    TeacherOut<T> out;
    out.has_dyn = true;
    out.has_content = has_content();
    out.tokens = backbone.refine(g, ps, e);
    out.s = mlp2(g, ps, enc_s, out.tokens);
    Var<T> s_next = slice_axis(out.s, 1, 1, S);
    Var<T> ds_teacher = sub(s_next, slice_axis(out.s, 1, 0, S));

    out.z_raw = idm.infer(g, ps, ds_teacher);
    BottleneckOut<T> bo = apply_bottleneck(g, ps, bneck, cfg, out.z_raw, bneck_noise);
    out.z = bo.z;
    out.has_bneck = bo.has_loss;
    if (bo.has_loss) out.bneck_loss = bo.extra_loss;
    out.z_bwd_raw = reverse_axis(idm.infer(g, ps, neg(reverse_axis(ds_teacher, 1))), 1);

    // content memory over the teacher context, kept as streaming state so the
    // generated region can extend it
    int64_t dc = cfg.d_c;
    typename Memory<T>::StateV mst;
    std::vector<Var<T>> c_pieces;
    Var<T> c_full;
    if (out.has_content) {
      c_full = mlp2(g, ps, enc_c, out.tokens);
      mst = memory.init_state(g, B, P);
      for (int64_t t = 0; t < k; ++t) {
        auto [o, nx] = memory.step(g, ps, reshape(slice_axis(c_full, 1, t, 1), {B, P, dc}), mst);
        mst = nx;
        c_pieces.push_back(reshape(o, {B, 1, P, dc}));
      }
    }
    Var<T> e0 = reshape(slice_axis(e, 1, 0, 1), {B, P, De});

    // transitions 0..k-1 in one batched teacher-forced block
    Var<T> s_ctx = slice_axis(out.s, 1, 0, k);
    Var<T> res0 = fdm.forward_seq(g, ps, s_ctx, slice_axis(out.z, 1, 0, k));
    Var<T> s_hat0 = add(s_ctx, res0);
    Var<T> c_prefix = out.has_content ? concat(c_pieces, 1)
                                      : g.leaf(Tensor<T>(Shape{B, k, P, dc}));
    Var<T> e_hat0 = fusion.fuse(g, ps, s_hat0, e0, c_prefix);

    std::vector<Var<T>> in_pieces{s_ctx}, res_pieces{res0};
    std::vector<Var<T>> shat_pieces{s_hat0}, ehat_pieces{e_hat0};
    Var<T> s_hist, e_last;
    if (H > 1) {
      s_hist = concat(std::vector<Var<T>>{s_ctx, slice_axis(s_hat0, 1, k - 1, 1)}, 1);
      e_last = slice_axis(e_hat0, 1, k - 1, 1);
    }
    for (int64_t j = 1; j < H; ++j) {
      int64_t L = k + j;  // s_hist holds structure inputs for positions 0..L-1
      Var<T> c_cur;
      if (out.has_content) {
        // memory ingests the re-encoding of the previous generated embedding
        auto [o, nx] = memory.step(g, ps, mlp2(g, ps, enc_c, reshape(e_last, {B, P, De})), mst);
        mst = nx;
        c_cur = reshape(o, {B, 1, P, dc});
      } else {
        c_cur = g.leaf(Tensor<T>(Shape{B, 1, P, dc}));
      }
      Var<T> x_j = slice_axis(s_hist, 1, L - 1, 1);
      Var<T> res = fdm.forward_seq(g, ps, s_hist, slice_axis(out.z, 1, 0, L));
      Var<T> res_last = slice_axis(res, 1, L - 1, 1);
      Var<T> s_nx = add(x_j, res_last);
      Var<T> e_hat = fusion.fuse(g, ps, s_nx, e0, c_cur);
      in_pieces.push_back(x_j);
      res_pieces.push_back(res_last);
      shat_pieces.push_back(s_nx);
      ehat_pieces.push_back(e_hat);
      e_last = e_hat;
      if (j + 1 < H) s_hist = concat(std::vector<Var<T>>{s_hist, s_nx}, 1);
    }

    Var<T> x_full = H > 1 ? concat(in_pieces, 1) : in_pieces[0];
    out.fdm_res = H > 1 ? concat(res_pieces, 1) : res_pieces[0];
    out.s_hat = H > 1 ? concat(shat_pieces, 1) : shat_pieces[0];
    out.e_hat = H > 1 ? concat(ehat_pieces, 1) : ehat_pieces[0];
    out.ds = sub(s_next, x_full);  // teacher ds where inputs are teacher values
    out.z_student = idm.infer(g, ps, sub(out.s_hat, x_full));
    return out;
  }

  // Rollout for training (stage-2 fine-tuning): recomputes the full FDM
  // sequence each step so gradients flow through the whole recursion.
  // e_ctx: [B,k,P,D_e] Var; z_seq: [B,k-1+H,d_z] Var.
  TrainRollout<T> rollout_train(Graph<T>& g, Var<T> e_ctx, Var<T> z_seq, int64_t H) {
    STRATA_CHECK(has_dyn(), "structure passthrough cannot roll out");
    const Shape es = g.val(e_ctx).shape;
    int64_t B = es[0], k = es[1], P = es[2], De = es[3];
    STRATA_CHECK(H >= 1 && g.val(z_seq).shape[1] == k - 1 + H, "rollout needs actions for every transition");
    Var<T> x = backbone.refine(g, ps, e_ctx);
    Var<T> s_ctx = mlp2(g, ps, enc_s, x);

    typename Memory<T>::StateV mst;
    Var<T> c_mem_cur;
    if (has_content()) {
      Var<T> c = mlp2(g, ps, enc_c, x);
      mst = memory.init_state(g, B, P);
      for (int64_t t = 0; t < k; ++t) {
        auto [o, nx] = memory.step(g, ps, reshape(slice_axis(c, 1, t, 1), {B, P, int64_t(cfg.d_c)}), mst);
        mst = nx;
        c_mem_cur = o;
      }
    } else {
      c_mem_cur = g.leaf(Tensor<T>(Shape{B, P, int64_t(cfg.d_c)}));
    }
    Var<T> e0 = reshape(slice_axis(e_ctx, 1, 0, 1), {B, P, De});

    Var<T> s_hist = s_ctx;  // [B, k+j, P, d_s]
    std::vector<Var<T>> e_steps, s_steps;
    for (int64_t j = 0; j < H; ++j) {
      int64_t L = k + j;  // transitions 0..L-1 drive positions 0..L-1
      Var<T> z_pre = slice_axis(z_seq, 1, 0, L);
      Var<T> res = fdm.forward_seq(g, ps, s_hist, z_pre);
      Var<T> res_last = slice_axis(res, 1, L - 1, 1);
      Var<T> s_nx = add(slice_axis(s_hist, 1, L - 1, 1), res_last);
      Var<T> e_hat = fusion.fuse(g, ps, s_nx, e0, reshape(c_mem_cur, {B, 1, P, int64_t(cfg.d_c)}));
      e_steps.push_back(e_hat);
      s_steps.push_back(s_nx);
      s_hist = concat(std::vector<Var<T>>{s_hist, s_nx}, 1);
      if (has_content() && j + 1 < H) {
        Var<T> c_nx = mlp2(g, ps, enc_c, reshape(e_hat, {B, P, De}));
        auto [o, nx] = memory.step(g, ps, c_nx, mst);
        mst = nx;
        c_mem_cur = o;
      }
    }
    return {concat(e_steps, 1), concat(s_steps, 1)};
  }

 private:
  static void copy_block(Tensor<T>& dst, int64_t j, const Tensor<T>& src) {
    // dst [B,H,P,D], src [B,1,P,D]
    int64_t B = dst.shape[0], Hh = dst.shape[1], inner = dst.shape[2] * dst.shape[3];
    for (int64_t b = 0; b < B; ++b)
      std::memcpy(dst.ptr() + (b * Hh + j) * inner, src.ptr() + b * inner,
                  size_t(inner) * sizeof(T));
  }
};

}  // namespace strata::model
