#pragma once
// Structure pathway: per-patch structure encoder, inverse dynamics model (IDM)
// that infers one global latent action per transition from structure
// differences, forward dynamics model (FDM) that predicts the next structure
// as a residual update conditioned on the action, and pluggable bottleneck
// variants on the action stream.
#include <string>
#include <type_traits>
#include <vector>

#include "strata/model/blocks.hpp"
#include "strata/model/config.hpp"

namespace strata::model {

// ---------------------------------------------------------------------------
// IDM: three 3D-conv blocks (kernel 3, spatial stride 2, temporal stride 1
// with symmetric padding so temporal kernels see bidirectional context)
// collapse the patch grid to 1x1; a linear head maps the final channels to one
// global d_z vector per transition.
template <typename T>
struct Idm {
  struct Block {
    int w = -1, b = -1;
  };
  std::vector<Block> blocks;
  int wh = -1, bh = -1;
  int grid = 8, d_z = 32;

  Idm() = default;
  Idm(ParamStore<T>& ps, const ModelConfig& c, const std::string& p) : grid(c.grid), d_z(c.d_z) {
    const int chans[4] = {c.d_s, c.idm_ch0, c.idm_ch1, c.idm_ch2};
    for (int i = 0; i < 3; ++i) {
      Block bl;
      std::string base = p + ".conv" + std::to_string(i);
      bl.w = ps.add(base + ".w",
                    Shape{3, 3, 3, int64_t(chans[i]), int64_t(chans[i + 1])}, Init::Xavier);
      bl.b = ps.add(base + ".b", Shape{int64_t(chans[i + 1])}, Init::Zeros);
      blocks.push_back(bl);
    }
    wh = ps.add(p + ".head.w", Shape{int64_t(c.idm_ch2), int64_t(c.d_z)}, Init::Xavier);
    bh = ps.add(p + ".head.b", Shape{int64_t(c.d_z)}, Init::Zeros);
  }

  // ds: [B, S, P, d_s] -> latent actions [B, S, d_z] (S transitions).
  Var<T> infer(Graph<T>& g, ParamStore<T>& ps, Var<T> ds) const {
    const Shape s = g.val(ds).shape;
    STRATA_CHECK(s.size() == 4 && s[1] >= 1, "idm expects [B,S,P,d_s] with S >= 1");
    STRATA_CHECK(s[2] == int64_t(grid) * grid, "idm patch count mismatch");
    int64_t B = s[0], S = s[1];
    Var<T> x = reshape(ds, {B, S, int64_t(grid), int64_t(grid), s[3]});
    for (const Block& bl : blocks)
      x = silu(conv3d(x, g.param(ps, bl.w), g.param(ps, bl.b), 1, 2, 2, 1, 1, 1));
    const Shape xs = g.val(x).shape;
    STRATA_CHECK(xs[2] == 1 && xs[3] == 1, "idm must collapse the grid to 1x1");
    x = reshape(x, {B, S, xs[4]});
    return linear(x, g.param(ps, wh), g.param(ps, bh));
  }
};

// ---------------------------------------------------------------------------
// FDM: lightweight spatial-temporal transformer with residual output head.
// Blocks alternate spatial attention (over patches, even index) and causally
// masked temporal attention with rotary phases (odd index); every sublayer is
// conditioned on the latent action through zero-initialized adaptive layer
// norm (shift/scale/gate), and the output head is zero-initialized, so an
// untrained FDM outputs exactly zero and the residual update is the identity.
template <typename T>
struct Fdm {
  struct Block {
    bool temporal = false;
    int mod_w = -1, mod_b = -1;  // cond -> 6F modulations (zero-init)
    AttnIds attn;                // LN params unused (AdaLN replaces them)
    int mlp_w1 = -1, mlp_b1 = -1, mlp_w2 = -1, mlp_b2 = -1;
  };
  int w_in = -1, b_in = -1;      // d_s -> F
  int pos = -1;                  // learned spatial code [P, F]
  int w_cond = -1, b_cond = -1;  // d_z -> F
  std::vector<Block> blocks;
  int mod_fw = -1, mod_fb = -1;  // final shift/scale (zero-init)
  int w_out = -1, b_out = -1;    // F -> d_s (zero-init)
  int heads = 2, F = 32;

  Fdm() = default;
  Fdm(ParamStore<T>& ps, const ModelConfig& c, const std::string& p)
      : heads(c.fdm_heads), F(c.fdm_hidden) {
    int64_t f = F, hid = int64_t(c.mlp_ratio) * f;
    w_in = ps.add(p + ".in.w", Shape{int64_t(c.d_s), f}, Init::Xavier);
    b_in = ps.add(p + ".in.b", Shape{f}, Init::Zeros);
    pos = ps.add(p + ".pos", Shape{int64_t(c.P()), f}, Init::Normal, 0.02);
    w_cond = ps.add(p + ".cond.w", Shape{int64_t(c.d_z), f}, Init::Xavier);
    b_cond = ps.add(p + ".cond.b", Shape{f}, Init::Zeros);
    for (int i = 0; i < c.fdm_depth; ++i) {
      Block bl;
      bl.temporal = (i % 2 == 1);
      std::string base = p + ".block" + std::to_string(i);
      bl.mod_w = ps.add(base + ".mod.w", Shape{f, 6 * f}, Init::Zeros);
      bl.mod_b = ps.add(base + ".mod.b", Shape{6 * f}, Init::Zeros);
      bl.attn = add_attn(ps, base + ".attn", F, F, F);
      bl.mlp_w1 = ps.add(base + ".mlp.w1", Shape{f, hid}, Init::Xavier);
      bl.mlp_b1 = ps.add(base + ".mlp.b1", Shape{hid}, Init::Zeros);
      bl.mlp_w2 = ps.add(base + ".mlp.w2", Shape{hid, f}, Init::Xavier);
      bl.mlp_b2 = ps.add(base + ".mlp.b2", Shape{f}, Init::Zeros);
      blocks.push_back(bl);
    }
    mod_fw = ps.add(p + ".modf.w", Shape{f, 2 * f}, Init::Zeros);
    mod_fb = ps.add(p + ".modf.b", Shape{2 * f}, Init::Zeros);
    w_out = ps.add(p + ".out.w", Shape{f, int64_t(c.d_s)}, Init::Zeros);
    b_out = ps.add(p + ".out.b", Shape{int64_t(c.d_s)}, Init::Zeros);
  }

  // m: [B, S, F] modulation -> broadcastable [B, S, 1, F].
  static Var<T> mrow(Var<T> m, int64_t k, int64_t f) {
    const Shape s = m.g->val(m).shape;
    return reshape(slice_axis(m, 2, k * f, f), {s[0], s[1], 1, f});
  }

  // x: [B, S, P, F]; returns LN(x) * (1 + scale) + shift with per-(B,S) mods.
  static Var<T> modulate(Var<T> x, Var<T> scale, Var<T> shift) {
    return badd(bmul(layernorm(x), add_const(scale, T(1))), shift);
  }

  // s: [B, S, P, d_s] structure prefix, z: [B, S, d_z] actions; returns the
  // residual Delta so that s_hat = s + Delta. `time_offset` sets the rotary
  // phase of position 0.
  Var<T> forward_seq(Graph<T>& g, ParamStore<T>& ps, Var<T> s, Var<T> z,
                     int64_t time_offset = 0) const {
    const Shape ss = g.val(s).shape;
    STRATA_CHECK(ss.size() == 4, "fdm expects [B,S,P,d_s]");
    int64_t S = ss[1], f = F;
    Tensor<T> mask = causal_mask<T>(S);
    Var<T> x = badd(linear(s, g.param(ps, w_in), g.param(ps, b_in)), g.param(ps, pos));
    Var<T> cond = silu(linear(z, g.param(ps, w_cond), g.param(ps, b_cond)));  // [B,S,F]
    for (const Block& bl : blocks) {
      Var<T> mod = linear(cond, g.param(ps, bl.mod_w), g.param(ps, bl.mod_b));  // [B,S,6F]
      Var<T> h = modulate(x, mrow(mod, 1, f), mrow(mod, 0, f));
      Var<T> a;
      if (bl.temporal) {
        Var<T> ht = permute(h, {0, 2, 1, 3});  // [B,P,S,F]
        Var<T> at = mha(g, ps, bl.attn, ht, ht, heads, &mask, /*rope=*/true, time_offset);
        a = permute(at, {0, 2, 1, 3});
      } else {
        a = mha(g, ps, bl.attn, h, h, heads);  // attention over P
      }
      x = add(x, bmul(a, mrow(mod, 2, f)));
      Var<T> h2 = modulate(x, mrow(mod, 4, f), mrow(mod, 3, f));
      Var<T> m2 = linear(silu(linear(h2, g.param(ps, bl.mlp_w1), g.param(ps, bl.mlp_b1))),
                         g.param(ps, bl.mlp_w2), g.param(ps, bl.mlp_b2));
      x = add(x, bmul(m2, mrow(mod, 5, f)));
    }
    Var<T> modf = linear(cond, g.param(ps, mod_fw), g.param(ps, mod_fb));  // [B,S,2F]
    Var<T> hf = modulate(x, mrow(modf, 1, f), mrow(modf, 0, f));
    return linear(hf, g.param(ps, w_out), g.param(ps, b_out));  // [B,S,P,d_s]
  }

  // Incremental decoding cache (inference only): rotated keys and values per
  // temporal block, shape [B, P, H, len, dh].
  struct Cache {
    std::vector<Tensor<T>> k, v;
    int64_t len = 0;
  };
  Cache make_cache() const {
    int nt = 0;
    for (const Block& bl : blocks) nt += bl.temporal ? 1 : 0;
    return Cache{std::vector<Tensor<T>>(size_t(nt)), std::vector<Tensor<T>>(size_t(nt)), 0};
  }

  static Tensor<T> append_time(const Tensor<T>& store, const Tensor<T>& step) {
    if (store.rank() == 0) return step;
    Shape os = store.shape;
    int ax = int(os.size()) - 2;
    int64_t inner = os.back(), oldL = os[size_t(ax)];
    os[size_t(ax)] = oldL + 1;
    int64_t outer = numel(os) / ((oldL + 1) * inner);
    Tensor<T> out = Tensor<T>::uninit(os);
    for (int64_t u = 0; u < outer; ++u) {
      std::memcpy(out.ptr() + u * (oldL + 1) * inner, store.ptr() + u * oldL * inner,
                  size_t(oldL * inner) * sizeof(T));
      std::memcpy(out.ptr() + (u * (oldL + 1) + oldL) * inner, step.ptr() + u * inner,
                  size_t(inner) * sizeof(T));
    }
    return out;
  }

  // One decoding step with cached temporal context: s_t [B,1,P,d_s],
  // z_t [B,1,d_z] -> residual [B,1,P,d_s]. No-grad graphs only.
  Var<T> forward_step(Graph<T>& g, ParamStore<T>& ps, Var<T> s_t, Var<T> z_t,
                      Cache& cache) const {
    STRATA_CHECK(!g.grad_on, "fdm cache path is inference-only");
    int64_t f = F;
    Var<T> x = badd(linear(s_t, g.param(ps, w_in), g.param(ps, b_in)), g.param(ps, pos));
    Var<T> cond = silu(linear(z_t, g.param(ps, w_cond), g.param(ps, b_cond)));
    size_t ti = 0;
    for (const Block& bl : blocks) {
      Var<T> mod = linear(cond, g.param(ps, bl.mod_w), g.param(ps, bl.mod_b));
      Var<T> h = modulate(x, mrow(mod, 1, f), mrow(mod, 0, f));
      Var<T> a;
      if (bl.temporal) {
        Var<T> ht = permute(h, {0, 2, 1, 3});  // [B,P,1,F]
        Var<T> q = rotary(split_heads(matmul(ht, g.param(ps, bl.attn.wq)), heads), cache.len);
        Var<T> kt = rotary(split_heads(matmul(ht, g.param(ps, bl.attn.wk)), heads), cache.len);
        Var<T> vt = split_heads(matmul(ht, g.param(ps, bl.attn.wv)), heads);
        cache.k[ti] = append_time(cache.k[ti], g.val(kt));
        cache.v[ti] = append_time(cache.v[ti], g.val(vt));
        Var<T> kk = g.leaf(cache.k[ti]), vv = g.leaf(cache.v[ti]);
        int64_t dh = f / heads;
        Var<T> att = softmax_last(scale(matmul(q, transpose_last(kk)), T(1) / std::sqrt(T(dh))));
        Var<T> ctx = matmul(merge_heads(matmul(att, vv)), g.param(ps, bl.attn.wo));
        a = permute(ctx, {0, 2, 1, 3});
        ++ti;
      } else {
        a = mha(g, ps, bl.attn, h, h, heads);
      }
      x = add(x, bmul(a, mrow(mod, 2, f)));
      Var<T> h2 = modulate(x, mrow(mod, 4, f), mrow(mod, 3, f));
      Var<T> m2 = linear(silu(linear(h2, g.param(ps, bl.mlp_w1), g.param(ps, bl.mlp_b1))),
                         g.param(ps, bl.mlp_w2), g.param(ps, bl.mlp_b2));
      x = add(x, bmul(m2, mrow(mod, 5, f)));
    }
    cache.len += 1;
    Var<T> modf = linear(cond, g.param(ps, mod_fw), g.param(ps, mod_fb));
    Var<T> hf = modulate(x, mrow(modf, 1, f), mrow(modf, 0, f));
    return linear(hf, g.param(ps, w_out), g.param(ps, b_out));
  }
};

// ---------------------------------------------------------------------------
// Latent-action bottlenecks.
struct BottleneckIds {
  int codebook = -1;                            // nsvq: [K, d_z]
  int wmu = -1, bmu = -1, wls = -1, bls = -1;   // gaussian heads
};

template <typename T>
BottleneckIds add_bottleneck(ParamStore<T>& ps, const ModelConfig& c, const std::string& p) {
  BottleneckIds ids;
  int64_t dz = c.d_z;
  if (c.bottleneck == Bottleneck::Nsvq) {
    ids.codebook = ps.add(p + ".codebook", Shape{int64_t(c.nsvq_codebook), dz}, Init::Normal, 0.5);
  } else if (c.bottleneck == Bottleneck::Gaussian) {
    ids.wmu = ps.add(p + ".mu.w", Shape{dz, dz}, Init::Xavier);
    ids.bmu = ps.add(p + ".mu.b", Shape{dz}, Init::Zeros);
    ids.wls = ps.add(p + ".logsig.w", Shape{dz, dz}, Init::Zeros);  // start at sigma = 1
    ids.bls = ps.add(p + ".logsig.b", Shape{dz}, Init::Zeros);
  }
  return ids;
}

template <typename T>
struct BottleneckOut {
  Var<T> z;
  Var<T> extra_loss;  // scalar; valid only when has_loss
  bool has_loss = false;
};

// Mean KL(N(mu, sigma^2) || N(0,1)) per token, summed over dims:
// 0.5 (mu^2 + sigma^2 - 1 - 2 log sigma) elementwise.
template <typename T>
Var<T> gaussian_kl_mean(Var<T> mu, Var<T> logsig) {
  Var<T> sig = exp_(logsig);
  Var<T> elem =
      scale(sub(add_const(add(square(mu), square(sig)), T(-1)), scale(logsig, T(2))), T(0.5));
  const Shape s = mu.g->val(mu).shape;
  int64_t dz = s.back();
  return scale(mean_all(elem), T(dz));  // mean over tokens of per-token dim-sum
}

// z_raw: [B, S, d_z]. `noise` supplies standard-normal draws of the same shape
// for the stochastic variants during training; pass nullptr for inference
// (nsvq -> hard codeword, gaussian -> mean).
template <typename T>
BottleneckOut<T> apply_bottleneck(Graph<T>& g, ParamStore<T>& ps, const BottleneckIds& ids,
                                  const ModelConfig& cfg, Var<T> z_raw,
                                  const Tensor<std::type_identity_t<T>>* noise) {
  BottleneckOut<T> out;
  if (cfg.bottleneck == Bottleneck::None) {
    out.z = z_raw;  // identity, zero extra loss
    return out;
  }
  const Shape s = g.val(z_raw).shape;
  int64_t B = s[0], S = s[1], dz = s[2], N = B * S;
  if (cfg.bottleneck == Bottleneck::Nsvq) {
    Var<T> zf = reshape(z_raw, {N, dz});
    const Tensor<T>& zv = g.val(zf);
    const Tensor<T>& cbv = ps[ids.codebook].w;
    int64_t K = cbv.shape[0];
    std::vector<int64_t> idx(static_cast<size_t>(N));
    for (int64_t n = 0; n < N; ++n) {
      T best = std::numeric_limits<T>::max();
      int64_t bi = 0;
      for (int64_t k = 0; k < K; ++k) {
        T d = 0;
        for (int64_t j = 0; j < dz; ++j) {
          T e = zv[n * dz + j] - cbv[k * dz + j];
          d += e * e;
        }
        if (d < best) {
          best = d;
          bi = k;
        }
      }
      idx[size_t(n)] = bi;
    }
    Var<T> q = gather_rows(g.param(ps, ids.codebook), idx);  // [N, dz]
    if (!noise) {
      out.z = reshape(q, {B, S, dz});  // inference: hard assignment
      return out;
    }
    STRATA_CHECK(g.val(z_raw).shape == noise->shape, "noise shape mismatch");
    Tensor<T> nf = *noise;
    nf.shape = Shape{N, dz};
    Tensor<T> inv_nn(Shape{N, 1});
    for (int64_t n = 0; n < N; ++n) {
      T ss = 0;
      for (int64_t j = 0; j < dz; ++j) ss += nf[n * dz + j] * nf[n * dz + j];
      inv_nn[n] = T(1) / std::max(std::sqrt(ss), T(1e-12));
    }
    // z = z_raw + (|z_raw - q| / |nu|) nu: quantization error replaced by
    // noise of matched magnitude; gradients reach codewords through the norm.
    Var<T> dn = reshape(norm_trailing(sub(zf, q), 1), {N, 1});
    Var<T> ratio = bmul(dn, g.leaf(inv_nn));
    Var<T> z = add(zf, bmul(g.leaf(nf), ratio));
    out.z = reshape(z, {B, S, dz});
    return out;
  }
  // gaussian
  Var<T> mu = linear(z_raw, g.param(ps, ids.wmu), g.param(ps, ids.bmu));
  Var<T> logsig = linear(z_raw, g.param(ps, ids.wls), g.param(ps, ids.bls));
  if (!noise) {
    out.z = mu;
  } else {
    STRATA_CHECK(g.val(z_raw).shape == noise->shape, "noise shape mismatch");
    out.z = add(mu, mul(exp_(logsig), g.leaf(*noise)));
  }
  out.extra_loss = scale(gaussian_kl_mean(mu, logsig), T(cfg.gauss_beta));
  out.has_loss = true;
  return out;
}

}  // namespace strata::model
