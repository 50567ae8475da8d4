#pragma once
// Spatial-temporal transformer: refines tokenizer embeddings into context
// tokens. Interleaved (spatial, temporal) pre-norm pairs; spatial attention is
// full within each frame, temporal attention is causally masked with rotary
// phases on queries/keys — rotary is the only temporal position signal, so
// attention logits depend on relative time only.
#include <string>
#include <vector>

#include "strata/model/blocks.hpp"
#include "strata/model/config.hpp"

namespace strata::model {

template <typename T>
struct Backbone {
  struct Pair {
    bool has_spatial = false, has_temporal = false;
    AttnIds s_attn, t_attn;
    MlpIds s_mlp, t_mlp;
  };
  std::vector<Pair> pairs;
  int heads = 4;

  // When non-null, refine() appends each temporal block's pre-mask scaled
  // attention logits [B, P, H, T, T] (test hook for causality/rotary probes).
  mutable std::vector<Tensor<T>>* capture_temporal_logits = nullptr;

  Backbone() = default;
  Backbone(ParamStore<T>& ps, const ModelConfig& c, const std::string& prefix) {
    heads = c.bb_heads;
    int d = c.d_e, hid = c.mlp_ratio * d;
    int n = std::max(c.bb_spatial_depth, c.bb_temporal_depth);
    for (int i = 0; i < n; ++i) {
      Pair p;
      std::string base = prefix + ".pair" + std::to_string(i);
      if (i < c.bb_spatial_depth) {
        p.has_spatial = true;
        p.s_attn = add_attn(ps, base + ".sattn", d, d, d);
        p.s_mlp = add_mlp(ps, base + ".smlp", d, hid);
      }
      if (i < c.bb_temporal_depth) {
        p.has_temporal = true;
        p.t_attn = add_attn(ps, base + ".tattn", d, d, d);
        p.t_mlp = add_mlp(ps, base + ".tmlp", d, hid);
      }
      pairs.push_back(p);
    }
  }

  // e: [B, T, P, D_e] -> tokens [B, T, P, D_e]. `time_offset` sets the rotary
  // phase of position 0 (nonzero when refining a window that starts mid-clip).
  Var<T> refine(Graph<T>& g, ParamStore<T>& ps, Var<T> e, int64_t time_offset = 0) const {
    const Shape s = g.val(e).shape;
    STRATA_CHECK(s.size() == 4, "backbone expects [B,T,P,D]");
    int64_t Tt = s[1];
    Tensor<T> mask = causal_mask<T>(Tt);
    Var<T> x = e;
    for (const Pair& p : pairs) {
      if (p.has_spatial) {
        x = self_attn_block(g, ps, p.s_attn, x, heads);  // attention over P
        x = mlp_block(g, ps, p.s_mlp, x);
      }
      if (p.has_temporal) {
        Var<T> xt = permute(x, {0, 2, 1, 3});  // [B, P, T, D]
        xt = self_attn_block(g, ps, p.t_attn, xt, heads, &mask, /*rope=*/true, time_offset,
                             capture_temporal_logits);
        xt = mlp_block(g, ps, p.t_mlp, xt);
        x = permute(xt, {0, 2, 1, 3});
      }
    }
    return x;
  }
};

}  // namespace strata::model
