#pragma once
// Content pathway: per-patch content encoder (registered in the world model)
// plus a causal, diagonal, input-gated linear recurrence that aggregates
// temporally stable appearance information. A causal width-4 convolution
// pre-mixes the input stream before the recurrence; the whole input path is
// bias-free so zero input yields zero pre-activations at every step.
#include <string>
#include <vector>

#include "strata/model/blocks.hpp"
#include "strata/model/config.hpp"

namespace strata::model {

template <typename T>
struct Memory {
  int w_u = -1;            // d_c -> inner, no bias
  int kconv = -1;          // causal pre-mixer kernel [kw, inner], no bias
  int w_a = -1, b_a = -1;  // gate head
  int w_o = -1, b_o = -1;  // readout inner -> d_c
  int d_c = 32, inner = 64, kw = 4;

  Memory() = default;
  Memory(ParamStore<T>& ps, const ModelConfig& c, const std::string& p)
      : d_c(c.d_c), inner(c.mem_inner()), kw(c.mem_conv) {
    int64_t dc = c.d_c, di = inner;
    w_u = ps.add(p + ".u.w", Shape{dc, di}, Init::Xavier);
    kconv = ps.add(p + ".conv.k", Shape{int64_t(kw), di}, Init::Normal, 0.2);
    w_a = ps.add(p + ".gate.w", Shape{dc, di}, Init::Xavier);
    b_a = ps.add(p + ".gate.b", Shape{di}, Init::Ones);  // start retentive
    w_o = ps.add(p + ".out.w", Shape{di, dc}, Init::Xavier);
    b_o = ps.add(p + ".out.b", Shape{dc}, Init::Zeros);
  }

  // Streaming state: recurrent hidden h [B, P, inner] plus the last kw-1 raw
  // input projections (oldest first) feeding the causal pre-mixer.
  struct StateV {
    Var<T> h;
    std::vector<Var<T>> tail;
  };

  StateV init_state(Graph<T>& g, int64_t B, int64_t P) const {
    StateV st;
    st.h = g.leaf(Tensor<T>(Shape{B, P, int64_t(inner)}));
    for (int j = 0; j < kw - 1; ++j)
      st.tail.push_back(g.leaf(Tensor<T>(Shape{B, P, int64_t(inner)})));
    return st;
  }

  // One recurrence step. c_t: [B, P, d_c] -> (c_mem_t [B, P, d_c], next state).
  std::pair<Var<T>, StateV> step(Graph<T>& g, ParamStore<T>& ps, Var<T> c_t,
                                 const StateV& st) const {
    STRATA_CHECK(int(st.tail.size()) == kw - 1, "memory state width mismatch");
    Var<T> u_raw = matmul(c_t, g.param(ps, w_u));  // [B, P, inner], bias-free
    // causal pre-mixer: sum_j kappa_j * u_raw_{t-j}; lag 0 is the newest.
    Var<T> kv = g.param(ps, kconv);
    Var<T> mix = bmul(u_raw, reshape(slice_axis(kv, 0, 0, 1), {int64_t(inner)}));
    for (int j = 1; j < kw; ++j) {
      Var<T> kj = reshape(slice_axis(kv, 0, j, 1), {int64_t(inner)});
      Var<T> past = st.tail[size_t(kw - 1 - j)];  // lag j
      mix = add(mix, bmul(past, kj));
    }
    Var<T> u = silu(mix);
    Var<T> a = sigmoid(linear(c_t, g.param(ps, w_a), g.param(ps, b_a)));
    Var<T> one_minus_a = add_const(neg(a), T(1));
    Var<T> h = add(mul(a, st.h), mul(one_minus_a, u));
    Var<T> out = linear(h, g.param(ps, w_o), g.param(ps, b_o));
    StateV nx;
    nx.h = h;
    for (int j = 1; j < kw - 1; ++j) nx.tail.push_back(st.tail[size_t(j)]);
    if (kw > 1) nx.tail.push_back(u_raw);
    return {out, nx};
  }

  // Full-sequence forward: c [B, T, P, d_c] -> c_mem [B, T, P, d_c]. Runs the
  // step recurrence in time order, so split-and-resume from a serialized state
  // reproduces this output exactly.
  Var<T> forward(Graph<T>& g, ParamStore<T>& ps, Var<T> c) const {
    const Shape s = g.val(c).shape;
    STRATA_CHECK(s.size() == 4, "memory expects [B,T,P,d_c]");
    int64_t B = s[0], Tt = s[1], P = s[2], dc = s[3];
    StateV st = init_state(g, B, P);
    std::vector<Var<T>> outs;
    for (int64_t t = 0; t < Tt; ++t) {
      Var<T> c_t = reshape(slice_axis(c, 1, t, 1), {B, P, dc});
      auto [o, nx] = step(g, ps, c_t, st);
      st = nx;
      outs.push_back(reshape(o, {B, 1, P, dc}));
    }
    return concat(outs, 1);
  }
};

}  // namespace strata::model
