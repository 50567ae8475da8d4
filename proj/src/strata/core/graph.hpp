#pragma once
// Reverse-mode autodiff over Tensor<T>: a define-by-run tape. Ops append nodes
// holding the forward value plus a backward closure over node indices. The
// same code instantiates float (production) and double (gradient checks).
//
// Conventions:
//  * all ops are free functions taking/returning Var<T> handles,
//  * matmul right operand may be rank-2 (shared weight) or batched,
//  * broadcast ops (badd/bmul) use numpy-style right-aligned singleton rules,
//  * an inference graph (grad=false) stores no closures; truncate() lets long
//    rollouts drop spent nodes once their values were copied out.
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "detred.hpp"
#include "params.hpp"
#include "tensor.hpp"

namespace strata {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int32_t i = -1;
  bool ok() const { return g != nullptr && i >= 0; }
};

template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_on(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  struct Node {
    Tensor<T> val;
    Tensor<T> grad;                // lazily sized on first accumulation
    std::function<void()> back;    // empty for leaves / inference graphs
    bool ng = false;               // participates in backprop
  };

  bool grad_on;
  std::vector<Node> nodes;

  // --- node construction ------------------------------------------------
  Var<T> make(Tensor<T> v, bool needs_grad) {
    nodes.push_back(Node{std::move(v), {}, {}, needs_grad && grad_on});
    return Var<T>{this, int32_t(nodes.size() - 1)};
  }
  void set_back(Var<T> v, std::function<void()> fn) {
    if (grad_on && nodes[size_t(v.i)].ng) nodes[size_t(v.i)].back = std::move(fn);
  }

  Var<T> leaf(Tensor<T> v) { return make(std::move(v), false); }     // constant
  Var<T> input(Tensor<T> v) { return make(std::move(v), true); }     // diff leaf
  Var<T> param(ParamStore<T>& ps, int id) {
    Var<T> v = make(ps.ps[size_t(id)].w, ps.train);
    if (grad_on && ps.train) {
      ParamStore<T>* p = &ps;
      Graph* g = this;
      int32_t i = v.i;
      nodes[size_t(v.i)].back = [g, p, id, i] {
        Tensor<T>& pg = p->ps[size_t(id)].g;
        const Tensor<T>& go = g->nodes[size_t(i)].grad;
        for (int64_t k = 0; k < go.numel(); ++k) pg[k] += go[k];
      };
    }
    return v;
  }

  // --- accessors ----------------------------------------------------------
  const Tensor<T>& val(Var<T> v) const { return nodes[size_t(v.i)].val; }
  Tensor<T>& val_mut(Var<T> v) { return nodes[size_t(v.i)].val; }
  const Tensor<T>& grad(Var<T> v) const { return nodes[size_t(v.i)].grad; }
  bool needs(Var<T> v) const { return nodes[size_t(v.i)].ng; }
  bool wants(std::initializer_list<Var<T>> vs) const {
    if (!grad_on) return false;
    for (auto v : vs)
      if (nodes[size_t(v.i)].ng) return true;
    return false;
  }

  void accum(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes[size_t(v.i)];
    if (!n.ng) return;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.val.shape);
    STRATA_CHECK(g.numel() == n.grad.numel(), "grad accum shape mismatch");
    T* dst = n.grad.ptr();
    const T* src = g.ptr();
    for (int64_t k = 0; k < g.numel(); ++k) dst[k] += src[k];
  }
  // Accumulate from a raw buffer with the node's own shape.
  Tensor<T>& grad_buf(Var<T> v) {
    Node& n = nodes[size_t(v.i)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.val.shape);
    return n.grad;
  }

  // --- engine ---------------------------------------------------------------
  void backward(Var<T> root) {
    STRATA_CHECK(grad_on, "backward() on an inference graph");
    STRATA_CHECK(val(root).numel() == 1, "backward root must be scalar");
    Node& r = nodes[size_t(root.i)];
    STRATA_CHECK(r.ng, "backward root does not require grad");
    r.grad = Tensor<T>::full(r.val.shape, T(1));
    for (int64_t i = root.i; i >= 0; --i) {
      Node& n = nodes[size_t(i)];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

  size_t size() const { return nodes.size(); }
  void truncate(size_t n) { nodes.resize(n); }
  void clear() { nodes.clear(); }
};

// ===========================================================================
// helpers
// ===========================================================================
namespace detail {

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Right-aligned broadcast of b onto a: every b-dim must equal the a-dim or 1.
inline void check_bcast(const Shape& a, const Shape& b) {
  STRATA_CHECK(b.size() <= a.size(), "broadcast: rhs rank exceeds lhs " + shape_str(a) + " vs " + shape_str(b));
  size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i)
    STRATA_CHECK(b[i] == 1 || b[i] == a[i + off],
                 "broadcast dim mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// b-strides aligned to a's rank, 0 where broadcast.
inline Shape bcast_strides(const Shape& a, const Shape& b) {
  Shape bs(b.size());
  int64_t acc = 1;
  for (int i = int(b.size()) - 1; i >= 0; --i) { bs[size_t(i)] = acc; acc *= b[size_t(i)]; }
  Shape out(a.size(), 0);
  size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i) out[i + off] = (b[i] == 1) ? 0 : bs[i];
  return out;
}

// Row decomposition of a broadcast: the maximal trailing run of axes where b is
// either laid out densely like a (dense=true) or constant (dense=false).
struct BcastPlan {
  int64_t K = 1;     // inner row length
  int nlead = 0;     // leading axes iterated by odometer
  bool dense = true; // b varies contiguously along the row vs constant per row
};

inline BcastPlan bcast_plan(const Shape& a, const Shape& bstride) {
  int r = int(a.size());
  Shape da(size_t(std::max(r, 1)), 0);
  int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) { da[size_t(i)] = acc; acc *= a[size_t(i)]; }
  int kd = 0, k0 = 0;
  for (int ax = r - 1; ax >= 0; --ax) {
    if (bstride[size_t(ax)] == da[size_t(ax)]) ++kd;
    else break;
  }
  for (int ax = r - 1; ax >= 0; --ax) {
    if (bstride[size_t(ax)] == 0) ++k0;
    else break;
  }
  BcastPlan p;
  int k = std::max(kd, k0);
  p.dense = kd >= k0;
  p.nlead = r - k;
  for (int ax = r - k; ax < r; ++ax) p.K *= a[size_t(ax)];
  return p;
}

// Iterate rows per bcast_plan; fn(a_row_offset, b_offset).
template <typename F>
inline void bcast_rows(const Shape& a, const Shape& bstride, const BcastPlan& pl, F&& fn) {
  int64_t lead = 1;
  for (int i = 0; i < pl.nlead; ++i) lead *= a[size_t(i)];
  std::vector<int64_t> idx(size_t(std::max(pl.nlead, 1)), 0);
  int64_t boff = 0;
  for (int64_t l = 0; l < lead; ++l) {
    fn(l * pl.K, boff);
    for (int ax = pl.nlead - 1; ax >= 0; --ax) {
      idx[size_t(ax)]++;
      boff += bstride[size_t(ax)];
      if (idx[size_t(ax)] < a[size_t(ax)]) break;
      boff -= bstride[size_t(ax)] * a[size_t(ax)];
      idx[size_t(ax)] = 0;
    }
  }
}

// Iterate a's index space; fn(a_flat, b_flat).
template <typename F>
inline void bcast_iter(const Shape& a, const Shape& bstride, F&& fn) {
  int r = int(a.size());
  if (r == 0) { fn(0, 0); return; }
  std::vector<int64_t> idx(size_t(r), 0);
  int64_t n = numel(a);
  int64_t boff = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    fn(flat, boff);
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[size_t(ax)]++;
      boff += bstride[size_t(ax)];
      if (idx[size_t(ax)] < a[size_t(ax)]) break;
      boff -= bstride[size_t(ax)] * a[size_t(ax)];
      idx[size_t(ax)] = 0;
    }
  }
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;
template <typename T>
using EArr = Eigen::Array<T, Eigen::Dynamic, 1>;
template <typename T>
using EArrMap = Eigen::Map<EArr<T>>;
template <typename T>
using EArrCMap = Eigen::Map<const EArr<T>>;

// Drive a permute as batched strided 2D blocks: odometer over the leading r-2
// output axes; fn(out_off, in_off, M, N, strideM, strideN) per block.
template <typename T, typename F>
inline void permute_blocks(const Shape& os, const Shape& map, F&& fn) {
  int r = int(os.size());
  int64_t M = os[size_t(r - 2)], N = os[size_t(r - 1)];
  int64_t sM = map[size_t(r - 2)], sN = map[size_t(r - 1)];
  int64_t lead = 1;
  for (int i = 0; i < r - 2; ++i) lead *= os[size_t(i)];
  std::vector<int64_t> idx(size_t(std::max(r - 2, 1)), 0);
  int64_t ioff = 0;
  for (int64_t l = 0; l < lead; ++l) {
    fn(l * M * N, ioff, M, N, sM, sN);
    for (int ax = r - 3; ax >= 0; --ax) {
      idx[size_t(ax)]++;
      ioff += map[size_t(ax)];
      if (idx[size_t(ax)] < os[size_t(ax)]) break;
      ioff -= map[size_t(ax)] * os[size_t(ax)];
      idx[size_t(ax)] = 0;
    }
  }
}

}  // namespace detail

// ===========================================================================
// elementwise / arithmetic
// ===========================================================================

template <typename T, typename FwdF, typename BwdF>
Var<T> unary_op(Var<T> a, FwdF fwd, BwdF bwd) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t k = 0; k < av.numel(); ++k) out[k] = fwd(av[k]);
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, bwd] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& x = g.val(a);
    const Tensor<T>& y = g.val(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t k = 0; k < go.numel(); ++k) ga[k] += go[k] * bwd(x[k], y[k]);
  });
  return o;
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  STRATA_CHECK(detail::same_shape(g.val(a).shape, g.val(b).shape), "add shape mismatch");
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t k = 0; k < av.numel(); ++k) out[k] = av[k] + bv[k];
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o] {
    const Tensor<T>& go = g.grad(o);
    g.accum(a, go);
    g.accum(b, go);
  });
  return o;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  STRATA_CHECK(detail::same_shape(g.val(a).shape, g.val(b).shape), "sub shape mismatch");
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t k = 0; k < av.numel(); ++k) out[k] = av[k] - bv[k];
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o] {
    const Tensor<T>& go = g.grad(o);
    g.accum(a, go);
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      for (int64_t k = 0; k < go.numel(); ++k) gb[k] -= go[k];
    }
  });
  return o;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  STRATA_CHECK(detail::same_shape(g.val(a).shape, g.val(b).shape), "mul shape mismatch");
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t k = 0; k < av.numel(); ++k) out[k] = av[k] * bv[k];
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&x = g.val(a), &y = g.val(b);
    if (g.needs(a)) {
      Tensor<T>& ga = g.grad_buf(a);
      for (int64_t k = 0; k < go.numel(); ++k) ga[k] += go[k] * y[k];
    }
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      for (int64_t k = 0; k < go.numel(); ++k) gb[k] += go[k] * x[k];
    }
  });
  return o;
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  STRATA_CHECK(detail::same_shape(g.val(a).shape, g.val(b).shape), "div shape mismatch");
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t k = 0; k < av.numel(); ++k) out[k] = av[k] / bv[k];
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&x = g.val(a), &y = g.val(b);
    if (g.needs(a)) {
      Tensor<T>& ga = g.grad_buf(a);
      for (int64_t k = 0; k < go.numel(); ++k) ga[k] += go[k] / y[k];
    }
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      for (int64_t k = 0; k < go.numel(); ++k) gb[k] -= go[k] * x[k] / (y[k] * y[k]);
    }
  });
  return o;
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  return unary_op(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}
template <typename T>
Var<T> add_const(Var<T> a, T c) {
  return unary_op(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}
template <typename T>
Var<T> neg(Var<T> a) { return scale(a, T(-1)); }

// Broadcast add / mul: b right-aligned broadcastable onto a. Rows are
// vectorized: the inner run is either a dense-matching suffix of b or a
// broadcast (constant-b) suffix.
template <typename T>
Var<T> badd(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  detail::check_bcast(av.shape, bv.shape);
  Shape bs = detail::bcast_strides(av.shape, bv.shape);
  detail::BcastPlan pl = detail::bcast_plan(av.shape, bs);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  detail::bcast_rows(av.shape, bs, pl, [&](int64_t ao, int64_t bo) {
    detail::EArrMap<T> y(out.ptr() + ao, pl.K);
    detail::EArrCMap<T> x(av.ptr() + ao, pl.K);
    if (pl.dense)
      y = x + detail::EArrCMap<T>(bv.ptr() + bo, pl.K);
    else
      y = x + bv[bo];
  });
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o, bs, pl] {
    const Tensor<T>& go = g.grad(o);
    g.accum(a, go);
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      detail::bcast_rows(g.val(a).shape, bs, pl, [&](int64_t ao, int64_t bo) {
        detail::EArrCMap<T> gy(go.ptr() + ao, pl.K);
        if (pl.dense)
          detail::EArrMap<T>(gb.ptr() + bo, pl.K) += gy;
        else
          gb[bo] += det_sum(go.ptr() + ao, pl.K);
      });
    }
  });
  return o;
}

template <typename T>
Var<T> bmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  detail::check_bcast(av.shape, bv.shape);
  Shape bs = detail::bcast_strides(av.shape, bv.shape);
  detail::BcastPlan pl = detail::bcast_plan(av.shape, bs);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  detail::bcast_rows(av.shape, bs, pl, [&](int64_t ao, int64_t bo) {
    detail::EArrMap<T> y(out.ptr() + ao, pl.K);
    detail::EArrCMap<T> x(av.ptr() + ao, pl.K);
    if (pl.dense)
      y = x * detail::EArrCMap<T>(bv.ptr() + bo, pl.K);
    else
      y = x * bv[bo];
  });
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o, bs, pl] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&x = g.val(a), &y = g.val(b);
    if (g.needs(a)) {
      Tensor<T>& ga = g.grad_buf(a);
      detail::bcast_rows(x.shape, bs, pl, [&](int64_t ao, int64_t bo) {
        detail::EArrCMap<T> gy(go.ptr() + ao, pl.K);
        if (pl.dense)
          detail::EArrMap<T>(ga.ptr() + ao, pl.K) += gy * detail::EArrCMap<T>(y.ptr() + bo, pl.K);
        else
          detail::EArrMap<T>(ga.ptr() + ao, pl.K) += gy * y[bo];
      });
    }
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      detail::bcast_rows(x.shape, bs, pl, [&](int64_t ao, int64_t bo) {
        detail::EArrCMap<T> gy(go.ptr() + ao, pl.K);
        detail::EArrCMap<T> xx(x.ptr() + ao, pl.K);
        if (pl.dense)
          detail::EArrMap<T>(gb.ptr() + bo, pl.K) += gy * xx;
        else
          gb[bo] += det_dot(go.ptr() + ao, x.ptr() + ao, pl.K);
      });
    }
  });
  return o;
}

// ===========================================================================
// activations
// ===========================================================================

// exp-class activations use Eigen's SIMD kernels; the sigmoid is cached in the
// closure so backward is polynomial (no second transcendental pass).
template <typename T>
Var<T> silu(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t n = av.numel();
  Tensor<T> sig = Tensor<T>::uninit(av.shape);
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  detail::EArrCMap<T> x(av.ptr(), n);
  detail::EArrMap<T> s(sig.ptr(), n), y(out.ptr(), n);
  s = T(1) / (T(1) + (-x).exp());
  y = x * s;
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, sig, n] {
    detail::EArrCMap<T> go(g.grad(o).ptr(), n);
    detail::EArrCMap<T> x2(g.val(a).ptr(), n);
    detail::EArrCMap<T> s2(sig.ptr(), n);
    detail::EArrMap<T> ga(g.grad_buf(a).ptr(), n);
    ga += go * (s2 * (T(1) + x2 * (T(1) - s2)));
  });
  return o;
}
template <typename T>
Var<T> relu(Var<T> a) {
  return unary_op(a, [](T x) { return x > T(0) ? x : T(0); },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <typename T>
Var<T> tanh_(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t n = av.numel();
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  detail::EArrMap<T>(out.ptr(), n) = detail::EArrCMap<T>(av.ptr(), n).tanh();
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, n] {
    detail::EArrCMap<T> go(g.grad(o).ptr(), n), y(g.val(o).ptr(), n);
    detail::EArrMap<T>(g.grad_buf(a).ptr(), n) += go * (T(1) - y * y);
  });
  return o;
}
template <typename T>
Var<T> sigmoid(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t n = av.numel();
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  {
    detail::EArrCMap<T> x(av.ptr(), n);
    detail::EArrMap<T>(out.ptr(), n) = T(1) / (T(1) + (-x).exp());
  }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, n] {
    detail::EArrCMap<T> go(g.grad(o).ptr(), n), y(g.val(o).ptr(), n);
    detail::EArrMap<T>(g.grad_buf(a).ptr(), n) += go * y * (T(1) - y);
  });
  return o;
}
template <typename T>
Var<T> exp_(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t n = av.numel();
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  detail::EArrMap<T>(out.ptr(), n) = detail::EArrCMap<T>(av.ptr(), n).exp();
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, n] {
    detail::EArrCMap<T> go(g.grad(o).ptr(), n), y(g.val(o).ptr(), n);
    detail::EArrMap<T>(g.grad_buf(a).ptr(), n) += go * y;
  });
  return o;
}
template <typename T>
Var<T> log_(Var<T> a) {
  return unary_op(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <typename T>
Var<T> square(Var<T> a) {
  return unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}
// Value is the exact sqrt; the subgradient at 0 is taken as 0 so perfectly
// matched norms do not poison backprop with infinities.
template <typename T>
Var<T> sqrt_(Var<T> a) {
  return unary_op(a, [](T x) { return std::sqrt(x); },
                  [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

// ===========================================================================
// matmul
// ===========================================================================

// a: [lead..., M, K]; b: [K, N] (shared) or [lead..., K, N].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  STRATA_CHECK(av.rank() >= 2 && bv.rank() >= 2, "matmul rank");
  int64_t M = av.dim(-2), K = av.dim(-1);
  bool shared = (bv.rank() == 2);
  int64_t K2 = bv.dim(-2), N = bv.dim(-1);
  STRATA_CHECK(K == K2, "matmul inner dim " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  int64_t L = av.numel() / (M * K);
  if (!shared)
    STRATA_CHECK(bv.numel() / (K * N) == L, "matmul batch dims " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  Shape os(av.shape.begin(), av.shape.end() - 1);
  os.push_back(N);
  Tensor<T> out = Tensor<T>::uninit(os);
  // Forward runs on the deterministic striped kernel so each output row's bits
  // depend only on its own inputs: sequence-prefix and single-step evaluations
  // then agree with batched ones exactly. Backward keeps Eigen — gradients
  // only need run-to-run determinism at fixed shapes, which Eigen provides
  // single-threaded on the aligned buffers.
  Tensor<T> bt = Tensor<T>::uninit(Shape{N, K});
  if (shared) det_gemm_packb(bv.ptr(), K, N, bt.ptr());
  for (int64_t l = 0; l < L; ++l) {
    if (!shared) det_gemm_packb(bv.ptr() + l * K * N, K, N, bt.ptr());
    det_gemm(av.ptr() + l * M * K, bt.ptr(), out.ptr() + l * M * N, M, K, N);
  }
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o, M, K, N, L, shared] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&av2 = g.val(a), &bv2 = g.val(b);
    if (g.needs(a)) {
      Tensor<T>& ga = g.grad_buf(a);
      for (int64_t l = 0; l < L; ++l) {
        detail::ECMap<T> GO(go.ptr() + l * M * N, M, N);
        detail::ECMap<T> B(bv2.ptr() + (shared ? 0 : l * K * N), K, N);
        detail::EMap<T> GA(ga.ptr() + l * M * K, M, K);
        GA.noalias() += GO * B.transpose();
      }
    }
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      for (int64_t l = 0; l < L; ++l) {
        detail::ECMap<T> GO(go.ptr() + l * M * N, M, N);
        detail::ECMap<T> A(av2.ptr() + l * M * K, M, K);
        detail::EMap<T> GB(gb.ptr() + (shared ? 0 : l * K * N), K, N);
        GB.noalias() += A.transpose() * GO;
      }
    }
  });
  return o;
}

// ===========================================================================
// shape ops
// ===========================================================================

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  Graph<T>& g = *a.g;
  Tensor<T> out = g.val(a).reshaped(std::move(s));
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t k = 0; k < go.numel(); ++k) ga[k] += go[k];
  });
  return o;
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> axes) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int r = av.rank();
  STRATA_CHECK(int(axes.size()) == r, "permute rank");
  Shape os(size_t(r), 0);
  for (int i = 0; i < r; ++i) os[size_t(i)] = av.shape[size_t(axes[size_t(i)])];
  Shape ist = av.strides();
  // stride of output axis i in the input layout
  Shape map(size_t(r), 0);
  for (int i = 0; i < r; ++i) map[size_t(i)] = ist[size_t(axes[size_t(i)])];
  Tensor<T> out = Tensor<T>::uninit(os);
  if (r >= 2) {
    detail::permute_blocks<T>(os, map, [&](int64_t oo, int64_t io, int64_t M, int64_t N,
                                            int64_t sM, int64_t sN) {
      using SMap = Eigen::Map<const detail::EMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
      detail::EMap<T>(out.ptr() + oo, M, N) =
          SMap(av.ptr() + io, M, N, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(sM, sN));
    });
  } else {
    detail::bcast_iter(os, map, [&](int64_t io, int64_t ii) { out[io] = av[ii]; });
  }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, os, map, r] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    if (r >= 2) {
      detail::permute_blocks<T>(os, map, [&](int64_t oo, int64_t io, int64_t M, int64_t N,
                                              int64_t sM, int64_t sN) {
        using SMapM = Eigen::Map<detail::EMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
        SMapM(ga.ptr() + io, M, N, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(sM, sN)) +=
            detail::ECMap<T>(go.ptr() + oo, M, N);
      });
    } else {
      detail::bcast_iter(os, map, [&](int64_t io, int64_t ii) { ga[ii] += go[io]; });
    }
  });
  return o;
}

template <typename T>
Var<T> transpose_last(Var<T> a) {
  int r = a.g->val(a).rank();
  std::vector<int> axes(size_t(r), 0);
  for (int i = 0; i < r; ++i) axes[size_t(i)] = i;
  std::swap(axes[size_t(r - 1)], axes[size_t(r - 2)]);
  return permute(a, axes);
}

template <typename T>
Var<T> slice_axis(Var<T> a, int axis, int64_t start, int64_t len) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  if (axis < 0) axis += av.rank();
  STRATA_CHECK(start >= 0 && start + len <= av.shape[size_t(axis)], "slice bounds");
  Shape os = av.shape;
  os[size_t(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= av.shape[size_t(i)];
  for (int i = axis + 1; i < av.rank(); ++i) inner *= av.shape[size_t(i)];
  int64_t D = av.shape[size_t(axis)];
  Tensor<T> out = Tensor<T>::uninit(os);
  for (int64_t u = 0; u < outer; ++u)
    std::memcpy(out.ptr() + u * len * inner, av.ptr() + (u * D + start) * inner,
                size_t(len * inner) * sizeof(T));
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, outer, inner, D, start, len] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t u = 0; u < outer; ++u) {
      const T* src = go.ptr() + u * len * inner;
      T* dst = ga.ptr() + (u * D + start) * inner;
      for (int64_t k = 0; k < len * inner; ++k) dst[k] += src[k];
    }
  });
  return o;
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& vs, int axis) {
  STRATA_CHECK(!vs.empty(), "concat empty");
  Graph<T>& g = *vs[0].g;
  const Tensor<T>& v0 = g.val(vs[0]);
  int r = v0.rank();
  if (axis < 0) axis += r;
  Shape os = v0.shape;
  int64_t total = 0;
  for (auto& v : vs) {
    const Shape& s = g.val(v).shape;
    STRATA_CHECK(int(s.size()) == r, "concat rank");
    for (int i = 0; i < r; ++i)
      if (i != axis) STRATA_CHECK(s[size_t(i)] == os[size_t(i)], "concat shape");
    total += s[size_t(axis)];
  }
  os[size_t(axis)] = total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[size_t(i)];
  for (int i = axis + 1; i < r; ++i) inner *= os[size_t(i)];
  Tensor<T> out = Tensor<T>::uninit(os);
  std::vector<int64_t> lens;
  bool ng = false;
  for (auto& v : vs) { lens.push_back(g.val(v).dim(axis)); ng = ng || g.needs(v); }
  int64_t off = 0;
  for (size_t j = 0; j < vs.size(); ++j) {
    const Tensor<T>& av = g.val(vs[j]);
    for (int64_t u = 0; u < outer; ++u)
      std::memcpy(out.ptr() + (u * total + off) * inner, av.ptr() + u * lens[j] * inner,
                  size_t(lens[j] * inner) * sizeof(T));
    off += lens[j];
  }
  Var<T> o = g.make(std::move(out), ng && g.grad_on);
  auto vs_copy = vs;
  g.set_back(o, [&g, vs_copy, o, lens, outer, inner, total] {
    const Tensor<T>& go = g.grad(o);
    int64_t off2 = 0;
    for (size_t j = 0; j < vs_copy.size(); ++j) {
      if (g.needs(vs_copy[j])) {
        Tensor<T>& ga = g.grad_buf(vs_copy[j]);
        for (int64_t u = 0; u < outer; ++u) {
          const T* src = go.ptr() + (u * total + off2) * inner;
          T* dst = ga.ptr() + u * lens[j] * inner;
          for (int64_t k = 0; k < lens[j] * inner; ++k) dst[k] += src[k];
        }
      }
      off2 += lens[j];
    }
  });
  return o;
}

// Tile along a new leading repetition: [B, rest...] -> [B*r, rest...], block j
// of output rows (b*r+j) all equal a[b]. Backward sums the tiles.
template <typename T>
Var<T> repeat_lead(Var<T> a, int64_t r) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  STRATA_CHECK(av.rank() >= 1, "repeat_lead rank");
  int64_t B = av.shape[0], rest = av.numel() / B;
  Shape os = av.shape;
  os[0] = B * r;
  Tensor<T> out = Tensor<T>::uninit(os);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = 0; j < r; ++j)
      std::memcpy(out.ptr() + (b * r + j) * rest, av.ptr() + b * rest, size_t(rest) * sizeof(T));
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, B, r, rest] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < r; ++j) {
        const T* src = go.ptr() + (b * r + j) * rest;
        T* dst = ga.ptr() + b * rest;
        for (int64_t k = 0; k < rest; ++k) dst[k] += src[k];
      }
  });
  return o;
}

template <typename T>
Var<T> stopgrad(Var<T> a) {
  return a.g->leaf(a.g->val(a));
}

// Reverse order along one axis (e.g. time reversal of a sequence).
template <typename T>
Var<T> reverse_axis(Var<T> a, int axis) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  if (axis < 0) axis += av.rank();
  int64_t outer = 1, inner = 1, D = av.shape[size_t(axis)];
  for (int i = 0; i < axis; ++i) outer *= av.shape[size_t(i)];
  for (int i = axis + 1; i < av.rank(); ++i) inner *= av.shape[size_t(i)];
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t d = 0; d < D; ++d)
      std::memcpy(out.ptr() + (u * D + d) * inner, av.ptr() + (u * D + (D - 1 - d)) * inner,
                  size_t(inner) * sizeof(T));
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, outer, inner, D] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t u = 0; u < outer; ++u)
      for (int64_t d = 0; d < D; ++d) {
        const T* src = go.ptr() + (u * D + d) * inner;
        T* dst = ga.ptr() + (u * D + (D - 1 - d)) * inner;
        for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
      }
  });
  return o;
}

// ===========================================================================
// reductions / norms
// ===========================================================================

template <typename T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  T s = T(0);
  for (int64_t k = 0; k < av.numel(); ++k) s += av[k];
  Var<T> o = g.make(Tensor<T>::scalar(s), g.wants({a}));
  g.set_back(o, [&g, a, o] {
    T go = g.grad(o)[0];
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t k = 0; k < ga.numel(); ++k) ga[k] += go;
  });
  return o;
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  int64_t n = a.g->val(a).numel();
  return scale(sum_all(a), T(1) / T(n));
}

template <typename T>
Var<T> sum_axis(Var<T> a, int axis) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  if (axis < 0) axis += av.rank();
  int64_t outer = 1, inner = 1, D = av.shape[size_t(axis)];
  for (int i = 0; i < axis; ++i) outer *= av.shape[size_t(i)];
  for (int i = axis + 1; i < av.rank(); ++i) inner *= av.shape[size_t(i)];
  Shape os;
  for (int i = 0; i < av.rank(); ++i)
    if (i != axis) os.push_back(av.shape[size_t(i)]);
  Tensor<T> out(os);
  for (int64_t u = 0; u < outer; ++u)
    for (int64_t d = 0; d < D; ++d) {
      const T* src = av.ptr() + (u * D + d) * inner;
      T* dst = out.ptr() + u * inner;
      for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
    }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, outer, inner, D] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t u = 0; u < outer; ++u)
      for (int64_t d = 0; d < D; ++d) {
        T* dst = ga.ptr() + (u * D + d) * inner;
        const T* src = go.ptr() + u * inner;
        for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
      }
  });
  return o;
}

// L2 norm over all trailing dims beyond the first `lead`: out shape = leading
// dims. Exact value (no epsilon); zero-norm blocks get zero gradient.
template <typename T>
Var<T> norm_trailing(Var<T> a, int lead) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  STRATA_CHECK(lead >= 0 && lead <= av.rank(), "norm_trailing lead");
  Shape os(av.shape.begin(), av.shape.begin() + lead);
  int64_t L = numel(os), D = av.numel() / std::max<int64_t>(L, 1);
  Tensor<T> out = Tensor<T>::uninit(os);
  for (int64_t l = 0; l < L; ++l) {
    T s = T(0);
    const T* x = av.ptr() + l * D;
    for (int64_t k = 0; k < D; ++k) s += x[k] * x[k];
    out[l] = std::sqrt(s);
  }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, L, D] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& y = g.val(o);
    const Tensor<T>& x = g.val(a);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t l = 0; l < L; ++l) {
      if (y[l] <= T(0)) continue;
      T c = go[l] / y[l];
      const T* xs = x.ptr() + l * D;
      T* gs = ga.ptr() + l * D;
      for (int64_t k = 0; k < D; ++k) gs[k] += c * xs[k];
    }
  });
  return o;
}

// Inner product over trailing dims: out shape = leading `lead` dims.
template <typename T>
Var<T> dot_trailing(Var<T> a, Var<T> b, int lead) {
  Graph<T>& g = *a.g;
  const Tensor<T>&av = g.val(a), &bv = g.val(b);
  STRATA_CHECK(detail::same_shape(av.shape, bv.shape), "dot_trailing shape");
  Shape os(av.shape.begin(), av.shape.begin() + lead);
  int64_t L = numel(os), D = av.numel() / std::max<int64_t>(L, 1);
  Tensor<T> out = Tensor<T>::uninit(os);
  for (int64_t l = 0; l < L; ++l) {
    T s = T(0);
    const T*x = av.ptr() + l * D, *y = bv.ptr() + l * D;
    for (int64_t k = 0; k < D; ++k) s += x[k] * y[k];
    out[l] = s;
  }
  Var<T> o = g.make(std::move(out), g.wants({a, b}));
  g.set_back(o, [&g, a, b, o, L, D] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&x = g.val(a), &y = g.val(b);
    if (g.needs(a)) {
      Tensor<T>& ga = g.grad_buf(a);
      for (int64_t l = 0; l < L; ++l)
        for (int64_t k = 0; k < D; ++k) ga[l * D + k] += go[l] * y[l * D + k];
    }
    if (g.needs(b)) {
      Tensor<T>& gb = g.grad_buf(b);
      for (int64_t l = 0; l < L; ++l)
        for (int64_t k = 0; k < D; ++k) gb[l * D + k] += go[l] * x[l * D + k];
    }
  });
  return o;
}

// ===========================================================================
// normalization / attention primitives
// ===========================================================================

// LayerNorm over the last dim, no affine (fold affine in with bmul/badd).
template <typename T>
Var<T> layernorm(Var<T> a, T eps = T(1e-5)) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t D = av.dim(-1), L = av.numel() / D;
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  Tensor<T> inv_std = Tensor<T>::uninit(Shape{L});
  for (int64_t l = 0; l < L; ++l) {
    detail::EArrCMap<T> x(av.ptr() + l * D, D);
    detail::EArrMap<T> y(out.ptr() + l * D, D);
    T mu = det_sum(av.ptr() + l * D, D) / T(D);
    T var = det_sumsq(av.ptr() + l * D, D, mu) / T(D);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[l] = is;
    y = (x - mu) * is;
  }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, L, D, inv_std] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& y = g.val(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t l = 0; l < L; ++l) {
      detail::EArrCMap<T> gy(go.ptr() + l * D, D), yy(y.ptr() + l * D, D);
      T m1 = det_sum(go.ptr() + l * D, D) / T(D);
      T m2 = det_dot(go.ptr() + l * D, y.ptr() + l * D, D) / T(D);
      detail::EArrMap<T>(ga.ptr() + l * D, D) += inv_std[l] * (gy - m1 - yy * m2);
    }
  });
  return o;
}

// Softmax over the last dim; optional additive mask broadcast from trailing
// dims (e.g. a [Tq,Tk] causal mask applied to [..,Tq,Tk] logits). Masked-out
// entries (-inf) come out exactly zero.
template <typename T>
Var<T> softmax_last(Var<T> a, const Tensor<T>* addmask = nullptr) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t D = av.dim(-1), L = av.numel() / D;
  int64_t mask_n = addmask ? addmask->numel() : 0;
  if (addmask)
    STRATA_CHECK(av.numel() % mask_n == 0 && mask_n % D == 0,
                 "softmax mask not trailing-aligned");
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t l = 0; l < L; ++l) {
    const T* x = av.ptr() + l * D;
    T* y = out.ptr() + l * D;
    if (addmask) {
      const T* m = addmask->ptr() + (l * D) % mask_n;
      for (int64_t k = 0; k < D; ++k) y[k] = x[k] + m[k];
    } else {
      std::memcpy(y, x, size_t(D) * sizeof(T));
    }
    detail::EArrMap<T> row(y, D);
    T mx = row.maxCoeff();  // max is order-exact, safe under any eval order
    row = (row - mx).exp();  // exp(-inf)==0 handles fully-masked entries
    row *= T(1) / det_sum(y, D);
  }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, L, D] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>& y = g.val(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t l = 0; l < L; ++l) {
      detail::EArrCMap<T> gy(go.ptr() + l * D, D), yy(y.ptr() + l * D, D);
      T dot = det_dot(go.ptr() + l * D, y.ptr() + l * D, D);
      detail::EArrMap<T>(ga.ptr() + l * D, D) += yy * (gy - dot);
    }
  });
  return o;
}

// Rotary position map on [..., S, dh] (dh even): position p = offset + s writes
// a rotation by p*base^(-2i/dh) into channel pair (2i, 2i+1). The only
// temporal position signal in the model; purely relative inside attention.
template <typename T>
Var<T> rotary(Var<T> a, int64_t offset, T base = T(10000)) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.val(a);
  int64_t dh = av.dim(-1), S = av.dim(-2);
  STRATA_CHECK(dh % 2 == 0, "rotary head dim must be even");
  int64_t half = dh / 2, L = av.numel() / (S * dh);
  Tensor<T> cs(Shape{S, half}), sn(Shape{S, half});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t i = 0; i < half; ++i) {
      T th = T(offset + s) * std::pow(base, T(-2) * T(i) / T(dh));
      cs[s * half + i] = std::cos(th);
      sn[s * half + i] = std::sin(th);
    }
  Tensor<T> out = Tensor<T>::uninit(av.shape);
  for (int64_t l = 0; l < L; ++l)
    for (int64_t s = 0; s < S; ++s) {
      const T* x = av.ptr() + (l * S + s) * dh;
      T* y = out.ptr() + (l * S + s) * dh;
      for (int64_t i = 0; i < half; ++i) {
        T c = cs[s * half + i], n = sn[s * half + i];
        y[2 * i] = x[2 * i] * c - x[2 * i + 1] * n;
        y[2 * i + 1] = x[2 * i] * n + x[2 * i + 1] * c;
      }
    }
  Var<T> o = g.make(std::move(out), g.wants({a}));
  g.set_back(o, [&g, a, o, L, S, dh, half, cs, sn] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& ga = g.grad_buf(a);
    for (int64_t l = 0; l < L; ++l)
      for (int64_t s = 0; s < S; ++s) {
        const T* gy = go.ptr() + (l * S + s) * dh;
        T* gx = ga.ptr() + (l * S + s) * dh;
        for (int64_t i = 0; i < half; ++i) {
          T c = cs[s * half + i], n = sn[s * half + i];
          gx[2 * i] += gy[2 * i] * c + gy[2 * i + 1] * n;
          gx[2 * i + 1] += -gy[2 * i] * n + gy[2 * i + 1] * c;
        }
      }
  });
  return o;
}

// ===========================================================================
// conv3d (channels-last), stride/pad per axis — sized for small IDM grids
// ===========================================================================

// x: [B, Tt, H, W, Ci], w: [kt, kh, kw, Ci, Co], bias: [Co] or empty leaf.
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> bias, int st, int sh, int sw, int pt, int ph, int pw) {
  Graph<T>& g = *x.g;
  const Tensor<T>&xv = g.val(x), &wv = g.val(w);
  STRATA_CHECK(xv.rank() == 5 && wv.rank() == 5, "conv3d rank");
  int64_t B = xv.shape[0], Ti = xv.shape[1], H = xv.shape[2], W = xv.shape[3], Ci = xv.shape[4];
  int64_t kt = wv.shape[0], kh = wv.shape[1], kw = wv.shape[2], Co = wv.shape[4];
  STRATA_CHECK(wv.shape[3] == Ci, "conv3d channel mismatch");
  int64_t To = (Ti + 2 * pt - kt) / st + 1;
  int64_t Ho = (H + 2 * ph - kh) / sh + 1;
  int64_t Wo = (W + 2 * pw - kw) / sw + 1;
  bool has_bias = g.val(bias).numel() > 0;
  Tensor<T> out = Tensor<T>::uninit(Shape{B, To, Ho, Wo, Co});
  const Tensor<T>& bv = g.val(bias);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t to = 0; to < To; ++to)
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          T* y = out.ptr() + (((b * To + to) * Ho + ho) * Wo + wo) * Co;
          for (int64_t co = 0; co < Co; ++co) y[co] = has_bias ? bv[co] : T(0);
          for (int64_t dt = 0; dt < kt; ++dt) {
            int64_t ti = to * st - pt + dt;
            if (ti < 0 || ti >= Ti) continue;
            for (int64_t dh2 = 0; dh2 < kh; ++dh2) {
              int64_t hi = ho * sh - ph + dh2;
              if (hi < 0 || hi >= H) continue;
              for (int64_t dw = 0; dw < kw; ++dw) {
                int64_t wi = wo * sw - pw + dw;
                if (wi < 0 || wi >= W) continue;
                const T* xs = xv.ptr() + (((b * Ti + ti) * H + hi) * W + wi) * Ci;
                const T* ws = wv.ptr() + ((dt * kh + dh2) * kw + dw) * Ci * Co;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                  T xc = xs[ci];
                  const T* wrow = ws + ci * Co;
                  for (int64_t co = 0; co < Co; ++co) y[co] += xc * wrow[co];
                }
              }
            }
          }
        }
  Var<T> o = g.make(std::move(out), g.wants({x, w, bias}));
  g.set_back(o, [&g, x, w, bias, o, B, Ti, H, W, Ci, kt, kh, kw, Co, To, Ho, Wo, st, sh, sw, pt,
                 ph, pw, has_bias] {
    const Tensor<T>& go = g.grad(o);
    const Tensor<T>&xv2 = g.val(x), &wv2 = g.val(w);
    bool nx = g.needs(x), nw = g.needs(w), nb = has_bias && g.needs(bias);
    Tensor<T>* gx = nx ? &g.grad_buf(x) : nullptr;
    Tensor<T>* gw = nw ? &g.grad_buf(w) : nullptr;
    Tensor<T>* gb = nb ? &g.grad_buf(bias) : nullptr;
    for (int64_t b = 0; b < B; ++b)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const T* gy = go.ptr() + (((b * To + to) * Ho + ho) * Wo + wo) * Co;
            if (nb)
              for (int64_t co = 0; co < Co; ++co) (*gb)[co] += gy[co];
            for (int64_t dt = 0; dt < kt; ++dt) {
              int64_t ti = to * st - pt + dt;
              if (ti < 0 || ti >= Ti) continue;
              for (int64_t dh2 = 0; dh2 < kh; ++dh2) {
                int64_t hi = ho * sh - ph + dh2;
                if (hi < 0 || hi >= H) continue;
                for (int64_t dw = 0; dw < kw; ++dw) {
                  int64_t wi = wo * sw - pw + dw;
                  if (wi < 0 || wi >= W) continue;
                  int64_t xoff = (((b * Ti + ti) * H + hi) * W + wi) * Ci;
                  int64_t woff = ((dt * kh + dh2) * kw + dw) * Ci * Co;
                  for (int64_t ci = 0; ci < Ci; ++ci) {
                    const T* wrow = wv2.ptr() + woff + ci * Co;
                    T xc = xv2[xoff + ci];
                    T accx = T(0);
                    for (int64_t co = 0; co < Co; ++co) {
                      accx += gy[co] * wrow[co];
                      if (nw) (*gw)[woff + ci * Co + co] += gy[co] * xc;
                    }
                    if (nx) (*gx)[xoff + ci] += accx;
                  }
                }
              }
            }
          }
  });
  return o;
}

// ===========================================================================
// embedding-style gather
// ===========================================================================

template <typename T>
Var<T> gather_rows(Var<T> table, const std::vector<int64_t>& idx) {
  Graph<T>& g = *table.g;
  const Tensor<T>& tv = g.val(table);
  STRATA_CHECK(tv.rank() == 2, "gather_rows table rank");
  int64_t D = tv.shape[1];
  Tensor<T> out = Tensor<T>::uninit(Shape{int64_t(idx.size()), D});
  for (size_t m = 0; m < idx.size(); ++m) {
    STRATA_CHECK(idx[m] >= 0 && idx[m] < tv.shape[0], "gather_rows index");
    std::memcpy(out.ptr() + int64_t(m) * D, tv.ptr() + idx[m] * D, size_t(D) * sizeof(T));
  }
  Var<T> o = g.make(std::move(out), g.wants({table}));
  g.set_back(o, [&g, table, o, idx, D] {
    const Tensor<T>& go = g.grad(o);
    Tensor<T>& gt = g.grad_buf(table);
    for (size_t m = 0; m < idx.size(); ++m)
      for (int64_t k = 0; k < D; ++k) gt[idx[m] * D + k] += go[int64_t(m) * D + k];
  });
  return o;
}

// ===========================================================================
// composite helpers
// ===========================================================================

// x [.., in] @ W [in, out] + b [out]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Var<T> y = matmul(x, w);
  if (b.ok() && b.g->val(b).numel() > 0) y = badd(y, b);
  return y;
}

template <typename T>
Var<T> mean_axis(Var<T> a, int axis) {
  int64_t D = a.g->val(a).shape[size_t(axis < 0 ? axis + a.g->val(a).rank() : axis)];
  return scale(sum_axis(a, axis), T(1) / T(D));
}

// Additive causal mask [S,S]: 0 on/below diagonal, -inf above.
template <typename T>
inline Tensor<T> causal_mask(int64_t S) {
  Tensor<T> m(Shape{S, S});
  for (int64_t i = 0; i < S; ++i)
    for (int64_t j = 0; j < S; ++j)
      m[i * S + j] = j <= i ? T(0) : -std::numeric_limits<T>::infinity();
  return m;
}

}  // namespace strata
