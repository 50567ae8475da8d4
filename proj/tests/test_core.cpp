// Core numeric stack: tensor/rng/serialization behavior and finite-difference
// gradient checks for every autodiff op (double precision probes).
#include <doctest.h>

#include "fd_check.hpp"
#include "strata/core/graph.hpp"
#include "strata/core/params.hpp"
#include "strata/core/serialize.hpp"

using namespace strata;
using namespace strata_test;

TEST_CASE("tensor basics") {
  Tensor<float> t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0f);
  CHECK(t.dim(-1) == 3);
  auto r = t.reshaped({3, 2});
  CHECK(r.at({2, 1}) == 6.0f);
  CHECK_THROWS(t.reshaped({4, 2}));
  CHECK(scalar_of(Tensor<float>::scalar(2.5f)) == 2.5f);
}

TEST_CASE("rng determinism and stream independence") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());
  CHECK(a.u64() != c.u64());
  // derived streams are reproducible and distinct
  Rng s1 = Rng::stream(7, 1, 2), s2 = Rng::stream(7, 1, 2), s3 = Rng::stream(7, 1, 3);
  CHECK(s1.u64() == s2.u64());
  CHECK(s1.state != s3.state);
  // loose moment checks on normals
  Rng n(5);
  double mu = 0, m2 = 0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    double x = n.normal();
    mu += x;
    m2 += x * x;
  }
  mu /= N;
  m2 /= N;
  CHECK(std::abs(mu) < 0.03);
  CHECK(std::abs(m2 - 1.0) < 0.05);
}

TEST_CASE("serialization round trip and fnv hash") {
  ByteWriter w;
  w.u32(7);
  w.str("hello");
  Tensor<double> t = rand_t({2, 3, 4}, *[] { static Rng r(1); return &r; }());
  w.tensor(t);
  w.f64(3.25);
  ByteReader rd(w.buf);
  CHECK(rd.u32() == 7);
  CHECK(rd.str() == "hello");
  Tensor<double> t2 = rd.tensor<double>();
  CHECK(t2.shape == t.shape);
  for (int64_t k = 0; k < t.numel(); ++k) CHECK(t2[k] == doctest::Approx(t[k]).epsilon(1e-6));
  CHECK(rd.f64() == 3.25);
  CHECK(rd.done());
  // FNV-1a 64 of "hello" — frozen reference value of the standard algorithm
  CHECK(hex64(fnv1a64("hello", 5)) == "a430d84680aabd0b");
}

TEST_CASE("gradcheck: arithmetic ops") {
  Rng r(11);
  auto x = rand_t({3, 4}, r);
  auto y = rand_pos({3, 4}, r);  // away from 0 for div
  CHECK(fd_max_rel_err({x, y}, [](Graph<double>& g, auto& v) {
          return readout(g, add(v[0], v[1]));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x, y}, [](Graph<double>& g, auto& v) {
          return readout(g, sub(v[0], v[1]));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x, y}, [](Graph<double>& g, auto& v) {
          return readout(g, mul(v[0], v[1]));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x, y}, [](Graph<double>& g, auto& v) {
          return readout(g, div(v[0], v[1]));
        }) < 1e-5);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, scale(add_const(v[0], 0.7), 1.3));
        }) < 1e-6);
}

TEST_CASE("gradcheck: broadcast ops") {
  Rng r(12);
  auto x = rand_t({2, 3, 4}, r);
  auto b1 = rand_t({4}, r);
  auto b2 = rand_t({3, 1}, r);
  auto b3 = rand_t({2, 1, 4}, r);
  for (auto& b : {b1, b2, b3}) {
    CHECK(fd_max_rel_err({x, b}, [](Graph<double>& g, auto& v) {
            return readout(g, badd(v[0], v[1]));
          }) < 1e-6);
    CHECK(fd_max_rel_err({x, b}, [](Graph<double>& g, auto& v) {
            return readout(g, bmul(v[0], v[1]));
          }) < 1e-5);
  }
}

TEST_CASE("gradcheck: activations and pointwise") {
  Rng r(13);
  auto x = rand_t({4, 5}, r);
  // nudge away from relu kink
  for (auto& v : x.data)
    if (std::abs(v) < 0.05) v += 0.1;
  auto xp = rand_pos({4, 5}, r);
  auto chk = [&](auto op, const Tensor<double>& in, double tol = 1e-5) {
    CHECK(fd_max_rel_err({in}, [op](Graph<double>& g, auto& v) {
            return readout(g, op(v[0]));
          }) < tol);
  };
  chk([](Var<double> v) { return silu(v); }, x);
  chk([](Var<double> v) { return relu(v); }, x);
  chk([](Var<double> v) { return tanh_(v); }, x);
  chk([](Var<double> v) { return sigmoid(v); }, x);
  chk([](Var<double> v) { return exp_(v); }, x);
  chk([](Var<double> v) { return square(v); }, x);
  chk([](Var<double> v) { return log_(v); }, xp);
  chk([](Var<double> v) { return sqrt_(v); }, xp);
}

TEST_CASE("gradcheck: matmul shared and batched") {
  Rng r(14);
  auto a = rand_t({2, 3, 4, 5}, r, 0.5);
  auto w = rand_t({5, 6}, r, 0.5);
  auto b = rand_t({2, 3, 5, 6}, r, 0.5);
  CHECK(fd_max_rel_err({a, w}, [](Graph<double>& g, auto& v) {
          return readout(g, matmul(v[0], v[1]));
        }) < 1e-5);
  CHECK(fd_max_rel_err({a, b}, [](Graph<double>& g, auto& v) {
          return readout(g, matmul(v[0], v[1]));
        }) < 1e-5);
  // linear with bias
  auto bias = rand_t({6}, r);
  CHECK(fd_max_rel_err({a, w, bias}, [](Graph<double>& g, auto& v) {
          return readout(g, linear(v[0], v[1], v[2]));
        }) < 1e-5);
}

TEST_CASE("matmul value matches straight loops") {
  Rng r(15);
  auto a = rand_t({3, 4}, r);
  auto b = rand_t({4, 2}, r);
  Graph<double> g(false);
  auto c = g.val(matmul(g.leaf(a), g.leaf(b)));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("gradcheck: shape ops") {
  Rng r(16);
  auto x = rand_t({2, 3, 4}, r);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, reshape(v[0], {6, 4}));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, permute(v[0], {2, 0, 1}));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, transpose_last(v[0]));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, slice_axis(v[0], 1, 1, 2));
        }) < 1e-6);
  auto y = rand_t({2, 2, 4}, r);
  CHECK(fd_max_rel_err({x, y}, [](Graph<double>& g, auto& v) {
          return readout(g, concat<double>({v[0], v[1]}, 1));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, repeat_lead(v[0], 3));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, reverse_axis(v[0], 1));
        }) < 1e-6);
}

TEST_CASE("reverse_axis value correctness") {
  Tensor<double> x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g(false);
  auto y = g.val(reverse_axis(g.leaf(x), 1));
  CHECK(y.data == Tensor<double>(Shape{2, 3}, {3, 2, 1, 6, 5, 4}).data);
  auto y0 = g.val(reverse_axis(g.leaf(x), 0));
  CHECK(y0.data == Tensor<double>(Shape{2, 3}, {4, 5, 6, 1, 2, 3}).data);
  // reversing twice is the identity
  auto yy = g.val(reverse_axis(reverse_axis(g.leaf(x), 1), 1));
  CHECK(yy.data == x.data);
}

TEST_CASE("permute value correctness") {
  Tensor<double> x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Graph<double> g(false);
  auto y = g.val(permute(g.leaf(x), {1, 0}));
  CHECK(y.shape == Shape{3, 2});
  CHECK(y.at({0, 0}) == 1);
  CHECK(y.at({0, 1}) == 4);
  CHECK(y.at({2, 1}) == 6);
}

TEST_CASE("gradcheck: reductions and norms") {
  Rng r(17);
  auto x = rand_t({2, 3, 4}, r);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return scale(sum_all(v[0]), 0.5);
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, sum_axis(v[0], 1));
        }) < 1e-6);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, mean_axis(v[0], 0));
        }) < 1e-6);
  // norms probed away from zero
  auto xn = rand_pos({3, 4}, r, 0.5, 1.5);
  CHECK(fd_max_rel_err({xn}, [](Graph<double>& g, auto& v) {
          return readout(g, norm_trailing(v[0], 1));
        }) < 1e-5);
  auto a = rand_t({3, 4}, r);
  auto b = rand_t({3, 4}, r);
  CHECK(fd_max_rel_err({a, b}, [](Graph<double>& g, auto& v) {
          return readout(g, dot_trailing(v[0], v[1], 1));
        }) < 1e-5);
}

TEST_CASE("norm_trailing exact value and zero-safe gradient") {
  Tensor<double> x(Shape{2, 2}, {3, 4, 0, 0});
  Graph<double> g(true);
  auto v = g.input(x);
  auto n = norm_trailing(v, 1);
  CHECK(g.val(n)[0] == 5.0);
  CHECK(g.val(n)[1] == 0.0);
  g.backward(sum_all(n));
  CHECK(g.grad(v)[0] == doctest::Approx(0.6));
  CHECK(g.grad(v)[2] == 0.0);  // zero block: subgradient 0, not NaN
}

TEST_CASE("gradcheck: layernorm softmax rotary") {
  Rng r(18);
  auto x = rand_t({2, 3, 6}, r);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, layernorm(v[0]));
        }) < 1e-4);
  CHECK(fd_max_rel_err({x}, [](Graph<double>& g, auto& v) {
          return readout(g, softmax_last(v[0]));
        }) < 1e-4);
  Tensor<double> mask = causal_mask<double>(3);
  CHECK(fd_max_rel_err({rand_t({2, 4, 3, 3}, r)}, [mask](Graph<double>& g, auto& v) {
          return readout(g, softmax_last(v[0], &mask));
        }) < 1e-4);
  CHECK(fd_max_rel_err({rand_t({2, 5, 4}, r)}, [](Graph<double>& g, auto& v) {
          return readout(g, rotary(v[0], 3));
        }) < 1e-5);
}

TEST_CASE("softmax rows sum to one; causal mask zeroes the future") {
  Rng r(19);
  auto x = rand_t({2, 4, 4}, r);
  Tensor<double> mask = causal_mask<double>(4);
  Graph<double> g(false);
  auto y = g.val(softmax_last(g.leaf(x), &mask));
  for (int64_t l = 0; l < 2 * 4; ++l) {
    double s = 0;
    for (int64_t k = 0; k < 4; ++k) s += y[l * 4 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // strictly-upper entries must be exactly zero
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = i + 1; j < 4; ++j) CHECK(y[(b * 4 + i) * 4 + j] == 0.0);
}

TEST_CASE("rotary preserves norms and is identity at position zero") {
  Rng r(20);
  auto x = rand_t({3, 4, 6}, r);
  Graph<double> g(false);
  auto y = g.val(rotary(g.leaf(x), 0));
  for (int64_t k = 0; k < 6; ++k) CHECK(y[k] == doctest::Approx(x[k]).epsilon(1e-12));
  // pairwise norms preserved at every position
  for (int64_t l = 0; l < 3 * 4; ++l) {
    double nx = 0, ny = 0;
    for (int64_t k = 0; k < 6; ++k) {
      nx += x[l * 6 + k] * x[l * 6 + k];
      ny += y[l * 6 + k] * y[l * 6 + k];
    }
    CHECK(ny == doctest::Approx(nx).epsilon(1e-10));
  }
}

TEST_CASE("gradcheck: conv3d") {
  Rng r(21);
  auto x = rand_t({2, 3, 4, 4, 3}, r, 0.5);
  auto w = rand_t({3, 3, 3, 3, 4}, r, 0.3);
  auto b = rand_t({4}, r);
  CHECK(fd_max_rel_err({x, w, b}, [](Graph<double>& g, auto& v) {
          return readout(g, conv3d(v[0], v[1], v[2], 1, 2, 2, 1, 1, 1));
        }, 1e-5) < 1e-4);
  // no-bias path
  CHECK(fd_max_rel_err({x, w}, [](Graph<double>& g, auto& v) {
          Var<double> nob = g.leaf(Tensor<double>(Shape{0}));
          return readout(g, conv3d(v[0], v[1], nob, 1, 1, 1, 1, 1, 1));
        }, 1e-5) < 1e-4);
}

TEST_CASE("conv3d output shape") {
  Graph<double> g(false);
  auto x = g.leaf(Tensor<double>(Shape{1, 5, 8, 8, 2}));
  auto w = g.leaf(Tensor<double>(Shape{3, 3, 3, 2, 4}));
  auto b = g.leaf(Tensor<double>(Shape{4}));
  auto y = conv3d(x, w, b, 1, 2, 2, 1, 1, 1);
  CHECK(g.val(y).shape == Shape{1, 5, 4, 4, 4});
}

TEST_CASE("gradcheck: gather_rows") {
  Rng r(22);
  auto t = rand_t({5, 3}, r);
  std::vector<int64_t> idx{0, 2, 2, 4};
  CHECK(fd_max_rel_err({t}, [idx](Graph<double>& g, auto& v) {
          return readout(g, gather_rows(v[0], idx));
        }) < 1e-6);
}

TEST_CASE("stopgrad blocks backprop") {
  Rng r(23);
  auto x = rand_t({3}, r);
  Graph<double> g(true);
  auto v = g.input(x);
  auto y = sum_all(mul(stopgrad(v), v));  // d/dv should be stopgrad(v) only
  g.backward(y);
  for (int64_t k = 0; k < 3; ++k) CHECK(g.grad(v)[k] == doctest::Approx(x[k]));
}

TEST_CASE("param store: registration, adamw step, grad flow") {
  ParamStore<double> ps(99);
  int w_id = ps.add("w", {3, 2}, Init::Xavier);
  int b_id = ps.add("b", {2}, Init::Zeros);
  CHECK(ps.param_count() == 8);
  Rng r(24);
  auto x = rand_t({4, 3}, r);
  Graph<double> g(true);
  auto y = linear(g.leaf(x), g.param(ps, w_id), g.param(ps, b_id));
  auto loss = mean_all(square(y));
  g.backward(loss);
  double gn = ps.grad_norm();
  CHECK(gn > 0.0);
  auto w_before = ps[w_id].w;
  ps.adamw(1e-2, 0.9, 0.999, 1e-8, 0.0);
  bool changed = false;
  for (int64_t k = 0; k < w_before.numel(); ++k)
    if (ps[w_id].w[k] != w_before[k]) changed = true;
  CHECK(changed);
  ps.zero_grad();
  CHECK(ps.grad_norm() == 0.0);
}

TEST_CASE("params frozen => graphs treat them as constants") {
  ParamStore<double> ps(100);
  int w_id = ps.add("w", {2, 2}, Init::Normal, 0.1);
  ps.train = false;
  Rng r(25);
  Graph<double> g(true);
  auto y = matmul(g.input(rand_t({3, 2}, r)), g.param(ps, w_id));
  g.backward(readout(g, y));
  CHECK(ps.grad_norm() == 0.0);
}

TEST_CASE("inference graph stores no closures and supports truncate") {
  Rng r(26);
  Graph<float> g(false);
  auto x = g.leaf(rand_t({4, 4}, r).cast<float>());
  size_t mark = g.size();
  auto y = silu(matmul(x, x));
  CHECK(g.val(y).numel() == 16);
  Tensor<float> saved = g.val(y);
  g.truncate(mark);
  CHECK(g.size() == mark);
  auto x2 = g.leaf(saved);  // re-leaf the carried value
  CHECK(g.val(x2)[0] == saved[0]);
}
