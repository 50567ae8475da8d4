// Throughput probe for the numeric core: GEMM and a mock attention block at
// model-relevant sizes. Informs training/planner budget choices; not a test.
#include <chrono>
#include <cstdio>

#include "strata/core/graph.hpp"
#include "strata/core/rng.hpp"

using namespace strata;

template <typename F>
double time_ms(F&& f, int iters) {
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) f();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

int main() {
  Rng r(1);
  auto randf = [&](Shape s) {
    Tensor<float> t(std::move(s));
    for (auto& x : t.data) x = float(r.normal());
    return t;
  };

  // GEMM sizes: token stacks x weight matrices seen in the model
  struct Case { int64_t M, K, N; };
  Case cases[] = {{4096, 64, 64}, {4096, 64, 128}, {512, 64, 192}, {8192, 32, 64}, {1024, 8, 32}};
  for (auto c : cases) {
    Tensor<float> a = randf({c.M, c.K}), b = randf({c.K, c.N});
    Graph<float> g(false);
    auto va = g.leaf(a), vb = g.leaf(b);
    double ms = time_ms([&] { auto y = matmul(va, vb); (void)y; }, 20);
    double gflops = 2.0 * double(c.M) * double(c.K) * double(c.N) / (ms * 1e6);
    std::printf("gemm %5lldx%3lldx%3lld: %7.3f ms  %6.1f GFLOP/s\n", (long long)c.M,
                (long long)c.K, (long long)c.N, ms, gflops);
  }

  // mock attention on [B=8,T=8,P=64,D=64] with 4 heads: qkv, scores, apply, out
  {
    int64_t B = 8, T = 8, P = 64, D = 64, H = 4, dh = 16;
    Tensor<float> x = randf({B * T, P, D});
    Tensor<float> wqkv = randf({D, 3 * D}), wo = randf({D, D});
    double ms = time_ms(
        [&] {
          Graph<float> g(false);
          auto xv = g.leaf(x);
          auto qkv = matmul(xv, g.leaf(wqkv));
          auto q = slice_axis(qkv, -1, 0, D), k = slice_axis(qkv, -1, D, D),
               v = slice_axis(qkv, -1, 2 * D, D);
          auto split = [&](Var<float> t) {
            return permute(reshape(t, {B * T, P, H, dh}), {0, 2, 1, 3});
          };
          auto qs = split(q), ks = split(k), vs = split(v);
          auto sc = scale(matmul(qs, transpose_last(ks)), 1.0f / std::sqrt(float(dh)));
          auto at = softmax_last(sc);
          auto o = matmul(at, vs);
          o = reshape(permute(o, {0, 2, 1, 3}), {B * T, P, D});
          o = matmul(o, g.leaf(wo));
          (void)o;
        },
        10);
    std::printf("spatial attention fwd [B*T=64,P=64,D=64]: %7.3f ms\n", ms);
  }
  // same with gradients + backward
  {
    int64_t B = 8, T = 8, P = 64, D = 64;
    ParamStore<float> ps(3);
    int wq = ps.add("wqkv", {D, 3 * D}, Init::Xavier);
    int wo = ps.add("wo", {D, D}, Init::Xavier);
    Tensor<float> x = randf({B * T, P, D});
    double ms = time_ms(
        [&] {
          Graph<float> g(true);
          auto xv = g.leaf(x);
          auto qkv = matmul(xv, g.param(ps, wq));
          auto q = slice_axis(qkv, -1, 0, D), k = slice_axis(qkv, -1, D, D),
               v = slice_axis(qkv, -1, 2 * D, D);
          auto split = [&](Var<float> t) {
            return permute(reshape(t, {B * T, P, 4, 16}), {0, 2, 1, 3});
          };
          auto sc = scale(matmul(split(q), transpose_last(split(k))), 0.25f);
          auto o = matmul(softmax_last(sc), split(v));
          o = matmul(reshape(permute(o, {0, 2, 1, 3}), {B * T, P, D}), g.param(ps, wo));
          auto loss = mean_all(square(o));
          g.backward(loss);
          ps.zero_grad();
        },
        10);
    std::printf("spatial attention fwd+bwd:               %7.3f ms\n", ms);
  }
  return 0;
}
