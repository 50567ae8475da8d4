#pragma once
// Finite-difference gradient checking harness (double precision, central
// differences). Build functions construct a fresh scalar-valued graph from the
// given inputs; the checker compares analytic input-grads against FD.
#include <doctest.h>

#include <functional>
#include <vector>

#include "strata/core/graph.hpp"
#include "strata/core/rng.hpp"

namespace strata_test {

using strata::Graph;
using strata::Rng;
using strata::Shape;
using strata::Tensor;
using strata::Var;

using BuildFn =
    std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

inline double eval_scalar(const std::vector<Tensor<double>>& xs, const BuildFn& build) {
  Graph<double> g(false);
  std::vector<Var<double>> vs;
  for (auto& x : xs) vs.push_back(g.leaf(x));
  Var<double> out = build(g, vs);
  return strata::scalar_of(g.val(out));
}

// Returns max relative error across all elements of all inputs.
inline double fd_max_rel_err(std::vector<Tensor<double>> xs, const BuildFn& build,
                             double h = 1e-5) {
  // analytic pass
  Graph<double> g(true);
  std::vector<Var<double>> vs;
  for (auto& x : xs) vs.push_back(g.input(x));
  Var<double> out = build(g, vs);
  g.backward(out);
  std::vector<Tensor<double>> an;
  for (auto& v : vs) {
    Tensor<double> gv = g.grad(v);
    if (gv.empty()) gv = Tensor<double>::zeros(g.val(v).shape);
    an.push_back(gv);
  }
  double worst = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    for (int64_t k = 0; k < xs[i].numel(); ++k) {
      double orig = xs[i][k];
      xs[i][k] = orig + h;
      double fp = eval_scalar(xs, build);
      xs[i][k] = orig - h;
      double fm = eval_scalar(xs, build);
      xs[i][k] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double a = an[i][k];
      double denom = std::max(std::abs(a), std::abs(fd));
      if (denom < 1e-7) continue;  // both effectively zero
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

inline Tensor<double> rand_t(Shape s, Rng& r, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& x : t.data) x = r.normal() * scale;
  return t;
}

// Random positive tensor bounded away from zero (for log/sqrt/norm probes).
inline Tensor<double> rand_pos(Shape s, Rng& r, double lo = 0.5, double hi = 2.0) {
  Tensor<double> t(std::move(s));
  for (auto& x : t.data) x = r.uniform(lo, hi);
  return t;
}

// Weighted readout to a scalar: exercises the full Jacobian, unlike sum().
inline strata::Var<double> readout(Graph<double>& g, Var<double> y, uint64_t seed = 7) {
  Rng r(seed);
  Tensor<double> w(g.val(y).shape);
  for (auto& x : w.data) x = r.normal();
  return strata::sum_all(strata::mul(y, g.leaf(w)));
}

}  // namespace strata_test
