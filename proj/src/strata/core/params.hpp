#pragma once
// Named parameter registry: values, grads, AdamW moments. Registration order is
// construction order and defines both optimizer iteration and serialization
// order, so runs and checkpoints are deterministic.
#include <cmath>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace strata {

enum class Init { Zeros, Ones, Normal, Xavier };

template <typename T>
struct ParamStore {
  struct P {
    std::string name;
    Tensor<T> w, g, m, v;
  };
  std::vector<P> ps;
  bool train = true;       // false => graphs treat params as constants
  Rng rng;                 // init stream; advanced only during add()
  int64_t adam_t = 0;

  explicit ParamStore(uint64_t seed = 0) : rng(Rng::stream(seed, 0x70617261)) {}

  static int64_t fan_in(const Shape& s) {
    if (s.size() < 2) return std::max<int64_t>(numel(s), 1);
    int64_t f = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) f *= s[i];
    return f;
  }

  int add(const std::string& name, Shape shape, Init k, double arg = 0.0) {
    Tensor<T> w(shape);
    switch (k) {
      case Init::Zeros: break;
      case Init::Ones:
        for (auto& x : w.data) x = T(1);
        break;
      case Init::Normal:
        for (auto& x : w.data) x = T(rng.normal(0.0, arg));
        break;
      case Init::Xavier: {
        int64_t fi = fan_in(shape);
        int64_t fo = shape.empty() ? 1 : shape.back();
        if (shape.size() > 2) {
          // conv-style [k..., ci, co]: receptive field multiplies both fans
          fo = shape.back();
          int64_t rf = 1;
          for (size_t i = 0; i + 2 < shape.size(); ++i) rf *= shape[i];
          fo *= rf;
        }
        double std = std::sqrt(2.0 / double(fi + fo));
        for (auto& x : w.data) x = T(rng.normal(0.0, std));
        break;
      }
    }
    ps.push_back(P{name, std::move(w), Tensor<T>::zeros(shape), Tensor<T>::zeros(shape),
                   Tensor<T>::zeros(shape)});
    return int(ps.size()) - 1;
  }

  P& operator[](int id) { return ps[size_t(id)]; }
  const P& operator[](int id) const { return ps[size_t(id)]; }

  int64_t param_count() const {
    int64_t n = 0;
    for (auto& p : ps) n += p.w.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : ps)
      for (auto& x : p.g.data) x = T(0);
  }

  T grad_norm() const {
    double s = 0;
    for (auto& p : ps)
      for (auto& x : p.g.data) s += double(x) * double(x);
    return T(std::sqrt(s));
  }

  // Decoupled weight decay (AdamW): w -= lr*wd*w, then Adam update.
  void adamw(double lr, double beta1, double beta2, double eps, double wd) {
    ++adam_t;
    double bc1 = 1.0 - std::pow(beta1, double(adam_t));
    double bc2 = 1.0 - std::pow(beta2, double(adam_t));
    for (auto& p : ps) {
      for (int64_t k = 0; k < p.w.numel(); ++k) {
        double gk = double(p.g[k]);
        double mk = beta1 * double(p.m[k]) + (1.0 - beta1) * gk;
        double vk = beta2 * double(p.v[k]) + (1.0 - beta2) * gk * gk;
        p.m[k] = T(mk);
        p.v[k] = T(vk);
        double wk = double(p.w[k]) - lr * wd * double(p.w[k]);
        wk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
        p.w[k] = T(wk);
      }
    }
  }

  // Plain SGD (probes / adapter pretraining use it per protocol).
  void sgd(double lr) {
    for (auto& p : ps)
      for (int64_t k = 0; k < p.w.numel(); ++k) p.w[k] = T(double(p.w[k]) - lr * double(p.g[k]));
  }
};

}  // namespace strata
