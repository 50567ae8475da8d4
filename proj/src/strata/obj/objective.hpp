#pragma once
// The training objective: weighted combination of visual prediction, structure
// prediction, action consistency, and action regularization (norm, forward/
// backward symmetry on moving steps, batch variance), plus any bottleneck
// loss, each separately reported. All l2 norms are non-squared; component
// means run over batch x time.
#include <cmath>
#include <map>
#include <string>

#include "strata/model/worldmodel.hpp"

namespace strata::obj {

using namespace strata;
using model::TeacherOut;

template <typename T>
struct LossWeights {
  T l_e = T(2.0), l_s = T(0.03), l_z = T(0.03), l_reg = T(0.001);
  T tau = T(0.05);    // static-step mask threshold on per-step |ds|
  T eps = T(1e-8);    // mask denominator guard
};

template <typename T>
struct LossReport {
  Var<T> total;                              // scalar graph node
  std::map<std::string, double> components;  // unweighted component values
  double mask_fraction = 0.0;
  bool variance_warning = false;  // sigma_z undefined (single sample)
};

// Per-transition motion magnitudes |ds_t| (Frobenius over patches x channels):
// [B,S,P,d_s] values -> [B,S]. Used for the mask and for threshold calibration.
template <typename T>
Tensor<T> step_motion_norms(const Tensor<T>& ds) {
  int64_t B = ds.shape[0], S = ds.shape[1], inner = ds.shape[2] * ds.shape[3];
  Tensor<T> out(Shape{B, S});
  for (int64_t r = 0; r < B * S; ++r) {
    double acc = 0;
    const T* p = ds.ptr() + r * inner;
    for (int64_t i = 0; i < inner; ++i) acc += double(p[i]) * double(p[i]);
    out[r] = T(std::sqrt(acc));
  }
  return out;
}

// Masked mean of (cos(z_fwd, z_bwd) + 1)^2 over moving transitions.
// z_fwd, z_bwd: [B,S,d_z]; mask: [B,S] values in {0,1}.
template <typename T>
Var<T> symmetry_term(Graph<T>& g, Var<T> z_fwd, Var<T> z_bwd, const Tensor<T>& mask, T eps) {
  Var<T> dot = dot_trailing(z_fwd, z_bwd, 2);                      // [B,S]
  Var<T> den = add_const(mul(norm_trailing(z_fwd, 2), norm_trailing(z_bwd, 2)), T(1e-12));
  Var<T> cosv = div(dot, den);
  Var<T> pen = square(add_const(cosv, T(1)));
  Var<T> m = g.leaf(mask);
  T msum = 0;
  for (const T& v : mask.data) msum += v;
  return scale(sum_all(mul(pen, m)), T(1) / (msum + eps));
}

// Mean over latent dims of the per-dim standard deviation across batch x time,
// as a graph node. z: [B,S,d_z]. Population std; sqrt guarded at zero by the
// variance epsilon.
template <typename T>
Var<T> mean_dim_std(Var<T> z) {
  Graph<T>& g = *z.g;
  const Shape s = g.val(z).shape;
  int64_t B = s[0], S = s[1], dz = s[2];
  Var<T> zt = permute(reshape(z, {B * S, dz}), {1, 0});            // [dz, N]
  Var<T> mu = scale(sum_axis(zt, 1), T(1) / T(B * S));             // [dz]
  Var<T> cent = badd(zt, neg(reshape(mu, {dz, 1})));               // [dz, N]
  Var<T> var = scale(sum_axis(square(cent), 1), T(1) / T(B * S));  // [dz]
  Var<T> sd = sqrt_(add_const(var, T(1e-12)));
  return mean_all(sd);
}

// Builds the Eq.-4 style total with a component report. `e` is the full input
// embedding clip [B,T,P,D_e] the teacher pass consumed.
template <typename T>
LossReport<T> build_loss(Graph<T>& g, const TeacherOut<T>& out, Var<T> e, const LossWeights<T>& w) {
  LossReport<T> rep;
  const Shape es = g.val(e).shape;
  int64_t S = es[1] - 1;

  auto comp = [&](const std::string& name, Var<T> v) {
    double x = double(g.val(v)[0]);
    if (!std::isfinite(x)) fail("loss component " + name + " is not finite");
    rep.components[name] = x;
    return v;
  };

  // L_e: mean over (b,t) of |e_{t+1} - e_hat_{t+1}|_2
  Var<T> e_tgt = slice_axis(e, 1, 1, S);
  Var<T> l_e = comp("L_e", mean_all(norm_trailing(sub(e_tgt, out.e_hat), 2)));
  Var<T> total = scale(l_e, w.l_e);

  if (out.has_dyn) {
    Var<T> l_s = comp("L_s", mean_all(norm_trailing(sub(out.ds, out.fdm_res), 2)));
    Var<T> l_z = comp(
        "L_z", mean_all(norm_trailing(sub(stopgrad(out.z_raw), out.z_student), 2)));
    total = add(total, add(scale(l_s, w.l_s), scale(l_z, w.l_z)));

    // regularizers on the action stream
    Var<T> reg_norm = comp("reg_norm", mean_all(norm_trailing(out.z, 2)));
    Tensor<T> mn = step_motion_norms(g.val(out.ds));
    Tensor<T> mask(mn.shape);
    T msum = 0;
    for (size_t i = 0; i < mask.data.size(); ++i) {
      mask.data[i] = mn.data[i] > w.tau ? T(1) : T(0);
      msum += mask.data[i];
    }
    rep.mask_fraction = double(msum) / double(mask.data.size());
    Var<T> reg_sym = comp("reg_symmetry", symmetry_term(g, out.z_raw, out.z_bwd_raw, mask, w.eps));
    Var<T> reg_var;
    if (g.val(out.z).shape[0] * g.val(out.z).shape[1] < 2) {
      rep.variance_warning = true;  // sigma_z undefined on a single sample
      reg_var = g.leaf(Tensor<T>::scalar(T(0)));
      rep.components["reg_variance"] = 0.0;
    } else {
      reg_var = comp("reg_variance", scale(exp_(scale(mean_dim_std(out.z), T(-10))), T(0.5)));
    }
    total = add(total, scale(add(add(reg_norm, reg_sym), reg_var), w.l_reg));
  }
  if (out.has_bneck) total = add(total, comp("bottleneck", out.bneck_loss));

  rep.total = total;
  double tv = double(g.val(total)[0]);
  if (!std::isfinite(tv)) fail("total loss is not finite");
  return rep;
}

}  // namespace strata::obj
