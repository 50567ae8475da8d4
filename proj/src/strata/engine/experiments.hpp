#pragma once
// Experiment drivers over a trained model: rollout continuation, action
// transfer and its cycle-consistency metric, structure/content rebinding, and
// motion isolation. All drivers consume batched embedding clips [1,T,P,D_e];
// frame-space helpers convert through the frozen tokenizer on demand.
#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "strata/eval/imagestats.hpp"
#include "strata/model/worldmodel.hpp"
#include "strata/tok/tokenizer.hpp"

namespace strata::engine {

using model::WorldModel;

// --- small tensor utilities (value copies, time axis = dim 1) --------------
inline Tensor<float> time_slice(const Tensor<float>& x, int64_t t0, int64_t len) {
  STRATA_CHECK(x.shape.size() >= 2 && t0 >= 0 && t0 + len <= x.shape[1],
               "time_slice out of range");
  Shape s = x.shape;
  s[1] = len;
  Tensor<float> out = Tensor<float>::uninit(s);
  int64_t B = x.shape[0], inner = 1;
  for (size_t i = 2; i < x.shape.size(); ++i) inner *= x.shape[i];
  for (int64_t b = 0; b < B; ++b)
    std::memcpy(out.ptr() + b * len * inner, x.ptr() + (b * x.shape[1] + t0) * inner,
                size_t(len * inner) * sizeof(float));
  return out;
}

inline Tensor<float> time_concat(const Tensor<float>& a, const Tensor<float>& b) {
  STRATA_CHECK(a.shape.size() == b.shape.size() && a.shape[0] == b.shape[0],
               "time_concat rank/batch mismatch");
  Shape s = a.shape;
  s[1] += b.shape[1];
  Tensor<float> out = Tensor<float>::uninit(s);
  int64_t B = a.shape[0], inner = 1;
  for (size_t i = 2; i < a.shape.size(); ++i) inner *= a.shape[i];
  for (int64_t b0 = 0; b0 < B; ++b0) {
    std::memcpy(out.ptr() + b0 * s[1] * inner, a.ptr() + b0 * a.shape[1] * inner,
                size_t(a.shape[1] * inner) * sizeof(float));
    std::memcpy(out.ptr() + (b0 * s[1] + a.shape[1]) * inner,
                b.ptr() + b0 * b.shape[1] * inner, size_t(b.shape[1] * inner) * sizeof(float));
  }
  return out;
}

inline Tensor<float> repeat_time(const Tensor<float>& x1, int64_t S) {
  STRATA_CHECK(x1.shape.size() >= 2 && x1.shape[1] == 1, "repeat_time expects [B,1,...]");
  Shape s = x1.shape;
  s[1] = S;
  Tensor<float> out = Tensor<float>::uninit(s);
  int64_t B = x1.shape[0], inner = 1;
  for (size_t i = 2; i < x1.shape.size(); ++i) inner *= x1.shape[i];
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < S; ++t)
      std::memcpy(out.ptr() + (b * S + t) * inner, x1.ptr() + b * inner,
                  size_t(inner) * sizeof(float));
  return out;
}

// Frame clip [T,H,W,3] -> batched embeddings [1,T,P,D_e].
inline Tensor<float> encode_clip(const tok::Tokenizer& tk, const Tensor<float>& frames) {
  Tensor<float> e = tk.encode(frames);
  return e.reshaped(Shape{1, e.shape[0], e.shape[1], e.shape[2]});
}

// Batched embeddings [1,S,P,D_e] -> frames [S,H,W,3].
inline Tensor<float> decode_clip(const tok::Tokenizer& tk, const Tensor<float>& e, int H, int W) {
  STRATA_CHECK(e.shape.size() == 4 && e.shape[0] == 1, "decode_clip expects [1,S,P,D_e]");
  return tk.decode(e.reshaped(Shape{e.shape[1], e.shape[2], e.shape[3]}), H, W);
}

inline double latent_mse(const Tensor<float>& a, const Tensor<float>& b) {
  STRATA_CHECK(a.shape == b.shape, "latent_mse shape mismatch");
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return a.data.empty() ? 0.0 : s / double(a.data.size());
}

// 1 - mean frame SSIM between two [S,H,W,3] clips.
inline double ssim_complement(const Tensor<float>& a, const Tensor<float>& b) {
  STRATA_CHECK(a.shape == b.shape && a.shape.size() == 4, "ssim_complement expects [S,H,W,3]");
  int64_t S = a.shape[0], inner = a.shape[1] * a.shape[2] * a.shape[3];
  Shape fs{a.shape[1], a.shape[2], a.shape[3]};
  double acc = 0;
  for (int64_t t = 0; t < S; ++t) {
    Tensor<float> fa = Tensor<float>::uninit(fs), fb = Tensor<float>::uninit(fs);
    std::memcpy(fa.ptr(), a.ptr() + t * inner, size_t(inner) * sizeof(float));
    std::memcpy(fb.ptr(), b.ptr() + t * inner, size_t(inner) * sizeof(float));
    acc += 1.0 - double(eval::ssim(fa, fb));
  }
  return acc / double(S);
}

// --- rollout continuation ---------------------------------------------------
// Rolls the model forward from the first k frames of a clip using the actions
// inferred from the full ground-truth clip, and scores the prediction against
// the clip's own future.
struct RolloutEval {
  Tensor<float> e_pred;  // [1,H,P,D_e]
  Tensor<float> s_pred;  // [1,H,P,d_s]
  Tensor<float> e_true;  // [1,H,P,D_e]
  double latent_mse = 0;
};

inline RolloutEval continue_clip(WorldModel<float>& wm, const Tensor<float>& e_clip,
                                 int64_t k, int64_t H) {
  STRATA_CHECK(e_clip.shape.size() == 4, "continue_clip expects [B,T,P,D_e]");
  int64_t T = e_clip.shape[1];
  STRATA_CHECK(k >= 1 && H >= 1 && k + H <= T, "context+horizon must fit in the clip");
  Tensor<float> z = wm.infer_actions(e_clip);  // [B,T-1,d_z]
  model::RolloutOut<float> ro =
      wm.rollout(time_slice(e_clip, 0, k), time_slice(z, 0, k - 1 + H), H);
  RolloutEval ev;
  ev.e_true = time_slice(e_clip, k, H);
  ev.latent_mse = latent_mse(ro.e_hat, ev.e_true);
  ev.e_pred = std::move(ro.e_hat);
  ev.s_pred = std::move(ro.s_hat);
  return ev;
}

// --- action transfer ---------------------------------------------------------
// Actions for transitions before the context end come from the target's own
// clip (its real past); from the context end onward the source's actions for
// the same time window are applied.
inline Tensor<float> mix_actions(const Tensor<float>& z_own, const Tensor<float>& z_src,
                                 int64_t k, int64_t H) {
  STRATA_CHECK(z_own.shape.size() == 3 && z_src.shape.size() == 3 &&
                   z_own.shape[2] == z_src.shape[2],
               "action sequences must be [B,S,d_z] with matching d_z");
  STRATA_CHECK(z_own.shape[1] >= k - 1 && z_src.shape[1] >= k - 1 + H,
               "not enough actions to transfer");
  if (k == 1) return time_slice(z_src, 0, H);
  return time_concat(time_slice(z_own, 0, k - 1), time_slice(z_src, k - 1, H));
}

inline model::RolloutOut<float> transfer_rollout(WorldModel<float>& wm,
                                                 const Tensor<float>& e_src,
                                                 const Tensor<float>& e_tgt, int64_t k,
                                                 int64_t H) {
  Tensor<float> z_src = wm.infer_actions(e_src);
  Tensor<float> z_tgt = wm.infer_actions(e_tgt);  // full clip: the IDM is contextual
  return wm.rollout(time_slice(e_tgt, 0, k), mix_actions(z_tgt, z_src, k, H), H);
}

// --- cycle-consistency of transfer -------------------------------------------
// err_direct: source rollout with its own actions, scored against the source.
// err_cycle: actions are transferred to the target, re-inferred from the
// generated target rollout, and applied back to the source; the resulting
// rollout is scored against the source the same way.
struct CycleReport {
  double direct_latent_mse = 0, cycle_latent_mse = 0;
  double direct_ssim_comp = 0, cycle_ssim_comp = 0;
  int64_t context = 0, horizon = 0;
};

inline CycleReport cycle_transfer(WorldModel<float>& wm, const tok::Tokenizer& tk,
                                  const Tensor<float>& frames_src,
                                  const Tensor<float>& frames_tgt, int64_t k, int64_t H) {
  STRATA_CHECK(frames_src.shape.size() == 4 && frames_src.shape == frames_tgt.shape,
               "cycle_transfer expects matching [T,H,W,3] clips");
  int64_t T = frames_src.shape[0];
  STRATA_CHECK(k >= 2 && H >= 1 && k + H <= T, "context >= 2 and context+horizon <= T");
  int Hpix = int(frames_src.shape[1]), Wpix = int(frames_src.shape[2]);
  Tensor<float> e_src = encode_clip(tk, frames_src);
  Tensor<float> e_tgt = encode_clip(tk, frames_tgt);
  Tensor<float> z_src = wm.infer_actions(e_src);
  Tensor<float> z_tgt = wm.infer_actions(e_tgt);

  Tensor<float> src_ctx = time_slice(e_src, 0, k);
  Tensor<float> true_frames = time_slice(frames_src.reshaped(Shape{1, T, int64_t(Hpix),
                                                                   int64_t(Wpix), 3}),
                                         k, H)
                                  .reshaped(Shape{H, int64_t(Hpix), int64_t(Wpix), 3});

  CycleReport rep;
  rep.context = k;
  rep.horizon = H;
  Tensor<float> e_future = time_slice(e_src, k, H);

  // direct hop: source actions on the source
  model::RolloutOut<float> direct = wm.rollout(src_ctx, time_slice(z_src, 0, k - 1 + H), H);
  rep.direct_latent_mse = latent_mse(direct.e_hat, e_future);
  rep.direct_ssim_comp = ssim_complement(decode_clip(tk, direct.e_hat, Hpix, Wpix), true_frames);

  // transfer hop: source actions on the target, then re-infer from the result
  model::RolloutOut<float> onto_tgt =
      wm.rollout(time_slice(e_tgt, 0, k), mix_actions(z_tgt, z_src, k, H), H);
  Tensor<float> tgt_gen = time_concat(time_slice(e_tgt, 0, k), onto_tgt.e_hat);
  Tensor<float> z_re = wm.infer_actions(tgt_gen);  // [1, k-1+H, d_z]

  // cycle hop: re-inferred actions back on the source
  model::RolloutOut<float> cycle = wm.rollout(src_ctx, mix_actions(z_src, z_re, k, H), H);
  rep.cycle_latent_mse = latent_mse(cycle.e_hat, e_future);
  rep.cycle_ssim_comp = ssim_complement(decode_clip(tk, cycle.e_hat, Hpix, Wpix), true_frames);
  return rep;
}

// --- rebinding and motion isolation -------------------------------------------
// Fuses the structure stream of clip i with the initial embedding and content
// memory of clip j: predicted embeddings for frames 1..T-1. rebind(i, i) is
// the model's own teacher-forced reconstruction pathway.
inline Tensor<float> rebind(WorldModel<float>& wm, const Tensor<float>& e_i,
                            const Tensor<float>& e_j) {
  STRATA_CHECK(e_i.shape == e_j.shape && e_i.shape.size() == 4, "rebind expects matching clips");
  int64_t T = e_i.shape[1], S = T - 1;
  Tensor<float> s_i = wm.encode_structure(e_i);
  Tensor<float> c_j = wm.content_memory(e_j);
  Tensor<float> e0_j =
      time_slice(e_j, 0, 1).reshaped(Shape{e_j.shape[0], e_j.shape[2], e_j.shape[3]});
  return wm.decode(time_slice(s_i, 1, S), e0_j, time_slice(c_j, 0, S));
}

// Holds the structure stream at its initial state while the content memory
// evolves over the real clip; a disentangled model decodes a near-static
// sequence.
inline Tensor<float> motion_isolation(WorldModel<float>& wm, const Tensor<float>& e) {
  STRATA_CHECK(e.shape.size() == 4, "motion_isolation expects [B,T,P,D_e]");
  int64_t T = e.shape[1], S = T - 1;
  Tensor<float> s = wm.encode_structure(e);
  Tensor<float> s0 = repeat_time(time_slice(s, 0, 1), S);
  Tensor<float> c = wm.content_memory(e);
  Tensor<float> e0 = time_slice(e, 0, 1).reshaped(Shape{e.shape[0], e.shape[2], e.shape[3]});
  return wm.decode(s0, e0, time_slice(c, 0, S));
}

}  // namespace strata::engine
