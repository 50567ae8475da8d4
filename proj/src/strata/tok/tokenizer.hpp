#pragma once
// Visual codec: a strictly per-patch encoder (pixels -> D_e-dim embedding) and
// mirrored decoder, trained once as an autoencoder on corpus frames and then
// frozen. Downstream components treat embeddings as the prediction space and
// use the decoder only for visualization and pixel metrics.
#include <cstdint>
#include <string>
#include <vector>

#include "strata/core/params.hpp"
#include "strata/core/tensor.hpp"

namespace strata::tok {

struct TokenizerConfig {
  int patch = 8;
  int d_e = 64;
  int hidden = 256;
};

struct TokTrainConfig {
  int steps = 6000;
  int batch = 256;
  float lr = 1e-3f;
  float weight_decay = 1e-4f;
  float consistency = 0.5f;  // weight of the re-encoding fixed-point term
  float psnr_target = 30.f;
  uint64_t seed = 1;
  int log_every = 0;  // 0 = silent
};

class Tokenizer {
 public:
  Tokenizer(TokenizerConfig cfg, uint64_t seed);

  // Autoencoder training on [N, patch*patch*3] pixel patches; evaluates PSNR
  // on held-out frames, freezes on success, throws std::runtime_error naming
  // the achieved PSNR when the target is unmet.
  float train_and_freeze(const Tensor<float>& train_patches,
                         const std::vector<Tensor<float>>& val_frames, const TokTrainConfig& tc);
  // One optimizer pass over a patch minibatch; throws std::logic_error if
  // frozen. Returns (reconstruction MSE, re-encoding MSE).
  std::pair<float, float> train_step(const Tensor<float>& batch, float lr, float wd,
                                     float consistency);

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  // Frozen codec (requires frozen()).
  Tensor<float> encode(const Tensor<float>& frames) const;               // [T,H,W,3]->[T,P,D_e]
  Tensor<float> decode(const Tensor<float>& embs, int H, int W) const;   // [T,P,D_e]->[T,H,W,3]
  Tensor<float> encode_patches(const Tensor<float>& X) const;            // [N,D_in]->[N,D_e]
  Tensor<float> decode_patches(const Tensor<float>& E, bool clip) const; // [N,D_e]->[N,D_in]
  float reconstruction_psnr(const std::vector<Tensor<float>>& frames) const;

  uint64_t weight_hash() const;
  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

  const TokenizerConfig& config() const { return cfg_; }
  int input_dim() const { return cfg_.patch * cfg_.patch * 3; }

 private:
  TokenizerConfig cfg_;
  ParamStore<float> ps_;
  int w1_, b1_, w2_, b2_;  // encoder
  int w3_, b3_, w4_, b4_;  // decoder
  bool frozen_ = false;
};

// Gathers up to max_patches patch vectors from the clips (uniformly sampled
// frames/patches), as one [N, patch*patch*3] tensor.
Tensor<float> collect_patches(const std::vector<const Tensor<float>*>& clips, int patch,
                              int64_t max_patches, uint64_t seed);

}  // namespace strata::tok
