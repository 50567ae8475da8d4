#pragma once
// Training data plumbing: encodes dataset splits through the frozen tokenizer
// once up front (clips are small at desk scale), then serves deterministic
// batches. Batch composition is a pure function of (seed, step): each epoch is
// a seeded shuffle of the split and steps walk it in order, so training is
// resume-exact from any step without serializing sampler state.
#include <algorithm>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "strata/core/rng.hpp"
#include "strata/core/tensor.hpp"
#include "strata/synth/dataset.hpp"
#include "strata/tok/tokenizer.hpp"

namespace strata::engine {

// One dataset split as tokenizer embeddings, clip-per-record.
struct ClipStore {
  std::vector<Tensor<float>> clips;  // each [T, P, D_e]
  std::vector<size_t> record_idx;    // position in the manifest's record list
  int64_t T = 0, P = 0, De = 0;

  int64_t size() const { return int64_t(clips.size()); }
};

inline ClipStore encode_split(const std::string& dir, const synth::Manifest& m,
                              const tok::Tokenizer& tk, const std::string& split) {
  ClipStore cs;
  for (size_t i : synth::split_indices(m, split)) {
    Tensor<float> e = tk.encode(synth::load_frames(dir, m.records[i]));
    if (cs.clips.empty()) {
      cs.T = e.shape[0];
      cs.P = e.shape[1];
      cs.De = e.shape[2];
    } else {
      STRATA_CHECK(e.shape[0] == cs.T && e.shape[1] == cs.P && e.shape[2] == cs.De,
                   "split has mixed clip shapes");
    }
    cs.clips.push_back(std::move(e));
    cs.record_idx.push_back(i);
  }
  return cs;
}

class Batcher {
 public:
  Batcher(ClipStore train, ClipStore val, int64_t batch, int64_t clip_len, uint64_t seed)
      : train_(std::move(train)), val_(std::move(val)), batch_(batch), clip_(clip_len),
        seed_(seed) {
    STRATA_CHECK(train_.size() > 0, "training split is empty");
    STRATA_CHECK(batch_ >= 1 && clip_ >= 2, "batch >= 1 and clip length >= 2 required");
    STRATA_CHECK(clip_ <= train_.T, "clip length exceeds stored clip length");
  }

  int64_t n_train() const { return train_.size(); }
  int64_t n_val() const { return val_.size(); }
  int64_t batch_size() const { return batch_; }
  int64_t clip_len() const { return clip_; }
  const ClipStore& train_store() const { return train_; }
  const ClipStore& val_store() const { return val_; }

  // Steps per full pass over the training split (last batch may straddle the
  // epoch boundary; the walk simply continues into the next shuffle).
  int64_t steps_per_epoch() const { return (n_train() + batch_ - 1) / batch_; }

  // [B, clip_len, P, D_e] batch for a global step index.
  Tensor<float> train_batch(int64_t step) const {
    Tensor<float> out = Tensor<float>::uninit(Shape{batch_, clip_, train_.P, train_.De});
    Rng offs = Rng::stream(seed_, 0x4f464653u, uint64_t(step));  // clip offsets
    for (int64_t b = 0; b < batch_; ++b) {
      const Tensor<float>& clip = train_.clips[index_at(step * batch_ + b)];
      int64_t t0 = train_.T > clip_ ? offs.randint(train_.T - clip_ + 1) : 0;
      copy_clip(out, b, clip, t0);
    }
    return out;
  }

  // Fixed validation batch: the first min(max_b, n_val) validation clips,
  // prefix window. Deterministic and rng-free.
  Tensor<float> val_batch(int64_t max_b) const {
    const ClipStore& s = val_.size() > 0 ? val_ : train_;
    int64_t B = std::min<int64_t>(max_b, s.size());
    Tensor<float> out = Tensor<float>::uninit(Shape{B, clip_, s.P, s.De});
    for (int64_t b = 0; b < B; ++b) copy_clip(out, b, s.clips[size_t(b)], 0);
    return out;
  }

 private:
  size_t index_at(int64_t pos) const {
    int64_t n = n_train();
    int64_t epoch = pos / n, off = pos % n;
    if (epoch != perm_epoch_) {
      perm_.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) perm_[size_t(i)] = size_t(i);
      Rng r = Rng::stream(seed_, 0x45504f43u, uint64_t(epoch));
      for (int64_t i = n - 1; i > 0; --i)
        std::swap(perm_[size_t(i)], perm_[size_t(r.randint(i + 1))]);
      perm_epoch_ = epoch;
    }
    return perm_[size_t(off)];
  }

  void copy_clip(Tensor<float>& out, int64_t b, const Tensor<float>& clip, int64_t t0) const {
    int64_t inner = clip.shape[1] * clip.shape[2];
    std::memcpy(out.ptr() + b * clip_ * inner, clip.ptr() + t0 * inner,
                size_t(clip_ * inner) * sizeof(float));
  }

  ClipStore train_, val_;
  int64_t batch_, clip_;
  uint64_t seed_;
  mutable std::vector<size_t> perm_;
  mutable int64_t perm_epoch_ = -1;
};

}  // namespace strata::engine
