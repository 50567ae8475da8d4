#include "strata/tok/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "strata/core/graph.hpp"
#include "strata/core/serialize.hpp"
#include "strata/eval/imagestats.hpp"
#include "strata/tok/patches.hpp"

namespace strata::tok {

namespace {
using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

constexpr const char* kMagic = "STOK1";
}  // namespace

Tokenizer::Tokenizer(TokenizerConfig cfg, uint64_t seed) : cfg_(cfg), ps_(seed) {
  int din = input_dim(), h = cfg_.hidden, de = cfg_.d_e;
  w1_ = ps_.add("enc.w1", {din, h}, Init::Xavier);
  b1_ = ps_.add("enc.b1", {h}, Init::Zeros);
  w2_ = ps_.add("enc.w2", {h, de}, Init::Xavier);
  b2_ = ps_.add("enc.b2", {de}, Init::Zeros);
  w3_ = ps_.add("dec.w3", {de, h}, Init::Xavier);
  b3_ = ps_.add("dec.b3", {h}, Init::Zeros);
  w4_ = ps_.add("dec.w4", {h, din}, Init::Xavier);
  b4_ = ps_.add("dec.b4", {din}, Init::Zeros);
}

std::pair<float, float> Tokenizer::train_step(const Tensor<float>& batch, float lr, float wd,
                                              float consistency) {
  if (frozen_) throw std::logic_error("tokenizer is frozen; weights are immutable");
  STRATA_CHECK(batch.shape.size() == 2 && batch.shape[1] == input_dim(),
               "train_step expects [N, patch*patch*3]");
  Graph<float> g(/*grad_on=*/true);
  ps_.zero_grad();
  auto x = g.leaf(batch);
  auto enc = [&](Var<float> v) {
    auto h1 = silu(linear(v, g.param(ps_, w1_), g.param(ps_, b1_)));
    return linear(h1, g.param(ps_, w2_), g.param(ps_, b2_));
  };
  auto dec = [&](Var<float> v) {
    auto h2 = silu(linear(v, g.param(ps_, w3_), g.param(ps_, b3_)));
    return linear(h2, g.param(ps_, w4_), g.param(ps_, b4_));
  };
  auto e = enc(x);
  auto xhat = dec(e);
  auto loss_rec = mean_all(square(sub(xhat, x)));
  // Fixed-point term: re-encoding the reconstruction should return the code.
  auto e2 = enc(xhat);
  auto loss_fix = mean_all(square(sub(e2, stopgrad(e))));
  auto loss = add(loss_rec, scale(loss_fix, consistency));
  g.backward(loss);
  ps_.adamw(lr, 0.9f, 0.999f, 1e-8f, wd);
  return {scalar_of(g.val(loss_rec)), scalar_of(g.val(loss_fix))};
}

float Tokenizer::train_and_freeze(const Tensor<float>& train_patches,
                                  const std::vector<Tensor<float>>& val_frames,
                                  const TokTrainConfig& tc) {
  STRATA_CHECK(train_patches.shape.size() == 2, "train_patches must be [N,D]");
  int64_t n = train_patches.shape[0];
  int64_t din = train_patches.shape[1];
  STRATA_CHECK(din == input_dim(), "patch dim mismatch");
  Rng rng = Rng::stream(tc.seed, 0x746f6bu);
  Tensor<float> batch = Tensor<float>::uninit({tc.batch, din});
  for (int step = 0; step < tc.steps; ++step) {
    for (int i = 0; i < tc.batch; ++i) {
      int64_t r = rng.randint(n);
      std::copy_n(&train_patches.data[size_t(r * din)], size_t(din),
                  &batch.data[size_t(i) * size_t(din)]);
    }
    // Cosine decay to 5% of the base rate.
    float lr = tc.lr * (0.05f + 0.95f * 0.5f *
                                    (1.f + std::cos(3.14159265f * float(step) / float(tc.steps))));
    auto [lrec, lfix] = train_step(batch, lr, tc.weight_decay, tc.consistency);
    if (tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps))
      std::printf("[tokenizer] step %5d  rec %.3e  fix %.3e\n", step, double(lrec), double(lfix));
  }
  frozen_ = true;
  float p = reconstruction_psnr(val_frames);
  if (p < tc.psnr_target) {
    frozen_ = false;
    throw std::runtime_error("tokenizer PSNR target unmet: " + std::to_string(p) + " dB < " +
                             std::to_string(tc.psnr_target) + " dB");
  }
  return p;
}

namespace {

// Frozen-codec affine: Y[r] = X[r]*W + b, one row at a time, inputs
// accumulated in fixed order onto per-output lanes. Each row's bits depend
// only on that row's values — never on batch position, buffer address, or
// blocking heuristics — so identical patches always map to identical
// embeddings, which the dataset/checkpoint digests rely on.
void affine_rows(const float* X, int64_t n, int64_t k, const float* W, const float* b, int64_t m,
                 float* Y) {
  for (int64_t r = 0; r < n; ++r) {
    const float* x = X + r * k;
    float* y = Y + r * m;
    std::copy_n(b, size_t(m), y);
    for (int64_t kk = 0; kk < k; ++kk) {
      const float xv = x[kk];
      const float* w = W + kk * m;
      for (int64_t j = 0; j < m; ++j) y[j] += xv * w[j];
    }
  }
}

void silu_inplace(float* Y, int64_t n) {
  Eigen::Map<Eigen::ArrayXf> a(Y, n);
  a = a / (1.f + (-a).exp());
}

}  // namespace

Tensor<float> Tokenizer::encode_patches(const Tensor<float>& X) const {
  STRATA_CHECK(frozen_, "encode requires a frozen tokenizer");
  STRATA_CHECK(X.shape.size() == 2 && X.shape[1] == input_dim(), "encode_patches shape mismatch");
  int64_t n = X.shape[0];
  int64_t din = input_dim(), h = cfg_.hidden, de = cfg_.d_e;
  Tensor<float> H1 = Tensor<float>::uninit({n, h});
  affine_rows(X.data.data(), n, din, ps_[w1_].w.data.data(), ps_[b1_].w.data.data(), h,
              H1.data.data());
  silu_inplace(H1.data.data(), n * h);
  Tensor<float> E = Tensor<float>::uninit({n, de});
  affine_rows(H1.data.data(), n, h, ps_[w2_].w.data.data(), ps_[b2_].w.data.data(), de,
              E.data.data());
  return E;
}

Tensor<float> Tokenizer::decode_patches(const Tensor<float>& E, bool clip) const {
  STRATA_CHECK(frozen_, "decode requires a frozen tokenizer");
  STRATA_CHECK(E.shape.size() == 2 && E.shape[1] == cfg_.d_e, "decode_patches shape mismatch");
  int64_t n = E.shape[0];
  int64_t din = input_dim(), h = cfg_.hidden, de = cfg_.d_e;
  Tensor<float> H1 = Tensor<float>::uninit({n, h});
  affine_rows(E.data.data(), n, de, ps_[w3_].w.data.data(), ps_[b3_].w.data.data(), h,
              H1.data.data());
  silu_inplace(H1.data.data(), n * h);
  Tensor<float> X = Tensor<float>::uninit({n, din});
  affine_rows(H1.data.data(), n, h, ps_[w4_].w.data.data(), ps_[b4_].w.data.data(), din,
              X.data.data());
  if (clip)
    for (auto& v : X.data) v = std::min(1.f, std::max(0.f, v));
  return X;
}

Tensor<float> Tokenizer::encode(const Tensor<float>& frames) const {
  Tensor<float> pt = patchify(frames, cfg_.patch);
  int64_t T = pt.shape[0], P = pt.shape[1];
  Tensor<float> E = encode_patches(pt.reshaped({T * P, pt.shape[2]}));
  return E.reshaped({T, P, cfg_.d_e});
}

Tensor<float> Tokenizer::decode(const Tensor<float>& embs, int H, int W) const {
  STRATA_CHECK(embs.shape.size() == 3 && embs.shape[2] == cfg_.d_e, "decode expects [T,P,D_e]");
  int64_t T = embs.shape[0], P = embs.shape[1];
  Tensor<float> X = decode_patches(embs.reshaped({T * P, int64_t(cfg_.d_e)}), /*clip=*/true);
  return unpatchify(X.reshaped({T, P, X.shape[1]}), H, W, cfg_.patch);
}

float Tokenizer::reconstruction_psnr(const std::vector<Tensor<float>>& frames) const {
  double total_se = 0;
  int64_t total_n = 0;
  for (const auto& f : frames) {
    STRATA_CHECK(f.shape.size() == 4 && f.shape[3] == 3, "expects [T,H,W,3] frames");
    Tensor<float> rec = decode(encode(f), int(f.shape[1]), int(f.shape[2]));
    total_se += double(eval::mse(rec, f)) * double(f.numel());
    total_n += f.numel();
  }
  if (total_n == 0) return 99.f;
  double m = total_se / double(total_n);
  return m <= 0 ? 99.f : float(10.0 * std::log10(1.0 / m));
}

uint64_t Tokenizer::weight_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (int id : {w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_}) {
    const auto& w = ps_[id].w;
    h = fnv1a64(w.data.data(), w.data.size() * sizeof(float), h);
  }
  return h;
}

void Tokenizer::save(const std::string& path) const {
  STRATA_CHECK(frozen_, "refusing to save an unfrozen tokenizer");
  ByteWriter bw;
  bw.str(kMagic);
  bw.i64(cfg_.patch);
  bw.i64(cfg_.d_e);
  bw.i64(cfg_.hidden);
  for (int id : {w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_}) {
    bw.str(ps_[id].name);
    bw.tensor(ps_[id].w);
  }
  bw.u64(weight_hash());
  write_file(path, bw.buf);
}

Tokenizer Tokenizer::load(const std::string& path) {
  ByteReader br(read_file(path));
  STRATA_CHECK(br.str() == kMagic, "bad tokenizer checkpoint magic");
  TokenizerConfig cfg;
  cfg.patch = int(br.i64());
  cfg.d_e = int(br.i64());
  cfg.hidden = int(br.i64());
  Tokenizer t(cfg, /*seed=*/0);
  for (int id : {t.w1_, t.b1_, t.w2_, t.b2_, t.w3_, t.b3_, t.w4_, t.b4_}) {
    std::string name = br.str();
    STRATA_CHECK(name == t.ps_[id].name, "tokenizer checkpoint field order mismatch");
    Tensor<float> w = br.tensor<float>();
    STRATA_CHECK(w.shape == t.ps_[id].w.shape, "tokenizer checkpoint shape mismatch");
    t.ps_[id].w = std::move(w);
  }
  uint64_t h = br.u64();
  t.frozen_ = true;
  STRATA_CHECK(h == t.weight_hash(), "tokenizer checkpoint hash mismatch (corrupt file?)");
  return t;
}

Tensor<float> collect_patches(const std::vector<const Tensor<float>*>& clips, int patch,
                              int64_t max_patches, uint64_t seed) {
  STRATA_CHECK(!clips.empty(), "collect_patches: empty corpus");
  int64_t din = int64_t(patch) * patch * 3;
  // Count patches available.
  int64_t total = 0;
  for (const auto* c : clips) {
    STRATA_CHECK(c->shape.size() == 4 && c->shape[3] == 3, "clip must be [T,H,W,3]");
    total += c->shape[0] * (c->shape[1] / patch) * (c->shape[2] / patch);
  }
  int64_t n = std::min(total, max_patches);
  Tensor<float> out = Tensor<float>::uninit({n, din});
  Rng rng = Rng::stream(seed, 0x70636cu);
  for (int64_t i = 0; i < n; ++i) {
    const Tensor<float>& c = *clips[rng.randint(int64_t(clips.size()))];
    int64_t T = c.shape[0], H = c.shape[1], W = c.shape[2];
    int64_t gh = H / patch, gw = W / patch;
    int64_t t = rng.randint(T);
    int64_t gi = rng.randint(gh);
    int64_t gj = rng.randint(gw);
    float* dst = &out.data[size_t(i * din)];
    for (int pi = 0; pi < patch; ++pi) {
      const float* src = &c.data[size_t(((t * H + gi * patch + pi) * W + gj * patch) * 3)];
      std::copy_n(src, size_t(patch) * 3, dst + size_t(pi) * patch * 3);
    }
  }
  return out;
}

}  // namespace strata::tok
