// Tokenizer tests: patch reshaping, shape/determinism contracts, strict
// per-patch locality, freeze semantics, checkpoint round trip with content
// hash, and autoencoder training gates (PSNR, reconstruction MSE,
// re-encoding fixed point) on a rendered corpus.
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "strata/core/rng.hpp"
#include "strata/core/serialize.hpp"
#include "strata/synth/dataset.hpp"
#include "strata/synth/shapes.hpp"
#include "strata/tok/patches.hpp"
#include "strata/tok/tokenizer.hpp"

using namespace strata;
using namespace strata::tok;
namespace fs = std::filesystem;

namespace {

// Rendered mini-corpus: >= 1000 frames at 32x32 across motion classes.
std::vector<Tensor<float>> small_corpus(int n_records, uint64_t seed, int hw = 64) {
  synth::GenConfig cfg;
  cfg.seed = seed;
  cfg.T = 16;
  cfg.H = hw;
  cfg.W = hw;
  std::vector<Tensor<float>> clips;
  const char* classes[4] = {"translate", "scale", "rotate", "translate+scale"};
  for (int i = 0; i < n_records; ++i) {
    auto [shape, motion] = synth::sample_record(cfg, classes[i % 4], uint64_t(i));
    auto [clip, trace] = synth::render_sequence(shape, motion, cfg.T, cfg.H, cfg.W);
    (void)trace;
    clips.push_back(std::move(clip.frames));
  }
  return clips;
}

}  // namespace

TEST_CASE("patchify/unpatchify round-trip is exact") {
  Rng rng = Rng::stream(5, 1);
  Tensor<float> frames({3, 16, 24, 3});
  for (auto& v : frames.data) v = float(rng.uniform());
  Tensor<float> pt = patchify(frames, 8);
  REQUIRE(pt.shape == Shape{3, 6, 192});
  Tensor<float> back = unpatchify(pt, 16, 24, 8);
  REQUIRE(back.data == frames.data);
  // Patch row layout: patch (gi,gj) starts at pixel (8gi, 8gj).
  CHECK(pt.at({1, 4, 0}) == frames.at({1, 8, 8, 0}));
  CHECK(pt.at({1, 4, 5}) == frames.at({1, 8, 9, 2}));
  CHECK(pt.at({1, 4, 24 + 3 * 2 + 1}) == frames.at({1, 9, 10, 1}));
}

TEST_CASE("encode shape contract, determinism, and per-patch locality") {
  TokenizerConfig cfg;
  cfg.patch = 8;
  cfg.d_e = 64;
  Tokenizer tk(cfg, /*seed=*/3);
  tk.freeze();

  Rng rng = Rng::stream(9, 2);
  Tensor<float> one({1, 32, 32, 3});
  for (auto& v : one.data) v = float(rng.uniform());
  Tensor<float> e1 = tk.encode(one);
  REQUIRE(e1.shape == Shape{1, 16, 64});
  for (float v : e1.data) REQUIRE(std::isfinite(v));

  // Two identical frames give identical embedding rows.
  Tensor<float> two({2, 32, 32, 3});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.data.size());
  Tensor<float> e2 = tk.encode(two);
  for (int64_t p = 0; p < 16; ++p)
    for (int64_t d = 0; d < 64; ++d) REQUIRE(e2.at({0, p, d}) == e2.at({1, p, d}));
  // Re-encoding the same tensor is bit-identical.
  Tensor<float> e1b = tk.encode(one);
  REQUIRE(e1b.data == e1.data);

  // Perturbing pixels of exactly one patch changes exactly one row.
  Tensor<float> pert = one;
  for (int pi = 0; pi < 8; ++pi)
    for (int pj = 0; pj < 8; ++pj)
      pert.at({0, 16 + pi, 24 + pj, 1}) += 0.25f;  // patch (gi=2, gj=3) -> p=11
  Tensor<float> ep = tk.encode(pert);
  for (int64_t p = 0; p < 16; ++p) {
    bool same = true;
    for (int64_t d = 0; d < 64; ++d) same = same && ep.at({0, p, d}) == e1.at({0, p, d});
    if (p == 11)
      CHECK(!same);
    else
      CHECK(same);
  }
}

TEST_CASE("freeze semantics: no training after freeze, no codec before freeze") {
  Tokenizer tk(TokenizerConfig{}, 1);
  Tensor<float> batch({4, 192});
  CHECK_THROWS(tk.encode(Tensor<float>({1, 32, 32, 3})));  // unfrozen codec
  (void)tk.train_step(batch, 1e-3f, 0.f, 0.f);             // allowed while mutable
  tk.freeze();
  CHECK_THROWS_AS((void)tk.train_step(batch, 1e-3f, 0.f, 0.f), std::logic_error);
}

TEST_CASE("constant-color corpus trains to effectively unbounded PSNR") {
  TokenizerConfig cfg;
  cfg.patch = 8;
  Tokenizer tk(cfg, 7);
  Tensor<float> patches({512, 192});
  for (auto& v : patches.data) v = 0.5f;
  std::vector<Tensor<float>> val;
  Tensor<float> f({2, 32, 32, 3});
  for (auto& v : f.data) v = 0.5f;
  val.push_back(std::move(f));
  TokTrainConfig tc;
  tc.steps = 800;
  tc.batch = 128;
  tc.psnr_target = 50.f;
  float psnr = tk.train_and_freeze(patches, val, tc);
  CHECK(psnr >= 50.f);
}

TEST_CASE("tokenizer trains to PSNR >= 30 on held-out frames; codec contracts hold") {
  auto clips = small_corpus(68, /*seed=*/4242);
  REQUIRE(clips.size() * 16 >= 1000);
  std::vector<const Tensor<float>*> train_clips;
  std::vector<Tensor<float>> val_frames;
  for (size_t i = 0; i < clips.size(); ++i) {
    if (i + 8 < clips.size())
      train_clips.push_back(&clips[i]);
    else
      val_frames.push_back(clips[i]);
  }
  Tensor<float> patches = collect_patches(train_clips, 8, 60000, 1);

  TokenizerConfig cfg;
  cfg.patch = 8;
  cfg.d_e = 64;
  Tokenizer tk(cfg, 11);
  TokTrainConfig tc;
  tc.batch = 256;
  tc.seed = 2;
  float psnr = tk.train_and_freeze(patches, val_frames, tc);
  CHECK(psnr >= 30.f);
  MESSAGE("tokenizer val PSNR: ", psnr, " dB");

  // Per-pixel MSE of an encode->decode pass on held-out frames (30 dB gate
  // on [0,1] pixels implies 1e-3).
  const Tensor<float>& hf = val_frames[0];
  Tensor<float> rec = tk.decode(tk.encode(hf), 64, 64);
  double se = 0;
  for (size_t k = 0; k < hf.data.size(); ++k) {
    double d = double(rec.data[k]) - double(hf.data[k]);
    se += d * d;
    REQUIRE(rec.data[k] >= 0.f);
    REQUIRE(rec.data[k] <= 1.f);
  }
  CHECK(se / double(hf.data.size()) <= 1e-3);

  // Re-encoding fixed point on held-out frames: encode(decode(encode(x)))
  // matches encode(x) within 1e-4 per element (squared-error convention, as
  // with the per-pixel MSE gate).
  double sum_sq = 0;
  int64_t n_el = 0;
  for (const auto& vf : val_frames) {
    Tensor<float> e = tk.encode(vf);
    Tensor<float> e2 = tk.encode(tk.decode(e, 64, 64));
    for (size_t k = 0; k < e.data.size(); ++k) {
      double d = double(e2.data[k]) - double(e.data[k]);
      sum_sq += d * d;
    }
    n_el += e.numel();
  }
  double fix_mse = sum_sq / double(n_el);
  MESSAGE("re-encoding per-element MSE: ", fix_mse);
  CHECK(fix_mse <= 1e-4);

  // Checkpoint round trip preserves the codec bit-for-bit and the hash gates
  // corrupt files.
  std::string path = (fs::temp_directory_path() / "strata_tok_ckpt.bin").string();
  tk.save(path);
  Tokenizer lk = Tokenizer::load(path);
  CHECK(lk.weight_hash() == tk.weight_hash());
  Tensor<float> ea = tk.encode(val_frames[1]);
  Tensor<float> eb = lk.encode(val_frames[1]);
  REQUIRE(ea.data == eb.data);

  std::string bytes = read_file(path);
  bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] + 1);
  std::string bad = path + ".bad";
  write_file(bad, bytes);
  CHECK_THROWS(Tokenizer::load(bad));
  fs::remove(path);
  fs::remove(bad);
}

TEST_CASE("unmet PSNR target raises an error naming the achieved value") {
  auto clips = small_corpus(8, 77);
  std::vector<const Tensor<float>*> ptrs;
  for (auto& c : clips) ptrs.push_back(&c);
  Tensor<float> patches = collect_patches(ptrs, 8, 2000, 3);
  std::vector<Tensor<float>> val;
  val.push_back(clips[0]);
  Tokenizer tk(TokenizerConfig{}, 5);
  TokTrainConfig tc;
  tc.steps = 5;  // hopeless budget
  tc.psnr_target = 30.f;
  try {
    tk.train_and_freeze(patches, val, tc);
    FAIL("expected a PSNR failure");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("PSNR") != std::string::npos);
    CHECK(msg.find("dB") != std::string::npos);
  }
  CHECK(!tk.frozen());
}
