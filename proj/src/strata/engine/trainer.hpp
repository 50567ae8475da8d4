#pragma once
// Two-stage training engine: stage 1 optimizes the full objective under
// teacher forcing; stage 2 fine-tunes with chained structure predictions
// (same objective, rollout inputs). The static-step mask threshold tau is
// calibrated to 0.5 x median per-step motion norm over the first epoch and
// then frozen. Emits one JSON metrics line per step and byte-stable versioned
// checkpoints (config, weights, optimizer moments, tokenizer hash, trainer
// state) from which training is resume-exact.
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "strata/core/serialize.hpp"
#include "strata/engine/data.hpp"
#include "strata/obj/objective.hpp"

namespace strata::engine {

using model::WorldModel;

struct TrainConfig {
  int64_t stage1_steps = 3000;  // teacher forcing
  int64_t stage2_steps = 100;   // rollout fine-tuning (30:1 against stage 1)
  int64_t batch = 8;
  int64_t clip_len = 16;
  int64_t stage2_context = 2;  // teacher frames before chaining in stage 2
  double lr = 1e-4, weight_decay = 1e-5;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 1;
  int64_t val_every = 100;  // fixed-batch validation cadence (0 = off)

  void validate() const {
    STRATA_CHECK(stage1_steps >= 0 && stage2_steps >= 0, "step counts must be non-negative");
    STRATA_CHECK(stage2_steps <= stage1_steps, "stage 2 must not exceed stage 1");
    STRATA_CHECK(batch >= 1 && clip_len >= 2, "batch >= 1, clip length >= 2");
    STRATA_CHECK(stage2_context >= 1 && stage2_context < clip_len,
                 "stage-2 context must lie in [1, clip_len-1]");
    STRATA_CHECK(lr > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                 "optimizer hyperparameters out of range");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"stage1_steps", c.stage1_steps},
                     {"stage2_steps", c.stage2_steps},
                     {"batch", c.batch},
                     {"clip_len", c.clip_len},
                     {"stage2_context", c.stage2_context},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"seed", c.seed},
                     {"val_every", c.val_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("stage1_steps").get_to(c.stage1_steps);
  j.at("stage2_steps").get_to(c.stage2_steps);
  j.at("batch").get_to(c.batch);
  j.at("clip_len").get_to(c.clip_len);
  j.at("stage2_context").get_to(c.stage2_context);
  j.at("lr").get_to(c.lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("seed").get_to(c.seed);
  j.at("val_every").get_to(c.val_every);
}

// Mutable trainer progress carried across save/load.
struct TrainerState {
  int64_t step = 0;  // completed optimizer steps
  double tau = 0.05;
  bool tau_frozen = false;
  std::vector<float> warmup_norms;  // per-step motion norms collected pre-freeze
};

// ---------------------------------------------------------------------------
// Checkpoints: versioned, byte-stable container. Layout (little-endian):
//   str "SWM1", u32 version, str model-config JSON, u64 tokenizer hash,
//   u64 n_params, {str name, f32 tensor w} x n, i64 adam_t,
//   {f32 tensor m, f32 tensor v} x n, str train-config JSON,
//   i64 step, f64 tau, u8 tau_frozen, f32 tensor warmup_norms.
inline constexpr const char* kCkptMagic = "SWM1";
inline constexpr uint32_t kCkptVersion = 1;

inline void save_checkpoint(const std::string& path, const WorldModel<float>& wm,
                            const TrainConfig& tc, const TrainerState& st) {
  ByteWriter w;
  w.str(kCkptMagic);
  w.u32(kCkptVersion);
  w.str(nlohmann::json(wm.cfg).dump());
  w.u64(wm.tok_hash);
  w.u64(uint64_t(wm.ps.ps.size()));
  for (const auto& p : wm.ps.ps) {
    w.str(p.name);
    w.tensor(p.w);
  }
  w.i64(wm.ps.adam_t);
  for (const auto& p : wm.ps.ps) {
    w.tensor(p.m);
    w.tensor(p.v);
  }
  w.str(nlohmann::json(tc).dump());
  w.i64(st.step);
  w.f64(st.tau);
  w.u8(st.tau_frozen ? 1 : 0);
  w.tensor(Tensor<float>(Shape{int64_t(st.warmup_norms.size())}, st.warmup_norms));
  write_file(path, w.buf);
}

struct LoadedModel {
  WorldModel<float> wm;
  TrainConfig tc;
  TrainerState st;
};

// Loads a checkpoint, reconstructing the model from its stored config. When
// `expected_tok_hash` is nonzero it must match the stored tokenizer binding.
inline LoadedModel load_checkpoint(const std::string& path, uint64_t expected_tok_hash = 0) {
  ByteReader r(read_file(path));
  std::string magic = r.str();
  STRATA_CHECK(magic == kCkptMagic, path + ": not a world-model checkpoint (bad magic)");
  uint32_t ver = r.u32();
  STRATA_CHECK(ver == kCkptVersion, path + ": unsupported checkpoint version " +
                                        std::to_string(ver) + " (expected " +
                                        std::to_string(kCkptVersion) + ")");
  ModelConfig cfg = nlohmann::json::parse(r.str()).get<ModelConfig>();
  uint64_t tok_hash = r.u64();
  STRATA_CHECK(expected_tok_hash == 0 || tok_hash == expected_tok_hash,
               path + ": checkpoint is bound to tokenizer " + hex64(tok_hash) +
                   " but the provided tokenizer hashes to " + hex64(expected_tok_hash));

  WorldModel<float> wm(cfg, /*seed=*/0, tok_hash);
  uint64_t n = r.u64();
  STRATA_CHECK(n == wm.ps.ps.size(), path + ": parameter count mismatch (file " +
                                         std::to_string(n) + ", model " +
                                         std::to_string(wm.ps.ps.size()) + ")");
  for (auto& p : wm.ps.ps) {
    std::string name = r.str();
    STRATA_CHECK(name == p.name, path + ": parameter order mismatch at " + p.name);
    Tensor<float> t = r.tensor<float>();
    STRATA_CHECK(t.shape == p.w.shape, path + ": shape mismatch for " + p.name);
    p.w = std::move(t);
  }
  wm.ps.adam_t = r.i64();
  for (auto& p : wm.ps.ps) {
    p.m = r.tensor<float>();
    p.v = r.tensor<float>();
    STRATA_CHECK(p.m.shape == p.w.shape && p.v.shape == p.w.shape,
                 path + ": optimizer state shape mismatch for " + p.name);
  }
  TrainConfig tc = nlohmann::json::parse(r.str()).get<TrainConfig>();
  TrainerState st;
  st.step = r.i64();
  st.tau = r.f64();
  st.tau_frozen = r.u8() != 0;
  Tensor<float> wn = r.tensor<float>();
  st.warmup_norms.assign(wn.data.begin(), wn.data.end());
  STRATA_CHECK(r.done(), path + ": trailing bytes after checkpoint payload");
  return LoadedModel{std::move(wm), tc, st};
}

// ---------------------------------------------------------------------------
class Trainer {
 public:
  Trainer(WorldModel<float>& wm, const Batcher& data, TrainConfig tc)
      : wm_(wm), data_(data), tc_(std::move(tc)), stage2_total_(tc_.stage2_steps) {
    tc_.validate();
    STRATA_CHECK(tc_.clip_len <= data.train_store().T, "clip length exceeds dataset clips");
    if (!wm_.has_dyn()) stage2_total_ = 0;  // structure passthrough cannot roll out
  }

  TrainerState& state() { return st_; }
  const TrainConfig& config() const { return tc_; }
  int64_t total_steps() const { return tc_.stage1_steps + stage2_total_; }

  // Runs remaining steps (state().step .. total); emits one JSON line per
  // step through `sink`. Safe to call again after loading a checkpoint.
  void run(const std::function<void(const std::string&)>& sink) {
    while (st_.step < total_steps()) sink(step_once());
  }

  // One optimizer step; returns the metrics line.
  std::string step_once() {
    int64_t step = st_.step;
    bool stage2 = step >= tc_.stage1_steps;
    // tau freezes after one full pass over the training data (or at the
    // stage boundary, whichever comes first)
    if (!st_.tau_frozen && (step * tc_.batch >= data_.n_train() || stage2)) freeze_tau();

    Tensor<float> batch = data_.train_batch(step);
    Tensor<float> noise;
    const Tensor<float>* noise_ptr = nullptr;
    if (wm_.cfg.bottleneck != Bottleneck::None) {
      noise = draw_noise(step, batch.shape[0], batch.shape[1] - 1);
      noise_ptr = &noise;
    }

    Graph<float> g(true);
    Var<float> e = g.leaf(batch);
    model::TeacherOut<float> out =
        stage2 ? wm_.stage2_forward(g, e, tc_.stage2_context, noise_ptr)
               : wm_.teacher_forward(g, e, noise_ptr);

    if (!st_.tau_frozen && out.has_dyn) collect_norms(g.val(out.ds));
    obj::LossWeights<float> w;
    w.tau = float(current_tau());
    obj::LossReport<float> rep = obj::build_loss(g, out, e, w);

    wm_.ps.zero_grad();
    g.backward(rep.total);
    double gnorm = double(wm_.ps.grad_norm());
    wm_.ps.adamw(tc_.lr, tc_.beta1, tc_.beta2, tc_.adam_eps, tc_.weight_decay);
    st_.step = step + 1;

    nlohmann::ordered_json line;
    line["step"] = step;
    line["stage"] = stage2 ? 2 : 1;
    line["total"] = double(g.val(rep.total)[0]);
    for (const auto& [k, v] : rep.components) line[k] = v;
    line["mask_fraction"] = rep.mask_fraction;
    line["tau"] = current_tau();
    line["grad_norm"] = gnorm;
    if (rep.variance_warning) line["variance_warning"] = true;
    if (tc_.val_every > 0 && (st_.step % tc_.val_every == 0 || st_.step == total_steps())) {
      auto [vt, vle] = eval_val();
      line["val_total"] = vt;
      line["val_L_e"] = vle;
    }
    return line.dump();
  }

  // Teacher-forced objective on a fixed batch with the deterministic
  // bottleneck variant; no gradients, no weight mutation.
  std::pair<double, double> eval_loss(const Tensor<float>& batch) {
    bool saved = wm_.ps.train;
    wm_.ps.train = false;
    Graph<float> g(false);
    Var<float> e = g.leaf(batch);
    model::TeacherOut<float> out = wm_.teacher_forward(g, e, nullptr);
    obj::LossWeights<float> w;
    w.tau = float(current_tau());
    obj::LossReport<float> rep = obj::build_loss(g, out, e, w);
    wm_.ps.train = saved;
    return {double(g.val(rep.total)[0]), rep.components.at("L_e")};
  }

  std::pair<double, double> eval_val() { return eval_loss(data_.val_batch(tc_.batch)); }

 private:
  double current_tau() const {
    if (st_.tau_frozen || st_.warmup_norms.empty()) return st_.tau;
    return 0.5 * median(st_.warmup_norms);
  }

  void freeze_tau() {
    if (!st_.warmup_norms.empty()) st_.tau = 0.5 * median(st_.warmup_norms);
    st_.tau_frozen = true;
    st_.warmup_norms.clear();
    st_.warmup_norms.shrink_to_fit();
  }

  void collect_norms(const Tensor<float>& ds) {
    Tensor<float> mn = obj::step_motion_norms(ds);
    st_.warmup_norms.insert(st_.warmup_norms.end(), mn.data.begin(), mn.data.end());
  }

  static double median(std::vector<float> v) {
    size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? double(v[n / 2]) : 0.5 * (double(v[n / 2 - 1]) + double(v[n / 2]));
  }

  Tensor<float> draw_noise(int64_t step, int64_t B, int64_t S) {
    Rng r = Rng::stream(tc_.seed, 0x4e4f4953u, uint64_t(step));
    Tensor<float> n = Tensor<float>::uninit(Shape{B, S, int64_t(wm_.cfg.d_z)});
    for (auto& x : n.data) x = float(r.normal());
    return n;
  }

  WorldModel<float>& wm_;
  const Batcher& data_;
  TrainConfig tc_;
  TrainerState st_;
  int64_t stage2_total_ = 0;
};

}  // namespace strata::engine
