// Tests for the synthetic clip generator: rendering oracles (mask centroid,
// mask area, warp-consistency IoU), determinism of dataset builds, trace
// bookkeeping, clamping, and validation errors.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "strata/core/serialize.hpp"
#include "strata/eval/imagestats.hpp"
#include "strata/synth/dataset.hpp"
#include "strata/synth/shapes.hpp"

using namespace strata;
using namespace strata::synth;
namespace fs = std::filesystem;

namespace {

constexpr float kPi = 3.14159265358979323846f;

// Warp the t=0 soft mask to time t by the cumulative affine chain recorded in
// the trace (inverse mapping + bilinear sampling). Independent of the
// renderer's own state bookkeeping.
Tensor<float> warp_mask_by_trace(const Tensor<float>& mask0, const SceneState& st0,
                                 const ActionTrace& trace, int upto_t) {
  int H = mask0.shape[0], W = mask0.shape[1];
  float tx = 0.f, ty = 0.f, srot = 0.f, slog = 0.f;
  for (int t = 0; t < upto_t; ++t) {
    tx += trace.steps[size_t(t)].dx;
    ty += trace.steps[size_t(t)].dy;
    srot += trace.steps[size_t(t)].rot;
    slog += trace.steps[size_t(t)].scale_log;
  }
  float px = st0.x + tx, py = st0.y + ty;
  float dscale = std::exp(slog);
  float cr = std::cos(-srot), sr = std::sin(-srot);
  Tensor<float> out({H, W});
  for (int i = 0; i < H; ++i) {
    float y = -1.f + 2.f * (float(i) + 0.5f) / float(H);
    for (int j = 0; j < W; ++j) {
      float x = -1.f + 2.f * (float(j) + 0.5f) / float(W);
      // Map the time-t scene point back to its t=0 location.
      float rx = (x - px) / dscale, ry = (y - py) / dscale;
      float x0 = st0.x + cr * rx - sr * ry;
      float y0 = st0.y + sr * rx + cr * ry;
      // Bilinear sample of mask0 at (x0, y0).
      float fj = (x0 + 1.f) * 0.5f * float(W) - 0.5f;
      float fi = (y0 + 1.f) * 0.5f * float(H) - 0.5f;
      int j0 = int(std::floor(fj)), i0 = int(std::floor(fi));
      float aj = fj - float(j0), ai = fi - float(i0);
      auto sample = [&](int ii, int jj) -> float {
        if (ii < 0 || ii >= H || jj < 0 || jj >= W) return 0.f;
        return mask0.data[size_t(ii) * size_t(W) + size_t(jj)];
      };
      out.data[size_t(i) * size_t(W) + size_t(j)] =
          (1 - ai) * ((1 - aj) * sample(i0, j0) + aj * sample(i0, j0 + 1)) +
          ai * ((1 - aj) * sample(i0 + 1, j0) + aj * sample(i0 + 1, j0 + 1));
    }
  }
  return out;
}

std::string fresh_dir(const std::string& tag) {
  std::string d = (fs::temp_directory_path() / ("strata_synth_" + tag)).string();
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("zero motion: identical frames and all-zero trace") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Square;
  shape.init_x = 0.1f;
  shape.init_y = -0.2f;
  shape.init_scale = 0.4f;
  shape.background_id = 3;
  MotionSpec motion;  // no flags set
  auto [clip, trace] = render_sequence(shape, motion, 16);
  REQUIRE(clip.frames.shape == Shape{16, 64, 64, 3});
  size_t fn = 64 * 64 * 3;
  for (int t = 1; t < 16; ++t)
    for (size_t p = 0; p < fn; ++p)
      REQUIRE(clip.frames.data[size_t(t) * fn + p] == clip.frames.data[p]);
  REQUIRE(trace.steps.size() == 15);
  for (const auto& s : trace.steps) {
    CHECK(s.dx == 0.f);
    CHECK(s.dy == 0.f);
    CHECK(s.scale_log == 0.f);
    CHECK(s.rot == 0.f);
  }
}

TEST_CASE("translation 0.02 x 15 steps moves mask centroid +0.30 in x") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Circle;
  shape.init_x = -0.2f;
  shape.init_y = 0.05f;
  shape.init_scale = 0.35f;
  shape.background_id = 5;
  MotionSpec motion;
  motion.translate = true;
  motion.dx = 0.02f;
  motion.dy = 0.f;
  auto [clip, trace] = render_sequence(shape, motion, 16);

  Tensor<float> bg = background(shape.background_id, 64, 64);
  size_t fn = 64 * 64 * 3;
  Tensor<float> f0({64, 64, 3}), fT({64, 64, 3});
  std::copy_n(clip.frames.data.begin(), fn, f0.data.begin());
  std::copy_n(clip.frames.data.begin() + 15 * fn, fn, fT.data.begin());
  auto c0 = eval::mask_centroid(eval::change_mask(f0, bg));
  auto cT = eval::mask_centroid(eval::change_mask(fT, bg));
  CHECK(cT.first - c0.first == doctest::Approx(0.30).epsilon(0.034));  // ±0.01
  CHECK(std::fabs(cT.second - c0.second) < 0.01);
  float sum_dx = 0.f;
  for (const auto& s : trace.steps) sum_dx += s.dx;
  CHECK(sum_dx == doctest::Approx(0.30).epsilon(1e-4));
}

TEST_CASE("total scale 1.4 gives mask area ratio 1.96") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Circle;
  shape.init_scale = 0.4f;
  shape.background_id = 0;
  MotionSpec motion;
  motion.scale = true;
  motion.total_scale = 1.4f;
  auto [clip, trace] = render_sequence(shape, motion, 16);

  Tensor<float> bg = background(0, 64, 64);
  size_t fn = 64 * 64 * 3;
  Tensor<float> f0({64, 64, 3}), fT({64, 64, 3});
  std::copy_n(clip.frames.data.begin(), fn, f0.data.begin());
  std::copy_n(clip.frames.data.begin() + 15 * fn, fn, fT.data.begin());
  float a0 = eval::mask_area(eval::change_mask(f0, bg));
  float aT = eval::mask_area(eval::change_mask(fT, bg));
  CHECK(aT / a0 == doctest::Approx(1.96).epsilon(0.0255));  // ±0.05
  // The geometric distribution means every step has the same log increment.
  for (const auto& s : trace.steps)
    CHECK(s.scale_log == doctest::Approx(std::log(1.4) / 15.0).epsilon(1e-4));
}

TEST_CASE("trace consistency: warped t=0 mask matches rendered mask, IoU >= 0.97") {
  GenConfig cfg;
  cfg.seed = 11;
  cfg.T = 16;
  for (const char* cls : {"translate", "scale", "rotate", "translate+scale", "translate+rotate"}) {
    for (uint64_t rec = 0; rec < 3; ++rec) {
      auto [shape, motion] = sample_record(cfg, cls, rec * 31 + 7);
      auto [clip, trace] = render_sequence(shape, motion, cfg.T);
      Tensor<float> mask0 = shape_alpha(shape, clip.states[0], 64, 64);
      for (int t : {4, 9, 15}) {
        Tensor<float> pred = warp_mask_by_trace(mask0, clip.states[0], trace, t);
        Tensor<float> actual = shape_alpha(shape, clip.states[size_t(t)], 64, 64);
        CHECK(eval::iou(pred, actual) >= 0.97f);
      }
    }
  }
}

TEST_CASE("static warmup prefix renders identical frames") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Triangle;
  shape.init_scale = 0.45f;
  shape.background_id = 2;
  MotionSpec motion;
  motion.translate = true;
  motion.dx = 0.03f;
  motion.dy = -0.01f;
  motion.warmup_frames = 4;
  auto [clip, trace] = render_sequence(shape, motion, 12);
  CHECK(trace.onset_frame == 4);
  size_t fn = 64 * 64 * 3;
  for (int t = 1; t <= 4; ++t)
    for (size_t p = 0; p < fn; p += 97)
      REQUIRE(clip.frames.data[size_t(t) * fn + p] == clip.frames.data[p]);
  for (int t = 0; t < 4; ++t) {
    CHECK(trace.steps[size_t(t)].dx == 0.f);
    CHECK(trace.steps[size_t(t)].dy == 0.f);
  }
  CHECK(trace.steps[4].dx == doctest::Approx(0.03f));
  // Frame 5 differs from frame 4 (motion became visible).
  bool any_diff = false;
  for (size_t p = 0; p < fn && !any_diff; ++p)
    any_diff = clip.frames.data[5 * fn + p] != clip.frames.data[4 * fn + p];
  CHECK(any_diff);
}

TEST_CASE("validation rejects out-of-domain specs") {
  ShapeSpec shape;
  shape.init_scale = 0.2f;  // below [0.3, 0.9]
  MotionSpec motion;
  CHECK_THROWS_AS((void)render_sequence(shape, motion, 8), std::invalid_argument);

  shape.init_scale = 0.5f;
  shape.init_x = 0.9f;  // circle pokes out of the frame
  CHECK_THROWS_AS((void)render_sequence(shape, motion, 8), std::invalid_argument);

  shape.init_x = 0.f;
  motion.scale = true;
  motion.total_scale = 1.5f;
  CHECK_THROWS_AS((void)render_sequence(shape, motion, 8), std::invalid_argument);

  motion = MotionSpec{};
  motion.rotate = true;
  motion.total_rotation = -0.1f;
  CHECK_THROWS_AS((void)render_sequence(shape, motion, 8), std::invalid_argument);

  motion = MotionSpec{};
  motion.warmup_frames = 8;
  CHECK_THROWS_AS((void)render_sequence(shape, motion, 8), std::invalid_argument);

  CHECK_THROWS_AS((void)render_sequence(shape, MotionSpec{}, 1), std::invalid_argument);
}

TEST_CASE("edge clamp records the translation actually applied") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Circle;
  shape.init_x = 0.55f;
  shape.init_scale = 0.35f;
  shape.background_id = 1;
  MotionSpec motion;
  motion.translate = true;
  motion.dx = 0.05f;  // would reach x=1.30 unclamped; wall is at 0.98-0.35=0.63
  auto [clip, trace] = render_sequence(shape, motion, 12);
  float x = shape.init_x;
  for (const auto& s : trace.steps) x += s.dx;
  CHECK(x == doctest::Approx(0.63f).epsilon(1e-5));
  CHECK(clip.states.back().x == doctest::Approx(0.63f).epsilon(1e-5));
  CHECK(trace.steps[0].dx == doctest::Approx(0.05f));       // before the wall
  CHECK(trace.steps.back().dx == 0.f);                      // pinned at the wall
  // State positions and the cumulative trace agree exactly.
  float cx = shape.init_x;
  for (size_t t = 0; t < trace.steps.size(); ++t) {
    cx += trace.steps[t].dx;
    CHECK(clip.states[t + 1].x == doctest::Approx(cx).epsilon(1e-6));
  }
}

TEST_CASE("scale clamp records the log ratio actually applied") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Circle;
  shape.init_scale = 0.9f;
  MotionSpec motion;
  motion.scale = true;
  motion.total_scale = 1.4f;  // 0.9*1.4 = 1.26 exceeds the 1.0 cap
  auto [clip, trace] = render_sequence(shape, motion, 16);
  CHECK(clip.states.back().scale == doctest::Approx(1.0f).epsilon(1e-6));
  float slog = 0.f;
  for (const auto& s : trace.steps) slog += s.scale_log;
  CHECK(slog == doctest::Approx(std::log(1.0 / 0.9)).epsilon(1e-4));
}

TEST_CASE("backgrounds: deterministic, hue-separated, reproducible library") {
  for (int id = 0; id < kNumBackgrounds; ++id) {
    Tensor<float> a = background(id, 64, 64);
    Tensor<float> b = background(id, 64, 64);
    REQUIRE(a.data == b.data);
    Tensor<float> ones({64, 64});
    for (auto& v : ones.data) v = 1.f;
    float h = eval::mean_hue(a, ones);
    CHECK(hue_distance(h, background_hue(id)) < 0.02f);
    for (float v : a.data) {
      REQUIRE(std::isfinite(v));
      REQUIRE(v >= 0.f);
      REQUIRE(v <= 1.f);
    }
  }
}

TEST_CASE("sampled records keep shape hue far from background hue") {
  GenConfig cfg;
  cfg.seed = 21;
  for (uint64_t rec = 0; rec < 24; ++rec) {
    auto [shape, motion] = sample_record(cfg, "translate", rec);
    (void)motion;
    float hsv[3];
    rgb_to_hsv(shape.color.data(), hsv);
    CHECK(hue_distance(hsv[0], background_hue(shape.background_id)) >= 0.25f);
  }
}

TEST_CASE("dataset build: determinism, bookkeeping, splits, composition traces") {
  GenConfig cfg;
  cfg.seed = 7;
  cfg.T = 8;
  cfg.H = 32;
  cfg.W = 32;
  cfg.classes = {{"translate", 10}, {"scale", 10}, {"rotate", 10}, {"translate+scale", 10}};

  std::string d1 = fresh_dir("a"), d2 = fresh_dir("b");
  build_dataset(cfg, d1);
  build_dataset(cfg, d2);
  Manifest m1 = load_manifest(d1), m2 = load_manifest(d2);
  REQUIRE(m1.records.size() == 40);
  REQUIRE(m2.records.size() == 40);
  for (size_t i = 0; i < m1.records.size(); ++i) {
    REQUIRE(m1.records[i].digest == m2.records[i].digest);
    REQUIRE(m1.records[i].cls == m2.records[i].cls);
  }
  // Raw bytes identical, not just digests.
  CHECK(read_file(d1 + "/" + m1.records[3].frames_file) ==
        read_file(d2 + "/" + m2.records[3].frames_file));

  // Class labels and split fractions.
  int n_tr = 0, n_val = 0, n_te = 0;
  std::set<std::string> classes;
  for (const auto& r : m1.records) {
    classes.insert(r.cls);
    if (r.split == "train") ++n_tr;
    if (r.split == "val") ++n_val;
    if (r.split == "test") ++n_te;
  }
  CHECK(classes.size() == 4);
  CHECK(n_tr == 32);
  CHECK(n_val == 4);
  CHECK(n_te == 4);

  // Composition class records have simultaneously nonzero dx/dy and scale_log.
  bool found = false;
  for (const auto& r : m1.records) {
    if (r.cls != "translate+scale") continue;
    const auto& s = r.trace.steps.back();
    CHECK((s.dx != 0.f || s.dy != 0.f));
    CHECK(s.scale_log != 0.f);
    found = true;
  }
  CHECK(found);

  // Frames round-trip and land in [0,1].
  Tensor<float> fr = load_frames(d1, m1.records[0]);
  REQUIRE(fr.shape == Shape{8, 32, 32, 3});
  for (float v : fr.data) {
    REQUIRE(std::isfinite(v));
    REQUIRE(v >= 0.f);
    REQUIRE(v <= 1.f);
  }
  std::string bytes = read_file(d1 + "/" + m1.records[0].frames_file);
  CHECK(fnv1a64(bytes.data(), bytes.size()) == m1.records[0].digest);

  // Rejected configs.
  GenConfig bad = cfg;
  bad.classes = {{"translate", 0}};
  CHECK_THROWS_AS(build_dataset(bad, fresh_dir("c")), std::invalid_argument);
  bad.classes = {{"teleport", 3}};
  CHECK_THROWS_AS(build_dataset(bad, fresh_dir("d")), std::invalid_argument);

  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(fresh_dir("c"));
  fs::remove_all(fresh_dir("d"));
}

TEST_CASE("sampler output always renders without validation errors") {
  GenConfig cfg;
  cfg.seed = 3;
  for (const char* cls :
       {"translate", "scale", "rotate", "translate+scale", "translate+rotate",
        "scale+rotate", "translate+scale+rotate", "static"}) {
    for (uint64_t rec = 0; rec < 4; ++rec) {
      auto [shape, motion] = sample_record(cfg, cls, 1000 + rec);
      auto [clip, trace] = render_sequence(shape, motion, cfg.T);
      (void)trace;
      // Shape must stay inside the frame the whole time.
      for (const auto& st : clip.states) {
        CHECK(std::fabs(st.x) + bound_radius(shape.kind) * st.scale <= kEdge + 1e-4f);
        CHECK(std::fabs(st.y) + bound_radius(shape.kind) * st.scale <= kEdge + 1e-4f);
      }
    }
  }
}

TEST_CASE("rotation moves pixels for asymmetric shapes") {
  ShapeSpec shape;
  shape.kind = ShapeKind::Triangle;
  shape.init_scale = 0.5f;
  shape.background_id = 6;
  MotionSpec motion;
  motion.rotate = true;
  motion.total_rotation = kPi / 4.f;
  auto [clip, trace] = render_sequence(shape, motion, 16);
  size_t fn = 64 * 64 * 3;
  bool diff = false;
  for (size_t p = 0; p < fn && !diff; ++p)
    diff = clip.frames.data[15 * fn + p] != clip.frames.data[p];
  CHECK(diff);
  CHECK(trace.steps[0].rot == doctest::Approx(kPi / 4.f / 15.f));
  // Mask area is rotation-invariant.
  float a0 = eval::mask_area(shape_alpha(shape, clip.states[0], 64, 64));
  float aT = eval::mask_area(shape_alpha(shape, clip.states[15], 64, 64));
  CHECK(aT == doctest::Approx(a0).epsilon(0.02));
}
