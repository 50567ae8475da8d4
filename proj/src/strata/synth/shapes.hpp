#pragma once
// Procedural video clips: one affine-animated shape over a static textured
// background. Rendering is pure (same spec -> same pixels) and anti-aliased by
// a smooth signed-distance coverage ramp, so sub-pixel motion changes pixels.
#include <array>
#include <string>
#include <vector>

#include "strata/core/tensor.hpp"

namespace strata::synth {

enum class ShapeKind : int { Circle = 0, Square = 1, Triangle = 2, Ring = 3 };
const char* to_string(ShapeKind k);
ShapeKind shape_from_string(const std::string& s);

inline constexpr int kNumBackgrounds = 8;

// Scene coordinates span [-1,1]^2; `init_scale` is the shape half-extent in
// scene units and bound_radius(kind)*scale bounds the rotated silhouette.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  std::array<float, 3> color{1.f, 0.f, 0.f};
  float init_x = 0.f, init_y = 0.f;
  float init_scale = 0.5f;   // valid domain [0.3, 0.9]
  float init_rot = 0.f;      // radians, valid domain [-pi/2, pi/2]
  int background_id = 0;     // one of kNumBackgrounds textured backgrounds
};

// Motion classes compose; each enabled class contributes a constant per-step
// increment after `warmup_frames` static transitions. Scale and rotation are
// given as totals over the moving portion (scale distributed geometrically).
struct MotionSpec {
  bool translate = false, scale = false, rotate = false;
  float dx = 0.f, dy = 0.f;       // per-step translation (scene units)
  float total_scale = 1.f;        // valid domain [0.6, 1.4]
  float total_rotation = 0.f;     // radians, valid domain [0, pi/4]
  int warmup_frames = 0;          // static transitions before motion onset
};

// One transition's affine increment as actually applied (post-clamp).
// `scale_log` is the natural log of the per-step scale ratio, so a static
// step is exactly (0, 0, 0, 0).
struct ActionStep {
  float dx = 0.f, dy = 0.f;
  float scale_log = 0.f;
  float rot = 0.f;
};

struct ActionTrace {
  std::vector<ActionStep> steps;  // length T-1
  int onset_frame = 0;            // first transition index with motion
};

struct SceneState {
  float x = 0.f, y = 0.f, scale = 0.5f, rot = 0.f;
};

struct VideoClip {
  Tensor<float> frames;            // [T,H,W,3], values in [0,1]
  std::vector<SceneState> states;  // T entries (derived bookkeeping)
};

float bound_radius(ShapeKind k);
float background_hue(int id);
Tensor<float> background(int id, int H, int W);  // [H,W,3]
// Soft coverage mask of the shape in one state, [H,W] in [0,1].
Tensor<float> shape_alpha(const ShapeSpec& s, const SceneState& st, int H, int W);
Tensor<float> render_frame(const ShapeSpec& s, const SceneState& st, const Tensor<float>& bg);

// Throws std::invalid_argument when a spec field is outside its valid domain
// or the shape is not fully inside the frame at t=0.
void validate(const ShapeSpec& s, int H, int W);
void validate(const MotionSpec& m, int T);

// Renders T frames; clamps position (shape stays inside the frame) and scale
// (to [kScaleMin, kScaleMax]), recording the values actually applied.
std::pair<VideoClip, ActionTrace> render_sequence(const ShapeSpec& shape, const MotionSpec& motion,
                                                  int T, int H = 64, int W = 64);

// Scale clamp range over the whole sequence.
inline constexpr float kScaleMin = 0.1f;
inline constexpr float kScaleMax = 1.0f;
// Shapes stay fully inside the frame: |pos| + scale*bound_radius <= kEdge.
inline constexpr float kEdge = 0.98f;

// Color helpers (h,s,v in [0,1]; hue wraps).
void hsv_to_rgb(float h, float s, float v, float* rgb);
void rgb_to_hsv(const float* rgb, float* hsv);
float hue_distance(float a, float b);  // circular, in [0, 0.5]

}  // namespace strata::synth
