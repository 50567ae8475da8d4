#pragma once
// On-disk corpus of rendered clips. Layout:
//   <dir>/manifest.json            generator version, config echo, record list
//   <dir>/<split>/NNNNNN.f32       raw little-endian float32 frames [T,H,W,3]
//   <dir>/<split>/NNNNNN.json      sidecar: specs + action trace + digest
// Same (config, seed) always produces bit-identical files.
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "strata/synth/shapes.hpp"

namespace strata::synth {

inline constexpr const char* kGeneratorVersion = "strata-synth-1";

// A motion class is '+'-joined tokens from {translate, scale, rotate}.
struct ClassCount {
  std::string cls;
  int count = 0;
};

struct GenConfig {
  int T = 16, H = 64, W = 64;
  uint64_t seed = 0;
  std::vector<ClassCount> classes;
  float train_frac = 0.8f, val_frac = 0.1f;
};

struct RecordMeta {
  int id = 0;
  std::string cls, split;
  uint64_t seed = 0;  // per-record stream index fed to the sampler
  int T = 16, H = 64, W = 64;
  ShapeSpec shape;
  MotionSpec motion;
  ActionTrace trace;
  std::string frames_file;  // relative to the dataset dir
  uint64_t digest = 0;      // FNV-1a of the frame bytes
};

struct Manifest {
  std::string version;
  GenConfig cfg;
  std::vector<RecordMeta> records;
};

// Parses "translate+scale" into flags; throws on unknown tokens.
void apply_class(const std::string& cls, MotionSpec& m);

// Draws a renderable (shape, motion) pair for a motion class. Deterministic
// in (cfg.seed, record_index).
std::pair<ShapeSpec, MotionSpec> sample_record(const GenConfig& cfg, const std::string& cls,
                                               uint64_t record_index);

void build_dataset(const GenConfig& cfg, const std::string& dir);
Manifest load_manifest(const std::string& dir);
Tensor<float> load_frames(const std::string& dir, const RecordMeta& rec);

// Indices of records in one split ("train"/"val"/"test").
std::vector<size_t> split_indices(const Manifest& m, const std::string& split);

}  // namespace strata::synth
