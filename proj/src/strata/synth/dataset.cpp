#include "strata/synth/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include "strata/core/rng.hpp"
#include "strata/core/serialize.hpp"

namespace strata::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr float kPi = 3.14159265358979323846f;

std::string record_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", id);
  return buf;
}
}  // namespace

void apply_class(const std::string& cls, MotionSpec& m) {
  size_t pos = 0;
  bool any = false;
  while (pos <= cls.size()) {
    size_t next = cls.find('+', pos);
    std::string tok = cls.substr(pos, next == std::string::npos ? next : next - pos);
    if (tok == "translate")
      m.translate = true;
    else if (tok == "scale")
      m.scale = true;
    else if (tok == "rotate")
      m.rotate = true;
    else if (tok == "static")
      ;  // no flags: zero-motion clips
    else
      throw std::invalid_argument("unknown motion class token: '" + tok + "'");
    any = true;
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (!any) throw std::invalid_argument("empty motion class");
}

std::pair<ShapeSpec, MotionSpec> sample_record(const GenConfig& cfg, const std::string& cls,
                                               uint64_t record_index) {
  Rng rng = Rng::stream(cfg.seed, 0xDA7Au, record_index);
  MotionSpec motion;
  apply_class(cls, motion);

  ShapeSpec shape;
  // Rotation is invisible on rotationally symmetric shapes, so rotating
  // classes draw only square/triangle.
  if (motion.rotate)
    shape.kind = ShapeKind(1 + rng.randint(2));
  else
    shape.kind = ShapeKind(rng.randint(4));
  shape.background_id = int(rng.randint(kNumBackgrounds));
  float hue = background_hue(shape.background_id) + 0.5f + 0.4f * (float(rng.uniform()) - 0.5f);
  hue -= std::floor(hue);
  float sat = 0.70f + 0.25f * float(rng.uniform());
  float val = 0.85f + 0.13f * float(rng.uniform());
  hsv_to_rgb(hue, sat, val, shape.color.data());
  shape.init_rot =
      shape.kind == ShapeKind::Circle ? 0.f : (float(rng.uniform()) - 0.5f) * kPi * 0.98f;

  if (motion.scale) {
    do {
      motion.total_scale = 0.6f + 0.8f * float(rng.uniform());
    } while (std::fabs(motion.total_scale - 1.f) < 0.1f);
  }
  if (motion.rotate) motion.total_rotation = kPi / 16.f + (kPi / 4.f - kPi / 16.f) * float(rng.uniform());
  {
    static const int kWarmups[5] = {0, 0, 0, 1, 2};
    motion.warmup_frames = kWarmups[rng.randint(5)];
  }

  float br = bound_radius(shape.kind);
  float grow = motion.scale ? std::max(1.f, motion.total_scale) : 1.f;
  float cap = (kEdge - 0.12f) / (br * grow);
  shape.init_scale = 0.3f + (std::min(0.55f, cap) - 0.3f) * float(rng.uniform());

  float speed = 0.f, theta = 0.f;
  if (motion.translate) {
    speed = 0.015f + 0.030f * float(rng.uniform());
    theta = 2.f * kPi * float(rng.uniform());
  }
  int n_move = cfg.T - 1 - motion.warmup_frames;
  float m_end = kEdge - br * shape.init_scale * grow - 0.01f;
  float x0 = 0.f, y0 = 0.f;
  for (int attempt = 0; attempt < 16; ++attempt) {
    motion.dx = speed * std::cos(theta);
    motion.dy = speed * std::sin(theta);
    float tx = motion.dx * float(n_move), ty = motion.dy * float(n_move);
    float lox = -m_end + std::max(0.f, -tx), hix = m_end - std::max(0.f, tx);
    float loy = -m_end + std::max(0.f, -ty), hiy = m_end - std::max(0.f, ty);
    if (hix >= lox && hiy >= loy) {
      x0 = lox + (hix - lox) * float(rng.uniform());
      y0 = loy + (hiy - loy) * float(rng.uniform());
      break;
    }
    speed *= 0.6f;  // shrink until the path fits
  }
  shape.init_x = x0;
  shape.init_y = y0;
  return {shape, motion};
}

// --- JSON (de)serialization -------------------------------------------------

static void to_json(json& j, const ShapeSpec& s) {
  j = json{{"kind", to_string(s.kind)}, {"color", s.color},
           {"init_x", s.init_x},        {"init_y", s.init_y},
           {"init_scale", s.init_scale}, {"init_rot", s.init_rot},
           {"background_id", s.background_id}};
}
static void from_json(const json& j, ShapeSpec& s) {
  s.kind = shape_from_string(j.at("kind").get<std::string>());
  s.color = j.at("color").get<std::array<float, 3>>();
  s.init_x = j.at("init_x").get<float>();
  s.init_y = j.at("init_y").get<float>();
  s.init_scale = j.at("init_scale").get<float>();
  s.init_rot = j.at("init_rot").get<float>();
  s.background_id = j.at("background_id").get<int>();
}

static void to_json(json& j, const MotionSpec& m) {
  j = json{{"translate", m.translate}, {"scale", m.scale},
           {"rotate", m.rotate},       {"dx", m.dx},
           {"dy", m.dy},               {"total_scale", m.total_scale},
           {"total_rotation", m.total_rotation}, {"warmup_frames", m.warmup_frames}};
}
static void from_json(const json& j, MotionSpec& m) {
  m.translate = j.at("translate").get<bool>();
  m.scale = j.at("scale").get<bool>();
  m.rotate = j.at("rotate").get<bool>();
  m.dx = j.at("dx").get<float>();
  m.dy = j.at("dy").get<float>();
  m.total_scale = j.at("total_scale").get<float>();
  m.total_rotation = j.at("total_rotation").get<float>();
  m.warmup_frames = j.at("warmup_frames").get<int>();
}

static void to_json(json& j, const ActionStep& a) {
  j = json{{"dx", a.dx}, {"dy", a.dy}, {"scale_log", a.scale_log}, {"rot", a.rot}};
}
static void from_json(const json& j, ActionStep& a) {
  a.dx = j.at("dx").get<float>();
  a.dy = j.at("dy").get<float>();
  a.scale_log = j.at("scale_log").get<float>();
  a.rot = j.at("rot").get<float>();
}

static void to_json(json& j, const ActionTrace& t) {
  j = json{{"onset_frame", t.onset_frame}, {"steps", t.steps}};
}
static void from_json(const json& j, ActionTrace& t) {
  t.onset_frame = j.at("onset_frame").get<int>();
  t.steps = j.at("steps").get<std::vector<ActionStep>>();
}

static void to_json(json& j, const RecordMeta& r) {
  j = json{{"id", r.id},         {"class", r.cls},
           {"split", r.split},   {"seed", r.seed},
           {"T", r.T},           {"H", r.H},
           {"W", r.W},           {"shape", r.shape},
           {"motion", r.motion}, {"trace", r.trace},
           {"frames_file", r.frames_file}, {"digest", hex64(r.digest)}};
}
static void from_json(const json& j, RecordMeta& r) {
  r.id = j.at("id").get<int>();
  r.cls = j.at("class").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.T = j.at("T").get<int>();
  r.H = j.at("H").get<int>();
  r.W = j.at("W").get<int>();
  r.shape = j.at("shape").get<ShapeSpec>();
  r.motion = j.at("motion").get<MotionSpec>();
  r.trace = j.at("trace").get<ActionTrace>();
  r.frames_file = j.at("frames_file").get<std::string>();
  r.digest = std::stoull(j.at("digest").get<std::string>(), nullptr, 16);
}

static void to_json(json& j, const ClassCount& c) {
  j = json{{"class", c.cls}, {"count", c.count}};
}
static void from_json(const json& j, ClassCount& c) {
  c.cls = j.at("class").get<std::string>();
  c.count = j.at("count").get<int>();
}

static void to_json(json& j, const GenConfig& c) {
  j = json{{"T", c.T},       {"H", c.H},
           {"W", c.W},       {"seed", c.seed},
           {"classes", c.classes}, {"train_frac", c.train_frac},
           {"val_frac", c.val_frac}};
}
static void from_json(const json& j, GenConfig& c) {
  c.T = j.at("T").get<int>();
  c.H = j.at("H").get<int>();
  c.W = j.at("W").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  c.classes = j.at("classes").get<std::vector<ClassCount>>();
  c.train_frac = j.at("train_frac").get<float>();
  c.val_frac = j.at("val_frac").get<float>();
}

// -----------------------------------------------------------------------------

void build_dataset(const GenConfig& cfg, const std::string& dir) {
  if (cfg.classes.empty()) throw std::invalid_argument("dataset config has zero record counts");
  for (const auto& c : cfg.classes) {
    if (c.count <= 0) throw std::invalid_argument("class '" + c.cls + "' has non-positive count");
    MotionSpec probe;
    apply_class(c.cls, probe);  // reject unknown class names up front
  }
  fs::create_directories(dir);
  for (const char* split : {"train", "val", "test"}) fs::create_directories(fs::path(dir) / split);

  Manifest man;
  man.version = kGeneratorVersion;
  man.cfg = cfg;

  int id = 0;
  for (const auto& c : cfg.classes) {
    for (int i = 0; i < c.count; ++i, ++id) {
      RecordMeta rec;
      rec.id = id;
      rec.cls = c.cls;
      rec.seed = uint64_t(id);
      rec.T = cfg.T;
      rec.H = cfg.H;
      rec.W = cfg.W;
      float u = (float(i) + 0.5f) / float(c.count);
      rec.split = u < cfg.train_frac ? "train" : (u < cfg.train_frac + cfg.val_frac ? "val" : "test");

      auto [shape, motion] = sample_record(cfg, c.cls, rec.seed);
      rec.shape = shape;
      rec.motion = motion;
      auto [clip, trace] = render_sequence(shape, motion, cfg.T, cfg.H, cfg.W);
      rec.trace = trace;

      std::string stem = record_stem(id);
      rec.frames_file = rec.split + "/" + stem + ".f32";
      const auto& fd = clip.frames.data;
      std::string bytes(reinterpret_cast<const char*>(fd.data()), fd.size() * sizeof(float));
      rec.digest = fnv1a64(bytes.data(), bytes.size());
      write_file((fs::path(dir) / rec.frames_file).string(), bytes);

      json sidecar = rec;
      write_file((fs::path(dir) / rec.split / (stem + ".json")).string(), sidecar.dump(1));
      man.records.push_back(std::move(rec));
    }
  }

  json mj = json{{"version", man.version}, {"config", man.cfg}, {"records", man.records}};
  write_file((fs::path(dir) / "manifest.json").string(), mj.dump(1));
}

Manifest load_manifest(const std::string& dir) {
  json mj = json::parse(read_file((fs::path(dir) / "manifest.json").string()));
  Manifest man;
  man.version = mj.at("version").get<std::string>();
  man.cfg = mj.at("config").get<GenConfig>();
  man.records = mj.at("records").get<std::vector<RecordMeta>>();
  return man;
}

Tensor<float> load_frames(const std::string& dir, const RecordMeta& rec) {
  std::string bytes = read_file((fs::path(dir) / rec.frames_file).string());
  size_t want = size_t(rec.T) * size_t(rec.H) * size_t(rec.W) * 3 * sizeof(float);
  STRATA_CHECK(bytes.size() == want, "frame file size mismatch: " + rec.frames_file);
  Tensor<float> t = Tensor<float>::uninit({rec.T, rec.H, rec.W, 3});
  std::memcpy(t.data.data(), bytes.data(), bytes.size());
  return t;
}

std::vector<size_t> split_indices(const Manifest& m, const std::string& split) {
  std::vector<size_t> out;
  for (size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split == split) out.push_back(i);
  return out;
}

}  // namespace strata::synth
