#pragma once
// Model hyperparameters for the dual-pathway world model. Desk-scale defaults
// throughout: 64x64 frames, 8x8 patch grid, 64-dim tokens.
#include <json.hpp>
#include <string>

#include "strata/core/tensor.hpp"

namespace strata {

enum class Bottleneck { None, Nsvq, Gaussian };
enum class Ablation { None, NoContent, NoIdmFdm };

inline std::string to_string(Bottleneck b) {
  switch (b) {
    case Bottleneck::None: return "none";
    case Bottleneck::Nsvq: return "nsvq";
    case Bottleneck::Gaussian: return "gaussian";
  }
  return "none";
}
inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoContent: return "no_content";
    case Ablation::NoIdmFdm: return "no_idm_fdm";
  }
  return "none";
}
inline Bottleneck bottleneck_from_string(const std::string& s) {
  if (s == "none") return Bottleneck::None;
  if (s == "nsvq") return Bottleneck::Nsvq;
  if (s == "gaussian") return Bottleneck::Gaussian;
  fail("unknown bottleneck kind: " + s + " (expected none|nsvq|gaussian)");
}
inline Ablation ablation_from_string(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no_content") return Ablation::NoContent;
  if (s == "no_idm_fdm") return Ablation::NoIdmFdm;
  fail("unknown ablation: " + s + " (expected none|no_content|no_idm_fdm)");
}

struct ModelConfig {
  // token space (must match the frozen tokenizer)
  int d_e = 64;  // per-patch token dim
  int grid = 8;  // patch grid side; P = grid*grid

  // pathway dims
  int d_s = 8;   // per-patch structure channels
  int d_z = 32;  // global latent action dim
  int d_c = 32;  // per-patch content channels

  // backbone: interleaved (spatial, temporal) pre-norm pairs
  int bb_spatial_depth = 2;
  int bb_temporal_depth = 2;
  int bb_heads = 4;
  int bb_head_dim = 16;
  int mlp_ratio = 4;  // MLP hidden = ratio * block width (all transformers)

  // structure/content encoders: per-patch 2-layer MLPs
  int enc_hidden = 64;

  // IDM: 3 conv blocks, stride (1,2,2), kernel 3, bidirectional temporal pad
  int idm_ch0 = 16, idm_ch1 = 32, idm_ch2 = 64;

  // FDM: lightweight causal transformer, AdaLN-zero conditioned on z
  int fdm_hidden = 32;
  int fdm_depth = 2;  // alternating spatial/temporal attention blocks
  int fdm_heads = 2;

  // content memory: diagonal gated linear recurrence
  int mem_expand = 2;  // inner width = expand * d_c
  int mem_conv = 4;    // causal pre-mixer kernel width

  // fusion decoder
  int fus_depth = 2;
  int fus_heads = 4;

  // latent-action bottleneck
  Bottleneck bottleneck = Bottleneck::None;
  int nsvq_codebook = 8;  // code dim = d_z
  float gauss_beta = 1e-4f;

  // ablations
  Ablation ablation = Ablation::None;

  int P() const { return grid * grid; }
  int bb_width() const { return bb_heads * bb_head_dim; }
  int mem_inner() const { return mem_expand * d_c; }

  void validate() const {
    STRATA_CHECK(d_e >= 1 && grid >= 1 && d_s >= 1 && d_z >= 1 && d_c >= 1, "positive dims");
    STRATA_CHECK(bb_width() == d_e, "backbone width (heads*head_dim) must equal d_e");
    STRATA_CHECK(bb_head_dim % 2 == 0, "rotary needs even head dim");
    STRATA_CHECK(fdm_hidden % fdm_heads == 0, "fdm head split");
    STRATA_CHECK((fdm_hidden / fdm_heads) % 2 == 0, "rotary needs even fdm head dim");
    STRATA_CHECK(d_e % fus_heads == 0, "fusion head split");
    STRATA_CHECK(grid == 1 || grid % 2 == 0, "patch grid must halve under stride-2 convs");
    STRATA_CHECK(nsvq_codebook >= 1, "codebook must be non-empty");
    STRATA_CHECK(gauss_beta >= 0.f, "beta must be non-negative");
    STRATA_CHECK(!(ablation == Ablation::NoIdmFdm && bottleneck != Bottleneck::None),
                 "structure passthrough has no latent action to bottleneck");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_e", c.d_e},
                     {"grid", c.grid},
                     {"d_s", c.d_s},
                     {"d_z", c.d_z},
                     {"d_c", c.d_c},
                     {"bb_spatial_depth", c.bb_spatial_depth},
                     {"bb_temporal_depth", c.bb_temporal_depth},
                     {"bb_heads", c.bb_heads},
                     {"bb_head_dim", c.bb_head_dim},
                     {"mlp_ratio", c.mlp_ratio},
                     {"enc_hidden", c.enc_hidden},
                     {"idm_ch0", c.idm_ch0},
                     {"idm_ch1", c.idm_ch1},
                     {"idm_ch2", c.idm_ch2},
                     {"fdm_hidden", c.fdm_hidden},
                     {"fdm_depth", c.fdm_depth},
                     {"fdm_heads", c.fdm_heads},
                     {"mem_expand", c.mem_expand},
                     {"mem_conv", c.mem_conv},
                     {"fus_depth", c.fus_depth},
                     {"fus_heads", c.fus_heads},
                     {"bottleneck", to_string(c.bottleneck)},
                     {"nsvq_codebook", c.nsvq_codebook},
                     {"gauss_beta", c.gauss_beta},
                     {"ablation", to_string(c.ablation)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_e").get_to(c.d_e);
  j.at("grid").get_to(c.grid);
  j.at("d_s").get_to(c.d_s);
  j.at("d_z").get_to(c.d_z);
  j.at("d_c").get_to(c.d_c);
  j.at("bb_spatial_depth").get_to(c.bb_spatial_depth);
  j.at("bb_temporal_depth").get_to(c.bb_temporal_depth);
  j.at("bb_heads").get_to(c.bb_heads);
  j.at("bb_head_dim").get_to(c.bb_head_dim);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("enc_hidden").get_to(c.enc_hidden);
  j.at("idm_ch0").get_to(c.idm_ch0);
  j.at("idm_ch1").get_to(c.idm_ch1);
  j.at("idm_ch2").get_to(c.idm_ch2);
  j.at("fdm_hidden").get_to(c.fdm_hidden);
  j.at("fdm_depth").get_to(c.fdm_depth);
  j.at("fdm_heads").get_to(c.fdm_heads);
  j.at("mem_expand").get_to(c.mem_expand);
  j.at("mem_conv").get_to(c.mem_conv);
  j.at("fus_depth").get_to(c.fus_depth);
  j.at("fus_heads").get_to(c.fus_heads);
  c.bottleneck = bottleneck_from_string(j.at("bottleneck").get<std::string>());
  j.at("nsvq_codebook").get_to(c.nsvq_codebook);
  j.at("gauss_beta").get_to(c.gauss_beta);
  c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
}

}  // namespace strata
