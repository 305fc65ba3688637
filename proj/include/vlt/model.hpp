#pragma once

#include <string>
#include <utility>

#include "vlt/encoder.hpp"
#include "vlt/heads.hpp"
#include "vlt/temf.hpp"

namespace vlt::model {

enum class Mode { Bbox, Nl, NlBbox };

Mode parse_mode(const std::string& name);  // "bbox" | "nl" | "nl-bbox"
std::string mode_name(Mode m);

struct ModelParams {
  Config cfg;
  encoder::EncoderParams enc;
  temf::TemfParams fusion;
  heads::QueryDecoderParams dec_lang, dec_vis;
  heads::ModalitySelectParams select;
  Tensor w_r;           // search refinement projection
  Tensor w_tgt, w_bgd;  // discrimination linear layers
  heads::BoxHeadParams box;

  // Stable name -> tensor registry (checkpoint + optimizer order).
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> tensors() const;
};

ModelParams init_model(Rng& rng, const Config& cfg, DType dtype = DType::F32);

struct ForwardOut {
  TokenSequence fused;
  Tensor f_l, f_z, f_x;  // post-fusion segments (f_l/f_z may be empty)
  Tensor t_uni;          // unified reference token (1, d)
  heads::ModalityClues clues;
  Tensor refined;  // (n_search, d)
  heads::Discrimination disc;
  heads::HeadMaps maps;
};

// Full per-frame pipeline after assembly: fusion stack, modality selection,
// search refinement, discrimination, box maps. frozen_t_uni overrides the
// pooled reference token (semi-reference-free frames).
ForwardOut model_forward(const ModelParams& m, const TokenSequence& g,
                         Mode mode, temf::StateSpaceMemory& memory,
                         const Tensor* frozen_t_uni = nullptr);

}  // namespace vlt::model
