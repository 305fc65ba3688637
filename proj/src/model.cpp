#include "vlt/model.hpp"

#include <cmath>

namespace vlt::model {

Mode parse_mode(const std::string& name) {
  if (name == "bbox") return Mode::Bbox;
  if (name == "nl") return Mode::Nl;
  if (name == "nl-bbox") return Mode::NlBbox;
  throw ConfigError("unknown mode: " + name);
}

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Bbox: return "bbox";
    case Mode::Nl: return "nl";
    case Mode::NlBbox: return "nl-bbox";
  }
  return "?";
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const std::string& name, const Tensor& t) {
    out.emplace_back(name, t);
  };
  auto push_all = [&](const std::string& prefix,
                      const std::vector<Tensor>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i)
      push(prefix + "." + std::to_string(i), ts[i]);
  };
  push_all("enc", enc.tensors());
  for (std::size_t l = 0; l < fusion.levels.size(); ++l)
    push_all("fusion." + std::to_string(l), fusion.levels[l].tensors());
  push_all("dec_lang", dec_lang.tensors());
  push_all("dec_vis", dec_vis.tensors());
  push_all("select", select.tensors());
  push("w_r", w_r);
  push("w_tgt", w_tgt);
  push("w_bgd", w_bgd);
  push_all("box", box.tensors());
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

ModelParams init_model(Rng& rng, const Config& cfg, DType dtype) {
  cfg.validate();
  ModelParams m;
  m.cfg = cfg;
  m.enc = encoder::init_encoder(rng, cfg, dtype);
  temf::TemfConfig tc;
  tc.n_modules = cfg.n_modules;
  tc.d_model = cfg.d_model;
  tc.d_state = cfg.d_state;
  tc.d_inner_ratio = cfg.d_inner_ratio;
  tc.window = cfg.window;
  tc.conv_width = cfg.conv_width;
  m.fusion = temf::init_temf(rng, tc, dtype);
  if (cfg.segment_masked_window)
    for (auto& level : m.fusion.levels)
      level.enhance.segment_masked_window = true;
  m.dec_lang = heads::init_query_decoder(rng, cfg.d_model, dtype);
  m.dec_vis = heads::init_query_decoder(rng, cfg.d_model, dtype);
  m.select = heads::init_modality_select(rng, cfg.d_model, cfg.d_state, dtype);
  m.w_r = Tensor::randn(rng, {cfg.d_model, cfg.d_model},
                        1.0 / std::sqrt(cfg.d_model), dtype, true);
  m.w_tgt = Tensor::randn(rng, {cfg.d_model, cfg.d_model},
                          1.0 / std::sqrt(cfg.d_model), dtype, true);
  m.w_bgd = Tensor::randn(rng, {cfg.d_model, cfg.d_model},
                          1.0 / std::sqrt(cfg.d_model), dtype, true);
  m.box = heads::init_box_head(rng, cfg.d_model, cfg.box_hidden, dtype);
  return m;
}

ForwardOut model_forward(const ModelParams& m, const TokenSequence& g,
                         Mode mode, temf::StateSpaceMemory& memory,
                         const Tensor* frozen_t_uni) {
  ForwardOut out;
  out.fused = temf::temf_forward(g, m.fusion, memory);
  const ModalityLayout& l = out.fused.layout;
  if (l.n_lang > 0) out.f_l = slice(out.fused.tokens, 0, 0, l.n_lang);
  if (l.n_template > 0)
    out.f_z = slice(out.fused.tokens, 0, l.n_lang, l.n_template);
  out.f_x = slice(out.fused.tokens, 0, l.n_lang + l.n_template, l.n_search);

  const bool has_lang = l.n_lang > 0, has_tmpl = l.n_template > 0;
  if (frozen_t_uni != nullptr) {
    out.t_uni = *frozen_t_uni;
  } else {
    // unified reference: pooled over whichever reference segments the mode
    // provides on this frame
    if (has_lang && has_tmpl)
      out.t_uni = encoder::mean_pool(concat({out.f_l, out.f_z}, 0));
    else if (has_tmpl)
      out.t_uni = encoder::mean_pool(out.f_z);
    else if (has_lang)
      out.t_uni = encoder::mean_pool(out.f_l);
    else
      throw ConfigError(
          "model_forward: no reference segment and no frozen reference");
  }

  heads::DecodedClue p_l =
      heads::absent_clue(m.cfg.d_model, out.fused.tokens.dtype());
  heads::DecodedClue p_z = p_l;
  if (has_lang) {
    Tensor pool_ref = has_tmpl ? out.f_z : out.f_x;
    auto sel =
        heads::select_invariant_language(out.f_l, pool_ref, m.cfg.n_lang_select);
    p_l = heads::query_decode(sel.tokens, m.dec_lang);
  }
  if (has_tmpl) p_z = heads::query_decode(out.f_z, m.dec_vis);

  if (p_l.present || p_z.present) {
    out.clues = heads::modality_select(p_l, p_z, m.select);
  } else {
    out.clues = heads::ModalityClues{};  // reference-free frame
    out.clues.w_l = Tensor::scalar(0.0, out.fused.tokens.dtype());
    out.clues.w_z = Tensor::scalar(0.0, out.fused.tokens.dtype());
  }
  out.refined = heads::refine_search(out.f_x, out.clues, m.w_r);
  out.disc = heads::target_discrimination(out.refined, out.t_uni, m.w_tgt,
                                          m.w_bgd, m.cfg.tau);
  out.maps = heads::box_head(out.refined, m.box);
  (void)mode;
  return out;
}

}  // namespace vlt::model
