#pragma once

#include <cstdint>
#include <string>

#include "vlt/tensor.hpp"

namespace vlt {

// Flat key=value run configuration. Unknown keys are rejected so typos in
// config files fail loudly instead of silently using defaults.
struct Config {
  // model
  std::int64_t d_model = 64;
  std::int64_t d_state = 8;
  std::int64_t d_inner_ratio = 2;
  std::int64_t n_modules = 4;
  std::int64_t window = 8;
  std::int64_t conv_width = 3;
  std::int64_t box_hidden = 64;
  std::int64_t n_lang_select = 4;
  bool segment_masked_window = false;
  double tau = 0.1;    // discrimination temperature
  double tau_c = 0.1;  // contrastive temperature

  // geometry
  std::int64_t image_size = 64;
  std::int64_t patch = 8;
  std::int64_t template_size = 32;
  std::int64_t search_size = 64;
  double template_scale = 2.0;
  double search_scale = 4.0;

  // tracking
  std::int64_t clip_len = 3;
  double conf_threshold = 0.8;
  bool srf_update_templates = false;

  // world
  std::int64_t seq_len = 8;
  std::int64_t distractors = 2;
  bool hard_distractors = false;

  // training
  double lr = 5e-4;
  double weight_decay = 0.05;
  std::int64_t batch = 4;
  std::int64_t epochs = 24;
  std::int64_t train_sequences = 300;
  std::int64_t eval_sequences = 20;
  std::int64_t unroll = 2;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  double lambda_tgt = 1.0;
  double lambda_cls = 1.0;
  double lambda_cw = 0.5;
  double lambda_co = 0.5;
  std::int64_t intra_negatives = 8;

  void validate() const;
};

// Parses "key = value" lines; '#' starts a comment; blank lines ignored.
Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);

}  // namespace vlt
