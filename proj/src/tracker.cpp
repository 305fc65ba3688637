#include "vlt/tracker.hpp"

#include <cmath>
#include <iostream>

namespace vlt::tracker {

namespace {

// Below this confidence the prediction is considered lost and the search
// anchor stays put for the next frame.
constexpr double kLostConfidence = 0.2;

Tensor detached(const Tensor& t) {
  return Tensor::from_data(t.shape(), t.data(), t.dtype());
}

}  // namespace

Tracker::Tracker(const model::ModelParams& params, TrackerOptions opt)
    : params_(params), opt_(opt) {
  temf::TemfConfig tc;
  tc.n_modules = params.cfg.n_modules;
  tc.d_model = params.cfg.d_model;
  tc.d_state = params.cfg.d_state;
  tc.d_inner_ratio = params.cfg.d_inner_ratio;
  tc.window = params.cfg.window;
  tc.conv_width = params.cfg.conv_width;
  memory_ = temf::make_memory(tc, DType::F32);
}

Tensor Tracker::encode_template(const synth::Image& img,
                                const heads::Box& box) {
  synth::Image crop = encoder::crop_resize(
      img, box, params_.cfg.template_scale, params_.cfg.template_size, nullptr);
  return detached(encoder::encode_image(crop, params_.enc));
}

model::ForwardOut Tracker::forward(const TokenSequence& g) {
  const Tensor* frozen =
      opt_.srf && frame_idx_ > 0 && frozen_t_uni_.impl() != nullptr
          ? &frozen_t_uni_
          : nullptr;
  return model::model_forward(params_, g, opt_.mode, memory_, frozen);
}

void Tracker::maybe_update_clip(const synth::Image& img, const heads::Box& box,
                                double conf) {
  if (conf <= params_.cfg.conf_threshold) return;
  if (opt_.srf && !params_.cfg.srf_update_templates) return;
  TemplateEntry e{encode_template(img, box), conf};
  if (static_cast<std::int64_t>(clip_.size()) >= params_.cfg.clip_len)
    clip_.erase(clip_.begin() + 1);  // entry 0 is the protected initial crop
  clip_.push_back(std::move(e));
}

void Tracker::init(const synth::Frame& frame0,
                   const std::vector<std::int64_t>& lang_ids) {
  lang_ids_ = lang_ids;
  frame_idx_ = 0;
  const bool has_lang = opt_.mode != model::Mode::Bbox;
  const bool has_box = opt_.mode != model::Mode::Nl;
  if (has_lang && lang_ids_.empty())
    throw ConfigError("tracker: language mode without language ids");

  Tensor f_l;
  if (has_lang) f_l = encoder::encode_language(lang_ids_, params_.enc);

  encoder::AffineMap map;
  synth::Image search_img;
  if (has_box) {
    last_box_ = frame0.gt;
    clip_.clear();
    clip_.push_back({encode_template(frame0.image, last_box_), 1.0});
    search_img = encoder::crop_resize(frame0.image, last_box_,
                                      params_.cfg.search_scale,
                                      params_.cfg.search_size, &map);
  } else {
    // grounding: the whole frame is the search region
    const double s = frame0.image.w;
    const heads::Box whole{s / 2, s / 2, s / params_.cfg.search_scale,
                           s / params_.cfg.search_scale};
    search_img = encoder::crop_resize(frame0.image, whole,
                                      params_.cfg.search_scale,
                                      params_.cfg.search_size, &map);
  }
  Tensor f_x = encoder::encode_image(search_img, params_.enc);
  std::vector<Tensor> templates;
  for (const auto& e : clip_) templates.push_back(e.feat);
  TokenSequence g = encoder::assemble(f_l, templates, f_x, params_.enc);
  model::ForwardOut out = forward(g);
  frozen_t_uni_ = detached(out.t_uni);
  temf::detach_memory(memory_);

  if (!has_box) {
    // adopt the grounded box as the initial reference
    heads::DecodedBox dec = heads::decode_box(out.maps, out.disc.target_prob);
    last_box_ = map.to_world(dec.box);
    clip_.clear();
    clip_.push_back({encode_template(frame0.image, last_box_), 1.0});
  }
  frame_idx_ = 1;
}

TrackRecord Tracker::step(const synth::Frame& frame) {
  if (frame_idx_ < 1) throw ConfigError("tracker: step before init");
  try {
    if (opt_.srf && opt_.srf_reset_memory) {
      const std::int64_t keep_t = memory_.t;
      for (auto& l : memory_.levels) {
        l.h_alpha = Tensor::zeros(l.h_alpha.shape(), l.h_alpha.dtype());
        l.h_beta = Tensor::zeros(l.h_beta.shape(), l.h_beta.dtype());
      }
      memory_.t = 0;  // forces the learned-initial-state path
      (void)keep_t;
    }
    encoder::AffineMap map;
    synth::Image search_img = encoder::crop_resize(
        frame.image, last_box_, params_.cfg.search_scale,
        params_.cfg.search_size, &map);
    Tensor f_x = encoder::encode_image(search_img, params_.enc);

    Tensor f_l;
    std::vector<Tensor> templates;
    const bool refs = !opt_.srf;  // SRF drops references after frame 0
    if (refs) {
      if (opt_.mode != model::Mode::Bbox)
        f_l = encoder::encode_language(lang_ids_, params_.enc);
      for (const auto& e : clip_) templates.push_back(e.feat);
    }
    TokenSequence g = encoder::assemble(f_l, templates, f_x, params_.enc);
    model::ForwardOut out = forward(g);
    temf::detach_memory(memory_);

    heads::HeadMaps maps = out.maps;
    Tensor prob = out.disc.target_prob;
    if (head_stub) {
      auto stubbed = head_stub(map, frame.gt);
      maps = std::move(stubbed.first);
      prob = std::move(stubbed.second);
    }
    heads::DecodedBox dec = heads::decode_box(maps, prob);
    heads::Box world = map.to_world(dec.box);

    TrackRecord rec;
    rec.frame = frame_idx_;
    rec.box = world;
    rec.conf = dec.confidence;
    rec.w_l = out.clues.w_l.item();
    rec.w_z = out.clues.w_z.item();
    rec.iou = heads::iou(world, frame.gt);

    if (dec.confidence >= kLostConfidence) {
      last_box_ = world;
      maybe_update_clip(frame.image, world, dec.confidence);
    } else {
      std::cerr << "tracker: low confidence " << dec.confidence << " at frame "
                << frame_idx_ << ", keeping previous box\n";
    }
    records_.push_back(rec);
    ++frame_idx_;
    return rec;
  } catch (const NumericError& e) {
    throw NumericError("frame " + std::to_string(frame_idx_) + ": " + e.what());
  }
}

}  // namespace vlt::tracker
