#pragma once

#include <functional>

#include "vlt/checkpoint.hpp"
#include "vlt/model.hpp"

namespace vlt::tracker {

struct TrackRecord {
  std::int64_t frame = 0;
  heads::Box box;  // world pixels
  double conf = 0;
  double w_l = 0, w_z = 0;
  double iou = 0;
};

struct TemplateEntry {
  Tensor feat;  // (n_template_tokens, d), detached
  double conf = 0;
};

struct TrackerOptions {
  model::Mode mode = model::Mode::NlBbox;
  bool srf = false;                // references consumed only at frame 0
  bool srf_reset_memory = false;   // ablation: wipe memory every frame
};

class Tracker {
 public:
  Tracker(const model::ModelParams& params, TrackerOptions opt);

  // Frame 0: consumes the references (ground-truth box and/or language),
  // runs the initial forward pass, seeds the template clip.
  void init(const synth::Frame& frame0,
            const std::vector<std::int64_t>& lang_ids);
  TrackRecord step(const synth::Frame& frame);

  const std::vector<TrackRecord>& records() const { return records_; }
  const std::vector<TemplateEntry>& clip() const { return clip_; }
  const heads::Box& last_box() const { return last_box_; }

  // Test seam: replaces the learned heads with injected maps for a frame.
  std::function<std::pair<heads::HeadMaps, Tensor>(
      const encoder::AffineMap&, const heads::Box& gt_world)>
      head_stub;

 private:
  Tensor encode_template(const synth::Image& img, const heads::Box& box);
  model::ForwardOut forward(const TokenSequence& g);
  void maybe_update_clip(const synth::Image& img, const heads::Box& box,
                         double conf);

  const model::ModelParams& params_;
  TrackerOptions opt_;
  temf::StateSpaceMemory memory_;
  std::vector<TemplateEntry> clip_;
  std::vector<std::int64_t> lang_ids_;
  Tensor frozen_t_uni_;
  heads::Box last_box_;
  std::int64_t frame_idx_ = 0;
  std::vector<TrackRecord> records_;
};

}  // namespace vlt::tracker
