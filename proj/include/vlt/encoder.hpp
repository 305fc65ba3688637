#pragma once

#include "vlt/synth.hpp"

namespace vlt::encoder {

// crop pixel/normalized coordinates -> world pixels:
// world = origin + u * side (u in [0,1] of the crop square)
struct AffineMap {
  double ox = 0, oy = 0, side = 1;

  heads::Box to_world(const heads::Box& crop_norm) const {
    return {ox + crop_norm.cx * side, oy + crop_norm.cy * side,
            crop_norm.w * side, crop_norm.h * side};
  }
  heads::Box to_crop(const heads::Box& world_px) const {
    return {(world_px.cx - ox) / side, (world_px.cy - oy) / side,
            world_px.w / side, world_px.h / side};
  }
};

// Square crop of side scale*sqrt(w*h) centered on the box, padded with the
// image mean color outside the frame, resized (nearest) to out_size.
// Degenerate boxes are clamped to 2 px per side.
synth::Image crop_resize(const synth::Image& img, const heads::Box& box_px,
                         double scale, std::int64_t out_size, AffineMap* map);

struct MixBlock {
  Tensor conv_w, conv_b;  // depthwise over the token axis
  Tensor w1, b1, w2, b2;  // pointwise MLP
};

struct EncoderParams {
  std::int64_t patch = 8;
  Tensor patch_proj, patch_bias;  // (patch*patch*3, d), (d)
  MixBlock mix[2];
  Tensor lang_table;  // (vocab, d)
  Tensor pos_lang, pos_template, pos_search;  // per-segment positions
  Tensor type_embed;  // (3, d): lang / template / search

  std::vector<Tensor> tensors() const;
};

EncoderParams init_encoder(Rng& rng, const Config& cfg,
                           DType dtype = DType::F32);

// Patch projection only (no mixing): one token per patch, row-major.
Tensor encode_patches(const synth::Image& img, const EncoderParams& p);
// Projection + two local mixing blocks.
Tensor encode_image(const synth::Image& img, const EncoderParams& p);
Tensor encode_language(const std::vector<std::int64_t>& ids,
                       const EncoderParams& p);

// Adds per-segment positional and modality-type embeddings, concatenates
// [lang | templates... | search] and records the layout.
TokenSequence assemble(const Tensor& f_l, const std::vector<Tensor>& templates,
                       const Tensor& f_x, const EncoderParams& p);

Tensor mean_pool(const Tensor& tokens);  // (n,d) -> (1,d)

}  // namespace vlt::encoder
