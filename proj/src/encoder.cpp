#include "vlt/encoder.hpp"

#include <cmath>
#include <iostream>

namespace vlt::encoder {

namespace {

Tensor linear_init(Rng& rng, std::int64_t fan_in, std::int64_t fan_out,
                   DType dtype) {
  return Tensor::randn(rng, {fan_in, fan_out}, 1.0 / std::sqrt(fan_in), dtype,
                       true);
}

MixBlock init_mix(Rng& rng, std::int64_t d, DType dtype) {
  MixBlock m;
  m.conv_w = Tensor::randn(rng, {d, 3}, 0.2, dtype, true);
  m.conv_b = Tensor::zeros({d}, dtype, true);
  m.w1 = linear_init(rng, d, d, dtype);
  m.b1 = Tensor::zeros({d}, dtype, true);
  m.w2 = Tensor::randn(rng, {d, d}, 0.2 / std::sqrt(d), dtype, true);
  m.b2 = Tensor::zeros({d}, dtype, true);
  return m;
}

Tensor apply_mix(const Tensor& tokens, const MixBlock& m) {
  const std::int64_t n = tokens.dim(0), d = tokens.dim(1);
  Tensor t = add(tokens, conv1d(tokens, m.conv_w, m.conv_b));
  Tensor h = tanh(add(matmul(t, m.w1), broadcast_to(m.b1, {n, d})));
  return add(t, add(matmul(h, m.w2), broadcast_to(m.b2, {n, d})));
}

}  // namespace

std::vector<Tensor> EncoderParams::tensors() const {
  std::vector<Tensor> out = {patch_proj, patch_bias};
  for (const MixBlock& m : mix)
    for (const Tensor& t : {m.conv_w, m.conv_b, m.w1, m.b1, m.w2, m.b2})
      out.push_back(t);
  for (const Tensor& t : {lang_table, pos_lang, pos_template, pos_search,
                          type_embed})
    out.push_back(t);
  return out;
}

EncoderParams init_encoder(Rng& rng, const Config& cfg, DType dtype) {
  EncoderParams p;
  p.patch = cfg.patch;
  const std::int64_t d = cfg.d_model;
  const std::int64_t pin = cfg.patch * cfg.patch * 3;
  p.patch_proj = linear_init(rng, pin, d, dtype);
  p.patch_bias = Tensor::zeros({d}, dtype, true);
  p.mix[0] = init_mix(rng, d, dtype);
  p.mix[1] = init_mix(rng, d, dtype);
  p.lang_table = Tensor::randn(rng, {synth::kVocabSize, d}, 0.5, dtype, true);
  const std::int64_t nt = (cfg.template_size / cfg.patch) *
                          (cfg.template_size / cfg.patch);
  const std::int64_t ns = (cfg.search_size / cfg.patch) *
                          (cfg.search_size / cfg.patch);
  p.pos_lang = Tensor::randn(rng, {6, d}, 0.1, dtype, true);
  p.pos_template = Tensor::randn(rng, {nt, d}, 0.1, dtype, true);
  p.pos_search = Tensor::randn(rng, {ns, d}, 0.1, dtype, true);
  p.type_embed = Tensor::randn(rng, {3, d}, 0.1, dtype, true);
  return p;
}

synth::Image crop_resize(const synth::Image& img, const heads::Box& box_px,
                         double scale, std::int64_t out_size, AffineMap* map) {
  heads::Box b = box_px;
  if (b.w <= 1.0 || b.h <= 1.0) {
    std::cerr << "crop: degenerate box clamped to 2px\n";
    b.w = std::max(b.w, 2.0);
    b.h = std::max(b.h, 2.0);
  }
  const double side = scale * std::sqrt(b.w * b.h);
  const double x0 = b.cx - side / 2, y0 = b.cy - side / 2;
  if (map != nullptr) *map = {x0, y0, side};

  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) mean[i % 3] += img.rgb[i];
  for (double& m : mean) m /= static_cast<double>(img.w * img.h);

  synth::Image out;
  out.w = out.h = out_size;
  out.rgb.resize(out_size * out_size * 3);
  for (std::int64_t y = 0; y < out_size; ++y)
    for (std::int64_t x = 0; x < out_size; ++x) {
      const auto sx = static_cast<std::int64_t>(
          std::floor(x0 + (x + 0.5) * side / out_size));
      const auto sy = static_cast<std::int64_t>(
          std::floor(y0 + (y + 0.5) * side / out_size));
      const bool in = sx >= 0 && sx < img.w && sy >= 0 && sy < img.h;
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = in ? img.at(sy, sx, c) : mean[c];
    }
  return out;
}

Tensor encode_patches(const synth::Image& img, const EncoderParams& p) {
  const std::int64_t ps = p.patch;
  if (img.w % ps != 0 || img.h % ps != 0)
    throw ConfigError("encode: image size not divisible by patch");
  const std::int64_t gx = img.w / ps, gy = img.h / ps, n = gx * gy;
  const std::int64_t pin = ps * ps * 3;
  std::vector<double> patches(n * pin);
  for (std::int64_t ty = 0; ty < gy; ++ty)
    for (std::int64_t tx = 0; tx < gx; ++tx) {
      const std::int64_t tok = ty * gx + tx;
      std::int64_t k = 0;
      for (std::int64_t dy = 0; dy < ps; ++dy)
        for (std::int64_t dx = 0; dx < ps; ++dx)
          for (int c = 0; c < 3; ++c)
            patches[tok * pin + k++] = img.at(ty * ps + dy, tx * ps + dx, c);
    }
  Tensor pm = Tensor::from_data({n, pin}, std::move(patches),
                               p.patch_proj.dtype());
  const std::int64_t d = p.patch_proj.dim(1);
  return add(matmul(pm, p.patch_proj), broadcast_to(p.patch_bias, {n, d}));
}

Tensor encode_image(const synth::Image& img, const EncoderParams& p) {
  Tensor t = encode_patches(img, p);
  t = apply_mix(t, p.mix[0]);
  // normalized scale keeps the downstream recurrences well-conditioned
  return layer_norm(apply_mix(t, p.mix[1]));
}

Tensor encode_language(const std::vector<std::int64_t>& ids,
                       const EncoderParams& p) {
  if (ids.empty()) return Tensor();
  std::vector<Tensor> rows;
  rows.reserve(ids.size());
  for (std::int64_t id : ids) {
    if (id < 0 || id >= p.lang_table.dim(0))
      throw ConfigError("encode_language: token id out of vocabulary");
    rows.push_back(slice(p.lang_table, 0, id, 1));
  }
  return concat(rows, 0);
}

TokenSequence assemble(const Tensor& f_l, const std::vector<Tensor>& templates,
                       const Tensor& f_x, const EncoderParams& p) {
  if (f_x.impl() == nullptr || f_x.size() == 0)
    throw LayoutError("assemble: empty search segment");
  const std::int64_t d = f_x.dim(1);
  auto with_type = [&](const Tensor& t, const Tensor& pos, std::int64_t type) {
    const std::int64_t n = t.dim(0);
    Tensor e = add(t, slice(pos, 0, 0, n));
    return add(e, broadcast_to(slice(p.type_embed, 0, type, 1), {n, d}));
  };
  std::vector<Tensor> parts;
  TokenSequence out;
  out.layout = {0, 0, f_x.dim(0)};
  if (f_l.impl() != nullptr && f_l.size() > 0) {
    if (f_l.dim(0) > p.pos_lang.dim(0))
      throw LayoutError("assemble: language segment too long");
    parts.push_back(with_type(f_l, p.pos_lang, 0));
    out.layout.n_lang = f_l.dim(0);
  }
  for (const Tensor& z : templates) {
    parts.push_back(with_type(z, p.pos_template, 1));
    out.layout.n_template += z.dim(0);
  }
  parts.push_back(with_type(f_x, p.pos_search, 2));
  out.tokens = concat(parts, 0);
  out.validate();
  return out;
}

Tensor mean_pool(const Tensor& tokens) {
  return reshape(mean(tokens, 0), {1, tokens.dim(1)});
}

}  // namespace vlt::encoder
