#include "vlt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace vlt::train {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FrameLosses {
  Tensor l1, giou, cls, tgt, cw;
  Tensor t_uni, center_feat;  // for the cross-video term
  std::int64_t elem = 0;      // batch element (negatives come from others)
};

std::int64_t gt_cell(const heads::Box& gt, std::int64_t side) {
  const auto col = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(gt.cx * side)), 0, side - 1);
  const auto row = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::floor(gt.cy * side)), 0, side - 1);
  return row * side + col;
}

FrameLosses frame_losses(const model::ForwardOut& out, const heads::Box& gt,
                         const Config& cfg) {
  FrameLosses fl;
  const std::int64_t side = out.maps.side, n = side * side;
  const std::int64_t cell = gt_cell(gt, side);
  const std::int64_t crow = cell / side, ccol = cell % side;

  fl.l1 = heads::l1_loss(heads::box_at_cell(out.maps, cell), gt);
  fl.giou = heads::giou_loss(heads::box_at_cell(out.maps, cell), gt);

  // gaussian center target, sigma in cell units
  const double sigma = 0.75;
  std::vector<double> gauss(n, 0.0);
  std::vector<double> inside(n, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const double dr = static_cast<double>(i / side) - crow;
    const double dc = static_cast<double>(i % side) - ccol;
    gauss[i] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    const double px = (i % side + 0.5) / side, py = (i / side + 0.5) / side;
    inside[i] = (std::abs(px - gt.cx) <= gt.w / 2 &&
                 std::abs(py - gt.cy) <= gt.h / 2)
                    ? 1.0
                    : 0.0;
  }
  gauss[cell] = 1.0;
  fl.cls = heads::focal_center_loss(out.maps.center_logit, gauss);
  fl.tgt = heads::bce_loss(out.disc.target_prob, inside);

  fl.t_uni = out.t_uni;
  fl.center_feat = slice(out.refined, 0, cell, 1);

  if (cfg.lambda_cw > 0) {
    // intra-frame contrast: target-center token against the most similar
    // background tokens
    const std::int64_t d = out.refined.dim(1);
    const std::vector<double> feats = out.refined.data();
    const std::vector<double> ref = out.t_uni.data();
    auto cosv = [&](std::int64_t i) {
      double dot = 0, na = 0, nb = 0;
      for (std::int64_t c = 0; c < d; ++c) {
        dot += feats[i * d + c] * ref[c];
        na += feats[i * d + c] * feats[i * d + c];
        nb += ref[c] * ref[c];
      }
      return dot / std::max(std::sqrt(na * nb), 1e-8);
    };
    std::vector<std::pair<double, std::int64_t>> bg;
    for (std::int64_t i = 0; i < n; ++i)
      if (inside[i] == 0.0) bg.emplace_back(cosv(i), i);
    std::sort(bg.begin(), bg.end(), [](const auto& a, const auto& b) {
      return a.first > b.first;
    });
    if (bg.empty()) {
      std::cerr << "train: no background tokens for intra negatives\n";
      for (std::int64_t i = 0; i < n; ++i)
        if (i != cell) bg.emplace_back(cosv(i), i);
    }
    const auto k = std::min<std::int64_t>(cfg.intra_negatives,
                                          static_cast<std::int64_t>(bg.size()));
    Tensor s_pos = heads::cosine_sim(out.t_uni, fl.center_feat);
    std::vector<Tensor> s_neg;
    for (std::int64_t i = 0; i < k; ++i)
      s_neg.push_back(heads::cosine_sim(
          out.t_uni, slice(out.refined, 0, bg[i].second, 1)));
    fl.cw = heads::contrastive_loss(s_pos, s_neg, cfg.tau_c);
  }
  return fl;
}

heads::Box jitter_box(const heads::Box& b, Rng& rng) {
  heads::Box j = b;
  j.cx += rng.uniform(-0.15, 0.15) * b.w;
  j.cy += rng.uniform(-0.15, 0.15) * b.h;
  const double s = std::exp(rng.uniform(-0.1, 0.1));
  j.w *= s;
  j.h *= s;
  return j;
}

}  // namespace

Adam::Adam(std::vector<Tensor> params, double lr, double weight_decay)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].size(), 0.0);
    v_[i].assign(params_[i].size(), 0.0);
  }
}

void Adam::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p];
    auto& data = t.mutable_data();
    const auto& grad = t.impl()->grad;
    if (grad.empty()) continue;  // parameter unused this step
    for (std::size_t i = 0; i < data.size(); ++i) {
      m_[p][i] = b1 * m_[p][i] + (1 - b1) * grad[i];
      v_[p][i] = b2 * v_[p][i] + (1 - b2) * grad[i] * grad[i];
      const double mhat = m_[p][i] / bc1, vhat = v_[p][i] / bc2;
      data[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps) +
                        weight_decay_ * data[i]);
      // keep F32 parameters float-representable so checkpoints round-trip
      if (t.dtype() == DType::F32) data[i] = static_cast<float>(data[i]);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& t : params_) t.zero_grad();
}

TrainResult train(model::ModelParams& m, const Config& cfg, std::uint64_t seed,
                  std::ostream* log) {
  cfg.validate();
  Rng rng(seed);
  Rng world_rng = rng.fork(1);
  Adam opt(m.tensors(), cfg.lr, cfg.weight_decay);
  const std::int64_t steps_per_epoch =
      (cfg.train_sequences + cfg.batch - 1) / cfg.batch;
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;
  heads::LossWeights lw;
  lw.l1 = cfg.lambda_l1;
  lw.giou = cfg.lambda_giou;
  lw.tgt = cfg.lambda_tgt;
  lw.cls = cfg.lambda_cls;
  lw.cw = cfg.lambda_cw;
  lw.co = cfg.lambda_co;
  lw.tau_c = cfg.tau_c;

  TrainResult result;
  temf::TemfConfig tc = m.fusion.config;

  for (std::int64_t step = 0; step < total_steps; ++step) {
    const double cos_lr =
        cfg.lr * 0.5 * (1.0 + std::cos(kPi * step / std::max<std::int64_t>(
                                                       1, total_steps)));
    opt.set_lr(cos_lr);
    opt.zero_grad();

    Tape tape;
    std::vector<FrameLosses> all_frames;
    Tensor acc;  // sum of per-frame weighted losses except the co term
    std::int64_t frame_count = 0;
    auto accumulate = [&](const Tensor& t) {
      acc = acc.impl() == nullptr ? t : add(acc, t);
    };

    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      const std::int64_t seq_idx =
          (step * cfg.batch + b) % std::max<std::int64_t>(1, cfg.train_sequences);
      const std::uint64_t seq_seed = seed * 1000003u + seq_idx;
      synth::SeqSpec spec = synth::make_sequence_spec(seq_seed, cfg);
      const auto mode = static_cast<model::Mode>(b % 3);
      const bool grounding = mode == model::Mode::Nl && (step + b) % 2 == 0;
      // a third of the non-grounding elements exercise the reference-free
      // path: later frames keep only search tokens plus the frozen pooled
      // reference, exactly like SRF inference
      const bool srf_elem = !grounding && (step + b) % 3 == 2;

      temf::StateSpaceMemory mem = temf::make_memory(tc, DType::F32);
      Tensor f_l;
      if (mode != model::Mode::Bbox)
        f_l = encoder::encode_language(synth::language_ids(spec), m.enc);

      // template from the frame-0 ground truth
      synth::Frame frame0 = synth::render_frame(spec, 0);
      Tensor tmpl;
      if (!grounding) {
        synth::Image tc_img = encoder::crop_resize(
            frame0.image, frame0.gt, cfg.template_scale, cfg.template_size,
            nullptr);
        tmpl = encoder::encode_image(tc_img, m.enc);
      }

      const std::int64_t max_t0 =
          std::max<std::int64_t>(1, spec.length - cfg.unroll);
      const std::int64_t t0 = grounding ? 0 : world_rng.uniform_int(1, max_t0);
      heads::Box anchor = grounding
                              ? heads::Box{}
                              : jitter_box(synth::render_frame(spec, t0 - 1).gt,
                                           world_rng);
      Tensor frozen_t;
      for (std::int64_t u = 0; u < cfg.unroll; ++u) {
        const std::int64_t t = std::min<std::int64_t>(t0 + u, spec.length - 1);
        synth::Frame fr = synth::render_frame(spec, t);
        encoder::AffineMap map;
        synth::Image search_img;
        if (grounding && u == 0) {
          const double s = fr.image.w;
          const heads::Box whole{s / 2, s / 2, s / cfg.search_scale,
                                 s / cfg.search_scale};
          search_img = encoder::crop_resize(fr.image, whole, cfg.search_scale,
                                            cfg.search_size, &map);
        } else {
          search_img = encoder::crop_resize(fr.image, anchor, cfg.search_scale,
                                            cfg.search_size, &map);
        }
        Tensor f_x = encoder::encode_image(search_img, m.enc);
        const bool drop_refs = srf_elem && u > 0;
        std::vector<Tensor> templates;
        if (!drop_refs && tmpl.impl() != nullptr) templates.push_back(tmpl);
        TokenSequence g = encoder::assemble(drop_refs ? Tensor() : f_l,
                                            templates, f_x, m.enc);
        model::ForwardOut out = model::model_forward(
            m, g, mode, mem, drop_refs ? &frozen_t : nullptr);
        if (srf_elem && u == 0)
          frozen_t = Tensor::from_data(out.t_uni.shape(), out.t_uni.data(),
                                       out.t_uni.dtype());
        heads::Box gt_crop = map.to_crop(fr.gt);
        FrameLosses fl = frame_losses(out, gt_crop, cfg);
        fl.elem = b;
        accumulate(mul_scalar(fl.l1, lw.l1));
        accumulate(mul_scalar(fl.giou, lw.giou));
        accumulate(mul_scalar(fl.cls, lw.cls));
        accumulate(mul_scalar(fl.tgt, lw.tgt));
        if (fl.cw.impl() != nullptr) accumulate(mul_scalar(fl.cw, lw.cw));
        all_frames.push_back(fl);
        ++frame_count;

        if (grounding && u == 0) {
          // teacher-forced template after the grounding frame
          synth::Image tz = encoder::crop_resize(frame0.image, frame0.gt,
                                                 cfg.template_scale,
                                                 cfg.template_size, nullptr);
          tmpl = encoder::encode_image(tz, m.enc);
          anchor = jitter_box(fr.gt, world_rng);
        } else {
          anchor = jitter_box(fr.gt, world_rng);
        }
      }
    }

    // cross-video contrast: each element's reference against the target
    // center tokens of the other elements
    StepStats stats;
    if (lw.co > 0 && all_frames.size() > 1) {
      Tensor co_acc;
      std::int64_t co_count = 0;
      for (std::size_t i = 0; i < all_frames.size(); ++i) {
        Tensor s_pos =
            heads::cosine_sim(all_frames[i].t_uni, all_frames[i].center_feat);
        std::vector<Tensor> s_neg;
        for (std::size_t j = 0; j < all_frames.size(); ++j)
          if (all_frames[j].elem != all_frames[i].elem)
            s_neg.push_back(heads::cosine_sim(all_frames[i].t_uni,
                                              all_frames[j].center_feat));
        Tensor li = heads::contrastive_loss(s_pos, s_neg, cfg.tau_c);
        co_acc = co_acc.impl() == nullptr ? li : add(co_acc, li);
        ++co_count;
      }
      Tensor co = mul_scalar(co_acc, 1.0 / co_count);
      stats.co = co.item();
      accumulate(mul_scalar(co, lw.co * frame_count));  // same normalization
    }

    Tensor loss = mul_scalar(acc, 1.0 / frame_count);
    stats.total = loss.item();
    if (!std::isfinite(stats.total)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << step << " (total "
          << stats.total << ", co " << stats.co << ")";
      throw NumericError(msg.str());
    }
    tape.backward(loss);
    opt.step();

    result.loss_history.push_back(stats.total);
    result.last = stats;
    ++result.steps;
    if (log != nullptr && (step % 10 == 0 || step + 1 == total_steps)) {
      double l1 = 0, gi = 0, cl = 0, tg = 0, cw = 0;
      for (const auto& f : all_frames) {
        l1 += f.l1.item();
        gi += f.giou.item();
        cl += f.cls.item();
        tg += f.tgt.item();
        if (f.cw.impl() != nullptr) cw += f.cw.item();
      }
      const double n = static_cast<double>(all_frames.size());
      (*log) << "step " << step << "/" << total_steps << " lr " << cos_lr
             << " loss " << stats.total << " l1 " << l1 / n << " giou "
             << gi / n << " cls " << cl / n << " tgt " << tg / n << " cw "
             << cw / n << " co " << stats.co << "\n";
      result.last.l1 = l1 / n;
      result.last.giou = gi / n;
      result.last.cls = cl / n;
      result.last.tgt = tg / n;
      result.last.cw = cw / n;
    }
  }
  return result;
}

EvalMetrics evaluate(const model::ModelParams& m, const Config& cfg,
                     std::uint64_t seed_base, model::Mode mode, bool srf,
                     bool srf_reset_memory) {
  if (cfg.eval_sequences < 1)
    throw ConfigError("evaluate: empty split");
  EvalMetrics metrics;
  std::vector<double> ious;
  std::int64_t hits = 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t s = 0; s < cfg.eval_sequences; ++s) {
    synth::SeqSpec spec = synth::make_sequence_spec(seed_base + s, cfg);
    tracker::Tracker trk(m, {mode, srf, srf_reset_memory});
    trk.init(synth::render_frame(spec, 0), mode == model::Mode::Bbox
                                               ? std::vector<std::int64_t>{}
                                               : synth::language_ids(spec));
    for (std::int64_t t = 1; t < spec.length; ++t) {
      synth::Frame fr = synth::render_frame(spec, t);
      tracker::TrackRecord rec = trk.step(fr);
      ious.push_back(rec.iou);
      const double dx = rec.box.cx - fr.gt.cx, dy = rec.box.cy - fr.gt.cy;
      if (std::sqrt(dx * dx + dy * dy) <= 0.1 * cfg.image_size) ++hits;
    }
  }
  const auto end = std::chrono::steady_clock::now();
  metrics.frames = static_cast<std::int64_t>(ious.size());
  if (metrics.frames == 0) throw ConfigError("evaluate: no frames");
  double sum = 0;
  for (double v : ious) sum += v;
  metrics.mean_iou = sum / metrics.frames;
  double auc = 0;
  for (int k = 0; k <= 20; ++k) {
    const double thr = 0.05 * k;
    std::int64_t ok = 0;
    for (double v : ious)
      if (v > thr) ++ok;
    auc += static_cast<double>(ok) / metrics.frames;
  }
  metrics.auc = auc / 21.0;
  metrics.precision = static_cast<double>(hits) / metrics.frames;
  metrics.ms_per_frame =
      std::chrono::duration<double, std::milli>(end - start).count() /
      metrics.frames;
  return metrics;
}

}  // namespace vlt::train
