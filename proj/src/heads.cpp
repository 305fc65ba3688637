#include "vlt/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlt/ssm.hpp"

namespace vlt::heads {

namespace {

constexpr double kNormEps = 1e-8;

Tensor linear_init(Rng& rng, std::int64_t fan_in, std::int64_t fan_out,
                   DType dtype) {
  return Tensor::randn(rng, {fan_in, fan_out}, 1.0 / std::sqrt(fan_in), dtype,
                       true);
}

Tensor norm_floored(const Tensor& v) {
  Tensor n = sqrt(sum_all(mul(v, v)));
  return maximum(n, Tensor::scalar(kNormEps, v.dtype()));
}

double cos_plain(const std::vector<double>& a, std::int64_t ao,
                 const std::vector<double>& b, std::int64_t bo,
                 std::int64_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::int64_t i = 0; i < d; ++i) {
    dot += a[ao + i] * b[bo + i];
    na += a[ao + i] * a[ao + i];
    nb += b[bo + i] * b[bo + i];
  }
  return dot / (std::max(std::sqrt(na), kNormEps) *
                std::max(std::sqrt(nb), kNormEps));
}

Tensor scalar_like(double v, const Tensor& ref) {
  return Tensor::scalar(v, ref.dtype());
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double iw =
      std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih =
      std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Tensor cosine_sim(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_sim: size mismatch");
  Tensor dot = sum_all(mul(reshape(a, {a.size()}), reshape(b, {b.size()})));
  return div(dot, mul(norm_floored(a), norm_floored(b)));
}

LanguageSelection select_invariant_language(const Tensor& f_l,
                                            const Tensor& f_z,
                                            std::int64_t n) {
  LanguageSelection sel;
  if (f_l.impl() == nullptr || f_l.size() == 0) return sel;
  const std::int64_t nl = f_l.dim(0), nz = f_z.dim(0), d = f_l.dim(1);
  const std::vector<double> lv = f_l.data(), zv = f_z.data();
  std::vector<double> score(nl, -2.0);
  for (std::int64_t i = 0; i < nl; ++i)
    for (std::int64_t j = 0; j < nz; ++j)
      score[i] = std::max(score[i], cos_plain(lv, i * d, zv, j * d, d));
  std::vector<std::int64_t> order(nl);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    return score[a] > score[b];
  });
  const std::int64_t k = std::min<std::int64_t>(n, nl);
  sel.indices.assign(order.begin(), order.begin() + k);
  std::sort(sel.indices.begin(), sel.indices.end());
  std::vector<Tensor> rows;
  rows.reserve(k);
  for (std::int64_t idx : sel.indices) rows.push_back(slice(f_l, 0, idx, 1));
  sel.tokens = concat(rows, 0);
  sel.present = true;
  return sel;
}

QueryDecoderParams init_query_decoder(Rng& rng, std::int64_t d_model,
                                      DType dtype) {
  QueryDecoderParams p;
  p.query = Tensor::randn(rng, {1, d_model}, 1.0 / std::sqrt(d_model), dtype,
                          true);
  p.w_k = linear_init(rng, d_model, d_model, dtype);
  p.w_v = linear_init(rng, d_model, d_model, dtype);
  return p;
}

DecodedClue absent_clue(std::int64_t d_model, DType dtype) {
  return {Tensor::zeros({1, d_model}, dtype), false};
}

DecodedClue query_decode(const Tensor& tokens,
                         const QueryDecoderParams& params) {
  if (tokens.impl() == nullptr || tokens.size() == 0)
    return absent_clue(params.query.dim(1), params.query.dtype());
  const std::int64_t d = tokens.dim(1);
  Tensor k = matmul(tokens, params.w_k);
  Tensor v = matmul(tokens, params.w_v);
  Tensor att = softmax(
      mul_scalar(matmul(params.query, permute(k, {1, 0})), 1.0 / std::sqrt(d)),
      1);
  return {matmul(att, v), true};
}

ModalitySelectParams init_modality_select(Rng& rng, std::int64_t d_model,
                                          std::int64_t d_state, DType dtype) {
  ModalitySelectParams p;
  p.w_delta = linear_init(rng, d_model, d_model, dtype);
  p.b_delta = Tensor::zeros({d_model}, dtype, true);
  p.w_b = linear_init(rng, d_model, d_state, dtype);
  p.w_c = linear_init(rng, d_model, d_state, dtype);
  std::vector<double> a(d_model * d_state, 0.0);
  p.a_log = Tensor::from_data({d_model, d_state}, std::move(a), dtype, true);
  p.w_score = linear_init(rng, d_model, 1, dtype);
  return p;
}

ModalityClues modality_select(const DecodedClue& p_l, const DecodedClue& p_z,
                              const ModalitySelectParams& params) {
  if (!p_l.present && !p_z.present)
    throw ConfigError("modality_select: both modalities absent");
  ModalityClues out;
  out.lang_present = p_l.present;
  out.vis_present = p_z.present;
  out.p_l = p_l.p;
  out.p_z = p_z.p;
  const DType dt = p_z.present ? p_z.p.dtype() : p_l.p.dtype();
  if (!p_l.present || !p_z.present) {
    out.w_l = scalar_like(p_l.present ? 1.0 : 0.0, p_l.present ? p_l.p : p_z.p);
    out.w_z = scalar_like(p_z.present ? 1.0 : 0.0, p_l.present ? p_l.p : p_z.p);
    out.p_hat = p_l.present ? p_l.p : p_z.p;
    return out;
  }
  const std::int64_t d = p_l.p.dim(1), ds = params.w_b.dim(1);
  Tensor x = concat({p_l.p, p_z.p}, 0);  // (2, d)
  ssm::SsmInputs inp;
  inp.x = x;
  inp.delta = maximum(
      softplus(add(matmul(x, params.w_delta),
                   broadcast_to(params.b_delta, {2, d}))),
      Tensor::full({2, d}, 1e-8, dt));
  inp.B = matmul(x, params.w_b);
  inp.C = matmul(x, params.w_c);
  inp.A = neg(exp(params.a_log));
  inp.D = Tensor::zeros({d}, dt);
  inp.h0 = Tensor::zeros({d, ds}, dt);
  ssm::ScanResult scan = ssm::scan_sequential(inp);
  Tensor scores = reshape(matmul(scan.y, params.w_score), {1, 2});
  Tensor wts = softmax(scores, 1);
  out.w_l = reshape(slice(wts, 1, 0, 1), {});
  out.w_z = reshape(slice(wts, 1, 1, 1), {});
  out.p_hat = add(mul(broadcast_to(out.w_l, {1, d}), p_l.p),
                  mul(broadcast_to(out.w_z, {1, d}), p_z.p));
  return out;
}

Tensor refine_search(const Tensor& f_x, const ModalityClues& clues,
                     const Tensor& w_r) {
  if (!clues.lang_present && !clues.vis_present) return layer_norm(f_x);
  const std::int64_t n = f_x.dim(0), d = f_x.dim(1);
  Tensor r = matmul(clues.p_hat, w_r);  // (1, d)
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor fi = slice(f_x, 0, i, 1);
    Tensor g = broadcast_to(cosine_sim(clues.p_hat, fi), {1, d});
    rows.push_back(add(fi, mul(g, r)));
  }
  return layer_norm(concat(rows, 0));
}

Discrimination target_discrimination(const Tensor& f_x, const Tensor& t_uni,
                                     const Tensor& w_tgt, const Tensor& w_bgd,
                                     double tau) {
  Discrimination out;
  out.t_tgt = matmul(t_uni, w_tgt);
  out.t_bgd = matmul(t_uni, w_bgd);
  const std::int64_t n = f_x.dim(0);
  std::vector<Tensor> probs;
  probs.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    Tensor fi = slice(f_x, 0, i, 1);
    Tensor margin = mul_scalar(
        sub(cosine_sim(fi, out.t_tgt), cosine_sim(fi, out.t_bgd)), 1.0 / tau);
    probs.push_back(reshape(sigmoid(margin), {1, 1}));
  }
  out.target_prob = concat(probs, 0);
  return out;
}

BoxHeadParams init_box_head(Rng& rng, std::int64_t d_model,
                            std::int64_t hidden, DType dtype) {
  BoxHeadParams p;
  p.w1 = linear_init(rng, d_model, hidden, dtype);
  p.b1 = Tensor::zeros({hidden}, dtype, true);
  p.w2 = linear_init(rng, hidden, 5, dtype);
  p.b2 = Tensor::zeros({5}, dtype, true);
  return p;
}

HeadMaps box_head(const Tensor& f_x, const BoxHeadParams& params) {
  const std::int64_t n = f_x.dim(0);
  const auto side = static_cast<std::int64_t>(std::llround(std::sqrt(n)));
  if (side * side != n) throw ShapeError("box_head: non-square token grid");
  const std::int64_t hidden = params.w1.dim(1);
  Tensor h = tanh(add(matmul(f_x, params.w1),
                      broadcast_to(params.b1, {n, hidden})));
  Tensor o = add(matmul(h, params.w2), broadcast_to(params.b2, {n, 5}));
  HeadMaps maps;
  maps.center_logit = slice(o, 1, 0, 1);
  // offsets are centered within-cell deltas in (-0.5, 0.5)
  maps.offset = add_scalar(sigmoid(slice(o, 1, 1, 2)), -0.5);
  maps.size = sigmoid(slice(o, 1, 3, 2));
  maps.side = side;
  return maps;
}

DecodedBox decode_box(const HeadMaps& maps, const Tensor& target_prob) {
  const std::int64_t n = maps.side * maps.side;
  std::int64_t best = 0;
  double best_score = -1.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double s =
        1.0 / (1.0 + std::exp(-maps.center_logit.at(i))) * target_prob.at(i);
    if (s > best_score) {  // strict: ties keep the lowest row-major index
      best_score = s;
      best = i;
    }
  }
  const std::int64_t row = best / maps.side, col = best % maps.side;
  DecodedBox out;
  out.cell = best;
  out.box.cx = (col + 0.5 + maps.offset.at(best * 2 + 0)) / maps.side;
  out.box.cy = (row + 0.5 + maps.offset.at(best * 2 + 1)) / maps.side;
  out.box.w = maps.size.at(best * 2 + 0);
  out.box.h = maps.size.at(best * 2 + 1);
  out.confidence = target_prob.at(best);
  return out;
}

Tensor box_at_cell(const HeadMaps& maps, std::int64_t cell) {
  const std::int64_t row = cell / maps.side, col = cell % maps.side;
  Tensor base = Tensor::from_data(
      {1, 2}, {(col + 0.5) / maps.side, (row + 0.5) / maps.side},
      maps.offset.dtype());
  Tensor pos = add(base, mul_scalar(slice(maps.offset, 0, cell, 1),
                                    1.0 / maps.side));
  return concat({pos, slice(maps.size, 0, cell, 1)}, 1);  // (1, 4) cxcywh
}

Tensor l1_loss(const Tensor& pred_box, const Box& gt) {
  Tensor g = Tensor::from_data({1, 4}, {gt.cx, gt.cy, gt.w, gt.h},
                               pred_box.dtype());
  return mean_all(abs(sub(reshape(pred_box, {1, 4}), g)));
}

Tensor giou_loss(const Tensor& pred_box, const Box& gt) {
  Tensor p = reshape(pred_box, {1, 4});
  auto comp = [&](std::int64_t i) { return slice(p, 1, i, 1); };
  Tensor half_w = mul_scalar(comp(2), 0.5), half_h = mul_scalar(comp(3), 0.5);
  Tensor px0 = sub(comp(0), half_w), px1 = add(comp(0), half_w);
  Tensor py0 = sub(comp(1), half_h), py1 = add(comp(1), half_h);
  auto c = [&](double v) {
    return Tensor::full({1, 1}, v, pred_box.dtype());
  };
  Tensor zero = c(0.0);
  Tensor iw = maximum(sub(minimum(px1, c(gt.x1())), maximum(px0, c(gt.x0()))),
                      zero);
  Tensor ih = maximum(sub(minimum(py1, c(gt.y1())), maximum(py0, c(gt.y0()))),
                      zero);
  Tensor inter = mul(iw, ih);
  Tensor area_p = mul(comp(2), comp(3));
  Tensor uni = sub(add(area_p, c(gt.area())), inter);
  Tensor iou_t = div(inter, uni);
  Tensor ew = sub(maximum(px1, c(gt.x1())), minimum(px0, c(gt.x0())));
  Tensor eh = sub(maximum(py1, c(gt.y1())), minimum(py0, c(gt.y0())));
  Tensor enclose = mul(ew, eh);
  Tensor giou = sub(iou_t, div(sub(enclose, uni), enclose));
  return reshape(add_scalar(neg(giou), 1.0), {});
}

Tensor bce_loss(const Tensor& probs, const std::vector<double>& targets) {
  const auto n = static_cast<std::int64_t>(targets.size());
  if (probs.size() != n) throw ShapeError("bce_loss: size mismatch");
  Tensor p = reshape(probs, {n});
  Tensor t = Tensor::from_data({n}, targets, probs.dtype());
  Tensor one_minus_t = Tensor::from_data({n},
                                         [&] {
                                           std::vector<double> v(targets);
                                           for (auto& x : v) x = 1.0 - x;
                                           return v;
                                         }(),
                                         probs.dtype());
  Tensor term = add(mul(t, log(p)), mul(one_minus_t, log(add_scalar(neg(p), 1.0))));
  return neg(mean_all(term));
}

Tensor focal_center_loss(const Tensor& center_logit,
                         const std::vector<double>& gaussian) {
  const auto n = static_cast<std::int64_t>(gaussian.size());
  if (center_logit.size() != n)
    throw ShapeError("focal_center_loss: size mismatch");
  std::vector<double> pos(n, 0.0), negw(n, 0.0);
  double n_pos = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (gaussian[i] >= 1.0) {
      pos[i] = 1.0;
      n_pos += 1.0;
    } else {
      negw[i] = std::pow(1.0 - gaussian[i], 4.0);
    }
  }
  Tensor p = reshape(sigmoid(center_logit), {n});
  Tensor one_minus_p = add_scalar(neg(p), 1.0);
  Tensor pos_m = Tensor::from_data({n}, std::move(pos), center_logit.dtype());
  Tensor neg_m = Tensor::from_data({n}, std::move(negw), center_logit.dtype());
  Tensor pos_term = mul(pos_m, mul(mul(one_minus_p, one_minus_p), log(p)));
  Tensor neg_term = mul(neg_m, mul(mul(p, p), log(one_minus_p)));
  Tensor total = sum_all(add(pos_term, neg_term));
  return neg(mul_scalar(total, 1.0 / std::max(1.0, n_pos)));
}

Tensor contrastive_loss(const Tensor& s_pos, const std::vector<Tensor>& s_neg,
                        double tau_c) {
  std::vector<Tensor> logits;
  logits.reserve(s_neg.size() + 1);
  logits.push_back(reshape(s_pos, {1, 1}));
  for (const Tensor& s : s_neg) logits.push_back(reshape(s, {1, 1}));
  Tensor z = mul_scalar(concat(logits, 1), 1.0 / tau_c);
  Tensor sm = softmax(z, 1);
  return reshape(neg(log(slice(sm, 1, 0, 1))), {});
}

Tensor LossComponents::total(const LossWeights& w) const {
  Tensor acc;
  auto accumulate = [&](const Tensor& t, double weight) {
    if (t.impl() == nullptr) return;
    Tensor term = mul_scalar(t, weight);
    acc = acc.impl() == nullptr ? term : add(acc, term);
  };
  accumulate(l1, w.l1);
  accumulate(giou, w.giou);
  accumulate(tgt, w.tgt);
  accumulate(cls, w.cls);
  accumulate(cw, w.cw);
  accumulate(co, w.co);
  if (acc.impl() == nullptr) throw ConfigError("loss: no components set");
  return acc;
}

}  // namespace vlt::heads
