#pragma once

#include <optional>
#include <vector>

#include "vlt/sequence.hpp"

namespace vlt::heads {

// Axis-aligned box, normalized [0,1] coordinates of the search region.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x0() const { return cx - w / 2; }
  double y0() const { return cy - h / 2; }
  double x1() const { return cx + w / 2; }
  double y1() const { return cy + h / 2; }
  double area() const { return w * h; }
};

double iou(const Box& a, const Box& b);

struct LossWeights {
  double l1 = 5.0;
  double giou = 2.0;
  double tgt = 1.0;
  double cls = 1.0;
  double cw = 0.5;   // intra-video contrastive
  double co = 0.5;   // inter-video contrastive
  double tau_c = 0.1;  // contrastive temperature
};

// s = a.b / (max(|a|,eps) * max(|b|,eps)); eps floors keep zero vectors finite.
Tensor cosine_sim(const Tensor& a, const Tensor& b);

// Language tokens ranked by their best cosine match against any template
// token; ties prefer the lower index. Selected indices keep original order.
struct LanguageSelection {
  std::vector<std::int64_t> indices;
  Tensor tokens;  // (k, d), empty-flagged when no language present
  bool present = false;
};
LanguageSelection select_invariant_language(const Tensor& f_l,
                                            const Tensor& f_z,
                                            std::int64_t n);

struct QueryDecoderParams {
  Tensor query;  // (1, d)
  Tensor w_k, w_v;  // (d, d)
  std::vector<Tensor> tensors() const { return {query, w_k, w_v}; }
};
QueryDecoderParams init_query_decoder(Rng& rng, std::int64_t d_model,
                                      DType dtype = DType::F32);

struct DecodedClue {
  Tensor p;  // (1, d); zeros when absent
  bool present = false;
};
// Single-head softmax cross-attention of one learnable query over tokens.
DecodedClue query_decode(const Tensor& tokens, const QueryDecoderParams& params);
DecodedClue absent_clue(std::int64_t d_model, DType dtype = DType::F32);

struct ModalitySelectParams {
  Tensor w_delta, b_delta;  // (d,d), (d)
  Tensor w_b, w_c;          // (d, d_state)
  Tensor a_log;             // (d, d_state)
  Tensor w_score;           // (d, 1)
  std::vector<Tensor> tensors() const {
    return {w_delta, b_delta, w_b, w_c, a_log, w_score};
  }
};
ModalitySelectParams init_modality_select(Rng& rng, std::int64_t d_model,
                                          std::int64_t d_state,
                                          DType dtype = DType::F32);

struct ModalityClues {
  Tensor p_l, p_z;    // (1, d)
  Tensor w_l, w_z;    // scalars, sum to 1
  Tensor p_hat;       // (1, d) convex blend
  bool lang_present = false, vis_present = false;
};
// Two-token selective scan over [P_l, P_z]; per-token scalar scores are
// softmaxed into the modality weights. An absent modality gets weight 0.
ModalityClues modality_select(const DecodedClue& p_l, const DecodedClue& p_z,
                              const ModalitySelectParams& params);

// F'_i = LayerNorm(F_i + cos(P̂, F_i) * (W_r P̂)); identity gate when the
// fused clue is absent.
Tensor refine_search(const Tensor& f_x, const ModalityClues& clues,
                     const Tensor& w_r);

struct Discrimination {
  Tensor target_prob;  // (n, 1) in (0,1)
  Tensor t_tgt, t_bgd;  // (1, d)
};
// Two-way softmax over temperature-scaled cosine scores against the
// target / background embeddings derived from the unified reference token.
Discrimination target_discrimination(const Tensor& f_x, const Tensor& t_uni,
                                     const Tensor& w_tgt, const Tensor& w_bgd,
                                     double tau = 0.1);

struct BoxHeadParams {
  Tensor w1, b1;  // (d, hidden), (hidden)
  Tensor w2, b2;  // (hidden, 5), (5)
  std::vector<Tensor> tensors() const { return {w1, b1, w2, b2}; }
};
BoxHeadParams init_box_head(Rng& rng, std::int64_t d_model,
                            std::int64_t hidden, DType dtype = DType::F32);

struct HeadMaps {
  Tensor center_logit;  // (n, 1)
  Tensor offset;        // (n, 2), sigmoid, cell-relative in [0,1]
  Tensor size;          // (n, 2), sigmoid, normalized region fraction
  std::int64_t side = 0;  // token grid is side x side
};
// Pointwise two-layer MLP over search tokens emitting 5 channels.
HeadMaps box_head(const Tensor& f_x, const BoxHeadParams& params);

struct DecodedBox {
  Box box;
  double confidence = 0;  // target probability at the selected cell
  std::int64_t cell = 0;  // row-major argmax of center*target_prob
};
DecodedBox decode_box(const HeadMaps& maps, const Tensor& target_prob);

// Differentiable box at a fixed cell (training-time regression target path).
Tensor box_at_cell(const HeadMaps& maps, std::int64_t cell);

// ---- losses ----

Tensor l1_loss(const Tensor& pred_box, const Box& gt);        // mean |.|
Tensor giou_loss(const Tensor& pred_box, const Box& gt);      // 1 - GIoU
Tensor bce_loss(const Tensor& probs, const std::vector<double>& targets);
// Gaussian-weighted focal loss on the center logits.
Tensor focal_center_loss(const Tensor& center_logit,
                         const std::vector<double>& gaussian);
// -log(e^{s_p/tau} / (e^{s_p/tau} + sum_k e^{s_nk/tau}))
Tensor contrastive_loss(const Tensor& s_pos, const std::vector<Tensor>& s_neg,
                        double tau_c);

struct LossComponents {
  Tensor l1, giou, tgt, cls, cw, co;
  Tensor total(const LossWeights& w) const;
};

}  // namespace vlt::heads
