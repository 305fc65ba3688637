#pragma once

#include "vlt/sequence.hpp"

namespace vlt::sle {

// Selective locality enhancement parameters: depthwise convolution for the
// global selective map, linear input/residual gates, and q/k/v projections
// for the windowed linear attention.
struct SleParams {
  Tensor conv_w;      // (d_model, k), k odd
  Tensor conv_b;      // (d_model)
  Tensor w_in_gate;   // (d_model, d_model)
  Tensor b_in_gate;   // (d_model)
  Tensor w_res_gate;  // (d_model, d_model)
  Tensor b_res_gate;  // (d_model)
  Tensor w_q, w_k, w_v;  // (d_model, d_model)
  std::int64_t window = 8;
  // Stricter reading of intra-modal enhancement: windows clipped at
  // segment boundaries.
  bool segment_masked_window = false;

  std::int64_t d_model() const { return conv_w.dim(0); }

  std::vector<Tensor> tensors() const {
    return {conv_w, conv_b, w_in_gate, b_in_gate,
            w_res_gate, b_res_gate, w_q, w_k, w_v};
  }
};

SleParams init_sle(Rng& rng, std::int64_t d_model, std::int64_t window,
                   std::int64_t conv_width, DType dtype = DType::F32);

// Width-k same-padded depthwise convolution over the token axis.
Tensor global_selective_map(const Tensor& g_hmss, const SleParams& params);

// Causal sliding-window linear attention with phi = elu+1. Token i attends
// over [max(0, i-w+1) .. i]; the normalizer is floored at eps so the w=1
// window reduces to the value projection exactly.
Tensor window_linear_attention(const Tensor& h, const SleParams& params,
                               const ModalityLayout* layout = nullptr);

TokenSequence sle_forward(const TokenSequence& g, const SleParams& params);

}  // namespace vlt::sle
