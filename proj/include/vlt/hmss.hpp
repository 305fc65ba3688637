#pragma once

#include <utility>
#include <vector>

#include "vlt/sequence.hpp"
#include "vlt/ssm.hpp"

namespace vlt::hmss {

enum class ScanOrder { Alpha, Beta };  // text-first / template-first

// Parameters of one hybrid multimodal state-space block. The delta/B/C
// generators, D and the projections are shared by both scan orders; only
// the state matrices (as a_log, A = -exp(a_log)) differ per direction.
struct HmssParams {
  Tensor w_in;         // (d_model, d_inner)
  Tensor w_gate;       // (d_model, d_inner)
  Tensor w_delta;      // (d_inner, d_inner)
  Tensor b_delta;      // (d_inner)
  Tensor w_b;          // (d_inner, d_state)
  Tensor w_c;          // (d_inner, d_state)
  Tensor a_log_alpha;  // (d_inner, d_state)
  Tensor a_log_beta;   // (d_inner, d_state)
  Tensor d_skip;       // (d_inner)
  Tensor w_out;        // (d_inner, d_model)

  std::int64_t d_model() const { return w_in.dim(0); }
  std::int64_t d_inner() const { return w_in.dim(1); }
  std::int64_t d_state() const { return w_b.dim(1); }

  std::vector<Tensor> tensors() const {
    return {w_in, w_gate, w_delta, b_delta, w_b,
            w_c,  a_log_alpha, a_log_beta, d_skip, w_out};
  }
};

HmssParams init_hmss(Rng& rng, std::int64_t d_model, std::int64_t d_inner,
                     std::int64_t d_state, DType dtype = DType::F32);

struct DirectionalStates {
  Tensor h_alpha;  // (d_inner, d_state)
  Tensor h_beta;
};

struct HmssResult {
  TokenSequence out;              // canonical order, same shape as input
  DirectionalStates states_out;   // raw scan terminal states
};

// Permutation (new position -> source index) for the given scan order and
// its inverse. Alpha keeps canonical order; beta swaps language and
// template segments. Search tokens stay last in both.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> reorder(
    const ModalityLayout& layout, ScanOrder order);

HmssResult hmss_forward(const TokenSequence& g, const HmssParams& params,
                        const DirectionalStates& states_in);

}  // namespace vlt::hmss
