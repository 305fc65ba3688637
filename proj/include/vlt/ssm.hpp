#pragma once

#include <utility>

#include "vlt/tensor.hpp"

namespace vlt::ssm {

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inputs to one selective scan.
//   x, delta : (N, d_inner), delta > 0 elementwise
//   A        : (d_inner, d_state), negative reals
//   B, C     : (N, d_state)
//   D        : (d_inner) skip gains
//   h0       : (d_inner, d_state) initial state
struct SsmInputs {
  Tensor x, delta, A, B, C, D, h0;
};

struct ScanResult {
  Tensor y;        // (N, d_inner)
  Tensor h_final;  // (d_inner, d_state)
};

// Abar = exp(delta ⊙ A); Bbar = delta ⊙ B, or the exact zero-order-hold
// form A^{-1}(exp(delta A) - 1) B when zoh_exact is set. Both outputs are
// (N, d_inner, d_state) and differentiable through the tape.
std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B,
                                     const Tensor& delta,
                                     bool zoh_exact = false);

// Exact left-to-right recurrence h_i = Abar_i h_{i-1} + Bbar_i x_i,
// y_i = C_i h_i + D x_i, recorded as one tape node with a hand-written
// reverse rule.
ScanResult scan_sequential(const SsmInputs& inp);

// Same contract via per-chunk local scans composed with cumulative
// Abar-products carrying the inter-chunk state.
ScanResult scan_chunked(const SsmInputs& inp, std::int64_t chunk);

}  // namespace vlt::ssm
