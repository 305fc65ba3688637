#include "vlt/sle.hpp"

#include <cmath>

namespace vlt::sle {

namespace {

constexpr double kEps = 1e-6;

Tensor linear_init(Rng& rng, std::int64_t fan_in, std::int64_t fan_out,
                   DType dtype) {
  return Tensor::randn(rng, {fan_in, fan_out}, 1.0 / std::sqrt(fan_in), dtype,
                       true);
}

// phi(x) = elu(x) + 1 = exp(min(x,0)) + max(x,0); strictly positive.
Tensor phi(const Tensor& x) {
  Tensor zero = Tensor::zeros(x.shape(), x.dtype());
  return add(exp(minimum(x, zero)), maximum(x, zero));
}

std::int64_t segment_start(const ModalityLayout& l, std::int64_t i) {
  if (i < l.n_lang) return 0;
  if (i < l.n_lang + l.n_template) return l.n_lang;
  return l.n_lang + l.n_template;
}

}  // namespace

SleParams init_sle(Rng& rng, std::int64_t d_model, std::int64_t window,
                   std::int64_t conv_width, DType dtype) {
  if (window < 1) throw ConfigError("sle: window must be >= 1");
  if (conv_width % 2 == 0) throw ConfigError("sle: conv width must be odd");
  SleParams p;
  p.conv_w = Tensor::randn(rng, {d_model, conv_width},
                           1.0 / std::sqrt(conv_width), dtype, true);
  p.conv_b = Tensor::zeros({d_model}, dtype, true);
  p.w_in_gate = Tensor::randn(rng, {d_model, d_model},
                              0.1 / std::sqrt(d_model), dtype, true);
  p.b_in_gate = Tensor::full({d_model}, 1.0, dtype, true);
  p.w_res_gate = Tensor::randn(rng, {d_model, d_model},
                               0.1 / std::sqrt(d_model), dtype, true);
  p.b_res_gate = Tensor::full({d_model}, 1.0, dtype, true);
  p.w_q = linear_init(rng, d_model, d_model, dtype);
  p.w_k = linear_init(rng, d_model, d_model, dtype);
  p.w_v = linear_init(rng, d_model, d_model, dtype);
  p.window = window;
  return p;
}

Tensor global_selective_map(const Tensor& g_hmss, const SleParams& params) {
  if (g_hmss.dim(0) < 1) throw ShapeError("sle: empty sequence");
  return conv1d(g_hmss, params.conv_w, params.conv_b);
}

Tensor window_linear_attention(const Tensor& h, const SleParams& params,
                               const ModalityLayout* layout) {
  const std::int64_t n = h.dim(0), d = h.dim(1);
  const std::int64_t w = params.window;
  Tensor pq = phi(matmul(h, params.w_q));
  Tensor pk = phi(matmul(h, params.w_k));
  Tensor v = matmul(h, params.w_v);
  Tensor eps = Tensor::full({1, 1}, kEps, h.dtype());
  std::vector<Tensor> rows;
  rows.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t j0 = std::max<std::int64_t>(0, i - w + 1);
    if (params.segment_masked_window && layout != nullptr)
      j0 = std::max(j0, segment_start(*layout, i));
    const std::int64_t len = i - j0 + 1;
    Tensor qi = slice(pq, 0, i, 1);                          // (1, d)
    Tensor kw = slice(pk, 0, j0, len);                       // (len, d)
    Tensor vw = slice(v, 0, j0, len);                        // (len, d)
    Tensor scores = matmul(qi, permute(kw, {1, 0}));         // (1, len)
    Tensor num = matmul(scores, vw);                         // (1, d)
    Tensor den = maximum(reshape(sum(scores, 1), {1, 1}), eps);
    rows.push_back(div(num, broadcast_to(den, {1, d})));
  }
  return concat(rows, 0);
}

TokenSequence sle_forward(const TokenSequence& g, const SleParams& params) {
  g.validate();
  const std::int64_t n = g.tokens.dim(0), d = g.tokens.dim(1);
  if (d != params.d_model())
    throw LayoutError("sle_forward: feature width mismatch");
  Tensor a_l = global_selective_map(g.tokens, params);
  Tensor in_gate = add(matmul(g.tokens, params.w_in_gate),
                       broadcast_to(params.b_in_gate, {n, d}));
  Tensor res_gate = add(matmul(g.tokens, params.w_res_gate),
                        broadcast_to(params.b_res_gate, {n, d}));
  Tensor h = add(a_l, mul(in_gate, g.tokens));
  Tensor enhanced = window_linear_attention(h, params, &g.layout);
  TokenSequence out;
  out.tokens = add(enhanced, mul(res_gate, g.tokens));
  out.layout = g.layout;
  return out;
}

}  // namespace vlt::sle
