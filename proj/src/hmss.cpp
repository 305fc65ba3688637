#include "vlt/hmss.hpp"

#include <cmath>
#include <numeric>

namespace vlt::hmss {

namespace {

// -A spans [1, d_state] geometrically per state index; delta bias puts the
// initial softplus output in [1e-3, 0.1].
Tensor init_a_log(std::int64_t d_inner, std::int64_t d_state, DType dtype) {
  std::vector<double> v(d_inner * d_state);
  for (std::int64_t c = 0; c < d_inner; ++c) {
    for (std::int64_t s = 0; s < d_state; ++s) {
      const double frac =
          d_state == 1 ? 0.0 : static_cast<double>(s) / (d_state - 1);
      const double neg_a = std::pow(static_cast<double>(d_state), frac);
      v[c * d_state + s] = std::log(neg_a);
    }
  }
  return Tensor::from_data({d_inner, d_state}, std::move(v), dtype, true);
}

Tensor init_b_delta(Rng& rng, std::int64_t d_inner, DType dtype) {
  std::vector<double> v(d_inner);
  for (auto& b : v) {
    const double dt =
        std::exp(rng.uniform(std::log(1e-3), std::log(0.1)));
    b = std::log(std::expm1(dt));  // inverse softplus
  }
  return Tensor::from_data({d_inner}, std::move(v), dtype, true);
}

Tensor linear_init(Rng& rng, std::int64_t fan_in, std::int64_t fan_out,
                   DType dtype) {
  return Tensor::randn(rng, {fan_in, fan_out}, 1.0 / std::sqrt(fan_in), dtype,
                       true);
}

// Segment-contiguous permute: [lang|template|search] -> beta order.
Tensor to_beta(const Tensor& tokens, const ModalityLayout& l) {
  if (l.n_lang == 0 || l.n_template == 0) return tokens;
  Tensor lang = slice(tokens, 0, 0, l.n_lang);
  Tensor tmpl = slice(tokens, 0, l.n_lang, l.n_template);
  Tensor search = slice(tokens, 0, l.n_lang + l.n_template, l.n_search);
  return concat({tmpl, lang, search}, 0);
}

Tensor from_beta(const Tensor& tokens, const ModalityLayout& l) {
  if (l.n_lang == 0 || l.n_template == 0) return tokens;
  Tensor tmpl = slice(tokens, 0, 0, l.n_template);
  Tensor lang = slice(tokens, 0, l.n_template, l.n_lang);
  Tensor search = slice(tokens, 0, l.n_lang + l.n_template, l.n_search);
  return concat({lang, tmpl, search}, 0);
}

}  // namespace

HmssParams init_hmss(Rng& rng, std::int64_t d_model, std::int64_t d_inner,
                     std::int64_t d_state, DType dtype) {
  HmssParams p;
  p.w_in = linear_init(rng, d_model, d_inner, dtype);
  p.w_gate = linear_init(rng, d_model, d_inner, dtype);
  p.w_delta = linear_init(rng, d_inner, d_inner, dtype);
  p.b_delta = init_b_delta(rng, d_inner, dtype);
  p.w_b = linear_init(rng, d_inner, d_state, dtype);
  p.w_c = linear_init(rng, d_inner, d_state, dtype);
  p.a_log_alpha = init_a_log(d_inner, d_state, dtype);
  p.a_log_beta = init_a_log(d_inner, d_state, dtype);
  p.d_skip = Tensor::full({d_inner}, 1.0, dtype, true);
  p.w_out = linear_init(rng, d_inner, d_model, dtype);
  return p;
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> reorder(
    const ModalityLayout& layout, ScanOrder order) {
  const std::int64_t n = layout.total();
  std::vector<std::int64_t> perm;
  perm.reserve(n);
  auto push_range = [&](std::int64_t start, std::int64_t len) {
    for (std::int64_t i = 0; i < len; ++i) perm.push_back(start + i);
  };
  if (order == ScanOrder::Alpha) {
    push_range(0, n);
  } else {
    push_range(layout.n_lang, layout.n_template);
    push_range(0, layout.n_lang);
    push_range(layout.n_lang + layout.n_template, layout.n_search);
  }
  std::vector<std::int64_t> inverse(n);
  for (std::int64_t i = 0; i < n; ++i) inverse[perm[i]] = i;
  return {std::move(perm), std::move(inverse)};
}

HmssResult hmss_forward(const TokenSequence& g, const HmssParams& params,
                        const DirectionalStates& states_in) {
  g.validate();
  const auto n = g.tokens.dim(0);
  const auto di = params.d_inner();
  const auto ds = params.d_state();
  if (states_in.h_alpha.dim(0) != di || states_in.h_alpha.dim(1) != ds ||
      states_in.h_beta.dim(0) != di || states_in.h_beta.dim(1) != ds)
    throw ShapeError("hmss_forward: state shape mismatch");

  Tensor x = matmul(g.tokens, params.w_in);                       // (N, di)
  Tensor gate = silu(matmul(g.tokens, params.w_gate));            // (N, di)
  // softplus underflows to exactly 0 in f32 for large negative inputs;
  // the scan requires strictly positive step sizes
  Tensor delta = maximum(
      softplus(add(matmul(x, params.w_delta),
                   broadcast_to(params.b_delta, {n, di}))),
      Tensor::full({n, di}, 1e-8, g.tokens.dtype()));             // (N, di)
  Tensor b_gen = matmul(x, params.w_b);                           // (N, ds)
  Tensor c_gen = matmul(x, params.w_c);                           // (N, ds)
  Tensor d_zero = Tensor::zeros({di}, g.tokens.dtype());

  auto run_direction = [&](ScanOrder order, const Tensor& a_log,
                           const Tensor& h_init) {
    ssm::SsmInputs inp;
    const bool beta = order == ScanOrder::Beta;
    inp.x = beta ? to_beta(x, g.layout) : x;
    inp.delta = beta ? to_beta(delta, g.layout) : delta;
    inp.B = beta ? to_beta(b_gen, g.layout) : b_gen;
    inp.C = beta ? to_beta(c_gen, g.layout) : c_gen;
    inp.A = neg(exp(a_log));
    inp.D = d_zero;
    inp.h0 = h_init;
    ssm::ScanResult res = ssm::scan_sequential(inp);
    Tensor y = beta ? from_beta(res.y, g.layout) : res.y;
    return std::make_pair(y, res.h_final);
  };

  auto [y_alpha, h_alpha_fin] =
      run_direction(ScanOrder::Alpha, params.a_log_alpha, states_in.h_alpha);
  auto [y_beta, h_beta_fin] =
      run_direction(ScanOrder::Beta, params.a_log_beta, states_in.h_beta);

  Tensor y = mul_scalar(add(y_alpha, y_beta), 0.5);
  y = add(y, mul(x, broadcast_to(params.d_skip, {n, di})));
  Tensor out_tokens =
      add(g.tokens, matmul(mul(y, gate), params.w_out));

  HmssResult res;
  res.out.tokens = out_tokens;
  res.out.layout = g.layout;
  res.states_out.h_alpha = h_alpha_fin;
  res.states_out.h_beta = h_beta_fin;
  return res;
}

}  // namespace vlt::hmss
