#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vlt/sle.hpp"

using namespace vlt;
using namespace vlt::sle;

namespace {

constexpr double kEps = 1e-6;

double phi_scalar(double x) {
  return x > 0 ? x + 1.0 : std::exp(x);
}

// Straight-line causal windowed linear attention, dense loops only.
std::vector<double> brute_force_gamma(const std::vector<double>& h,
                                      const SleParams& p, std::int64_t n,
                                      std::int64_t d, std::int64_t w) {
  auto project = [&](const Tensor& wmat) {
    std::vector<double> out(n * d, 0.0);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j)
          out[r * d + j] += h[r * d + i] * wmat.at(i * d + j);
    return out;
  };
  auto q = project(p.w_q), k = project(p.w_k), v = project(p.w_v);
  for (auto& x : q) x = phi_scalar(x);
  for (auto& x : k) x = phi_scalar(x);
  std::vector<double> out(n * d, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t j0 = std::max<std::int64_t>(0, i - w + 1);
    double den = 0.0;
    for (std::int64_t j = j0; j <= i; ++j) {
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
      den += s;
      for (std::int64_t c = 0; c < d; ++c) out[i * d + c] += s * v[j * d + c];
    }
    den = std::max(den, kEps);
    for (std::int64_t c = 0; c < d; ++c) out[i * d + c] /= den;
  }
  return out;
}

std::vector<double> brute_force_sle(const TokenSequence& g,
                                    const SleParams& p) {
  const std::int64_t n = g.tokens.dim(0), d = g.tokens.dim(1),
                     k = p.conv_w.dim(1), half = k / 2;
  std::vector<double> gt(g.tokens.data());
  std::vector<double> a(n * d, 0.0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = p.conv_b.at(c);
      for (std::int64_t t = 0; t < k; ++t) {
        const std::int64_t j = i + t - half;
        if (j >= 0 && j < n) acc += p.conv_w.at(c * k + t) * gt[j * d + c];
      }
      a[i * d + c] = acc;
    }
  auto gate = [&](const Tensor& wmat, const Tensor& b) {
    std::vector<double> out(n * d);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t j = 0; j < d; ++j) {
        double acc = b.at(j);
        for (std::int64_t i = 0; i < d; ++i)
          acc += gt[r * d + i] * wmat.at(i * d + j);
        out[r * d + j] = acc;
      }
    return out;
  };
  auto bg = gate(p.w_in_gate, p.b_in_gate);
  auto dg = gate(p.w_res_gate, p.b_res_gate);
  std::vector<double> h(n * d);
  for (std::int64_t i = 0; i < n * d; ++i) h[i] = a[i] + bg[i] * gt[i];
  auto gamma = brute_force_gamma(h, p, n, d, p.window);
  std::vector<double> out(n * d);
  for (std::int64_t i = 0; i < n * d; ++i) out[i] = gamma[i] + dg[i] * gt[i];
  return out;
}

}  // namespace

TEST_CASE("global selective map: convolution basics") {
  Rng rng(10);
  SUBCASE("constant input, kernel summing to s") {
    SleParams p = init_sle(rng, 2, 4, 3, DType::F64);
    p.conv_w = Tensor::from_data({2, 3}, {1, 2, 1, 0.5, 0.5, 0.5}, DType::F64);
    p.conv_b = Tensor::zeros({2}, DType::F64);
    Tensor g = Tensor::full({5, 2}, 3.0, DType::F64);
    Tensor a = global_selective_map(g, p);
    // interior rows 1..3: c*s = 3*4 and 3*1.5
    for (std::int64_t i = 1; i <= 3; ++i) {
      CHECK(a.at(i * 2 + 0) == doctest::Approx(12.0).epsilon(1e-14));
      CHECK(a.at(i * 2 + 1) == doctest::Approx(4.5).epsilon(1e-14));
    }
  }
  SUBCASE("single token, k=3: center tap only") {
    SleParams p = init_sle(rng, 2, 4, 3, DType::F64);
    p.conv_w = Tensor::from_data({2, 3}, {9, 2, 9, 9, -1, 9}, DType::F64);
    p.conv_b = Tensor::from_data({2}, {0.25, -0.5}, DType::F64);
    Tensor g = Tensor::from_data({1, 2}, {3.0, 4.0}, DType::F64);
    Tensor a = global_selective_map(g, p);
    CHECK(a.at(0) == doctest::Approx(2.0 * 3.0 + 0.25).epsilon(1e-14));
    CHECK(a.at(1) == doctest::Approx(-1.0 * 4.0 - 0.5).epsilon(1e-14));
  }
  SUBCASE("random 12-token input vs hand-unrolled convolution") {
    SleParams p = init_sle(rng, 4, 4, 5, DType::F64);
    Tensor g = Tensor::randn(rng, {12, 4}, 1.0, DType::F64);
    Tensor a = global_selective_map(g, p);
    const std::int64_t k = 5, half = 2;
    for (std::int64_t i = 0; i < 12; ++i)
      for (std::int64_t c = 0; c < 4; ++c) {
        double acc = p.conv_b.at(c);
        for (std::int64_t t = 0; t < k; ++t) {
          const std::int64_t j = i + t - half;
          if (j >= 0 && j < 12) acc += p.conv_w.at(c * k + t) * g.at(j * 4 + c);
        }
        CHECK(std::abs(a.at(i * 4 + c) - acc) < 1e-12);
      }
  }
  SUBCASE("even conv width rejected") {
    CHECK_THROWS_AS(init_sle(rng, 2, 4, 4, DType::F64), ConfigError);
  }
}

TEST_CASE("window linear attention: w=1 is identity on values") {
  Rng rng(11);
  SleParams p = init_sle(rng, 6, 1, 3, DType::F64);
  Tensor h = Tensor::randn(rng, {10, 6}, 1.0, DType::F64);
  Tensor out = window_linear_attention(h, p);
  Tensor v = matmul(h, p.w_v);
  for (std::int64_t i = 0; i < out.size(); ++i)
    CHECK(std::abs(out.at(i) - v.at(i)) < 1e-12);
}

TEST_CASE("window linear attention: equal keys average the window values") {
  Rng rng(12);
  SleParams p = init_sle(rng, 4, 3, 3, DType::F64);
  p.w_k = Tensor::zeros({4, 4}, DType::F64, true);  // phi(0)=1 for every key
  Tensor h = Tensor::randn(rng, {8, 4}, 1.0, DType::F64);
  Tensor out = window_linear_attention(h, p);
  Tensor v = matmul(h, p.w_v);
  for (std::int64_t i = 0; i < 8; ++i) {
    const std::int64_t j0 = std::max<std::int64_t>(0, i - 2);
    for (std::int64_t c = 0; c < 4; ++c) {
      double avg = 0.0;
      for (std::int64_t j = j0; j <= i; ++j) avg += v.at(j * 4 + c);
      avg /= static_cast<double>(i - j0 + 1);
      CHECK(std::abs(out.at(i * 4 + c) - avg) < 1e-12);
    }
  }
}

TEST_CASE("window >= N equals global causal linear attention oracle") {
  Rng rng(13);
  SleParams p = init_sle(rng, 5, 16, 3, DType::F64);  // w=16 > N=12
  Tensor h = Tensor::randn(rng, {12, 5}, 1.0, DType::F64);
  Tensor out = window_linear_attention(h, p);
  auto oracle = brute_force_gamma(h.data(), p, 12, 5, 12);
  for (std::int64_t i = 0; i < out.size(); ++i)
    CHECK(std::abs(out.at(i) - oracle[i]) < 1e-10);
}

TEST_CASE("gamma causality: future perturbations never leak backward") {
  Rng rng(14);
  SleParams p = init_sle(rng, 4, 3, 3, DType::F64);
  Tensor h = Tensor::randn(rng, {9, 4}, 1.0, DType::F64);
  Tensor base = window_linear_attention(h, p);
  for (int probe = 0; probe < 50; ++probe) {
    const std::int64_t j = rng.uniform_int(1, 8);
    const std::int64_t c = rng.uniform_int(0, 3);
    std::vector<double> d2 = h.data();
    d2[j * 4 + c] += rng.uniform(-1.0, 1.0);
    Tensor h2 = Tensor::from_data({9, 4}, std::move(d2), DType::F64);
    Tensor out = window_linear_attention(h2, p);
    for (std::int64_t i = 0; i < j; ++i)
      for (std::int64_t cc = 0; cc < 4; ++cc)
        CHECK(out.at(i * 4 + cc) == base.at(i * 4 + cc));
  }
}

TEST_CASE("sle_forward degenerate cases") {
  Rng rng(15);
  ModalityLayout layout{2, 2, 4};
  TokenSequence g;
  g.layout = layout;
  g.tokens = Tensor::randn(rng, {8, 5}, 1.0, DType::F64);

  SUBCASE("A=0, input gate 1, residual gate 0, w=1 -> gamma passes G through") {
    SleParams p = init_sle(rng, 5, 1, 3, DType::F64);
    p.conv_w = Tensor::zeros({5, 3}, DType::F64, true);
    p.conv_b = Tensor::zeros({5}, DType::F64, true);
    p.w_in_gate = Tensor::zeros({5, 5}, DType::F64, true);
    p.b_in_gate = Tensor::full({5}, 1.0, DType::F64, true);
    p.w_res_gate = Tensor::zeros({5, 5}, DType::F64, true);
    p.b_res_gate = Tensor::zeros({5}, DType::F64, true);
    p.w_v = Tensor::from_data({5, 5},
                              [] {
                                std::vector<double> id(25, 0.0);
                                for (int i = 0; i < 5; ++i) id[i * 5 + i] = 1;
                                return id;
                              }(),
                              DType::F64, true);
    auto out = sle_forward(g, p);
    for (std::int64_t i = 0; i < g.tokens.size(); ++i)
      CHECK(std::abs(out.tokens.at(i) - g.tokens.at(i)) < 1e-12);
  }
  SUBCASE("residual gate 1 and zero value projection -> pure residual") {
    SleParams p = init_sle(rng, 5, 4, 3, DType::F64);
    p.w_res_gate = Tensor::zeros({5, 5}, DType::F64, true);
    p.b_res_gate = Tensor::full({5}, 1.0, DType::F64, true);
    p.w_v = Tensor::zeros({5, 5}, DType::F64, true);
    auto out = sle_forward(g, p);
    for (std::int64_t i = 0; i < g.tokens.size(); ++i)
      CHECK(std::abs(out.tokens.at(i) - g.tokens.at(i)) < 1e-12);
  }
  SUBCASE("feature width mismatch raises") {
    SleParams p = init_sle(rng, 6, 4, 3, DType::F64);
    CHECK_THROWS_AS(sle_forward(g, p), LayoutError);
  }
}

TEST_CASE("sle_forward vs compositional oracle") {
  Rng rng(16);
  for (int rep = 0; rep < 6; ++rep) {
    SleParams p = init_sle(rng, 6, 4, 3, DType::F64);
    ModalityLayout layout{3, 2, 5};
    TokenSequence g;
    g.layout = layout;
    g.tokens = Tensor::randn(rng, {10, 6}, 1.0, DType::F64);
    auto out = sle_forward(g, p);
    auto oracle = brute_force_sle(g, p);
    for (std::int64_t i = 0; i < out.tokens.size(); ++i)
      CHECK(std::abs(out.tokens.at(i) - oracle[i]) < 1e-10);
  }
}

TEST_CASE("segment-masked windows stop at modality boundaries") {
  Rng rng(17);
  SleParams p = init_sle(rng, 4, 6, 3, DType::F64);
  p.segment_masked_window = true;
  ModalityLayout layout{2, 3, 3};
  Tensor h = Tensor::randn(rng, {8, 4}, 1.0, DType::F64);
  Tensor masked = window_linear_attention(h, p, &layout);
  // first token of each segment sees only itself -> equals its value row
  Tensor v = matmul(h, p.w_v);
  for (std::int64_t i : {0, 2, 5})
    for (std::int64_t c = 0; c < 4; ++c)
      CHECK(std::abs(masked.at(i * 4 + c) - v.at(i * 4 + c)) < 1e-12);
}

TEST_CASE("sle block gradient vs finite differences") {
  Rng rng(18);
  SleParams p = init_sle(rng, 4, 3, 3, DType::F64);
  ModalityLayout layout{1, 2, 3};
  TokenSequence g;
  g.layout = layout;
  g.tokens = Tensor::randn(rng, {6, 4}, 1.0, DType::F64, true);
  std::vector<Tensor> leaves = p.tensors();
  leaves.push_back(g.tokens);
  auto loss = [&] {
    auto out = sle_forward(g, p);
    return sum_all(mul(out.tokens, out.tokens));
  };
  CHECK(finite_diff_check(loss, leaves, 1e-5, 1e-4) < 1e-5);
}
