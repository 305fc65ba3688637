#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "vlt/ssm.hpp"

using namespace vlt;
using namespace vlt::ssm;

namespace {

SsmInputs random_inputs(Rng& rng, std::int64_t n, std::int64_t di,
                        std::int64_t ds, bool requires_grad = false) {
  SsmInputs inp;
  inp.x = Tensor::randn(rng, {n, di}, 1.0, DType::F64, requires_grad);
  std::vector<double> dt(n * di);
  for (auto& v : dt) v = rng.uniform(0.01, 0.5);
  inp.delta = Tensor::from_data({n, di}, std::move(dt), DType::F64,
                                requires_grad);
  std::vector<double> a(di * ds);
  for (auto& v : a) v = -rng.uniform(0.2, 2.0);
  inp.A = Tensor::from_data({di, ds}, std::move(a), DType::F64, requires_grad);
  inp.B = Tensor::randn(rng, {n, ds}, 1.0, DType::F64, requires_grad);
  inp.C = Tensor::randn(rng, {n, ds}, 1.0, DType::F64, requires_grad);
  inp.D = Tensor::randn(rng, {di}, 1.0, DType::F64, requires_grad);
  inp.h0 = Tensor::randn(rng, {di, ds}, 1.0, DType::F64, requires_grad);
  return inp;
}

// Independent closed-form unroll:
// y_i = sum_{j<=i} C_i (prod_{k=j+1..i} Abar_k) Bbar_j x_j
//       + C_i (prod_{k<=i} Abar_k) h0 + D x_i.
struct Unrolled {
  std::vector<double> y;
  std::vector<double> h_final;
};

Unrolled brute_force_unroll(const SsmInputs& inp) {
  const auto n = inp.x.dim(0), di = inp.x.dim(1), ds = inp.A.dim(1);
  Unrolled out;
  out.y.assign(n * di, 0.0);
  out.h_final.assign(di * ds, 0.0);
  auto abar = [&](std::int64_t i, std::int64_t c, std::int64_t s) {
    return std::exp(inp.delta.at(i * di + c) * inp.A.at(c * ds + s));
  };
  auto bbar = [&](std::int64_t i, std::int64_t c, std::int64_t s) {
    return inp.delta.at(i * di + c) * inp.B.at(i * ds + s);
  };
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < di; ++c) {
      double acc = inp.D.at(c) * inp.x.at(i * di + c);
      for (std::int64_t s = 0; s < ds; ++s) {
        double h = 0.0;
        for (std::int64_t j = 0; j <= i; ++j) {
          double prod = 1.0;
          for (std::int64_t k = j + 1; k <= i; ++k) prod *= abar(k, c, s);
          h += prod * bbar(j, c, s) * inp.x.at(j * di + c);
        }
        double prod0 = 1.0;
        for (std::int64_t k = 0; k <= i; ++k) prod0 *= abar(k, c, s);
        h += prod0 * inp.h0.at(c * ds + s);
        acc += inp.C.at(i * ds + s) * h;
        if (i == n - 1) out.h_final[c * ds + s] = h;
      }
      out.y[i * di + c] = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("discretize endpoints and scalar oracle") {
  Tensor A = Tensor::from_data({1, 1}, {-1.0});
  SUBCASE("delta -> 0 limit") {
    Tensor delta = Tensor::from_data({1, 1}, {1e-12});
    Tensor B = Tensor::from_data({1, 1}, {3.0});
    auto [abar, bbar] = discretize(A, B, delta);
    CHECK(abar.at(0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(bbar.at(0) == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("A=-1, delta=ln2 -> Abar=0.5") {
    Tensor delta = Tensor::from_data({1, 1}, {std::log(2.0)});
    Tensor B = Tensor::from_data({1, 1}, {1.0});
    auto [abar, bbar] = discretize(A, B, delta);
    CHECK(abar.at(0) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("A=-0.7, delta=0.3, B=2.0") {
    Tensor a = Tensor::from_data({1, 1}, {-0.7});
    Tensor delta = Tensor::from_data({1, 1}, {0.3});
    Tensor B = Tensor::from_data({1, 1}, {2.0});
    auto [abar, bbar] = discretize(a, B, delta);
    CHECK(abar.at(0) == doctest::Approx(std::exp(-0.21)).epsilon(1e-12));
    CHECK(abar.at(0) == doctest::Approx(0.810584).epsilon(1e-6));
    CHECK(bbar.at(0) == doctest::Approx(0.6).epsilon(1e-12));
  }
  SUBCASE("nonpositive delta rejected") {
    Tensor delta = Tensor::from_data({1, 1}, {0.0});
    Tensor B = Tensor::from_data({1, 1}, {1.0});
    CHECK_THROWS_AS(discretize(A, B, delta), DomainError);
  }
}

TEST_CASE("Euler-vs-ZOH second-order remainder halving") {
  // ||exp(dA) - (1 + dA)|| should shrink ~4x when d halves.
  const double a = -0.9;
  double prev = 0.0;
  for (int k = 0; k < 6; ++k) {
    const double d = 0.1 / std::pow(2.0, k);
    const double rem = std::abs(std::exp(d * a) - (1.0 + d * a));
    if (k > 0) {
      const double ratio = prev / rem;
      CHECK(ratio > 3.5);
      CHECK(ratio < 4.5);
    }
    prev = rem;
  }
}

TEST_CASE("scan one-step closed form, N=1, h0=0") {
  Rng rng(3);
  SsmInputs inp = random_inputs(rng, 1, 2, 3);
  inp.h0 = Tensor::zeros({2, 3});
  auto res = scan_sequential(inp);
  for (std::int64_t c = 0; c < 2; ++c) {
    double expect = inp.D.at(c) * inp.x.at(c);
    for (std::int64_t s = 0; s < 3; ++s) {
      expect += inp.C.at(s) * inp.delta.at(c) * inp.B.at(s) * inp.x.at(c);
    }
    CHECK(res.y.at(c) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("degenerate prefix sum: Abar=1, Bbar=1, C=1, D=0") {
  // delta=1, A=0 gives Abar=1; B=1 gives Bbar=1.
  const std::int64_t n = 6;
  SsmInputs inp;
  inp.x = Tensor::from_data({n, 1}, {1, 2, 3, 4, 5, 6});
  inp.delta = Tensor::full({n, 1}, 1.0);
  inp.A = Tensor::from_data({1, 1}, {0.0});
  inp.B = Tensor::full({n, 1}, 1.0);
  inp.C = Tensor::full({n, 1}, 1.0);
  inp.D = Tensor::zeros({1});
  inp.h0 = Tensor::zeros({1, 1});
  auto res = scan_sequential(inp);
  double run = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    run += inp.x.at(i);
    CHECK(res.y.at(i) == doctest::Approx(run).epsilon(1e-12));
  }
}

TEST_CASE("random N=16 vs brute-force unroll oracle") {
  Rng rng(42);
  for (int rep = 0; rep < 10; ++rep) {
    SsmInputs inp = random_inputs(rng, 16, 3, 4);
    auto res = scan_sequential(inp);
    auto oracle = brute_force_unroll(inp);
    for (std::int64_t i = 0; i < res.y.size(); ++i)
      CHECK(std::abs(res.y.at(i) - oracle.y[i]) < 1e-10);
    for (std::int64_t i = 0; i < res.h_final.size(); ++i)
      CHECK(std::abs(res.h_final.at(i) - oracle.h_final[i]) < 1e-10);
  }
}

TEST_CASE("scan_chunked equals scan_sequential") {
  Rng rng(99);
  double worst = 0.0;
  for (int rep = 0; rep < 40; ++rep) {
    const auto n = rng.uniform_int(1, 128);
    const auto di = rng.uniform_int(1, 4);
    const auto ds = rng.uniform_int(1, 16);
    SsmInputs inp = random_inputs(rng, n, di, ds);
    auto seq = scan_sequential(inp);
    for (std::int64_t chunk : {std::int64_t{1}, std::int64_t{2},
                               std::int64_t{3}, std::int64_t{8}, n}) {
      auto ch = scan_chunked(inp, chunk);
      for (std::int64_t i = 0; i < seq.y.size(); ++i)
        worst = std::max(worst, std::abs(seq.y.at(i) - ch.y.at(i)));
      for (std::int64_t i = 0; i < seq.h_final.size(); ++i)
        worst =
            std::max(worst, std::abs(seq.h_final.at(i) - ch.h_final.at(i)));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("bounded state on long stress run") {
  Rng rng(5);
  SsmInputs inp = random_inputs(rng, 10000, 1, 1);
  auto res = scan_sequential(inp);
  for (auto v : res.y.data()) CHECK(std::isfinite(v));
  for (auto v : res.h_final.data()) CHECK(std::isfinite(v));
}

TEST_CASE("scan backward: trivial closed forms") {
  Rng rng(17);
  SsmInputs inp = random_inputs(rng, 4, 2, 3, true);
  SUBCASE("D gradient is sum_i x_i") {
    Tape tape;
    auto res = scan_sequential(inp);
    tape.backward(sum_all(res.y));
    for (std::int64_t c = 0; c < 2; ++c) {
      double expect = 0.0;
      for (std::int64_t i = 0; i < 4; ++i) expect += inp.x.at(i * 2 + c);
      CHECK(inp.D.grad()[c] == doctest::Approx(expect).epsilon(1e-10));
    }
    for (auto t : {inp.x, inp.delta, inp.A, inp.B, inp.C, inp.D, inp.h0})
      t.zero_grad();
  }
  SUBCASE("C gradient on N=1 has Bbar*x structure") {
    SsmInputs one = random_inputs(rng, 1, 1, 2, true);
    one.h0 = Tensor::zeros({1, 2}, DType::F64, true);
    Tape tape;
    auto res = scan_sequential(one);
    tape.backward(sum_all(res.y));
    for (std::int64_t s = 0; s < 2; ++s) {
      const double expect = one.delta.at(0) * one.B.at(s) * one.x.at(0);
      CHECK(one.C.grad()[s] == doctest::Approx(expect).epsilon(1e-10));
    }
  }
}

TEST_CASE("scan backward: full finite-difference check") {
  Rng rng(23);
  SsmInputs inp = random_inputs(rng, 8, 2, 3, true);
  std::vector<Tensor> leaves = {inp.x, inp.delta, inp.A, inp.B,
                                inp.C, inp.D, inp.h0};
  auto loss = [&] {
    auto res = scan_sequential(inp);
    return add(sum_all(mul(res.y, res.y)), sum_all(res.h_final));
  };
  CHECK(finite_diff_check(loss, leaves, 1e-5, 1e-4) < 1e-5);
  // same check through the chunked path
  auto loss_ch = [&] {
    auto res = scan_chunked(inp, 3);
    return add(sum_all(mul(res.y, res.y)), sum_all(res.h_final));
  };
  CHECK(finite_diff_check(loss_ch, leaves, 1e-5, 1e-4) < 1e-5);
}

TEST_CASE("exact ZOH variant is consistent with simplified rule for small delta") {
  Rng rng(31);
  Tensor A = Tensor::from_data({2, 2}, {-0.5, -1.0, -1.5, -2.0});
  std::vector<double> dt(2 * 2);
  for (auto& v : dt) v = rng.uniform(1e-4, 1e-3);
  Tensor delta = Tensor::from_data({2, 2}, std::move(dt));
  Tensor B = Tensor::randn(rng, {2, 2}, 1.0);
  auto [a1, b1] = discretize(A, B, delta, false);
  auto [a2, b2] = discretize(A, B, delta, true);
  for (std::int64_t i = 0; i < b1.size(); ++i) {
    CHECK(a1.at(i) == doctest::Approx(a2.at(i)).epsilon(1e-12));
    CHECK(b1.at(i) == doctest::Approx(b2.at(i)).epsilon(1e-3));
  }
}
