#include "vlt/ssm.hpp"

#include <cmath>
#include <string>

namespace vlt::ssm {

namespace {

void validate(const SsmInputs& inp) {
  if (inp.x.rank() != 2 || inp.delta.rank() != 2 || inp.A.rank() != 2 ||
      inp.B.rank() != 2 || inp.C.rank() != 2 || inp.D.rank() != 1 ||
      inp.h0.rank() != 2) {
    throw ShapeError("ssm: malformed input ranks");
  }
  const auto n = inp.x.dim(0), di = inp.x.dim(1), ds = inp.A.dim(1);
  if (n < 1) throw ShapeError("ssm: N must be >= 1");
  if (inp.delta.dim(0) != n || inp.delta.dim(1) != di ||
      inp.A.dim(0) != di || inp.B.dim(0) != n || inp.B.dim(1) != ds ||
      inp.C.dim(0) != n || inp.C.dim(1) != ds || inp.D.dim(0) != di ||
      inp.h0.dim(0) != di || inp.h0.dim(1) != ds) {
    throw ShapeError("ssm: inconsistent input shapes");
  }
  for (auto v : inp.delta.data()) {
    if (!(v > 0.0)) throw DomainError("ssm: delta must be positive");
  }
}

// Shared reverse rule for both scan strategies: exact reverse-mode of the
// recurrence, given the saved per-token hidden states.
struct ScanBackward {
  SsmInputs inp;
  std::vector<double> h_all;  // (N, d_inner, d_state), post-update states
  std::int64_t n, di, ds;

  void operator()(TensorImpl& self) const {
    const auto& g = self.grad;  // packed [y | h_final]
    std::vector<double> gx(n * di, 0.0), gdelta(n * di, 0.0),
        gA(di * ds, 0.0), gB(n * ds, 0.0), gC(n * ds, 0.0), gD(di, 0.0),
        gh(di * ds);
    for (std::int64_t c = 0; c < di; ++c)
      for (std::int64_t s = 0; s < ds; ++s)
        gh[c * ds + s] = g[n * di + c * ds + s];

    const auto& x = inp.x.data();
    const auto& delta = inp.delta.data();
    const auto& A = inp.A.data();
    const auto& B = inp.B.data();
    const auto& C = inp.C.data();
    const auto& D = inp.D.data();
    const auto& h0 = inp.h0.data();

    for (std::int64_t i = n - 1; i >= 0; --i) {
      for (std::int64_t c = 0; c < di; ++c) {
        const double gy = g[i * di + c];
        gD[c] += gy * x[i * di + c];
        gx[i * di + c] += gy * D[c];
        const double dt = delta[i * di + c];
        for (std::int64_t s = 0; s < ds; ++s) {
          const double hi = h_all[(i * di + c) * ds + s];
          const double hprev = i == 0 ? h0[c * ds + s]
                                      : h_all[((i - 1) * di + c) * ds + s];
          double ghc = gh[c * ds + s] + gy * C[i * ds + s];
          gC[i * ds + s] += gy * hi;
          const double abar = std::exp(dt * A[c * ds + s]);
          const double g_abar = ghc * hprev;
          const double g_bbar = ghc * x[i * di + c];
          gx[i * di + c] += ghc * dt * B[i * ds + s];
          gdelta[i * di + c] +=
              g_abar * A[c * ds + s] * abar + g_bbar * B[i * ds + s];
          gA[c * ds + s] += g_abar * dt * abar;
          gB[i * ds + s] += g_bbar * dt;
          gh[c * ds + s] = ghc * abar;
        }
      }
    }
    inp.x.impl()->accum_grad(gx);
    inp.delta.impl()->accum_grad(gdelta);
    inp.A.impl()->accum_grad(gA);
    inp.B.impl()->accum_grad(gB);
    inp.C.impl()->accum_grad(gC);
    inp.D.impl()->accum_grad(gD);
    inp.h0.impl()->accum_grad(gh);
  }
};

ScanResult pack_result(const SsmInputs& inp, std::vector<double> y,
                       std::vector<double> h_all) {
  const auto n = inp.x.dim(0), di = inp.x.dim(1), ds = inp.A.dim(1);
  std::vector<double> packed(n * di + di * ds);
  std::copy(y.begin(), y.end(), packed.begin());
  std::copy(h_all.end() - di * ds, h_all.end(), packed.begin() + n * di);
  ScanBackward bw{inp, std::move(h_all), n, di, ds};
  Tensor flat = make_op({inp.x, inp.delta, inp.A, inp.B, inp.C, inp.D, inp.h0},
                        {n * di + di * ds}, std::move(packed), std::move(bw));
  ScanResult res;
  res.y = reshape(slice(flat, 0, 0, n * di), {n, di});
  res.h_final = reshape(slice(flat, 0, n * di, di * ds), {di, ds});
  return res;
}

}  // namespace

std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B,
                                     const Tensor& delta, bool zoh_exact) {
  for (auto v : delta.data()) {
    if (!(v > 0.0)) throw DomainError("discretize: delta must be positive");
  }
  const auto n = delta.dim(0), di = delta.dim(1), ds = A.dim(1);
  Tensor delta3 = broadcast_to(reshape(delta, {n, di, 1}), {n, di, ds});
  Tensor a3 = broadcast_to(reshape(A, {1, di, ds}), {n, di, ds});
  Tensor b3 = broadcast_to(reshape(B, {n, 1, ds}), {n, di, ds});
  Tensor abar = exp(mul(delta3, a3));
  Tensor bbar;
  if (zoh_exact) {
    // A^{-1}(exp(delta A) - 1) B
    bbar = mul(div(add_scalar(abar, -1.0), a3), b3);
  } else {
    bbar = mul(delta3, b3);
  }
  return {abar, bbar};
}

ScanResult scan_sequential(const SsmInputs& inp) {
  validate(inp);
  const auto n = inp.x.dim(0), di = inp.x.dim(1), ds = inp.A.dim(1);
  const auto& x = inp.x.data();
  const auto& delta = inp.delta.data();
  const auto& A = inp.A.data();
  const auto& B = inp.B.data();
  const auto& C = inp.C.data();
  const auto& D = inp.D.data();
  std::vector<double> h = inp.h0.data();
  std::vector<double> h_all(n * di * ds);
  std::vector<double> y(n * di, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t c = 0; c < di; ++c) {
      const double dt = delta[i * di + c];
      const double xv = x[i * di + c];
      double acc = D[c] * xv;
      for (std::int64_t s = 0; s < ds; ++s) {
        const double abar = std::exp(dt * A[c * ds + s]);
        const double hv = abar * h[c * ds + s] + dt * B[i * ds + s] * xv;
        h[c * ds + s] = hv;
        h_all[(i * di + c) * ds + s] = hv;
        acc += C[i * ds + s] * hv;
      }
      if (!std::isfinite(acc)) {
        throw NumericError("scan_sequential: non-finite output at token " +
                           std::to_string(i));
      }
      y[i * di + c] = acc;
    }
  }
  return pack_result(inp, std::move(y), std::move(h_all));
}

ScanResult scan_chunked(const SsmInputs& inp, std::int64_t chunk) {
  validate(inp);
  if (chunk < 1) throw ShapeError("scan_chunked: chunk must be >= 1");
  const auto n = inp.x.dim(0), di = inp.x.dim(1), ds = inp.A.dim(1);
  const auto& x = inp.x.data();
  const auto& delta = inp.delta.data();
  const auto& A = inp.A.data();
  const auto& B = inp.B.data();
  const auto& C = inp.C.data();
  const auto& D = inp.D.data();
  std::vector<double> carry = inp.h0.data();  // state entering the chunk
  std::vector<double> h_all(n * di * ds);
  std::vector<double> y(n * di, 0.0);
  std::vector<double> local(di * ds), cum(di * ds);
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t stop = std::min(n, start + chunk);
    // Local pass with zero initial state, tracking the cumulative
    // Abar-product so the carried state can be folded in afterwards.
    std::fill(local.begin(), local.end(), 0.0);
    std::fill(cum.begin(), cum.end(), 1.0);
    for (std::int64_t i = start; i < stop; ++i) {
      for (std::int64_t c = 0; c < di; ++c) {
        const double dt = delta[i * di + c];
        const double xv = x[i * di + c];
        double acc = D[c] * xv;
        for (std::int64_t s = 0; s < ds; ++s) {
          const std::int64_t cs = c * ds + s;
          const double abar = std::exp(dt * A[cs]);
          local[cs] = abar * local[cs] + dt * B[i * ds + s] * xv;
          cum[cs] *= abar;
          const double hv = local[cs] + cum[cs] * carry[cs];
          h_all[(i * di + c) * ds + s] = hv;
          acc += C[i * ds + s] * hv;
        }
        if (!std::isfinite(acc)) {
          throw NumericError("scan_chunked: non-finite output at token " +
                             std::to_string(i));
        }
        y[i * di + c] = acc;
      }
    }
    for (std::int64_t cs = 0; cs < di * ds; ++cs)
      carry[cs] = local[cs] + cum[cs] * carry[cs];
  }
  return pack_result(inp, std::move(y), std::move(h_all));
}

}  // namespace vlt::ssm
