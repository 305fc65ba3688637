#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vlt/temf.hpp"

using namespace vlt;
using namespace vlt::temf;

namespace {

TemfConfig small_config(std::int64_t m) {
  TemfConfig c;
  c.n_modules = m;
  c.d_model = 6;
  c.d_state = 3;
  c.d_inner_ratio = 2;
  c.window = 4;
  c.conv_width = 3;
  return c;
}

TokenSequence random_frame(Rng& rng, std::int64_t d_model) {
  TokenSequence g;
  g.layout = ModalityLayout{2, 2, 4};
  g.tokens = Tensor::randn(rng, {8, d_model}, 1.0, DType::F64);
  return g;
}

void force_a(TemfParams& p, double logit) {
  for (auto& level : p.levels)
    level.a_logit = Tensor::from_data({}, {logit}, level.a_logit.dtype(), true);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    d = std::max(d, std::abs(a.at(i) - b.at(i)));
  return d;
}

}  // namespace

TEST_CASE("init_state endpoints and blend") {
  Rng rng(20);
  TemfConfig cfg = small_config(2);
  TemfParams p = init_temf(rng, cfg, DType::F64);
  StateSpaceMemory m = make_memory(cfg, DType::F64);
  p.levels[0].h_learn = Tensor::randn(rng, {12, 3}, 1.0, DType::F64, true);
  m.levels[0].h_alpha = Tensor::randn(rng, {12, 3}, 1.0, DType::F64);

  SUBCASE("first frame ignores stored history") {
    CHECK(max_abs_diff(init_state(m, p, 0, Direction::Alpha),
                       p.levels[0].h_learn) == 0.0);
  }
  SUBCASE("a=1 returns the learnable state regardless of history") {
    m.t = 3;
    force_a(p, 500.0);  // sigmoid saturates to exactly 1.0 in f64
    CHECK(max_abs_diff(init_state(m, p, 0, Direction::Alpha),
                       p.levels[0].h_learn) < 1e-14);
  }
  SUBCASE("a=0 with history returns the stored final") {
    m.t = 1;
    force_a(p, -500.0);
    CHECK(max_abs_diff(init_state(m, p, 0, Direction::Alpha),
                       m.levels[0].h_alpha) < 1e-14);
  }
  SUBCASE("a=0.5 convex blend") {
    TemfConfig tiny = small_config(1);
    tiny.d_model = 1;
    tiny.d_inner_ratio = 1;
    tiny.d_state = 2;
    TemfParams tp = init_temf(rng, tiny, DType::F64);
    force_a(tp, 0.0);  // a = 0.5
    StateSpaceMemory tm = make_memory(tiny, DType::F64);
    tm.t = 1;
    tp.levels[0].h_learn = Tensor::from_data({1, 2}, {1.0, 0.0}, DType::F64);
    tm.levels[0].h_beta = Tensor::from_data({1, 2}, {0.0, 2.0}, DType::F64);
    Tensor h = init_state(tm, tp, 0, Direction::Beta);
    CHECK(h.at(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(h.at(1) == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("level out of range") {
    CHECK_THROWS_AS(init_state(m, p, 2, Direction::Alpha), std::out_of_range);
  }
}

TEST_CASE("a=1 makes every frame stateless") {
  Rng rng(21);
  TemfConfig cfg = small_config(1);
  TemfParams p = init_temf(rng, cfg, DType::F64);
  force_a(p, 500.0);
  TokenSequence frame = random_frame(rng, cfg.d_model);

  StateSpaceMemory fresh = make_memory(cfg, DType::F64);
  TokenSequence ref = temf_forward(frame, p, fresh);

  StateSpaceMemory warm = make_memory(cfg, DType::F64);
  for (int i = 0; i < 3; ++i)
    temf_forward(random_frame(rng, cfg.d_model), p, warm);
  TokenSequence out = temf_forward(frame, p, warm);
  CHECK(max_abs_diff(out.tokens, ref.tokens) < 1e-12);
  CHECK(warm.t == 4);
}

TEST_CASE("a=0: same frame twice, second pass sees evolved memory") {
  Rng rng(22);
  TemfConfig cfg = small_config(2);
  TemfParams p = init_temf(rng, cfg, DType::F64);
  force_a(p, -500.0);
  TokenSequence frame = random_frame(rng, cfg.d_model);
  StateSpaceMemory m = make_memory(cfg, DType::F64);
  TokenSequence first = temf_forward(frame, p, m);
  std::vector<Tensor> stored_after_first;
  for (auto& l : m.levels) {
    stored_after_first.push_back(l.h_alpha);
    stored_after_first.push_back(l.h_beta);
  }
  TokenSequence second = temf_forward(frame, p, m);
  CHECK(max_abs_diff(first.tokens, second.tokens) > 1e-8);
  // every level's stored final was rewritten
  CHECK(m.t == 2);
  std::size_t idx = 0;
  for (auto& l : m.levels) {
    CHECK(max_abs_diff(l.h_alpha, stored_after_first[idx++]) > 1e-10);
    CHECK(max_abs_diff(l.h_beta, stored_after_first[idx++]) > 1e-10);
  }
}

TEST_CASE("M=2 forward vs hand-composed pipeline with manual bookkeeping") {
  Rng rng(23);
  TemfConfig cfg = small_config(2);
  TemfParams p = init_temf(rng, cfg, DType::F64);
  StateSpaceMemory m = make_memory(cfg, DType::F64);

  // manual mirror of the per-level recurrence
  std::vector<hmss::DirectionalStates> mem(2);
  std::int64_t t = 0;
  auto manual_step = [&](const TokenSequence& g) {
    TokenSequence cur = g;
    for (int i = 0; i < 2; ++i) {
      Tensor a = broadcast_to(sigmoid(p.levels[i].a_logit),
                              p.levels[i].h_learn.shape());
      Tensor om = broadcast_to(
          sub(Tensor::scalar(1.0, DType::F64), sigmoid(p.levels[i].a_logit)),
          p.levels[i].h_learn.shape());
      hmss::DirectionalStates ini;
      if (t == 0) {
        ini = {p.levels[i].h_learn, p.levels[i].h_learn};
      } else {
        ini = {add(mul(a, p.levels[i].h_learn), mul(om, mem[i].h_alpha)),
               add(mul(a, p.levels[i].h_learn), mul(om, mem[i].h_beta))};
      }
      TokenSequence normed{layer_norm(cur.tokens), cur.layout};
      auto mixed = hmss::hmss_forward(normed, p.levels[i].mix, ini);
      cur = sle::sle_forward(mixed.out, p.levels[i].enhance);
      mem[i] = mixed.states_out;
    }
    ++t;
    return cur;
  };

  for (int frame = 0; frame < 3; ++frame) {
    TokenSequence g = random_frame(rng, cfg.d_model);
    TokenSequence got = temf_forward(g, p, m);
    TokenSequence want = manual_step(g);
    CHECK(max_abs_diff(got.tokens, want.tokens) < 1e-12);
    for (int i = 0; i < 2; ++i) {
      CHECK(max_abs_diff(m.levels[i].h_alpha, mem[i].h_alpha) < 1e-12);
      CHECK(max_abs_diff(m.levels[i].h_beta, mem[i].h_beta) < 1e-12);
    }
  }
}

TEST_CASE("snapshot round-trip reproduces subsequent outputs bitwise") {
  Rng rng(24);
  TemfConfig cfg = small_config(2);
  TemfParams p = init_temf(rng, cfg);  // default f32 pipeline
  StateSpaceMemory m = make_memory(cfg);
  auto f32_frame = [&](Rng& r) {
    TokenSequence g;
    g.layout = ModalityLayout{2, 2, 4};
    g.tokens = Tensor::randn(r, {8, cfg.d_model}, 1.0, DType::F32);
    return g;
  };
  temf_forward(f32_frame(rng), p, m);
  auto blob = snapshot(m);

  Rng rng_a(99), rng_b(99);
  TokenSequence next_a = f32_frame(rng_a);
  TokenSequence out_a = temf_forward(next_a, p, m);

  StateSpaceMemory m2 = make_memory(cfg);
  restore(m2, blob);
  CHECK(m2.t == m.t - 1);
  TokenSequence out_b = temf_forward(f32_frame(rng_b), p, m2);
  for (std::int64_t i = 0; i < out_a.tokens.size(); ++i)
    CHECK(out_a.tokens.at(i) == out_b.tokens.at(i));

  SUBCASE("t=0 snapshot restores first-frame behavior") {
    StateSpaceMemory virgin = make_memory(cfg);
    auto blob0 = snapshot(virgin);
    restore(m2, blob0);
    CHECK(m2.t == 0);
  }
  SUBCASE("corrupted blob leaves memory untouched") {
    auto bad = blob;
    bad[0] = 'X';
    const std::int64_t t_before = m2.t;
    CHECK_THROWS_AS(restore(m2, bad), FormatError);
    auto truncated = blob;
    truncated.pop_back();
    CHECK_THROWS_AS(restore(m2, truncated), FormatError);
    auto versioned = blob;
    versioned[4] = 0x7f;
    CHECK_THROWS_AS(restore(m2, versioned), FormatError);
    CHECK(m2.t == t_before);
  }
}

TEST_CASE("two-frame unrolled gradient incl. learnable state and blend") {
  Rng rng(25);
  TemfConfig cfg = small_config(1);
  cfg.d_model = 4;
  cfg.d_state = 2;
  cfg.window = 3;
  TemfParams p = init_temf(rng, cfg, DType::F64);
  // nonzero learnable state so its gradient path is exercised
  p.levels[0].h_learn = Tensor::randn(rng, {8, 2}, 0.5, DType::F64, true);
  TokenSequence f1 = random_frame(rng, 4), f2 = random_frame(rng, 4);
  f1.tokens.set_requires_grad(true);
  f2.tokens.set_requires_grad(true);
  std::vector<Tensor> leaves = p.tensors();
  leaves.push_back(f1.tokens);
  leaves.push_back(f2.tokens);
  auto loss = [&] {
    StateSpaceMemory m = make_memory(cfg, DType::F64);
    TokenSequence o1 = temf_forward(f1, p, m);
    TokenSequence o2 = temf_forward(f2, p, m);
    return add(sum_all(mul(o1.tokens, o1.tokens)),
               sum_all(mul(o2.tokens, o2.tokens)));
  };
  CHECK(finite_diff_check(loss, leaves, 1e-5, 1e-4) < 1e-5);
}

TEST_CASE("detach_memory keeps values but cuts gradient flow") {
  Rng rng(26);
  TemfConfig cfg = small_config(1);
  TemfParams p = init_temf(rng, cfg, DType::F64);
  StateSpaceMemory m = make_memory(cfg, DType::F64);
  temf_forward(random_frame(rng, cfg.d_model), p, m);
  Tensor before = m.levels[0].h_alpha;
  detach_memory(m);
  CHECK(max_abs_diff(before, m.levels[0].h_alpha) == 0.0);
  CHECK_FALSE(m.levels[0].h_alpha.requires_grad());
}
