#pragma once

#include <cstdint>
#include <vector>

#include "vlt/hmss.hpp"
#include "vlt/sle.hpp"

namespace vlt::temf {

struct TemfConfig {
  std::int64_t n_modules = 4;
  std::int64_t d_model = 64;
  std::int64_t d_state = 8;
  std::int64_t d_inner_ratio = 2;
  std::int64_t window = 8;
  std::int64_t conv_width = 3;

  std::int64_t d_inner() const { return d_model * d_inner_ratio; }
  void validate() const;
};

// One fusion module: bidirectional state-space block followed by the
// locality-enhancement block, plus the per-level memory blend parameters.
struct TemfLevelParams {
  hmss::HmssParams mix;
  sle::SleParams enhance;
  Tensor h_learn;  // (d_inner, d_state), shared by both scan directions
  Tensor a_logit;  // scalar; blend weight a = sigmoid(a_logit)

  std::vector<Tensor> tensors() const;
};

struct TemfParams {
  TemfConfig config;
  std::vector<TemfLevelParams> levels;

  std::vector<Tensor> tensors() const;
};

TemfParams init_temf(Rng& rng, const TemfConfig& config,
                     DType dtype = DType::F32);

// Cross-frame memory: terminal scan states of every level and direction
// from the previous frame, plus the frame counter.
struct StateSpaceMemory {
  std::vector<hmss::DirectionalStates> levels;  // stored finals per level
  std::int64_t t = 0;
};

StateSpaceMemory make_memory(const TemfConfig& config,
                             DType dtype = DType::F32);

enum class Direction { Alpha, Beta };

// Blend of the learnable level state with last frame's stored final:
// sigmoid(a)*H_learn + (1-sigmoid(a))*H_fin. The first frame has no
// history and returns H_learn directly.
Tensor init_state(const StateSpaceMemory& memory, const TemfParams& params,
                  std::int64_t level, Direction dir);

// Runs all levels in order, overwriting each level's stored finals and
// advancing the frame counter once.
TokenSequence temf_forward(const TokenSequence& g, const TemfParams& params,
                           StateSpaceMemory& memory);

// Cuts stored states out of the autodiff graph (per-frame inference mode).
void detach_memory(StateSpaceMemory& memory);

// Versioned little-endian blob: magic "TEMF", u32 version, level count,
// state shape, frame counter, f32 payload. restore validates the whole
// blob before mutating the target.
std::vector<std::uint8_t> snapshot(const StateSpaceMemory& memory);
void restore(StateSpaceMemory& memory, const std::vector<std::uint8_t>& blob);

}  // namespace vlt::temf
