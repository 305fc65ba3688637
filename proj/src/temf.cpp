#include "vlt/temf.hpp"

#include <cstring>
#include <stdexcept>
#include <string>

namespace vlt::temf {

namespace {

constexpr std::uint32_t kSnapshotVersion = 1;
constexpr char kMagic[4] = {'T', 'E', 'M', 'F'};

void check_level(const TemfParams& params, std::int64_t level) {
  if (level < 0 || level >= static_cast<std::int64_t>(params.levels.size()))
    throw std::out_of_range("temf: level " + std::to_string(level) +
                            " out of range");
}

Tensor detach(const Tensor& t) {
  return Tensor::from_data(t.shape(), t.data(), t.dtype());
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

struct BlobReader {
  const std::vector<std::uint8_t>& blob;
  std::size_t pos = 0;

  std::uint32_t u32() {
    if (pos + 4 > blob.size()) throw FormatError("temf snapshot: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(blob[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    if (pos + 8 > blob.size()) throw FormatError("temf snapshot: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(blob[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

void TemfConfig::validate() const {
  if (n_modules < 1 || d_model < 1 || d_state < 1 || d_inner_ratio < 1 ||
      window < 1 || conv_width < 1 || conv_width % 2 == 0)
    throw ConfigError("temf: invalid configuration");
}

std::vector<Tensor> TemfLevelParams::tensors() const {
  std::vector<Tensor> out = mix.tensors();
  for (const Tensor& t : enhance.tensors()) out.push_back(t);
  out.push_back(h_learn);
  out.push_back(a_logit);
  return out;
}

std::vector<Tensor> TemfParams::tensors() const {
  std::vector<Tensor> out;
  for (const TemfLevelParams& l : levels)
    for (const Tensor& t : l.tensors()) out.push_back(t);
  return out;
}

TemfParams init_temf(Rng& rng, const TemfConfig& config, DType dtype) {
  config.validate();
  TemfParams p;
  p.config = config;
  p.levels.reserve(config.n_modules);
  for (std::int64_t i = 0; i < config.n_modules; ++i) {
    TemfLevelParams level;
    level.mix = hmss::init_hmss(rng, config.d_model, config.d_inner(),
                                config.d_state, dtype);
    level.enhance = sle::init_sle(rng, config.d_model, config.window,
                                  config.conv_width, dtype);
    level.h_learn =
        Tensor::zeros({config.d_inner(), config.d_state}, dtype, true);
    level.a_logit = Tensor::from_data({}, {0.0}, dtype, true);  // a = 0.5: even blend at init
    p.levels.push_back(std::move(level));
  }
  return p;
}

StateSpaceMemory make_memory(const TemfConfig& config, DType dtype) {
  config.validate();
  StateSpaceMemory m;
  m.levels.reserve(config.n_modules);
  for (std::int64_t i = 0; i < config.n_modules; ++i)
    m.levels.push_back({Tensor::zeros({config.d_inner(), config.d_state}, dtype),
                        Tensor::zeros({config.d_inner(), config.d_state}, dtype)});
  return m;
}

Tensor init_state(const StateSpaceMemory& memory, const TemfParams& params,
                  std::int64_t level, Direction dir) {
  check_level(params, level);
  if (memory.levels.size() != params.levels.size())
    throw ShapeError("temf: memory level count mismatch");
  const TemfLevelParams& lp = params.levels[level];
  if (memory.t == 0) return lp.h_learn;
  const Tensor& h_fin = dir == Direction::Alpha ? memory.levels[level].h_alpha
                                                : memory.levels[level].h_beta;
  Tensor a = broadcast_to(sigmoid(lp.a_logit), lp.h_learn.shape());
  Tensor one_minus_a =
      broadcast_to(sub(Tensor::scalar(1.0, a.dtype()), sigmoid(lp.a_logit)),
                   lp.h_learn.shape());
  return add(mul(a, lp.h_learn), mul(one_minus_a, h_fin));
}

TokenSequence temf_forward(const TokenSequence& g, const TemfParams& params,
                           StateSpaceMemory& memory) {
  if (memory.levels.size() != params.levels.size())
    throw ShapeError("temf: memory level count mismatch");
  TokenSequence cur = g;
  for (std::size_t i = 0; i < params.levels.size(); ++i) {
    try {
      hmss::DirectionalStates h_ini{
          init_state(memory, params, i, Direction::Alpha),
          init_state(memory, params, i, Direction::Beta)};
      // pre-norm keeps the residual stream bounded across levels
      TokenSequence normed{layer_norm(cur.tokens), cur.layout};
      hmss::HmssResult mixed =
          hmss::hmss_forward(normed, params.levels[i].mix, h_ini);
      cur = sle::sle_forward(mixed.out, params.levels[i].enhance);
      memory.levels[i] = mixed.states_out;
    } catch (const NumericError& e) {
      throw NumericError("temf level " + std::to_string(i) + ": " + e.what());
    } catch (const LayoutError& e) {
      throw LayoutError("temf level " + std::to_string(i) + ": " + e.what());
    }
  }
  ++memory.t;
  return cur;
}

void detach_memory(StateSpaceMemory& memory) {
  for (auto& level : memory.levels) {
    level.h_alpha = detach(level.h_alpha);
    level.h_beta = detach(level.h_beta);
  }
}

std::vector<std::uint8_t> snapshot(const StateSpaceMemory& memory) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kSnapshotVersion);
  append_u32(out, static_cast<std::uint32_t>(memory.levels.size()));
  const Shape s = memory.levels.empty() ? Shape{0, 0}
                                        : memory.levels[0].h_alpha.shape();
  append_u32(out, static_cast<std::uint32_t>(s[0]));
  append_u32(out, static_cast<std::uint32_t>(s[1]));
  append_u64(out, static_cast<std::uint64_t>(memory.t));
  for (const auto& level : memory.levels)
    for (const Tensor* t : {&level.h_alpha, &level.h_beta})
      for (std::int64_t i = 0; i < t->size(); ++i)
        append_f32(out, static_cast<float>(t->at(i)));
  return out;
}

void restore(StateSpaceMemory& memory, const std::vector<std::uint8_t>& blob) {
  if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw FormatError("temf snapshot: bad magic");
  BlobReader r{blob, 4};
  if (r.u32() != kSnapshotVersion)
    throw FormatError("temf snapshot: unsupported version");
  const std::uint32_t m = r.u32();
  const std::int64_t d_inner = r.u32(), d_state = r.u32();
  const std::int64_t t = static_cast<std::int64_t>(r.u64());
  const std::size_t expect = r.pos + std::size_t(m) * 2 * d_inner * d_state * 4;
  if (blob.size() != expect) throw FormatError("temf snapshot: bad payload size");
  // Fully parsed and validated; only now mutate the target.
  std::vector<hmss::DirectionalStates> levels;
  levels.reserve(m);
  for (std::uint32_t l = 0; l < m; ++l) {
    hmss::DirectionalStates st;
    for (Tensor* dst : {&st.h_alpha, &st.h_beta}) {
      std::vector<double> v(d_inner * d_state);
      for (auto& x : v) x = r.f32();
      *dst = Tensor::from_data({d_inner, d_state}, std::move(v), DType::F32);
    }
    levels.push_back(std::move(st));
  }
  memory.levels = std::move(levels);
  memory.t = t;
}

}  // namespace vlt::temf
