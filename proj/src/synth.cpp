#include "vlt/synth.hpp"

#include <algorithm>
#include <cmath>

namespace vlt::synth {

const double kPalette[kPaletteSize][3] = {
    {0.95, 0.20, 0.20},  // red
    {0.20, 0.85, 0.25},  // green
    {0.25, 0.35, 0.95},  // blue
    {0.95, 0.85, 0.20},  // yellow
    {0.85, 0.25, 0.85},  // magenta
    {0.25, 0.85, 0.85},  // cyan
    {0.95, 0.55, 0.15},  // orange
    {0.90, 0.90, 0.90},  // white
};

namespace {

// Centers are clamped fully inside the frame, which also satisfies the
// >= 60%-visible contract.
double clamp_center(double c, double size, double frame) {
  return std::clamp(c, size / 2, frame - size / 2);
}

void fill_trajectory(ObjectSpec& obj, Rng& rng, std::int64_t length,
                     double frame) {
  obj.cx.resize(length);
  obj.cy.resize(length);
  double x = rng.uniform(obj.size / 2, frame - obj.size / 2);
  double y = rng.uniform(obj.size / 2, frame - obj.size / 2);
  switch (obj.motion) {
    case MotionKind::Linear: {
      const double vx = rng.uniform(-2.5, 2.5), vy = rng.uniform(-2.5, 2.5);
      double px = x, py = y, dx = vx, dy = vy;
      for (std::int64_t t = 0; t < length; ++t) {
        obj.cx[t] = clamp_center(px, obj.size, frame);
        obj.cy[t] = clamp_center(py, obj.size, frame);
        px += dx;
        py += dy;
        // bounce off the walls instead of sticking to them
        if (px < obj.size / 2 || px > frame - obj.size / 2) dx = -dx;
        if (py < obj.size / 2 || py > frame - obj.size / 2) dy = -dy;
      }
      break;
    }
    case MotionKind::Sinusoidal: {
      const double ax = rng.uniform(3.0, 10.0), ay = rng.uniform(3.0, 10.0);
      const double fx = rng.uniform(0.2, 0.8), fy = rng.uniform(0.2, 0.8);
      const double px = rng.uniform(0, 6.28318530717958648),
                   py = rng.uniform(0, 6.28318530717958648);
      for (std::int64_t t = 0; t < length; ++t) {
        obj.cx[t] = clamp_center(x + ax * std::sin(fx * t + px), obj.size, frame);
        obj.cy[t] = clamp_center(y + ay * std::sin(fy * t + py), obj.size, frame);
      }
      break;
    }
    case MotionKind::RandomWalk: {
      double px = x, py = y;
      for (std::int64_t t = 0; t < length; ++t) {
        obj.cx[t] = clamp_center(px, obj.size, frame);
        obj.cy[t] = clamp_center(py, obj.size, frame);
        px += rng.uniform(-3.0, 3.0);
        py += rng.uniform(-3.0, 3.0);
      }
      break;
    }
  }
}

bool inside(const ObjectSpec& o, std::int64_t t, double px, double py) {
  const double dx = px - o.cx[t], dy = py - o.cy[t], half = o.size / 2;
  switch (o.shape) {
    case ShapeKind::Square:
      return std::abs(dx) <= half && std::abs(dy) <= half;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= half * half;
    case ShapeKind::Triangle:
      // apex up: vertices (0,-half), (-half,half), (half,half)
      return dy >= -half && dy <= half && std::abs(dx) <= (dy + half) / 2;
  }
  return false;
}

}  // namespace

SeqSpec make_sequence_spec(std::uint64_t seed, const Config& cfg) {
  Rng rng(seed);
  SeqSpec spec;
  spec.seed = seed;
  spec.length = cfg.seq_len;
  spec.image_size = cfg.image_size;
  const double g = rng.uniform(0.05, 0.18);  // dark background
  spec.bg[0] = spec.bg[1] = spec.bg[2] = g;

  spec.target.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  spec.target.color = rng.uniform_int(0, kPaletteSize - 1);
  spec.target.size = rng.uniform(10.0, 16.0);
  spec.target.motion = static_cast<MotionKind>(rng.uniform_int(0, 2));
  fill_trajectory(spec.target, rng, spec.length,
                  static_cast<double>(cfg.image_size));

  for (std::int64_t i = 0; i < cfg.distractors; ++i) {
    ObjectSpec d;
    do {
      d.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
      d.color = rng.uniform_int(0, kPaletteSize - 1);
    } while (!cfg.hard_distractors && d.shape == spec.target.shape &&
             d.color == spec.target.color);
    d.size = rng.uniform(8.0, 16.0);
    d.motion = static_cast<MotionKind>(rng.uniform_int(0, 2));
    fill_trajectory(d, rng, spec.length, static_cast<double>(cfg.image_size));
    spec.distractors.push_back(std::move(d));
  }
  return spec;
}

Frame render_frame(const SeqSpec& spec, std::int64_t t) {
  if (t < 0 || t >= spec.length)
    throw ConfigError("render_frame: frame index out of range");
  Frame f;
  const std::int64_t s = spec.image_size;
  f.image.w = s;
  f.image.h = s;
  f.image.rgb.resize(s * s * 3);
  for (std::int64_t y = 0; y < s; ++y)
    for (std::int64_t x = 0; x < s; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double* color = spec.bg;
      for (const ObjectSpec& d : spec.distractors)
        if (inside(d, t, px, py)) color = kPalette[d.color];
      if (inside(spec.target, t, px, py)) color = kPalette[spec.target.color];
      for (int c = 0; c < 3; ++c) f.image.at(y, x, c) = color[c];
    }
  f.gt = {spec.target.cx[t], spec.target.cy[t], spec.target.size,
          spec.target.size};
  return f;
}

std::vector<std::int64_t> language_ids(const SeqSpec& spec) {
  const double half = spec.image_size / 2.0;
  const std::int64_t quad =
      (spec.target.cx[0] >= half ? 1 : 0) + (spec.target.cy[0] >= half ? 2 : 0);
  return {static_cast<std::int64_t>(spec.target.shape),
          3 + spec.target.color,
          11 + static_cast<std::int64_t>(spec.target.motion),
          14 + quad};
}

}  // namespace vlt::synth
