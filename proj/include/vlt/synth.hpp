#pragma once

#include <cstdint>
#include <vector>

#include "vlt/config.hpp"
#include "vlt/heads.hpp"
#include "vlt/rng.hpp"

namespace vlt::synth {

// Row-major RGB raster, channels interleaved, values in [0,1].
struct Image {
  std::int64_t w = 0, h = 0;
  std::vector<double> rgb;

  double at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return rgb[(y * w + x) * 3 + c];
  }
  double& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return rgb[(y * w + x) * 3 + c];
  }
};

enum class ShapeKind { Square, Circle, Triangle };
enum class MotionKind { Linear, Sinusoidal, RandomWalk };

constexpr std::int64_t kPaletteSize = 8;
// r,g,b per palette entry
extern const double kPalette[kPaletteSize][3];

struct ObjectSpec {
  ShapeKind shape = ShapeKind::Square;
  std::int64_t color = 0;
  double size = 12.0;  // bounding square side in px
  MotionKind motion = MotionKind::Linear;
  std::vector<double> cx, cy;  // precomputed per-frame centers
};

// Everything needed to re-render the sequence bit-identically.
struct SeqSpec {
  std::uint64_t seed = 0;
  std::int64_t length = 0;
  std::int64_t image_size = 0;
  double bg[3] = {0, 0, 0};
  ObjectSpec target;
  std::vector<ObjectSpec> distractors;
};

SeqSpec make_sequence_spec(std::uint64_t seed, const Config& cfg);

struct Frame {
  Image image;
  heads::Box gt;  // target box in pixels (cx, cy, w, h)
};
Frame render_frame(const SeqSpec& spec, std::int64_t t);

// token id layout: [0,3) shape, [3,11) color, [11,14) motion,
// [14,18) start-quadrant relation
constexpr std::int64_t kVocabSize = 18;
std::vector<std::int64_t> language_ids(const SeqSpec& spec);

}  // namespace vlt::synth
