#pragma once

#include <iosfwd>

#include "vlt/tracker.hpp"

namespace vlt::train {

// Decoupled-weight-decay Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double weight_decay);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();       // consumes .grad on each parameter
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, weight_decay_;
  std::int64_t t_ = 0;
};

struct StepStats {
  double total = 0;
  double l1 = 0, giou = 0, tgt = 0, cls = 0, cw = 0, co = 0;
};

struct TrainResult {
  std::int64_t steps = 0;
  StepStats last;
  std::vector<double> loss_history;
};

// Trains on generated sequences (all three modes round-robin), unrolling
// `unroll` frames through the state-space memory per element.
TrainResult train(model::ModelParams& m, const Config& cfg,
                  std::uint64_t seed, std::ostream* log);

struct EvalMetrics {
  double mean_iou = 0;
  double auc = 0;        // success rates averaged over IoU thresholds 0:0.05:1
  double precision = 0;  // center error <= 0.1 * image side
  double ms_per_frame = 0;
  std::int64_t frames = 0;
};

EvalMetrics evaluate(const model::ModelParams& m, const Config& cfg,
                     std::uint64_t seed_base, model::Mode mode, bool srf,
                     bool srf_reset_memory);

}  // namespace vlt::train
