#pragma once

#include <vector>

#include "core/graph.hpp"

namespace bmil {

// RMSProp with optional linear learning-rate decay to zero. One instance owns
// one parameter group; step() consumes the gradients currently stored on the
// params (call zero_grads() before building each loss).
class RmsProp {
 public:
  RmsProp(std::vector<Param*> params, double lr, double alpha = 0.99, double eps = 1e-8);

  // lr(t) = lr0 * max(0, 1 - t/total_steps); total_steps <= 0 keeps lr constant.
  void set_linear_decay(long total_steps) { decay_total_ = total_steps; }

  double current_lr() const;
  long steps_taken() const { return step_count_; }
  // True once step() has been called with the schedule fully decayed.
  bool exhausted() const { return exhausted_; }

  void zero_grads();
  void step();

  const std::vector<Param*>& params() const { return params_; }
  std::vector<Tensor>& square_avg() { return square_avg_; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> square_avg_;
  double lr0_;
  double alpha_;
  double eps_;
  long decay_total_ = 0;
  long step_count_ = 0;
  bool exhausted_ = false;
  bool warned_ = false;
};

}  // namespace bmil
