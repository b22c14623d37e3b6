#pragma once

#include <cstddef>
#include <vector>

#include "flop/graph.hpp"

namespace flop {

/// Inverse-square-root decay with linear ramp:
/// lr(t) = base * min((t+1)/ramp, sqrt(ramp/(t+1))). ramp = 0 disables decay.
struct InverseSqrtSchedule {
  double base = 0.1;
  std::size_t ramp_steps = 0;
  double at(std::size_t step) const;
};

struct SgdOptions {
  double momentum = 0.9;
  double weight_decay = 0.0;
  InverseSqrtSchedule schedule{};
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  InverseSqrtSchedule schedule{};
};

/// Per-parameter slot state, stored in checkpoints.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

class Optimizer {
 public:
  explicit Optimizer(std::vector<Parameter*> params);
  virtual ~Optimizer() = default;

  virtual void step() = 0;
  void zero_grad();
  double current_lr() const;

  const std::vector<Parameter*>& params() const { return params_; }
  const OptimizerState& state() const { return state_; }
  void set_state(OptimizerState state);

 protected:
  virtual const InverseSqrtSchedule& schedule() const = 0;

  std::vector<Parameter*> params_;
  OptimizerState state_;
};

class Sgd : public Optimizer {
 public:
  Sgd(std::vector<Parameter*> params, SgdOptions options);
  void step() override;

 private:
  const InverseSqrtSchedule& schedule() const override { return options_.schedule; }
  SgdOptions options_;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);
  void step() override;

 private:
  const InverseSqrtSchedule& schedule() const override { return options_.schedule; }
  AdamOptions options_;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

}  // namespace flop
