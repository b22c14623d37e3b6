#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flop/graph.hpp"
#include "flop/layers.hpp"

namespace flop {

/// What a user-facing compression fraction is measured against.
enum class CompressionBasis { total, prunable };

/// Converts "remove this fraction" into a kept-parameter budget over gated
/// blocks. Throws DomainError when the fixed (ungated) parameters alone
/// exceed the requested total size.
double kept_target_from_compression(double compression, CompressionBasis basis, double total,
                                    double prunable);

enum class ControllerMode {
  lagrangian,    // g = l1 (s - t) + l2 (s - t)^2 with ascent on (l1, l2)
  fixed_lambda,  // plain lambda * s
};

struct LagrangianOptions {
  ControllerMode mode = ControllerMode::lagrangian;
  double lr_lambda = 1.0;
  /// Annealing length m, in pruning steps.
  std::size_t anneal_steps = 1;
  /// Measure the violation as (s - t) / prunable_total instead of raw counts.
  bool normalize = true;
  /// Coefficient for fixed_lambda mode (applied to s / prunable_total when normalizing).
  double fixed_lambda = 0.0;
};

struct ControllerState {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::size_t step = 0;
};

/// Drives the expected kept size s(alpha) toward a linearly annealed target.
class LagrangianController {
 public:
  LagrangianController(double prunable_total, double target_kept, LagrangianOptions options = {});
  /// Same controller specified by the removal at saturation, kept bit-exact.
  static LagrangianController from_removal(double prunable_total, double removal_max, LagrangianOptions options = {});

  /// Removal scheduled after k pruning steps: min(1, k/m) * (prunable - t_max).
  double scheduled_removal(std::size_t k) const;
  /// Kept-size target after k pruning steps: prunable - scheduled_removal(k).
  double target_size(std::size_t k) const;
  double current_target() const { return target_size(state_.step); }

  /// (s - t), divided by prunable_total in normalized mode.
  double violation(double s, double t) const;

  /// Penalty against an explicit target; multipliers enter as constants.
  Var penalty(Graph& g, Var s, double t) const;
  Var penalty(Graph& g, Var s) const { return penalty(g, s, current_target()); }
  double penalty_value(double s, double t) const;

  /// Gradient ascent on the multipliers against an explicit target.
  void update_multipliers(double s, double t);
  /// Ascent against the current target, then advances the pruning step.
  void update_multipliers(double s);

  double lambda1() const { return state_.lambda1; }
  double lambda2() const { return state_.lambda2; }
  std::size_t step() const { return state_.step; }
  double prunable_total() const { return prunable_; }
  double target_kept() const { return target_kept_; }
  double removal_max() const { return removal_max_; }
  const LagrangianOptions& options() const { return options_; }
  const ControllerState& state() const { return state_; }
  void set_state(const ControllerState& s) { state_ = s; }

 private:
  double prunable_;
  double target_kept_;
  double removal_max_;
  LagrangianOptions options_;
  ControllerState state_;
};

/// Cubic sparsity schedule for gradual magnitude pruning:
/// s(step) = s_f + (s_i - s_f) (1 - progress)^3 inside [begin, end].
struct AgpScheduler {
  double initial_sparsity = 0.0;
  double final_sparsity = 0.5;
  std::size_t begin_step = 0;
  std::size_t end_step = 1000;
  std::size_t prune_frequency = 1;
  double l1_coeff = 0.0;

  double sparsity(std::size_t step) const;
  /// True when a pruning pass should run at this step.
  bool prunes_at(std::size_t step) const;
};

/// Result of one magnitude pruning pass over all diagonal masks.
struct AgpStepResult {
  double target_sparsity = 0.0;
  std::size_t entries = 0;
  std::size_t zeroed = 0;
  double sparsity() const { return entries ? static_cast<double>(zeroed) / static_cast<double>(entries) : 0.0; }
};

/// Zeroes the globally smallest-magnitude mask entries until
/// round(sparsity * entries) are pruned. Pruned entries stay pruned.
AgpStepResult agp_prune_step(std::span<DiagonalMask* const> masks, const AgpScheduler& sched, std::size_t step);
AgpStepResult agp_prune_to(std::span<DiagonalMask* const> masks, double sparsity);

/// l1_coeff * sum |g| over live mask entries.
Var agp_l1_penalty(Graph& g, std::span<DiagonalMask* const> masks, double l1_coeff);

/// Per-layer pruning summary.
struct LayerReport {
  std::string name;
  std::size_t components = 0;
  std::size_t kept = 0;
  double prunable = 0;
  double kept_expected = 0;
  double kept_actual = 0;
};

struct PruneReport {
  std::vector<LayerReport> layers;
  double original_total = 0;  // size before pruning / reference size
  double total = 0;           // current size with every component present
  double prunable = 0;
  double kept_expected = 0;
  double kept_actual = 0;

  double kept_total_actual() const { return total - prunable + kept_actual; }
  double kept_total_expected() const { return total - prunable + kept_expected; }
  /// 1 - kept_total / original_total.
  double compression() const;
  double expected_compression() const;
  /// Fraction of prunable parameters removed by the frozen masks.
  double prunable_compression() const;
};

}  // namespace flop
