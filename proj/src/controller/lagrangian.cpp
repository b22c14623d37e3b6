#include <algorithm>
#include <cmath>

#include "flop/controller.hpp"
#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {

double kept_target_from_compression(double compression, CompressionBasis basis, double total, double prunable) {
  if (!(compression >= 0.0 && compression <= 1.0))
    throw DomainError("target compression must lie in [0, 1], got " + std::to_string(compression));
  if (basis == CompressionBasis::prunable) return (1.0 - compression) * prunable;
  const double fixed = total - prunable;
  const double kept = (1.0 - compression) * total - fixed;
  if (kept < 0.0)
    throw DomainError("target compression " + std::to_string(compression) +
                      " unreachable: ungated parameters alone exceed the budget");
  return kept;
}

LagrangianController::LagrangianController(double prunable_total, double target_kept, LagrangianOptions options)
    : prunable_(prunable_total), target_kept_(target_kept), removal_max_(prunable_total - target_kept), options_(options) {
  if (!(prunable_ > 0.0)) throw DomainError("controller needs a positive prunable size");
  if (!(target_kept_ >= 0.0 && target_kept_ <= prunable_))
    throw DomainError("kept target must lie in [0, prunable]");
  if (options_.anneal_steps == 0) throw DomainError("annealing steps must be positive");
}

double LagrangianController::scheduled_removal(std::size_t k) const {
  return std::min(1.0, static_cast<double>(k) / static_cast<double>(options_.anneal_steps)) * removal_max_;
}

LagrangianController LagrangianController::from_removal(double prunable_total, double removal_max,
                                                        LagrangianOptions options) {
  if (!(removal_max >= 0.0 && removal_max <= prunable_total))
    throw DomainError("removal target must lie in [0, prunable]");
  LagrangianController c(prunable_total, prunable_total - removal_max, options);
  c.removal_max_ = removal_max;
  return c;
}

double LagrangianController::target_size(std::size_t k) const {
  if (k >= options_.anneal_steps) return target_kept_;
  return prunable_ - scheduled_removal(k);
}

double LagrangianController::violation(double s, double t) const {
  return options_.normalize ? (s - t) / prunable_ : s - t;
}

Var LagrangianController::penalty(Graph&, Var s, double t) const {
  if (options_.mode == ControllerMode::fixed_lambda) {
    const double factor = options_.normalize ? options_.fixed_lambda / prunable_ : options_.fixed_lambda;
    return scale(s, factor);
  }
  Var v = add_scalar(s, -t);
  if (options_.normalize) v = scale(v, 1.0 / prunable_);
  return add(scale(v, state_.lambda1), scale(square(v), state_.lambda2));
}

double LagrangianController::penalty_value(double s, double t) const {
  if (options_.mode == ControllerMode::fixed_lambda)
    return (options_.normalize ? options_.fixed_lambda / prunable_ : options_.fixed_lambda) * s;
  const double v = violation(s, t);
  return state_.lambda1 * v + state_.lambda2 * v * v;
}

void LagrangianController::update_multipliers(double s, double t) {
  if (options_.mode != ControllerMode::lagrangian) return;
  const double v = violation(s, t);
  state_.lambda1 += options_.lr_lambda * v;
  state_.lambda2 += options_.lr_lambda * v * v;
}

void LagrangianController::update_multipliers(double s) {
  update_multipliers(s, current_target());
  ++state_.step;
}

double PruneReport::compression() const {
  return original_total > 0 ? 1.0 - kept_total_actual() / original_total : 0.0;
}

double PruneReport::expected_compression() const {
  return original_total > 0 ? 1.0 - kept_total_expected() / original_total : 0.0;
}

double PruneReport::prunable_compression() const { return prunable > 0 ? 1.0 - kept_actual / prunable : 0.0; }

}  // namespace flop
