#include "flop/optim.hpp"

#include <algorithm>
#include <cmath>

#include "flop/errors.hpp"

namespace flop {

double InverseSqrtSchedule::at(std::size_t step) const {
  if (ramp_steps == 0) return base;
  const double t = static_cast<double>(step + 1);
  const double w = static_cast<double>(ramp_steps);
  return base * std::min(t / w, std::sqrt(w / t));
}

Optimizer::Optimizer(std::vector<Parameter*> params) : params_(std::move(params)) {
  for (Parameter* p : params_) {
    state_.first.emplace_back(p->value().size(), 0.0);
    state_.second.emplace_back(p->value().size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double Optimizer::current_lr() const { return schedule().at(state_.step); }

void Optimizer::set_state(OptimizerState state) {
  if (state.first.size() != params_.size() || state.second.size() != params_.size())
    throw FormatError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (state.first[i].size() != params_[i]->value().size() ||
        state.second[i].size() != params_[i]->value().size())
      throw FormatError("optimizer state size mismatch for " + params_[i]->name());
  state_ = std::move(state);
}

Sgd::Sgd(std::vector<Parameter*> params, SgdOptions options)
    : Optimizer(std::move(params)), options_(options) {}

void Sgd::step() {
  const double lr = current_lr();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.requires_grad()) continue;
    auto w = p.value().data();
    auto g = p.grad().data();
    auto& v = state_.first[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + options_.weight_decay * w[k];
      v[k] = options_.momentum * v[k] + grad;
      w[k] -= lr * v[k];
    }
  }
  ++state_.step;
}

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : Optimizer(std::move(params)), options_(options) {}

void Adam::step() {
  const double lr = current_lr();
  const double t = static_cast<double>(state_.step + 1);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.requires_grad()) continue;
    auto w = p.value().data();
    auto g = p.grad().data();
    auto& m = state_.first[i];
    auto& v = state_.second[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double grad = g[k] + options_.weight_decay * w[k];
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * grad;
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * grad * grad;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.epsilon);
    }
  }
  ++state_.step;
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params)
    for (double g : p->grad().data()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Parameter* p : params)
      for (double& g : p->grad().data()) g *= factor;
  }
  return norm;
}

}  // namespace flop
