#include "flop/hard_concrete.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {
namespace {

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_uniform(double u) { return std::clamp(u, kUniformClamp, 1.0 - kUniformClamp); }

}  // namespace

HardConcreteGate::HardConcreteGate(std::string name, std::vector<double> block_sizes,
                                   HardConcreteParams params, double alpha_init)
    : params_(params), block_sizes_(std::move(block_sizes)) {
  if (!(params_.l < 0.0)) throw DomainError("hard concrete: l must be negative");
  if (!(params_.r > 1.0)) throw DomainError("hard concrete: r must exceed 1");
  if (!(params_.beta > 0.0)) throw DomainError("hard concrete: beta must be positive");
  for (double b : block_sizes_)
    if (!(b >= 1.0)) throw DomainError("hard concrete: block sizes must be >= 1");
  alpha_ = Parameter(std::move(name), Tensor(Shape{block_sizes_.size()}, alpha_init));
}

void HardConcreteGate::jitter(Rng& rng, double sigma) {
  for (double& a : alpha_.value().data()) a += sigma * rng.normal();
}

bool HardConcreteGate::uniform_blocks() const {
  return std::adjacent_find(block_sizes_.begin(), block_sizes_.end(), std::not_equal_to<>()) ==
         block_sizes_.end();
}

Var HardConcreteGate::sample_mask(Graph& g, std::span<const double> u) {
  if (u.size() != size())
    throw DimensionError("sample_mask: " + std::to_string(u.size()) + " uniforms for " +
                         std::to_string(size()) + " gates");
  Tensor noise(Shape{size()});
  for (std::size_t j = 0; j < size(); ++j) {
    const double uj = clamp_uniform(u[j]);
    noise[j] = std::log(uj) - std::log(1.0 - uj);
  }
  Var logits = add(g.constant(std::move(noise)), g.parameter(alpha_));
  if (params_.beta != 1.0) logits = scale(logits, 1.0 / params_.beta);
  Var stretched = add_scalar(scale(sigmoid(logits), params_.r - params_.l), params_.l);
  return clamp(stretched, 0.0, 1.0);
}

Var HardConcreteGate::sample_mask(Graph& g, Rng& rng) {
  std::vector<double> u(size());
  for (double& x : u) x = rng.open_uniform();
  return sample_mask(g, u);
}

Var HardConcreteGate::open_probability(Graph& g) {
  const double shift = params_.beta * std::log(-params_.l / params_.r);
  return sigmoid(add_scalar(g.parameter(alpha_), -shift));
}

std::vector<double> HardConcreteGate::open_probability() const {
  std::vector<double> p(size());
  for (std::size_t j = 0; j < size(); ++j)
    p[j] = hard_concrete_open_probability(alpha_.value()[j], params_);
  return p;
}

Var HardConcreteGate::expected_l0(Graph& g) {
  return sum(mul(open_probability(g), g.constant(Tensor::vector(block_sizes_))));
}

double HardConcreteGate::expected_l0() const {
  const auto p = open_probability();
  double total = 0.0;
  for (std::size_t j = 0; j < size(); ++j) total += p[j] * block_sizes_[j];
  return total;
}

DeterministicMask HardConcreteGate::deterministic_mask(std::size_t keep_count, KeptValue kept) const {
  if (keep_count > size())
    throw DomainError("deterministic_mask: keep_count " + std::to_string(keep_count) +
                      " exceeds " + std::to_string(size()) + " gates");
  DeterministicMask mask;
  mask.kept = top_k_indices(open_probability(), keep_count);
  mask.values.assign(size(), 0.0);
  for (std::size_t j : mask.kept)
    mask.values[j] = hard_concrete_kept_value(alpha_.value()[j], params_, kept);
  return mask;
}

std::size_t HardConcreteGate::compute_keep_count() const {
  return keep_count_for(open_probability(), block_sizes_);
}

double hard_concrete_sample(double alpha, double u, const HardConcreteParams& params) {
  const double uc = clamp_uniform(u);
  const double s = stable_sigmoid((std::log(uc) - std::log(1.0 - uc) + alpha) / params.beta);
  return std::min(1.0, std::max(0.0, s * (params.r - params.l) + params.l));
}

double hard_concrete_open_probability(double alpha, const HardConcreteParams& params) {
  return stable_sigmoid(alpha - params.beta * std::log(-params.l / params.r));
}

double hard_concrete_kept_value(double alpha, const HardConcreteParams& params, KeptValue kept) {
  switch (kept) {
    case KeptValue::rectified_mean:
      return std::min(1.0, std::max(0.0, stable_sigmoid(alpha / params.beta) * (params.r - params.l) +
                                             params.l));
    case KeptValue::open_probability:
      return hard_concrete_open_probability(alpha, params);
    case KeptValue::one:
      return 1.0;
  }
  return 1.0;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

std::size_t keep_count_for(std::span<const double> probabilities, std::span<const double> block_sizes) {
  if (probabilities.size() != block_sizes.size())
    throw DimensionError("keep_count_for: probabilities and block sizes differ in length");
  const std::size_t n = probabilities.size();
  if (n == 0) return 0;
  const bool uniform = std::adjacent_find(block_sizes.begin(), block_sizes.end(),
                                          std::not_equal_to<>()) == block_sizes.end();
  if (uniform) {
    const double total = std::accumulate(probabilities.begin(), probabilities.end(), 0.0);
    return std::min(n, static_cast<std::size_t>(std::llround(total)));
  }
  double expected = 0.0;
  for (std::size_t j = 0; j < n; ++j) expected += probabilities[j] * block_sizes[j];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probabilities[a] > probabilities[b]; });
  double covered = 0.0;
  std::size_t k = 0;
  // Small slack so an exact match is not lost to summation order.
  while (k < n && covered < expected - 1e-9 * std::max(1.0, expected)) covered += block_sizes[order[k++]];
  return k;
}

}  // namespace flop
