#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flop/graph.hpp"
#include "flop/rng.hpp"

namespace flop {

/// Stretch interval (l, r) and temperature of the Hard Concrete distribution.
struct HardConcreteParams {
  double l = -0.1;
  double r = 1.1;
  double beta = 1.0;
};

/// Value assigned to a kept gate when freezing the mask for inference.
enum class KeptValue {
  rectified_mean,    // clamp(sigmoid(alpha / beta) * (r - l) + l, 0, 1)
  open_probability,  // P(z > 0)
  one,
};

struct DeterministicMask {
  std::vector<std::size_t> kept;  // ascending indices
  std::vector<double> values;     // length n; zero outside `kept`
};

/// Lower clamp applied to injected uniforms: u is used as clamp(u, eps, 1 - eps).
inline constexpr double kUniformClamp = 1e-8;

/// A vector of n Hard Concrete gates over blocks of parameters. The logits
/// alpha are a learnable Parameter; block_sizes weight each gate's open
/// probability in the expected parameter count.
class HardConcreteGate {
 public:
  HardConcreteGate() = default;
  HardConcreteGate(std::string name, std::vector<double> block_sizes, HardConcreteParams params = {},
                   double alpha_init = 2.2);

  /// Adds N(0, sigma^2) jitter to every logit.
  void jitter(Rng& rng, double sigma);

  std::size_t size() const { return block_sizes_.size(); }
  const HardConcreteParams& params() const { return params_; }
  const std::vector<double>& block_sizes() const { return block_sizes_; }
  Parameter& alpha() { return alpha_; }
  const Parameter& alpha() const { return alpha_; }
  bool uniform_blocks() const;

  /// z = min(1, max(0, sigmoid((log u - log(1-u) + alpha) / beta) * (r - l) + l)),
  /// differentiable w.r.t. alpha.
  Var sample_mask(Graph& g, std::span<const double> u);
  /// Draws n uniforms from the stream and samples.
  Var sample_mask(Graph& g, Rng& rng);

  /// P(z_j > 0) = sigmoid(alpha_j - beta * log(-l / r)).
  Var open_probability(Graph& g);
  std::vector<double> open_probability() const;

  /// sum_j P(z_j > 0) * block_sizes_j.
  Var expected_l0(Graph& g);
  double expected_l0() const;

  /// Keeps the keep_count gates with the highest open probability (ties to
  /// the lower index) and zeroes the rest.
  DeterministicMask deterministic_mask(std::size_t keep_count,
                                       KeptValue kept = KeptValue::rectified_mean) const;
  /// Number of gates to keep so the frozen mask matches the expected L0.
  std::size_t compute_keep_count() const;

 private:
  HardConcreteParams params_;
  std::vector<double> block_sizes_;
  Parameter alpha_;
};

/// Reference-free helpers shared with the frozen-mask path.
double hard_concrete_sample(double alpha, double u, const HardConcreteParams& params);
double hard_concrete_open_probability(double alpha, const HardConcreteParams& params);
double hard_concrete_kept_value(double alpha, const HardConcreteParams& params, KeptValue kept);

/// Top-k selection by score with ties broken toward the lower index;
/// result in ascending index order.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// compute_keep_count on raw probabilities and block sizes.
std::size_t keep_count_for(std::span<const double> probabilities, std::span<const double> block_sizes);

}  // namespace flop
