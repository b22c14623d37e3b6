#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flop/graph.hpp"

namespace flop {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
};

/// Compares reverse-mode gradients of a scalar builder against central
/// differences, perturbing every entry of every listed parameter.
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
/// The builder must be deterministic (stochastic gates take injected noise).
GradCheckReport check_gradients(const std::function<Var(Graph&)>& build,
                                const std::vector<Parameter*>& params, double eps = 1e-5,
                                double tol = 1e-6);

}  // namespace flop
