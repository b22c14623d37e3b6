#include <algorithm>
#include <cmath>
#include <tuple>

#include "flop/controller.hpp"
#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {

double AgpScheduler::sparsity(std::size_t step) const {
  if (begin_step > end_step) throw DomainError("AGP schedule: begin_step after end_step");
  if (step <= begin_step) return initial_sparsity;
  if (step >= end_step) return final_sparsity;
  const double progress = static_cast<double>(step - begin_step) / static_cast<double>(end_step - begin_step);
  const double remaining = 1.0 - progress;
  const double s = final_sparsity + (initial_sparsity - final_sparsity) * remaining * remaining * remaining;
  return std::clamp(s, std::min(initial_sparsity, final_sparsity), std::max(initial_sparsity, final_sparsity));
}

bool AgpScheduler::prunes_at(std::size_t step) const {
  if (step < begin_step) return false;
  if (step >= end_step) return step == end_step;
  return prune_frequency == 0 || (step - begin_step) % prune_frequency == 0;
}

AgpStepResult agp_prune_to(std::span<DiagonalMask* const> masks, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw DomainError("AGP sparsity must lie in [0, 1]");
  struct Entry {
    double magnitude;
    std::size_t mask;
    std::size_t index;
  };
  std::vector<Entry> entries;
  std::size_t already = 0;
  for (std::size_t m = 0; m < masks.size(); ++m) {
    const DiagonalMask& mask = *masks[m];
    for (std::size_t j = 0; j < mask.size(); ++j) {
      const bool pruned = mask.is_pruned(j);
      already += pruned ? 1 : 0;
      // Pruned entries rank first so the pruned set only ever grows.
      entries.push_back({pruned ? -1.0 : std::fabs(mask.values().value()[j]), m, j});
    }
  }
  AgpStepResult result;
  result.target_sparsity = sparsity;
  result.entries = entries.size();
  const auto goal = std::max<std::size_t>(
      already, static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(entries.size()))));
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.magnitude, a.mask, a.index) < std::tie(b.magnitude, b.mask, b.index);
  });
  for (std::size_t i = 0; i < goal && i < entries.size(); ++i) masks[entries[i].mask]->prune(entries[i].index);
  result.zeroed = std::min(goal, entries.size());
  return result;
}

AgpStepResult agp_prune_step(std::span<DiagonalMask* const> masks, const AgpScheduler& sched, std::size_t step) {
  return agp_prune_to(masks, sched.sparsity(step));
}

Var agp_l1_penalty(Graph& g, std::span<DiagonalMask* const> masks, double l1_coeff) {
  Var total = g.constant(Tensor::scalar(0.0));
  for (DiagonalMask* m : masks) total = add(total, sum(abs(m->mask(g))));
  return scale(total, l1_coeff);
}

}  // namespace flop
