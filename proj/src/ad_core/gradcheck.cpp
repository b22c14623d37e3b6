#include "flop/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace flop {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

GradCheckReport check_gradients(const std::function<Var(Graph&)>& build,
                                const std::vector<Parameter*>& params, double eps, double tol) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad());

  auto evaluate = [&build]() {
    Graph g;
    return build(g).value().item();
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GradCheckEntry entry{p.name()};
    auto w = p.value().data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double saved = w[k];
      w[k] = saved + eps;
      const double up = evaluate();
      w[k] = saved - eps;
      const double down = evaluate();
      w[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][k];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-3});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = k;
      }
    }
    entry.passed = entry.max_rel_error < tol;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace flop
