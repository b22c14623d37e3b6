#include <algorithm>
#include <numeric>

#include "flop/errors.hpp"
#include "flop/layers.hpp"
#include "flop/ops.hpp"

namespace flop {

DiagonalMask::DiagonalMask(std::string name, std::vector<double> block_sizes)
    : block_sizes_(std::move(block_sizes)),
      values_(std::move(name), Tensor(Shape{block_sizes_.size()}, 1.0)),
      pruned_(block_sizes_.size(), 0) {}

void DiagonalMask::prune(std::size_t index) {
  if (index >= size()) throw DimensionError("diagonal mask index out of range");
  pruned_[index] = 1;
  values_.value()[index] = 0.0;
}

std::size_t DiagonalMask::kept_count() const {
  return static_cast<std::size_t>(std::count(pruned_.begin(), pruned_.end(), 0));
}

Var DiagonalMask::mask(Graph& g) {
  Tensor keep(Shape{size()});
  for (std::size_t j = 0; j < size(); ++j) keep[j] = pruned_[j] ? 0.0 : 1.0;
  return mul(g.parameter(values_), g.constant(std::move(keep)));
}

std::vector<double> DiagonalMask::frozen() const {
  std::vector<double> out(size());
  for (std::size_t j = 0; j < size(); ++j) out[j] = pruned_[j] ? 0.0 : values_.value()[j];
  return out;
}

void DiagonalMask::save(BinaryWriter& w) const {
  w.doubles(block_sizes_);
  w.doubles(values_.value().storage());
  w.bytes(pruned_);
}

DiagonalMask DiagonalMask::load(BinaryReader& r, std::string name) {
  DiagonalMask mask(std::move(name), r.doubles());
  auto values = r.doubles();
  auto pruned = r.bytes();
  if (values.size() != mask.size() || pruned.size() != mask.size())
    throw FormatError("diagonal mask record has inconsistent lengths");
  mask.values_.value() = Tensor::vector(std::move(values));
  mask.pruned_ = std::move(pruned);
  return mask;
}

ComponentGate::ComponentGate(GateKind kind, std::string name, std::vector<double> block_sizes,
                             const HardConcreteParams& hc, double alpha_init)
    : kind_(kind), size_(block_sizes.size()) {
  switch (kind) {
    case GateKind::hard_concrete:
      hc_.emplace(std::move(name), std::move(block_sizes), hc, alpha_init);
      break;
    case GateKind::diagonal:
      diag_.emplace(std::move(name), std::move(block_sizes));
      break;
    case GateKind::none:
      break;
  }
}

std::vector<Parameter*> ComponentGate::parameters() {
  if (hc_) return {&hc_->alpha()};
  if (diag_) return {&diag_->values()};
  return {};
}

void ComponentGate::begin_batch(Graph& g, const MaskContext& ctx) {
  batch_serial_ = g.serial();
  masked_ = false;
  mask_ = {};
  active_values_ = {};
  active_.clear();
  if (kind_ == GateKind::none || ctx.mode == GateMode::open) {
    active_.resize(size_);
    std::iota(active_.begin(), active_.end(), std::size_t{0});
    return;
  }

  if (hc_) {
    if (ctx.mode == GateMode::sample) {
      std::vector<double> u;
      if (ctx.uniforms) {
        u = ctx.uniforms(size_);
      } else {
        if (ctx.rng == nullptr) throw GraphError("sampling a gate mask requires a random stream");
        u.resize(size_);
        for (double& x : u) x = ctx.rng->open_uniform();
      }
      mask_ = hc_->sample_mask(g, u);
      ++samples_drawn_;
    } else {
      mask_ = g.constant(Tensor::vector(frozen(ctx.kept_value).values));
    }
    const Tensor& z = mask_.value();
    for (std::size_t j = 0; j < size_; ++j)
      if (z[j] != 0.0) active_.push_back(j);
  } else {
    // Pruned entries are the structural zeros; live entries stay active even
    // if their value happens to be 0 so their gradient is not lost.
    mask_ = ctx.mode == GateMode::sample ? diag_->mask(g)
                                         : g.constant(Tensor::vector(diag_->frozen()));
    for (std::size_t j = 0; j < size_; ++j)
      if (!diag_->is_pruned(j)) active_.push_back(j);
  }
  masked_ = true;
  active_values_ = active_.size() == size_ ? mask_ : gather(mask_, active_);
}

void ComponentGate::require_batch(const Graph& g, const std::string& layer) const {
  if (batch_serial_ != g.serial())
    throw GraphError(layer + ": begin_batch() was not called for this graph");
}

DeterministicMask ComponentGate::frozen(KeptValue kept) const {
  if (hc_) return hc_->deterministic_mask(hc_->compute_keep_count(), kept);
  DeterministicMask out;
  if (diag_) {
    out.values = diag_->frozen();
    for (std::size_t j = 0; j < size_; ++j)
      if (!diag_->is_pruned(j)) out.kept.push_back(j);
    return out;
  }
  out.values.assign(size_, 1.0);
  out.kept.resize(size_);
  std::iota(out.kept.begin(), out.kept.end(), std::size_t{0});
  return out;
}

double ComponentGate::prunable() const {
  if (hc_) return std::accumulate(hc_->block_sizes().begin(), hc_->block_sizes().end(), 0.0);
  if (diag_) return std::accumulate(diag_->block_sizes().begin(), diag_->block_sizes().end(), 0.0);
  return 0.0;
}

double ComponentGate::kept_expected() const {
  if (hc_) return hc_->expected_l0();
  return kept_actual();
}

double ComponentGate::kept_actual() const {
  if (kind_ == GateKind::none) return 0.0;
  const auto& blocks = hc_ ? hc_->block_sizes() : diag_->block_sizes();
  double total = 0.0;
  for (std::size_t j : frozen(KeptValue::rectified_mean).kept) total += blocks[j];
  return total;
}

void ComponentGate::save(BinaryWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind_));
  w.u64(size_);
  if (hc_) {
    w.f64(hc_->params().l);
    w.f64(hc_->params().r);
    w.f64(hc_->params().beta);
    w.doubles(hc_->block_sizes());
    w.doubles(hc_->alpha().value().storage());
  } else if (diag_) {
    diag_->save(w);
  }
}

ComponentGate ComponentGate::load(BinaryReader& r, std::string name) {
  const auto kind = static_cast<GateKind>(r.u8());
  const std::size_t size = r.u64();
  ComponentGate gate;
  gate.kind_ = kind;
  gate.size_ = size;
  switch (kind) {
    case GateKind::none:
      break;
    case GateKind::hard_concrete: {
      HardConcreteParams params;
      params.l = r.f64();
      params.r = r.f64();
      params.beta = r.f64();
      auto blocks = r.doubles();
      auto alpha = r.doubles();
      if (blocks.size() != size || alpha.size() != size)
        throw FormatError("gate record has inconsistent lengths");
      gate.hc_.emplace(std::move(name), std::move(blocks), params, 0.0);
      gate.hc_->alpha().value() = Tensor::vector(std::move(alpha));
      break;
    }
    case GateKind::diagonal:
      gate.diag_.emplace(DiagonalMask::load(r, std::move(name)));
      if (gate.diag_->size() != size) throw FormatError("diagonal gate size mismatch");
      break;
    default:
      throw FormatError("unknown gate kind " + std::to_string(static_cast<int>(kind)));
  }
  return gate;
}

ParamCounts& ParamCounts::operator+=(const ParamCounts& o) {
  total += o.total;
  prunable += o.prunable;
  kept_expected += o.kept_expected;
  kept_actual += o.kept_actual;
  return *this;
}

}  // namespace flop
