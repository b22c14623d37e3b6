#include <cmath>
#include <numeric>

#include "flop/errors.hpp"
#include "flop/layers.hpp"
#include "flop/ops.hpp"

namespace flop {
namespace {

Tensor gaussian(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = sigma * rng.normal();
  return t;
}

std::vector<double> constant_blocks(std::size_t n, double size) { return std::vector<double>(n, size); }

Tensor select_columns_scaled(const Tensor& m, const std::vector<std::size_t>& cols,
                             const std::vector<double>& scale) {
  const std::size_t rows = m.rows(), k = cols.size();
  Tensor out(Shape{rows, k});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = m.at(i, cols[j]) * scale[cols[j]];
  return out;
}

Tensor select_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
  const std::size_t n = m.cols();
  Tensor out(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = m.at(rows[i], j);
  return out;
}

void write_optional_bias(BinaryWriter& w, bool has, const Parameter& bias) {
  w.u8(has ? 1 : 0);
  if (has) w.tensor(bias.value());
}

std::optional<Tensor> read_optional_bias(BinaryReader& r) {
  if (r.u8() == 0) return std::nullopt;
  return r.tensor();
}

void check_bias(const std::optional<Tensor>& bias, std::size_t out) {
  if (bias && (bias->rank() != 1 || bias->size() != out))
    throw DimensionError("bias of shape " + shape_string(bias->shape()) + " for " +
                         std::to_string(out) + " outputs");
}

void warn_empty(std::vector<std::string>* warnings, const std::string& name) {
  if (warnings) warnings->push_back(name + ": all components pruned; layer reduced to its bias");
}

}  // namespace

std::size_t starting_rank(std::size_t d1, std::size_t d2) {
  if (d1 == 0 || d2 == 0) throw DomainError("starting_rank: dimensions must be >= 1");
  return std::max<std::size_t>(1, (d1 * d2) / (d1 + d2));
}

std::unique_ptr<Projection> Projection::load(BinaryReader& r) {
  const auto tag = static_cast<LayerTag>(r.u32());
  switch (tag) {
    case LayerTag::factorized:
      return FactorizedLinear::load_body(r);
    case LayerTag::column_gated:
      return ColumnGatedLinear::load_body(r);
    case LayerTag::compacted:
      return CompactedLinear::load_body(r);
    case LayerTag::dense:
      return DenseLinear::load_body(r);
    default:
      throw FormatError("unknown projection tag " + std::to_string(static_cast<std::uint32_t>(tag)));
  }
}

// ---------------------------------------------------------------------------

FactorizedLinear::FactorizedLinear(std::string name, std::size_t in, std::size_t out, std::size_t rank,
                                   GateKind gate, bool bias, const FactorInit& init, Rng& rng)
    : name_(std::move(name)), has_bias_(bias) {
  if (in == 0 || out == 0 || rank == 0) throw DimensionError("factorized layer needs positive dimensions");
  const double var_w = init.target_variance > 0 ? init.target_variance : 1.0 / (3.0 * static_cast<double>(in));
  // Var((PQ)_ij) = rank * sigma^4.
  const double sigma = std::pow(var_w / static_cast<double>(rank), 0.25);
  p_ = Parameter(name_ + ".P", gaussian(Shape{out, rank}, sigma, rng));
  q_ = Parameter(name_ + ".Q", gaussian(Shape{rank, in}, sigma, rng));
  bias_ = Parameter(name_ + ".bias", Tensor(Shape{out}), bias);
  gate_ = ComponentGate(gate, name_ + ".gate", constant_blocks(rank, static_cast<double>(in + out)), init.hc,
                        init.alpha_init);
  if (init.alpha_jitter > 0 && gate_.hard_concrete()) gate_.hard_concrete()->jitter(rng, init.alpha_jitter);
}

FactorizedLinear::FactorizedLinear(std::string name, Tensor p, Tensor q, std::optional<Tensor> bias,
                                   ComponentGate gate)
    : name_(std::move(name)), has_bias_(bias.has_value()), gate_(std::move(gate)) {
  if (p.rank() != 2 || q.rank() != 2 || p.cols() != q.rows())
    throw DimensionError("factor shapes " + shape_string(p.shape()) + " and " + shape_string(q.shape()) +
                         " do not chain");
  check_bias(bias, p.rows());
  if (gate_.kind() != GateKind::none && gate_.size() != p.cols())
    throw DimensionError("gate size does not match factorization rank");
  const std::size_t out = p.rows();
  p_ = Parameter(name_ + ".P", std::move(p));
  q_ = Parameter(name_ + ".Q", std::move(q));
  bias_ = Parameter(name_ + ".bias", bias ? std::move(*bias) : Tensor(Shape{out}), has_bias_);
  if (gate_.kind() == GateKind::none) gate_ = ComponentGate(GateKind::none, name_ + ".gate",
                                                            std::vector<double>(rank(), 1.0), {}, 0.0);
}

void FactorizedLinear::begin_batch(Graph& g, const MaskContext& ctx) { gate_.begin_batch(g, ctx); }

Var FactorizedLinear::forward(Graph& g, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != in_features())
    throw DimensionError(name_ + ": input " + shape_string(x.value().shape()) + " for " +
                         std::to_string(in_features()) + " features");
  gate_.require_batch(g, name_);
  if (cache_serial_ != g.serial()) {
    cache_serial_ = g.serial();
    qa_ = g.parameter(q_);
    pa_ = g.parameter(p_);
    if (!gate_.bypassed() && gate_.active().size() != rank()) {
      qa_ = gather_rows(qa_, gate_.active());
      pa_ = gather_cols(pa_, gate_.active());
    }
  }
  Var y;
  if (gate_.bypassed()) {
    last_inner_ = rank();
    y = matmul_nt(matmul_nt(x, qa_), pa_);
  } else {
    last_inner_ = gate_.active().size();
    Var h = mul_row(matmul_nt(x, qa_), gate_.active_values());
    y = matmul_nt(h, pa_);
  }
  if (has_bias_) y = add_row(y, g.parameter(bias_));
  return y;
}

std::vector<Parameter*> FactorizedLinear::parameters() {
  std::vector<Parameter*> out{&p_, &q_};
  if (has_bias_) out.push_back(&bias_);
  for (Parameter* gp : gate_.parameters()) out.push_back(gp);
  return out;
}

ParamCounts FactorizedLinear::counts() const {
  ParamCounts c;
  c.total = static_cast<double>(rank() * (in_features() + out_features()) + (has_bias_ ? out_features() : 0));
  c.prunable = gate_.prunable();
  c.kept_expected = gate_.kept_expected();
  c.kept_actual = gate_.kept_actual();
  return c;
}

std::unique_ptr<Projection> FactorizedLinear::compact(KeptValue kept, std::vector<std::string>* warnings) const {
  const DeterministicMask mask = gate_.frozen(kept);
  if (mask.kept.empty()) warn_empty(warnings, name_);
  std::optional<Tensor> bias;
  if (has_bias_) bias = bias_.value();
  // Kept gate values are absorbed into P.
  return std::make_unique<CompactedLinear>(name_, select_columns_scaled(p_.value(), mask.kept, mask.values),
                                           select_rows(q_.value(), mask.kept), std::move(bias));
}

void FactorizedLinear::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.tensor(p_.value());
  w.tensor(q_.value());
  write_optional_bias(w, has_bias_, bias_);
  gate_.save(w);
}

std::unique_ptr<FactorizedLinear> FactorizedLinear::load_body(BinaryReader& r) {
  std::string name = r.str();
  Tensor p = r.tensor();
  Tensor q = r.tensor();
  auto bias = read_optional_bias(r);
  ComponentGate gate = ComponentGate::load(r, name + ".gate");
  return std::make_unique<FactorizedLinear>(std::move(name), std::move(p), std::move(q), std::move(bias),
                                            std::move(gate));
}

// ---------------------------------------------------------------------------

ColumnGatedLinear::ColumnGatedLinear(std::string name, std::size_t in, std::size_t out, GateKind gate,
                                     bool bias, const FactorInit& init, Rng& rng)
    : name_(std::move(name)), has_bias_(bias) {
  if (in == 0 || out == 0) throw DimensionError("column-gated layer needs positive dimensions");
  const double var_w = init.target_variance > 0 ? init.target_variance : 1.0 / (3.0 * static_cast<double>(in));
  w_ = Parameter(name_ + ".W", gaussian(Shape{out, in}, std::sqrt(var_w), rng));
  bias_ = Parameter(name_ + ".bias", Tensor(Shape{out}), bias);
  gate_ = ComponentGate(gate, name_ + ".gate", constant_blocks(in, static_cast<double>(out)), init.hc,
                        init.alpha_init);
  if (init.alpha_jitter > 0 && gate_.hard_concrete()) gate_.hard_concrete()->jitter(rng, init.alpha_jitter);
}

ColumnGatedLinear::ColumnGatedLinear(std::string name, Tensor w, std::optional<Tensor> bias, ComponentGate gate)
    : name_(std::move(name)), has_bias_(bias.has_value()), gate_(std::move(gate)) {
  if (w.rank() != 2) throw DimensionError("column-gated weight must be a matrix");
  check_bias(bias, w.rows());
  if (gate_.kind() != GateKind::none && gate_.size() != w.cols())
    throw DimensionError("gate size does not match input features");
  const std::size_t out = w.rows();
  w_ = Parameter(name_ + ".W", std::move(w));
  bias_ = Parameter(name_ + ".bias", bias ? std::move(*bias) : Tensor(Shape{out}), has_bias_);
  if (gate_.kind() == GateKind::none)
    gate_ = ComponentGate(GateKind::none, name_ + ".gate", std::vector<double>(in_features(), 1.0), {}, 0.0);
}

void ColumnGatedLinear::begin_batch(Graph& g, const MaskContext& ctx) { gate_.begin_batch(g, ctx); }

Var ColumnGatedLinear::forward(Graph& g, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != in_features())
    throw DimensionError(name_ + ": input " + shape_string(x.value().shape()) + " for " +
                         std::to_string(in_features()) + " features");
  gate_.require_batch(g, name_);
  const auto& act = gate_.active();
  const bool all = gate_.bypassed() || act.size() == in_features();
  if (cache_serial_ != g.serial()) {
    cache_serial_ = g.serial();
    wa_ = all ? g.parameter(w_) : gather_cols(g.parameter(w_), act);
  }
  Var y;
  if (gate_.bypassed()) {
    last_inner_ = in_features();
    y = matmul_nt(x, wa_);
  } else {
    last_inner_ = act.size();
    Var xa = mul_row(all ? x : gather_cols(x, act), gate_.active_values());
    y = matmul_nt(xa, wa_);
  }
  if (has_bias_) y = add_row(y, g.parameter(bias_));
  return y;
}

std::vector<Parameter*> ColumnGatedLinear::parameters() {
  std::vector<Parameter*> out{&w_};
  if (has_bias_) out.push_back(&bias_);
  for (Parameter* gp : gate_.parameters()) out.push_back(gp);
  return out;
}

ParamCounts ColumnGatedLinear::counts() const {
  ParamCounts c;
  c.total = static_cast<double>(in_features() * out_features() + (has_bias_ ? out_features() : 0));
  c.prunable = gate_.prunable();
  c.kept_expected = gate_.kept_expected();
  c.kept_actual = gate_.kept_actual();
  return c;
}

std::unique_ptr<Projection> ColumnGatedLinear::compact(KeptValue kept, std::vector<std::string>* warnings) const {
  const DeterministicMask mask = gate_.frozen(kept);
  if (mask.kept.empty()) warn_empty(warnings, name_);
  std::optional<Tensor> bias;
  if (has_bias_) bias = bias_.value();
  return std::make_unique<CompactedLinear>(name_, select_columns_scaled(w_.value(), mask.kept, mask.values),
                                           mask.kept, in_features(), std::move(bias));
}

void ColumnGatedLinear::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.tensor(w_.value());
  write_optional_bias(w, has_bias_, bias_);
  gate_.save(w);
}

std::unique_ptr<ColumnGatedLinear> ColumnGatedLinear::load_body(BinaryReader& r) {
  std::string name = r.str();
  Tensor w = r.tensor();
  auto bias = read_optional_bias(r);
  ComponentGate gate = ComponentGate::load(r, name + ".gate");
  return std::make_unique<ColumnGatedLinear>(std::move(name), std::move(w), std::move(bias), std::move(gate));
}

// ---------------------------------------------------------------------------

CompactedLinear::CompactedLinear(std::string name, Tensor p, Tensor q, std::optional<Tensor> bias)
    : name_(std::move(name)), in_(q.cols()), has_bias_(bias.has_value()) {
  if (p.rank() != 2 || q.rank() != 2 || p.cols() != q.rows())
    throw DimensionError("compacted factor shapes " + shape_string(p.shape()) + " and " +
                         shape_string(q.shape()) + " do not chain");
  check_bias(bias, p.rows());
  const std::size_t out = p.rows();
  p_ = Parameter(name_ + ".P", std::move(p), false);
  q_ = Parameter(name_ + ".Q", std::move(q), false);
  bias_ = Parameter(name_ + ".bias", bias ? std::move(*bias) : Tensor(Shape{out}), false);
}

CompactedLinear::CompactedLinear(std::string name, Tensor p, std::vector<std::size_t> input_columns,
                                 std::size_t in_features, std::optional<Tensor> bias)
    : name_(std::move(name)), in_(in_features), selects_(true), columns_(std::move(input_columns)),
      has_bias_(bias.has_value()) {
  if (p.rank() != 2 || p.cols() != columns_.size())
    throw DimensionError("compacted weight does not match selected columns");
  for (std::size_t c : columns_)
    if (c >= in_) throw DimensionError("selected column out of range");
  check_bias(bias, p.rows());
  const std::size_t out = p.rows();
  p_ = Parameter(name_ + ".P", std::move(p), false);
  bias_ = Parameter(name_ + ".bias", bias ? std::move(*bias) : Tensor(Shape{out}), false);
}

Var CompactedLinear::forward(Graph& g, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != in_)
    throw DimensionError(name_ + ": input " + shape_string(x.value().shape()) + " for " +
                         std::to_string(in_) + " features");
  Var h = selects_ ? gather_cols(x, columns_) : matmul_nt(x, g.parameter(q_));
  Var y = matmul_nt(h, g.parameter(p_));
  if (has_bias_) y = add_row(y, g.parameter(bias_));
  return y;
}

std::vector<Parameter*> CompactedLinear::parameters() {
  std::vector<Parameter*> out{&p_};
  if (!selects_) out.push_back(&q_);
  if (has_bias_) out.push_back(&bias_);
  return out;
}

ParamCounts CompactedLinear::counts() const {
  ParamCounts c;
  const std::size_t k = kept_rank();
  c.total = static_cast<double>(k * out_features() + (selects_ ? 0 : k * in_) + (has_bias_ ? out_features() : 0));
  return c;
}

std::unique_ptr<Projection> CompactedLinear::compact(KeptValue, std::vector<std::string>*) const {
  std::optional<Tensor> bias;
  if (has_bias_) bias = bias_.value();
  if (selects_) return std::make_unique<CompactedLinear>(name_, p_.value(), columns_, in_, std::move(bias));
  return std::make_unique<CompactedLinear>(name_, p_.value(), q_.value(), std::move(bias));
}

void CompactedLinear::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.u64(in_);
  w.u8(selects_ ? 1 : 0);
  w.tensor(p_.value());
  if (selects_) {
    w.u64(columns_.size());
    for (std::size_t c : columns_) w.u64(c);
  } else {
    w.tensor(q_.value());
  }
  write_optional_bias(w, has_bias_, bias_);
}

std::unique_ptr<CompactedLinear> CompactedLinear::load_body(BinaryReader& r) {
  std::string name = r.str();
  const std::size_t in = r.u64();
  const bool selects = r.u8() != 0;
  Tensor p = r.tensor();
  if (selects) {
    const std::size_t n = r.u64();
    if (n != p.cols()) throw FormatError("compacted record: column count mismatch");
    std::vector<std::size_t> cols(n);
    for (auto& c : cols) c = r.u64();
    auto bias = read_optional_bias(r);
    return std::make_unique<CompactedLinear>(std::move(name), std::move(p), std::move(cols), in, std::move(bias));
  }
  Tensor q = r.tensor();
  auto bias = read_optional_bias(r);
  if (q.cols() != in) throw FormatError("compacted record: input width mismatch");
  return std::make_unique<CompactedLinear>(std::move(name), std::move(p), std::move(q), std::move(bias));
}

// ---------------------------------------------------------------------------

DenseLinear::DenseLinear(std::string name, std::size_t in, std::size_t out, bool bias, Rng& rng)
    : name_(std::move(name)), has_bias_(bias) {
  if (in == 0 || out == 0) throw DimensionError("dense layer needs positive dimensions");
  w_ = Parameter(name_ + ".W", gaussian(Shape{out, in}, std::sqrt(1.0 / (3.0 * static_cast<double>(in))), rng));
  bias_ = Parameter(name_ + ".bias", Tensor(Shape{out}), bias);
}

DenseLinear::DenseLinear(std::string name, Tensor w, std::optional<Tensor> bias)
    : name_(std::move(name)), has_bias_(bias.has_value()) {
  if (w.rank() != 2) throw DimensionError("dense weight must be a matrix");
  check_bias(bias, w.rows());
  const std::size_t out = w.rows();
  w_ = Parameter(name_ + ".W", std::move(w));
  bias_ = Parameter(name_ + ".bias", bias ? std::move(*bias) : Tensor(Shape{out}), has_bias_);
}

Var DenseLinear::forward(Graph& g, Var x) {
  Var y = matmul_nt(x, g.parameter(w_));
  if (has_bias_) y = add_row(y, g.parameter(bias_));
  return y;
}

std::vector<Parameter*> DenseLinear::parameters() {
  std::vector<Parameter*> out{&w_};
  if (has_bias_) out.push_back(&bias_);
  return out;
}

ParamCounts DenseLinear::counts() const {
  ParamCounts c;
  c.total = static_cast<double>(in_features() * out_features() + (has_bias_ ? out_features() : 0));
  return c;
}

std::unique_ptr<Projection> DenseLinear::compact(KeptValue, std::vector<std::string>*) const {
  std::optional<Tensor> bias;
  if (has_bias_) bias = bias_.value();
  return std::make_unique<DenseLinear>(name_, w_.value(), std::move(bias));
}

void DenseLinear::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.tensor(w_.value());
  write_optional_bias(w, has_bias_, bias_);
}

std::unique_ptr<DenseLinear> DenseLinear::load_body(BinaryReader& r) {
  std::string name = r.str();
  Tensor w = r.tensor();
  auto bias = read_optional_bias(r);
  return std::make_unique<DenseLinear>(std::move(name), std::move(w), std::move(bias));
}

}  // namespace flop
