#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flop/binary_io.hpp"
#include "flop/graph.hpp"
#include "flop/hard_concrete.hpp"
#include "flop/rng.hpp"

namespace flop {

enum class GateKind : std::uint8_t {
  none = 0,           // plain factors (FAC baseline, compacted layers)
  hard_concrete = 1,  // stochastic L0 gates
  diagonal = 2,       // learnable diagonal mask pruned by magnitude (AGP)
};

enum class GateMode {
  open,           // gates bypassed entirely (warmup)
  sample,         // one stochastic mask per batch
  deterministic,  // frozen inference mask
};

/// How the gates of a layer are resolved for one batch.
struct MaskContext {
  GateMode mode = GateMode::open;
  Rng* rng = nullptr;
  /// Optional injected noise; when set it replaces `rng` (gradient checks).
  std::function<std::vector<double>(std::size_t n)> uniforms;
  KeptValue kept_value = KeptValue::rectified_mean;
};

/// Learnable diagonal mask with hard-pruned entries (FLOP-AGP).
class DiagonalMask {
 public:
  DiagonalMask() = default;
  DiagonalMask(std::string name, std::vector<double> block_sizes);

  std::size_t size() const { return block_sizes_.size(); }
  Parameter& values() { return values_; }
  const Parameter& values() const { return values_; }
  const std::vector<double>& block_sizes() const { return block_sizes_; }
  const std::vector<std::uint8_t>& pruned() const { return pruned_; }
  void prune(std::size_t index);
  bool is_pruned(std::size_t index) const { return pruned_[index] != 0; }
  std::size_t kept_count() const;

  /// values * keep, differentiable w.r.t. values.
  Var mask(Graph& g);
  /// values with pruned entries zeroed.
  std::vector<double> frozen() const;

  void save(BinaryWriter& w) const;
  static DiagonalMask load(BinaryReader& r, std::string name);

 private:
  std::vector<double> block_sizes_;
  Parameter values_;
  std::vector<std::uint8_t> pruned_;
};

/// Gate over the r components of one factorization, plus the per-batch mask
/// it resolved to. Components whose mask value is exactly zero are left out
/// of `active`, so downstream matmuls only touch live components.
class ComponentGate {
 public:
  ComponentGate() = default;
  ComponentGate(GateKind kind, std::string name, std::vector<double> block_sizes,
                const HardConcreteParams& hc, double alpha_init);

  GateKind kind() const { return kind_; }
  std::size_t size() const { return size_; }
  HardConcreteGate* hard_concrete() { return hc_ ? &*hc_ : nullptr; }
  const HardConcreteGate* hard_concrete() const { return hc_ ? &*hc_ : nullptr; }
  DiagonalMask* diagonal() { return diag_ ? &*diag_ : nullptr; }
  const DiagonalMask* diagonal() const { return diag_ ? &*diag_ : nullptr; }
  std::vector<Parameter*> parameters();

  /// Resolves the mask for this batch. Called once per batch per gate.
  void begin_batch(Graph& g, const MaskContext& ctx);

  /// True when no mask is applied (open mode or ungated).
  bool bypassed() const { return !masked_; }
  const std::vector<std::size_t>& active() const { return active_; }
  /// Mask values restricted to active components; only valid when !bypassed().
  Var active_values() const { return active_values_; }
  /// Full mask vector of the batch (invalid when bypassed).
  Var mask() const { return mask_; }
  std::size_t samples_drawn() const { return samples_drawn_; }
  /// Serial of the graph the current mask was resolved on.
  std::uint64_t batch_serial() const { return batch_serial_; }
  /// Throws unless begin_batch() ran on this graph.
  void require_batch(const Graph& g, const std::string& layer) const;

  /// Frozen selection used for compaction: kept indices and their values.
  DeterministicMask frozen(KeptValue kept) const;

  double prunable() const;
  double kept_expected() const;
  double kept_actual() const;

  void save(BinaryWriter& w) const;
  static ComponentGate load(BinaryReader& r, std::string name);

 private:
  GateKind kind_ = GateKind::none;
  std::size_t size_ = 0;
  std::optional<HardConcreteGate> hc_;
  std::optional<DiagonalMask> diag_;

  bool masked_ = false;
  std::vector<std::size_t> active_;
  Var mask_;
  Var active_values_;
  std::size_t samples_drawn_ = 0;
  std::uint64_t batch_serial_ = 0;
};

/// Parameter accounting. `prunable` counts weights covered by gates;
/// kept_expected uses open probabilities, kept_actual the frozen masks.
struct ParamCounts {
  double total = 0;
  double prunable = 0;
  double kept_expected = 0;
  double kept_actual = 0;

  double total_kept_actual() const { return total - prunable + kept_actual; }
  double total_kept_expected() const { return total - prunable + kept_expected; }
  ParamCounts& operator+=(const ParamCounts& o);
};

enum class LayerTag : std::uint32_t {
  factorized = 1,
  column_gated = 2,
  compacted = 3,
  adaptive_embedding = 4,
  dense_embedding = 5,
  dense = 6,
};

struct FactorInit {
  /// Variance of the unfactorized weight the factors should reproduce;
  /// <= 0 selects 1 / (3 * in_features), the uniform(+-1/sqrt(in)) variance.
  double target_variance = 0.0;
  double alpha_init = 2.2;
  double alpha_jitter = 0.0;
  HardConcreteParams hc{};
};

/// Linear map [batch x in] -> [batch x out].
class Projection {
 public:
  virtual ~Projection() = default;

  virtual LayerTag tag() const = 0;
  virtual std::size_t in_features() const = 0;
  virtual std::size_t out_features() const = 0;
  virtual void begin_batch(Graph& g, const MaskContext& ctx) = 0;
  virtual Var forward(Graph& g, Var x) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<ComponentGate*> gates() = 0;
  virtual ParamCounts counts() const = 0;
  /// Frozen, gate-free copy. Layers with nothing kept degrade to bias-only
  /// and append a warning.
  virtual std::unique_ptr<Projection> compact(KeptValue kept,
                                              std::vector<std::string>* warnings) const = 0;
  virtual void save(BinaryWriter& w) const = 0;
  /// Inner dimension of the last executed product (number of live components).
  virtual std::size_t last_inner_dim() const = 0;

  static std::unique_ptr<Projection> load(BinaryReader& r);
};

/// floor(d1 * d2 / (d1 + d2)), at least 1: the rank at which a factorization
/// has no more parameters than the dense matrix it replaces.
std::size_t starting_rank(std::size_t d1, std::size_t d2);

/// W = P diag(z) Q with P [out x rank], Q [rank x in]; each rank-1 component
/// p_k q_k is one gated block of out + in parameters.
class FactorizedLinear : public Projection {
 public:
  FactorizedLinear(std::string name, std::size_t in, std::size_t out, std::size_t rank,
                   GateKind gate, bool bias, const FactorInit& init, Rng& rng);
  FactorizedLinear(std::string name, Tensor p, Tensor q, std::optional<Tensor> bias, ComponentGate gate);

  LayerTag tag() const override { return LayerTag::factorized; }
  std::size_t in_features() const override { return q_.value().cols(); }
  std::size_t out_features() const override { return p_.value().rows(); }
  std::size_t rank() const { return p_.value().cols(); }
  void begin_batch(Graph& g, const MaskContext& ctx) override;
  Var forward(Graph& g, Var x) override;
  std::vector<Parameter*> parameters() override;
  std::vector<ComponentGate*> gates() override { return {&gate_}; }
  ParamCounts counts() const override;
  std::unique_ptr<Projection> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;
  std::size_t last_inner_dim() const override { return last_inner_; }

  Parameter& p() { return p_; }
  Parameter& q() { return q_; }
  Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }
  const Parameter& p() const { return p_; }
  const Parameter& q() const { return q_; }
  const Parameter* bias() const { return has_bias_ ? &bias_ : nullptr; }
  ComponentGate& gate() { return gate_; }
  const ComponentGate& gate() const { return gate_; }

  static std::unique_ptr<FactorizedLinear> load_body(BinaryReader& r);

 private:
  std::string name_;
  Parameter p_;
  Parameter q_;
  Parameter bias_;
  bool has_bias_ = false;
  ComponentGate gate_;
  std::size_t last_inner_ = 0;
  // Active-factor slices, reused across time steps of one batch.
  std::uint64_t cache_serial_ = 0;
  Var qa_;
  Var pa_;
};

/// y = (x * z) W^T: gates input features (columns of W) directly. Each gated
/// column is a block of `out` parameters.
class ColumnGatedLinear : public Projection {
 public:
  ColumnGatedLinear(std::string name, std::size_t in, std::size_t out, GateKind gate, bool bias,
                    const FactorInit& init, Rng& rng);
  ColumnGatedLinear(std::string name, Tensor w, std::optional<Tensor> bias, ComponentGate gate);

  LayerTag tag() const override { return LayerTag::column_gated; }
  std::size_t in_features() const override { return w_.value().cols(); }
  std::size_t out_features() const override { return w_.value().rows(); }
  void begin_batch(Graph& g, const MaskContext& ctx) override;
  Var forward(Graph& g, Var x) override;
  std::vector<Parameter*> parameters() override;
  std::vector<ComponentGate*> gates() override { return {&gate_}; }
  ParamCounts counts() const override;
  std::unique_ptr<Projection> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;
  std::size_t last_inner_dim() const override { return last_inner_; }

  Parameter& w() { return w_; }
  Parameter* bias() { return has_bias_ ? &bias_ : nullptr; }
  ComponentGate& gate() { return gate_; }
  const ComponentGate& gate() const { return gate_; }

  static std::unique_ptr<ColumnGatedLinear> load_body(BinaryReader& r);

 private:
  std::string name_;
  Parameter w_;
  Parameter bias_;
  bool has_bias_ = false;
  ComponentGate gate_;
  std::size_t last_inner_ = 0;
  std::uint64_t cache_serial_ = 0;
  Var wa_;
};

/// Frozen result of compaction: y = P' (Q' x) + b, or y = P' x[kept] + b when
/// the source gated input columns (Q' is then an implicit selection).
class CompactedLinear : public Projection {
 public:
  CompactedLinear(std::string name, Tensor p, Tensor q, std::optional<Tensor> bias);
  CompactedLinear(std::string name, Tensor p, std::vector<std::size_t> input_columns,
                  std::size_t in_features, std::optional<Tensor> bias);

  LayerTag tag() const override { return LayerTag::compacted; }
  std::size_t in_features() const override { return in_; }
  std::size_t out_features() const override { return p_.value().rows(); }
  std::size_t kept_rank() const { return p_.value().cols(); }
  bool selects_columns() const { return selects_; }
  void begin_batch(Graph&, const MaskContext&) override {}
  Var forward(Graph& g, Var x) override;
  std::vector<Parameter*> parameters() override;
  std::vector<ComponentGate*> gates() override { return {}; }
  ParamCounts counts() const override;
  std::unique_ptr<Projection> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;
  std::size_t last_inner_dim() const override { return kept_rank(); }

  const Parameter& p() const { return p_; }
  const Parameter& q() const { return q_; }
  const Parameter* bias() const { return has_bias_ ? &bias_ : nullptr; }
  const std::vector<std::size_t>& input_columns() const { return columns_; }

  static std::unique_ptr<CompactedLinear> load_body(BinaryReader& r);

 private:
  std::string name_;
  std::size_t in_ = 0;
  Parameter p_;
  Parameter q_;
  bool selects_ = false;
  std::vector<std::size_t> columns_;
  Parameter bias_;
  bool has_bias_ = false;
};

/// Ungated dense linear map y = x W^T + b (output projection).
class DenseLinear : public Projection {
 public:
  DenseLinear(std::string name, std::size_t in, std::size_t out, bool bias, Rng& rng);
  DenseLinear(std::string name, Tensor w, std::optional<Tensor> bias);

  LayerTag tag() const override { return LayerTag::dense; }
  std::size_t in_features() const override { return w_.value().cols(); }
  std::size_t out_features() const override { return w_.value().rows(); }
  void begin_batch(Graph&, const MaskContext&) override {}
  Var forward(Graph& g, Var x) override;
  std::vector<Parameter*> parameters() override;
  std::vector<ComponentGate*> gates() override { return {}; }
  ParamCounts counts() const override;
  std::unique_ptr<Projection> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;
  std::size_t last_inner_dim() const override { return in_features(); }

  Parameter& w() { return w_; }

  static std::unique_ptr<DenseLinear> load_body(BinaryReader& r);

 private:
  std::string name_;
  Parameter w_;
  Parameter bias_;
  bool has_bias_ = false;
};

}  // namespace flop
