#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flop/binary_io.hpp"
#include "flop/controller.hpp"
#include "flop/embedding.hpp"
#include "flop/layers.hpp"

namespace flop {

enum class Method {
  flop_l0,   // factorized, Hard Concrete gates, Lagrangian size control
  flop_agp,  // factorized, diagonal masks pruned by magnitude
  np_l0,     // unfactorized, Hard Concrete gates on input columns
  fac,       // factorized at a fixed reduced rank, no gates
};

std::string to_string(Method m);
Method parse_method(const std::string& s);

enum class EmbeddingKind { adaptive, dense };

struct ModelConfig {
  std::size_t vocab = 0;  // output width, unknown id included
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  /// Factorization rank for every recurrent matrix; 0 uses starting_rank.
  std::size_t rank = 0;
  EmbeddingKind embedding = EmbeddingKind::adaptive;
  std::vector<double> cluster_boundaries{0.2, 0.5};
  /// Share the output matrix with a dense embedding (needs embed_dim == hidden).
  bool tied = false;
  Method method = Method::flop_l0;
  /// FAC only: fraction of each rank / cluster dimension kept.
  double fac_keep_ratio = 1.0;
  FactorInit init{};
};

/// Elman-style character LM: h_t = tanh(Wx x_t + Wh h_{t-1} + b) per layer,
/// logits = h_top Vout^T + c. Wx and Wh are the pruned matrices.
class RecurrentLM {
 public:
  struct Layer {
    std::unique_ptr<Projection> wx;  // carries the bias
    std::unique_ptr<Projection> wh;
  };

  struct Output {
    Var logits;                     // [T*B x vocab], time-major rows
    std::vector<Tensor> final_hidden;  // one [B x hidden] per layer
  };

  RecurrentLM(const ModelConfig& config, Rng& rng);
  RecurrentLM(ModelConfig config, std::unique_ptr<Embedding> embedding, std::vector<Layer> layers,
              std::unique_ptr<Projection> output, std::optional<Tensor> tied_bias, double original_total);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab() const { return config_.vocab; }
  std::size_t hidden() const { return config_.hidden; }
  std::size_t num_layers() const { return layers_.size(); }

  /// Resolves every gate for one batch; must precede forward() on a graph.
  void begin_batch(Graph& g, const MaskContext& ctx);
  /// inputs holds T*B ids, time-major (row t*B + b).
  Output forward(Graph& g, std::span<const std::size_t> inputs, std::size_t batch,
                 const std::vector<Tensor>& initial_hidden);
  std::vector<Tensor> zero_state(std::size_t batch) const;

  /// Sum of expected L0 over all Hard Concrete gates (0 when there are none).
  Var expected_size(Graph& g);
  double expected_size() const;

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> weight_parameters();
  std::vector<Parameter*> gate_parameters();
  std::vector<ComponentGate*> gates();
  std::vector<HardConcreteGate*> hard_concrete_gates();
  std::vector<DiagonalMask*> diagonal_masks();
  /// Gates labelled by the layer they prune.
  std::vector<std::pair<std::string, const ComponentGate*>> named_gates() const;

  Embedding& embedding() { return *embedding_; }
  const Embedding& embedding() const { return *embedding_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Projection* output() { return output_.get(); }

  ParamCounts counts() const;
  /// Reference size compression is measured against (size at construction,
  /// or the unreduced architecture for FAC).
  double original_total() const { return original_total_; }
  void set_original_total(double v) { original_total_ = v; }
  PruneReport report() const;

  /// Frozen copy with every gated layer replaced by its compaction.
  std::unique_ptr<RecurrentLM> compact(KeptValue kept = KeptValue::rectified_mean,
                                       std::vector<std::string>* warnings = nullptr) const;

  void save(BinaryWriter& w) const;
  static std::unique_ptr<RecurrentLM> load(BinaryReader& r);

 private:
  ModelConfig config_;
  std::unique_ptr<Embedding> embedding_;
  std::vector<Layer> layers_;
  std::unique_ptr<Projection> output_;  // null when tied
  Parameter tied_bias_;
  double original_total_ = 0.0;
};

/// Rank of each factorized matrix for a FAC model of the given prunable
/// compression: round(r * (1 - c)), clamped to >= 1 (with a warning).
std::size_t fac_rank(std::size_t full_rank, double prunable_compression, std::vector<std::string>* warnings = nullptr);

}  // namespace flop
