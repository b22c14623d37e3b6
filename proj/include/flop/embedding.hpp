#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "flop/layers.hpp"

namespace flop {

/// Contiguous token-id range [begin, end) with its reduced dimension.
struct ClusterSpec {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t dim = 0;
  std::size_t count() const { return end - begin; }
};

/// Splits ids (assumed sorted by descending frequency) at the given
/// cumulative fractions; cluster i gets dimension max(1, dim >> i).
std::vector<ClusterSpec> default_cluster_layout(std::size_t vocab, std::size_t dim,
                                                std::vector<double> boundaries = {0.2, 0.5});

/// Token-id -> vector map [len] -> [len x dim].
class Embedding {
 public:
  virtual ~Embedding() = default;

  virtual LayerTag tag() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual void begin_batch(Graph& g, const MaskContext& ctx) = 0;
  virtual Var lookup(Graph& g, std::span<const std::size_t> ids) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
  virtual std::vector<ComponentGate*> gates() = 0;
  virtual ParamCounts counts() const = 0;
  virtual std::unique_ptr<Embedding> compact(KeptValue kept, std::vector<std::string>* warnings) const = 0;
  virtual void save(BinaryWriter& w) const = 0;

  static std::unique_ptr<Embedding> load(BinaryReader& r);
};

/// Clustered embedding: token w of cluster i maps to (E_i[w] * z_i) O_i with
/// E_i [n_i x d_i], O_i [d_i x d] and one gate per reduced dimension. A
/// gated dimension costs n_i + d parameters (a column of E_i and a row of O_i).
class AdaptiveEmbedding : public Embedding {
 public:
  struct Cluster {
    ClusterSpec spec;
    Parameter e;
    Parameter o;
    ComponentGate gate;
  };

  AdaptiveEmbedding(std::string name, std::size_t dim, std::vector<ClusterSpec> clusters,
                    GateKind gate, const FactorInit& init, Rng& rng);
  AdaptiveEmbedding(std::string name, std::size_t dim, std::vector<Cluster> clusters);

  LayerTag tag() const override { return LayerTag::adaptive_embedding; }
  std::size_t vocab_size() const override { return clusters_.empty() ? 0 : clusters_.back().spec.end; }
  std::size_t dim() const override { return dim_; }
  void begin_batch(Graph& g, const MaskContext& ctx) override;
  Var lookup(Graph& g, std::span<const std::size_t> ids) override;
  std::vector<Parameter*> parameters() override;
  std::vector<ComponentGate*> gates() override;
  ParamCounts counts() const override;
  std::unique_ptr<Embedding> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;

  std::vector<Cluster>& clusters() { return clusters_; }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  /// Cluster index of a token id.
  std::size_t cluster_of(std::size_t id) const;

  static std::unique_ptr<AdaptiveEmbedding> load_body(BinaryReader& r);

 private:
  std::string name_;
  std::size_t dim_ = 0;
  std::vector<Cluster> clusters_;
};

/// Plain lookup table [vocab x dim], ungated.
class DenseEmbedding : public Embedding {
 public:
  DenseEmbedding(std::string name, std::size_t vocab, std::size_t dim, Rng& rng);
  DenseEmbedding(std::string name, Tensor table);

  LayerTag tag() const override { return LayerTag::dense_embedding; }
  std::size_t vocab_size() const override { return table_.value().rows(); }
  std::size_t dim() const override { return table_.value().cols(); }
  void begin_batch(Graph&, const MaskContext&) override {}
  Var lookup(Graph& g, std::span<const std::size_t> ids) override;
  std::vector<Parameter*> parameters() override { return {&table_}; }
  std::vector<ComponentGate*> gates() override { return {}; }
  ParamCounts counts() const override;
  std::unique_ptr<Embedding> compact(KeptValue kept, std::vector<std::string>* warnings) const override;
  void save(BinaryWriter& w) const override;

  Parameter& table() { return table_; }

  static std::unique_ptr<DenseEmbedding> load_body(BinaryReader& r);

 private:
  std::string name_;
  Parameter table_;
};

}  // namespace flop
