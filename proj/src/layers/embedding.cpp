#include "flop/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {
namespace {

Tensor gaussian(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = sigma * rng.normal();
  return t;
}

}  // namespace

std::vector<ClusterSpec> default_cluster_layout(std::size_t vocab, std::size_t dim,
                                                std::vector<double> boundaries) {
  if (vocab == 0 || dim == 0) throw DimensionError("cluster layout needs a non-empty vocabulary");
  std::vector<ClusterSpec> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= boundaries.size(); ++i) {
    std::size_t end = vocab;
    if (i < boundaries.size())
      end = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(boundaries[i] * static_cast<double>(vocab))),
                                    begin + 1, vocab);
    if (end <= begin) break;
    out.push_back({begin, end, std::max<std::size_t>(1, dim >> i)});
    begin = end;
  }
  if (begin < vocab) out.back().end = vocab;
  return out;
}

std::unique_ptr<Embedding> Embedding::load(BinaryReader& r) {
  const auto tag = static_cast<LayerTag>(r.u32());
  switch (tag) {
    case LayerTag::adaptive_embedding:
      return AdaptiveEmbedding::load_body(r);
    case LayerTag::dense_embedding:
      return DenseEmbedding::load_body(r);
    default:
      throw FormatError("unknown embedding tag " + std::to_string(static_cast<std::uint32_t>(tag)));
  }
}

AdaptiveEmbedding::AdaptiveEmbedding(std::string name, std::size_t dim, std::vector<ClusterSpec> clusters,
                                     GateKind gate, const FactorInit& init, Rng& rng)
    : name_(std::move(name)), dim_(dim) {
  std::size_t expect = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const ClusterSpec& spec = clusters[i];
    if (spec.begin != expect || spec.end <= spec.begin)
      throw DimensionError("cluster boundaries must partition the vocabulary");
    expect = spec.end;
    const std::string cname = name_ + ".c" + std::to_string(i);
    Cluster c;
    c.spec = spec;
    // (E O) entries start with unit variance.
    c.e = Parameter(cname + ".E", gaussian(Shape{spec.count(), spec.dim}, 1.0, rng));
    c.o = Parameter(cname + ".O",
                    gaussian(Shape{spec.dim, dim_}, 1.0 / std::sqrt(static_cast<double>(spec.dim)), rng));
    c.gate = ComponentGate(gate, cname + ".gate",
                           std::vector<double>(spec.dim, static_cast<double>(spec.count() + dim_)), init.hc,
                           init.alpha_init);
    if (init.alpha_jitter > 0 && c.gate.hard_concrete()) c.gate.hard_concrete()->jitter(rng, init.alpha_jitter);
    clusters_.push_back(std::move(c));
  }
  if (clusters_.empty()) throw DimensionError("adaptive embedding needs at least one cluster");
}

AdaptiveEmbedding::AdaptiveEmbedding(std::string name, std::size_t dim, std::vector<Cluster> clusters)
    : name_(std::move(name)), dim_(dim), clusters_(std::move(clusters)) {
  std::size_t expect = 0;
  for (auto& c : clusters_) {
    if (c.spec.begin != expect || c.spec.end <= c.spec.begin)
      throw DimensionError("cluster boundaries must partition the vocabulary");
    expect = c.spec.end;
    if (c.e.value().rows() != c.spec.count() || c.e.value().cols() != c.spec.dim ||
        c.o.value().rows() != c.spec.dim || c.o.value().cols() != dim_)
      throw DimensionError("cluster factor shapes disagree with the cluster spec");
    if (c.gate.kind() == GateKind::none && c.gate.size() != c.spec.dim)
      c.gate = ComponentGate(GateKind::none, name_ + ".gate", std::vector<double>(c.spec.dim, 1.0), {}, 0.0);
  }
  if (clusters_.empty()) throw DimensionError("adaptive embedding needs at least one cluster");
}

std::size_t AdaptiveEmbedding::cluster_of(std::size_t id) const {
  for (std::size_t i = 0; i < clusters_.size(); ++i)
    if (id < clusters_[i].spec.end) return i;
  throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab_size()));
}

void AdaptiveEmbedding::begin_batch(Graph& g, const MaskContext& ctx) {
  for (auto& c : clusters_) c.gate.begin_batch(g, ctx);
}

Var AdaptiveEmbedding::lookup(Graph& g, std::span<const std::size_t> ids) {
  std::vector<std::vector<std::size_t>> positions(clusters_.size());
  std::vector<std::vector<std::size_t>> local(clusters_.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t c = cluster_of(ids[i]);
    positions[c].push_back(i);
    local[c].push_back(ids[i] - clusters_[c].spec.begin);
  }
  std::vector<Var> parts;
  std::vector<std::vector<std::size_t>> used_positions;
  for (std::size_t c = 0; c < clusters_.size(); ++c) {
    if (positions[c].empty()) continue;
    Cluster& cl = clusters_[c];
    cl.gate.require_batch(g, name_);
    Var rows = gather_rows(g.parameter(cl.e), local[c]);
    Var o = g.parameter(cl.o);
    if (!cl.gate.bypassed()) {
      const auto& act = cl.gate.active();
      if (act.size() != cl.spec.dim) {
        rows = gather_cols(rows, act);
        o = gather_rows(o, act);
      }
      rows = mul_row(rows, cl.gate.active_values());
    }
    parts.push_back(matmul(rows, o));
    used_positions.push_back(std::move(positions[c]));
  }
  if (parts.empty()) throw DimensionError("embedding lookup of an empty id list");
  return assemble_rows(parts, used_positions, ids.size(), dim_);
}

std::vector<Parameter*> AdaptiveEmbedding::parameters() {
  std::vector<Parameter*> out;
  for (auto& c : clusters_) {
    out.push_back(&c.e);
    out.push_back(&c.o);
    for (Parameter* gp : c.gate.parameters()) out.push_back(gp);
  }
  return out;
}

std::vector<ComponentGate*> AdaptiveEmbedding::gates() {
  std::vector<ComponentGate*> out;
  for (auto& c : clusters_) out.push_back(&c.gate);
  return out;
}

ParamCounts AdaptiveEmbedding::counts() const {
  ParamCounts total;
  for (const auto& c : clusters_) {
    ParamCounts part;
    part.total = static_cast<double>(c.spec.dim * (c.spec.count() + dim_));
    part.prunable = c.gate.prunable();
    part.kept_expected = c.gate.kept_expected();
    part.kept_actual = c.gate.kept_actual();
    total += part;
  }
  return total;
}

std::unique_ptr<Embedding> AdaptiveEmbedding::compact(KeptValue kept, std::vector<std::string>* warnings) const {
  std::vector<Cluster> out;
  for (std::size_t ci = 0; ci < clusters_.size(); ++ci) {
    const Cluster& c = clusters_[ci];
    const DeterministicMask mask = c.gate.frozen(kept);
    const std::size_t k = mask.kept.size();
    if (k == 0 && warnings)
      warnings->push_back(name_ + ".c" + std::to_string(ci) + ": all dimensions pruned; cluster maps to zero");
    Tensor e(Shape{c.spec.count(), k});
    Tensor o(Shape{k, dim_});
    for (std::size_t i = 0; i < c.spec.count(); ++i)
      for (std::size_t j = 0; j < k; ++j) e[i * k + j] = c.e.value().at(i, mask.kept[j]) * mask.values[mask.kept[j]];
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < dim_; ++d) o[j * dim_ + d] = c.o.value().at(mask.kept[j], d);
    Cluster nc;
    nc.spec = {c.spec.begin, c.spec.end, k};
    const std::string cname = name_ + ".c" + std::to_string(ci);
    nc.e = Parameter(cname + ".E", std::move(e), false);
    nc.o = Parameter(cname + ".O", std::move(o), false);
    nc.gate = ComponentGate(GateKind::none, cname + ".gate", std::vector<double>(k, 1.0), {}, 0.0);
    out.push_back(std::move(nc));
  }
  return std::make_unique<AdaptiveEmbedding>(name_, dim_, std::move(out));
}

void AdaptiveEmbedding::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.u64(dim_);
  w.u64(clusters_.size());
  for (const auto& c : clusters_) {
    w.u64(c.spec.begin);
    w.u64(c.spec.end);
    w.u64(c.spec.dim);
    w.tensor(c.e.value());
    w.tensor(c.o.value());
    c.gate.save(w);
  }
}

std::unique_ptr<AdaptiveEmbedding> AdaptiveEmbedding::load_body(BinaryReader& r) {
  std::string name = r.str();
  const std::size_t dim = r.u64();
  const std::size_t n = r.u64();
  if (n > 1024) throw FormatError("implausible cluster count");
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < n; ++i) {
    Cluster c;
    c.spec.begin = r.u64();
    c.spec.end = r.u64();
    c.spec.dim = r.u64();
    const std::string cname = name + ".c" + std::to_string(i);
    c.e = Parameter(cname + ".E", r.tensor());
    c.o = Parameter(cname + ".O", r.tensor());
    c.gate = ComponentGate::load(r, cname + ".gate");
    clusters.push_back(std::move(c));
  }
  return std::make_unique<AdaptiveEmbedding>(std::move(name), dim, std::move(clusters));
}

DenseEmbedding::DenseEmbedding(std::string name, std::size_t vocab, std::size_t dim, Rng& rng)
    : name_(std::move(name)), table_(name_ + ".table", gaussian(Shape{vocab, dim}, 1.0, rng)) {}

DenseEmbedding::DenseEmbedding(std::string name, Tensor table)
    : name_(std::move(name)), table_(name_ + ".table", std::move(table)) {
  if (table_.value().rank() != 2) throw DimensionError("embedding table must be a matrix");
}

Var DenseEmbedding::lookup(Graph& g, std::span<const std::size_t> ids) {
  for (std::size_t id : ids)
    if (id >= vocab_size())
      throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(vocab_size()));
  return gather_rows(g.parameter(table_), ids);
}

ParamCounts DenseEmbedding::counts() const {
  ParamCounts c;
  c.total = static_cast<double>(table_.value().size());
  return c;
}

std::unique_ptr<Embedding> DenseEmbedding::compact(KeptValue, std::vector<std::string>*) const {
  return std::make_unique<DenseEmbedding>(name_, table_.value());
}

void DenseEmbedding::save(BinaryWriter& w) const {
  w.u32(static_cast<std::uint32_t>(tag()));
  w.str(name_);
  w.tensor(table_.value());
}

std::unique_ptr<DenseEmbedding> DenseEmbedding::load_body(BinaryReader& r) {
  std::string name = r.str();
  return std::make_unique<DenseEmbedding>(std::move(name), r.tensor());
}

}  // namespace flop
