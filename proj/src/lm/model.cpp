#include "flop/model.hpp"

#include <cmath>

#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {

std::string to_string(Method m) {
  switch (m) {
    case Method::flop_l0:
      return "flop-l0";
    case Method::flop_agp:
      return "flop-agp";
    case Method::np_l0:
      return "np-l0";
    case Method::fac:
      return "fac";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "flop-l0") return Method::flop_l0;
  if (s == "flop-agp") return Method::flop_agp;
  if (s == "np-l0") return Method::np_l0;
  if (s == "fac") return Method::fac;
  throw FormatError("unknown method '" + s + "' (expected flop-l0, flop-agp, np-l0 or fac)");
}

std::size_t fac_rank(std::size_t full_rank, double prunable_compression, std::vector<std::string>* warnings) {
  const double scaled = static_cast<double>(full_rank) * (1.0 - prunable_compression);
  auto r = static_cast<std::size_t>(std::llround(scaled));
  if (r == 0) {
    if (warnings) warnings->push_back("FAC rank rounded to 0; clamped to 1");
    r = 1;
  }
  return r;
}

namespace {

GateKind gate_for(Method m) {
  switch (m) {
    case Method::flop_l0:
    case Method::np_l0:
      return GateKind::hard_concrete;
    case Method::flop_agp:
      return GateKind::diagonal;
    case Method::fac:
      return GateKind::none;
  }
  return GateKind::none;
}

std::size_t matrix_rank(const ModelConfig& c, std::size_t in, std::size_t out) {
  return c.rank > 0 ? c.rank : starting_rank(out, in);
}

std::unique_ptr<Projection> make_projection(const ModelConfig& c, const std::string& name, std::size_t in,
                                            std::size_t out, bool bias, Rng& rng) {
  const GateKind gate = gate_for(c.method);
  if (c.method == Method::np_l0) return std::make_unique<ColumnGatedLinear>(name, in, out, gate, bias, c.init, rng);
  std::size_t rank = matrix_rank(c, in, out);
  if (c.method == Method::fac) rank = fac_rank(rank, 1.0 - c.fac_keep_ratio);
  return std::make_unique<FactorizedLinear>(name, in, out, rank, gate, bias, c.init, rng);
}

// Parameter count of the architecture before any rank reduction.
double architecture_total(const ModelConfig& c, std::size_t vocab_clusters_total) {
  double total = static_cast<double>(vocab_clusters_total);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t in = l == 0 ? c.embed_dim : c.hidden;
    if (c.method == Method::np_l0) {
      total += static_cast<double>(in * c.hidden + c.hidden * c.hidden);
    } else {
      total += static_cast<double>(matrix_rank(c, in, c.hidden) * (in + c.hidden));
      total += static_cast<double>(matrix_rank(c, c.hidden, c.hidden) * (2 * c.hidden));
    }
    total += static_cast<double>(c.hidden);  // bias
  }
  if (!c.tied) total += static_cast<double>(c.vocab * c.hidden);
  total += static_cast<double>(c.vocab);
  return total;
}

double embedding_total(const ModelConfig& c) {
  if (c.embedding == EmbeddingKind::dense) return static_cast<double>(c.vocab * c.embed_dim);
  double total = 0;
  for (const auto& spec : default_cluster_layout(c.vocab, c.embed_dim, c.cluster_boundaries))
    total += static_cast<double>(spec.dim * (spec.count() + c.embed_dim));
  return total;
}

}  // namespace

RecurrentLM::RecurrentLM(const ModelConfig& config, Rng& rng) : config_(config) {
  if (config_.vocab < 2) throw DimensionError("model vocabulary must have at least 2 ids");
  if (config_.layers == 0 || config_.hidden == 0 || config_.embed_dim == 0)
    throw DimensionError("model dimensions must be positive");
  if (config_.tied && (config_.embedding != EmbeddingKind::dense || config_.embed_dim != config_.hidden))
    throw DimensionError("tied weights need a dense embedding with embed_dim == hidden");

  const GateKind gate = gate_for(config_.method);
  if (config_.embedding == EmbeddingKind::adaptive) {
    auto clusters = default_cluster_layout(config_.vocab, config_.embed_dim, config_.cluster_boundaries);
    if (config_.method == Method::fac)
      for (auto& c : clusters) c.dim = fac_rank(c.dim, 1.0 - config_.fac_keep_ratio);
    embedding_ = std::make_unique<AdaptiveEmbedding>("emb", config_.embed_dim, std::move(clusters), gate,
                                                     config_.init, rng);
  } else {
    embedding_ = std::make_unique<DenseEmbedding>("emb", config_.vocab, config_.embed_dim, rng);
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::size_t in = l == 0 ? config_.embed_dim : config_.hidden;
    Layer layer;
    layer.wx = make_projection(config_, "rnn" + std::to_string(l) + ".wx", in, config_.hidden, true, rng);
    layer.wh = make_projection(config_, "rnn" + std::to_string(l) + ".wh", config_.hidden, config_.hidden, false, rng);
    layers_.push_back(std::move(layer));
  }
  if (!config_.tied) output_ = std::make_unique<DenseLinear>("out", config_.hidden, config_.vocab, true, rng);
  tied_bias_ = Parameter("out.bias", Tensor(Shape{config_.vocab}));
  original_total_ = config_.method == Method::fac ? architecture_total(config_, 0) + embedding_total(config_)
                                                  : counts().total;
}

RecurrentLM::RecurrentLM(ModelConfig config, std::unique_ptr<Embedding> embedding, std::vector<Layer> layers,
                         std::unique_ptr<Projection> output, std::optional<Tensor> tied_bias, double original_total)
    : config_(std::move(config)),
      embedding_(std::move(embedding)),
      layers_(std::move(layers)),
      output_(std::move(output)),
      original_total_(original_total) {
  tied_bias_ = Parameter("out.bias", tied_bias ? std::move(*tied_bias) : Tensor(Shape{config_.vocab}));
  if (!embedding_ || layers_.empty()) throw DimensionError("model needs an embedding and at least one layer");
  if (config_.tied != (output_ == nullptr)) throw DimensionError("tied flag disagrees with output layer");
  if (config_.tied && embedding_->tag() != LayerTag::dense_embedding)
    throw DimensionError("tied weights need a dense embedding");
}

void RecurrentLM::begin_batch(Graph& g, const MaskContext& ctx) {
  embedding_->begin_batch(g, ctx);
  for (auto& layer : layers_) {
    layer.wx->begin_batch(g, ctx);
    layer.wh->begin_batch(g, ctx);
  }
  if (output_) output_->begin_batch(g, ctx);
}

std::vector<Tensor> RecurrentLM::zero_state(std::size_t batch) const {
  return std::vector<Tensor>(layers_.size(), Tensor(Shape{batch, config_.hidden}));
}

RecurrentLM::Output RecurrentLM::forward(Graph& g, std::span<const std::size_t> inputs, std::size_t batch,
                                         const std::vector<Tensor>& initial_hidden) {
  if (batch == 0 || inputs.size() % batch != 0)
    throw DimensionError("input length " + std::to_string(inputs.size()) + " is not a multiple of batch " +
                         std::to_string(batch));
  if (initial_hidden.size() != layers_.size()) throw DimensionError("initial hidden state count mismatch");
  const std::size_t steps = inputs.size() / batch;

  Output out;
  Var layer_in = embedding_->lookup(g, inputs);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Tensor& h0 = initial_hidden[l];
    if (h0.rank() != 2 || h0.rows() != batch || h0.cols() != config_.hidden)
      throw DimensionError("initial hidden state has shape " + shape_string(h0.shape()));
    // Input projections for all time steps in one product.
    Var xproj = layers_[l].wx->forward(g, layer_in);
    Var h = g.constant(h0);
    std::vector<Var> states;
    states.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      h = tanh(add(slice_rows(xproj, t * batch, batch), layers_[l].wh->forward(g, h)));
      states.push_back(h);
    }
    out.final_hidden.push_back(h.value());
    layer_in = concat_rows(states);
  }
  if (output_) {
    out.logits = output_->forward(g, layer_in);
  } else {
    auto& table = static_cast<DenseEmbedding&>(*embedding_).table();
    out.logits = add_row(matmul_nt(layer_in, g.parameter(table)), g.parameter(tied_bias_));
  }
  return out;
}

Var RecurrentLM::expected_size(Graph& g) {
  Var total = g.constant(Tensor::scalar(0.0));
  for (HardConcreteGate* gate : hard_concrete_gates()) total = add(total, gate->expected_l0(g));
  return total;
}

double RecurrentLM::expected_size() const {
  double total = 0.0;
  for (const auto& [name, gate] : named_gates())
    if (gate->hard_concrete()) total += gate->hard_concrete()->expected_l0();
  return total;
}

std::vector<Parameter*> RecurrentLM::parameters() {
  std::vector<Parameter*> out = embedding_->parameters();
  for (auto& layer : layers_) {
    for (Parameter* p : layer.wx->parameters()) out.push_back(p);
    for (Parameter* p : layer.wh->parameters()) out.push_back(p);
  }
  if (output_) {
    for (Parameter* p : output_->parameters()) out.push_back(p);
  } else {
    out.push_back(&tied_bias_);
  }
  return out;
}

std::vector<Parameter*> RecurrentLM::gate_parameters() {
  std::vector<Parameter*> out;
  for (ComponentGate* g : gates())
    for (Parameter* p : g->parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> RecurrentLM::weight_parameters() {
  const auto gp = gate_parameters();
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (std::find(gp.begin(), gp.end(), p) == gp.end()) out.push_back(p);
  return out;
}

std::vector<ComponentGate*> RecurrentLM::gates() {
  std::vector<ComponentGate*> out = embedding_->gates();
  for (auto& layer : layers_) {
    for (ComponentGate* g : layer.wx->gates()) out.push_back(g);
    for (ComponentGate* g : layer.wh->gates()) out.push_back(g);
  }
  std::erase_if(out, [](ComponentGate* g) { return g->kind() == GateKind::none; });
  return out;
}

std::vector<HardConcreteGate*> RecurrentLM::hard_concrete_gates() {
  std::vector<HardConcreteGate*> out;
  for (ComponentGate* g : gates())
    if (g->hard_concrete()) out.push_back(g->hard_concrete());
  return out;
}

std::vector<DiagonalMask*> RecurrentLM::diagonal_masks() {
  std::vector<DiagonalMask*> out;
  for (ComponentGate* g : gates())
    if (g->diagonal()) out.push_back(g->diagonal());
  return out;
}

std::vector<std::pair<std::string, const ComponentGate*>> RecurrentLM::named_gates() const {
  std::vector<std::pair<std::string, const ComponentGate*>> out;
  auto& self = const_cast<RecurrentLM&>(*this);
  const auto emb_gates = self.embedding_->gates();
  for (std::size_t i = 0; i < emb_gates.size(); ++i) out.emplace_back("emb.c" + std::to_string(i), emb_gates[i]);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (ComponentGate* g : self.layers_[l].wx->gates()) out.emplace_back("rnn" + std::to_string(l) + ".wx", g);
    for (ComponentGate* g : self.layers_[l].wh->gates()) out.emplace_back("rnn" + std::to_string(l) + ".wh", g);
  }
  std::erase_if(out, [](const auto& e) { return e.second->kind() == GateKind::none; });
  return out;
}

ParamCounts RecurrentLM::counts() const {
  ParamCounts c = embedding_->counts();
  for (const auto& layer : layers_) {
    c += layer.wx->counts();
    c += layer.wh->counts();
  }
  if (output_) {
    c += output_->counts();
  } else {
    c.total += static_cast<double>(tied_bias_.value().size());
  }
  return c;
}

PruneReport RecurrentLM::report() const {
  PruneReport r;
  const ParamCounts c = counts();
  r.original_total = original_total_;
  r.total = c.total;
  r.prunable = c.prunable;
  r.kept_expected = c.kept_expected;
  r.kept_actual = c.kept_actual;
  for (const auto& [name, gate] : named_gates()) {
    LayerReport lr;
    lr.name = name;
    lr.components = gate->size();
    lr.kept = gate->frozen(KeptValue::rectified_mean).kept.size();
    lr.prunable = gate->prunable();
    lr.kept_expected = gate->kept_expected();
    lr.kept_actual = gate->kept_actual();
    r.layers.push_back(std::move(lr));
  }
  return r;
}

std::unique_ptr<RecurrentLM> RecurrentLM::compact(KeptValue kept, std::vector<std::string>* warnings) const {
  std::vector<Layer> layers;
  for (const auto& layer : layers_) {
    Layer nl;
    nl.wx = layer.wx->compact(kept, warnings);
    nl.wh = layer.wh->compact(kept, warnings);
    layers.push_back(std::move(nl));
  }
  std::unique_ptr<Projection> output = output_ ? output_->compact(kept, warnings) : nullptr;
  ModelConfig config = config_;
  return std::make_unique<RecurrentLM>(config, embedding_->compact(kept, warnings), std::move(layers),
                                       std::move(output), tied_bias_.value(), original_total_);
}

void RecurrentLM::save(BinaryWriter& w) const {
  w.u64(config_.vocab);
  w.u64(config_.embed_dim);
  w.u64(config_.hidden);
  w.u64(config_.layers);
  w.u64(config_.rank);
  w.u8(static_cast<std::uint8_t>(config_.embedding));
  w.doubles(config_.cluster_boundaries);
  w.u8(config_.tied ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(config_.method));
  w.f64(config_.fac_keep_ratio);
  w.f64(config_.init.target_variance);
  w.f64(config_.init.alpha_init);
  w.f64(config_.init.alpha_jitter);
  w.f64(config_.init.hc.l);
  w.f64(config_.init.hc.r);
  w.f64(config_.init.hc.beta);
  w.f64(original_total_);

  embedding_->save(w);
  w.u64(layers_.size());
  for (const auto& layer : layers_) {
    layer.wx->save(w);
    layer.wh->save(w);
  }
  w.u8(output_ ? 1 : 0);
  if (output_) {
    output_->save(w);
  } else {
    w.tensor(tied_bias_.value());
  }
}

std::unique_ptr<RecurrentLM> RecurrentLM::load(BinaryReader& r) {
  ModelConfig c;
  c.vocab = r.u64();
  c.embed_dim = r.u64();
  c.hidden = r.u64();
  c.layers = r.u64();
  c.rank = r.u64();
  c.embedding = static_cast<EmbeddingKind>(r.u8());
  c.cluster_boundaries = r.doubles();
  c.tied = r.u8() != 0;
  const auto method = r.u8();
  if (method > static_cast<std::uint8_t>(Method::fac)) throw FormatError("unknown method tag in checkpoint");
  c.method = static_cast<Method>(method);
  c.fac_keep_ratio = r.f64();
  c.init.target_variance = r.f64();
  c.init.alpha_init = r.f64();
  c.init.alpha_jitter = r.f64();
  c.init.hc.l = r.f64();
  c.init.hc.r = r.f64();
  c.init.hc.beta = r.f64();
  const double original_total = r.f64();

  auto embedding = Embedding::load(r);
  const std::size_t n = r.u64();
  if (n != c.layers) throw FormatError("checkpoint layer count disagrees with its config");
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n; ++i) {
    Layer layer;
    layer.wx = Projection::load(r);
    layer.wh = Projection::load(r);
    layers.push_back(std::move(layer));
  }
  std::unique_ptr<Projection> output;
  std::optional<Tensor> tied_bias;
  if (r.u8() != 0) {
    output = Projection::load(r);
  } else {
    tied_bias = r.tensor();
  }
  return std::make_unique<RecurrentLM>(std::move(c), std::move(embedding), std::move(layers), std::move(output),
                                       std::move(tied_bias), original_total);
}

}  // namespace flop
