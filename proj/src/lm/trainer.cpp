#include "flop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flop/errors.hpp"
#include "flop/ops.hpp"

namespace flop {

namespace {

void write_state(BinaryWriter& w, const OptimizerState& s) {
  w.u64(s.step);
  w.u64(s.first.size());
  for (const auto& v : s.first) w.doubles(v);
  w.u64(s.second.size());
  for (const auto& v : s.second) w.doubles(v);
}

OptimizerState read_state(BinaryReader& r) {
  OptimizerState s;
  s.step = r.u64();
  s.first.resize(r.u64());
  for (auto& v : s.first) v = r.doubles();
  s.second.resize(r.u64());
  for (auto& v : s.second) v = r.doubles();
  return s;
}

// Hidden states are stored at full precision so a resumed run is bit-exact.
void write_exact(BinaryWriter& w, const Tensor& t) {
  w.u64(t.rank());
  for (std::size_t d : t.shape()) w.u64(d);
  w.doubles(t.storage());
}

Tensor read_exact(BinaryReader& r) {
  Shape shape(r.u64());
  if (shape.size() > 8) throw FormatError("hidden state rank too large");
  for (auto& d : shape) d = r.u64();
  auto data = r.doubles();
  if (data.size() != shape_size(shape)) throw FormatError("hidden state size disagrees with its shape");
  return Tensor(shape, std::move(data));
}

}  // namespace

void TrainState::save(BinaryWriter& w) const {
  w.u64(step);
  w.u64(epoch);
  w.u64(cursor);
  write_state(w, weights);
  write_state(w, gates);
  w.f64(controller.lambda1);
  w.f64(controller.lambda2);
  w.u64(controller.step);
  w.str(rng);
  w.u64(hidden.size());
  for (const auto& h : hidden) write_exact(w, h);
  w.u8(has_best_valid ? 1 : 0);
  w.f64(best_valid);
}

TrainState TrainState::load(BinaryReader& r) {
  TrainState s;
  s.step = r.u64();
  s.epoch = r.u64();
  s.cursor = r.u64();
  s.weights = read_state(r);
  s.gates = read_state(r);
  s.controller.lambda1 = r.f64();
  s.controller.lambda2 = r.f64();
  s.controller.step = r.u64();
  s.rng = r.str();
  s.hidden.resize(r.u64());
  for (auto& h : s.hidden) h = read_exact(r);
  s.has_best_valid = r.u8() != 0;
  s.best_valid = r.f64();
  return s;
}

BatchStream::BatchStream(std::span<const std::size_t> data, std::size_t batch, std::size_t unroll)
    : data_(data), batch_(batch), unroll_(unroll) {
  if (batch == 0 || unroll == 0) throw DomainError("batch size and unroll length must be positive");
  stream_len_ = data.size() / batch;
  if (stream_len_ < unroll + 1)
    throw DomainError("training split of " + std::to_string(data.size()) + " symbols is too short for batch " +
                      std::to_string(batch) + " x unroll " + std::to_string(unroll));
}

BatchStream::Batch BatchStream::next() {
  Batch b;
  if (cursor_ + unroll_ + 1 > stream_len_) {
    cursor_ = 0;
    b.wrapped = true;
  }
  b.inputs.resize(unroll_ * batch_);
  b.targets.resize(unroll_ * batch_);
  for (std::size_t t = 0; t < unroll_; ++t)
    for (std::size_t s = 0; s < batch_; ++s) {
      const std::size_t pos = s * stream_len_ + cursor_ + t;
      b.inputs[t * batch_ + s] = data_[pos];
      b.targets[t * batch_ + s] = data_[pos + 1];
    }
  cursor_ += unroll_;
  return b;
}

Trainer::Trainer(RecurrentLM& model, std::span<const std::size_t> train, TrainerOptions options)
    : model_(model),
      options_(std::move(options)),
      stream_(train, options_.batch_size, options_.unroll),
      rng_(options_.seed) {
  if (options_.target_compression < 0.0 || options_.target_compression >= 1.0)
    throw DomainError("target compression must lie in [0, 1)");
  for (std::size_t id : train)
    if (id >= model_.vocab()) throw DimensionError("training id " + std::to_string(id) + " exceeds model vocabulary");

  warmup_ = options_.warmup_steps.value_or(options_.total_steps / 10);
  if (warmup_ > options_.total_steps) throw DomainError("warmup exceeds the total number of steps");
  const std::size_t prune_steps = options_.total_steps - warmup_;
  anneal_ = options_.controller.anneal_steps > 0
                ? options_.controller.anneal_steps
                : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(options_.anneal_fraction *
                                                                                 static_cast<double>(prune_steps))));

  SgdOptions sgd;
  sgd.momentum = options_.momentum;
  sgd.weight_decay = options_.weight_decay;
  sgd.schedule = {options_.lr, options_.lr_ramp};
  weights_ = std::make_unique<Sgd>(model_.weight_parameters(), sgd);

  const auto gate_params = model_.gate_parameters();
  if (!model_.hard_concrete_gates().empty()) {
    AdamOptions adam;
    adam.schedule = {options_.gate_lr, 0};
    adam.beta1 = options_.gate_beta1;
    adam.beta2 = options_.gate_beta2;
    gates_ = std::make_unique<Adam>(gate_params, adam);
    const ParamCounts c = model_.counts();
    const double target = kept_target_from_compression(options_.target_compression, options_.basis, c.total, c.prunable);
    LagrangianOptions lo = options_.controller;
    lo.anneal_steps = anneal_;
    controller_.emplace(c.prunable, target, lo);
  } else if (!model_.diagonal_masks().empty()) {
    // Mask values follow the weight optimizer.
    SgdOptions ms = sgd;
    ms.weight_decay = 0.0;
    gates_ = std::make_unique<Sgd>(gate_params, ms);
    agp_.initial_sparsity = 0.0;
    agp_.final_sparsity = options_.target_compression;
    agp_.begin_step = 0;
    agp_.end_step = anneal_;
    agp_.prune_frequency = std::max<std::size_t>(1, options_.agp_frequency);
    agp_.l1_coeff = options_.agp_l1;
  }
  state_.hidden = model_.zero_state(options_.batch_size);
  state_.rng = rng_.state();
}

TrainState Trainer::state() const {
  TrainState s = state_;
  s.cursor = stream_.cursor();
  s.weights = weights_->state();
  if (gates_) s.gates = gates_->state();
  if (controller_) s.controller = controller_->state();
  s.rng = rng_.state();
  return s;
}

void Trainer::restore(const TrainState& s) {
  if (s.hidden.size() != model_.num_layers()) throw FormatError("train state hidden layers disagree with the model");
  state_ = s;
  stream_.set_cursor(s.cursor);
  weights_->set_state(s.weights);
  if (gates_) gates_->set_state(s.gates);
  if (controller_) controller_->set_state(s.controller);
  rng_.set_state(s.rng);
}

StepMetrics Trainer::step() {
  try {
    return step_impl();
  } catch (const NumericError& e) {
    if (abort_hook_) abort_hook_(e.what());
    throw;
  }
}

void Trainer::run(const std::function<void(const StepMetrics&)>& on_step) {
  while (!done()) {
    StepMetrics m = step();
    if (on_step) on_step(m);
  }
}

StepMetrics Trainer::step_impl() {
  if (done()) throw DomainError("training already finished");
  StepMetrics m;
  m.step = state_.step;
  m.pruning = state_.step >= warmup_;
  const std::size_t k = m.pruning ? state_.step - warmup_ : 0;

  auto batch = stream_.next();
  if (batch.wrapped) {
    ++state_.epoch;
    state_.hidden = model_.zero_state(options_.batch_size);
  }
  m.epoch = state_.epoch;

  Graph& g = graph_;
  g.reset();
  MaskContext ctx;
  ctx.mode = m.pruning ? GateMode::sample : GateMode::open;
  ctx.rng = &rng_;
  ctx.kept_value = options_.kept_value;
  model_.begin_batch(g, ctx);

  auto out = model_.forward(g, batch.inputs, options_.batch_size, state_.hidden);
  Var ce = cross_entropy(out.logits, batch.targets);
  Var loss = ce;
  double s_value = 0.0;
  if (m.pruning && controller_) {
    Var s = model_.expected_size(g);
    s_value = s.value().item();
    m.t = controller_->current_target();
    Var pen = controller_->penalty(g, s);
    m.penalty = pen.value().item();
    loss = add(loss, pen);
  }
  const auto masks = model_.diagonal_masks();
  if (m.pruning && !masks.empty() && agp_.l1_coeff > 0.0) {
    Var pen = agp_l1_penalty(g, masks, agp_.l1_coeff);
    m.penalty = pen.value().item();
    loss = add(loss, pen);
  }

  weights_->zero_grad();
  if (gates_) gates_->zero_grad();
  g.backward(loss);
  m.lr = weights_->current_lr();
  if (options_.clip_norm > 0.0) clip_grad_norm(weights_->params(), options_.clip_norm);
  weights_->step();
  if (m.pruning && gates_) gates_->step();

  if (m.pruning && controller_) {
    controller_->update_multipliers(s_value);
    m.s = s_value;
  }
  if (m.pruning && !masks.empty()) {
    if (agp_.prunes_at(k) || k + 1 >= agp_.end_step) agp_prune_step(masks, agp_, k);
    std::size_t entries = 0, zeroed = 0;
    for (const DiagonalMask* mask : masks) {
      entries += mask->size();
      zeroed += mask->size() - mask->kept_count();
    }
    m.sparsity = entries ? static_cast<double>(zeroed) / static_cast<double>(entries) : 0.0;
  }
  if (controller_) {
    m.lambda1 = controller_->lambda1();
    m.lambda2 = controller_->lambda2();
    if (!m.pruning) m.t = controller_->prunable_total();
  }
  if (!m.pruning || !controller_) m.s = model_.expected_size();
  for (const auto& [name, gate] : model_.named_gates()) m.kept[name] = gate->frozen(options_.kept_value).kept.size();

  m.loss = ce.value().item();
  m.bpc = m.loss / std::numbers::ln2;
  state_.hidden = std::move(out.final_hidden);
  ++state_.step;
  return m;
}

double EvalResult::bpc() const {
  return count ? nats / static_cast<double>(count) / std::numbers::ln2 : 0.0;
}

Evaluator::Evaluator(RecurrentLM& model, KeptValue kept, std::size_t chunk)
    : model_(model), kept_(kept), chunk_(std::max<std::size_t>(1, chunk)), hidden_(model.zero_state(1)) {
  graph_.set_grad_enabled(false);
}

void Evaluator::feed(std::span<const std::size_t> ids) {
  std::vector<std::size_t> inputs, targets;
  std::size_t i = 0;
  while (i < ids.size()) {
    inputs.clear();
    targets.clear();
    while (i < ids.size() && targets.size() < chunk_) {
      if (ids[i] >= model_.vocab()) throw DimensionError("evaluation id " + std::to_string(ids[i]) + " out of range");
      if (last_) {
        inputs.push_back(*last_);
        targets.push_back(ids[i]);
      }
      last_ = ids[i];
      ++i;
    }
    if (targets.empty()) continue;
    graph_.reset();
    MaskContext ctx;
    ctx.mode = GateMode::deterministic;
    ctx.kept_value = kept_;
    model_.begin_batch(graph_, ctx);
    auto out = model_.forward(graph_, inputs, 1, hidden_);
    Var ce = cross_entropy(out.logits, targets);
    result_.nats += ce.value().item() * static_cast<double>(targets.size());
    result_.count += targets.size();
    hidden_ = std::move(out.final_hidden);
  }
}

double evaluate(RecurrentLM& model, std::span<const std::size_t> ids, KeptValue kept) {
  Evaluator ev(model, kept);
  ev.feed(ids);
  return ev.result().bpc();
}

ModelConfig fac_config(ModelConfig base, double prunable_compression) {
  if (prunable_compression < 0.0 || prunable_compression >= 1.0)
    throw DomainError("FAC compression must lie in [0, 1)");
  base.method = Method::fac;
  base.fac_keep_ratio = 1.0 - prunable_compression;
  return base;
}

std::unique_ptr<RecurrentLM> run_baseline_fac(const ModelConfig& base, std::span<const std::size_t> train,
                                              TrainerOptions options,
                                              const std::function<void(const StepMetrics&)>& on_step,
                                              std::vector<std::string>* warnings) {
  ModelConfig config = fac_config(base, options.target_compression);
  Rng init(options.seed);
  auto model = std::make_unique<RecurrentLM>(config, init);
  if (warnings) {
    for (const auto& layer : model->layers())
      for (const Projection* p : {layer.wx.get(), layer.wh.get()}) {
        std::size_t full = base.rank ? base.rank : starting_rank(p->out_features(), p->in_features());
        fac_rank(full, options.target_compression, warnings);
      }
  }
  options.warmup_steps = 0;
  Trainer trainer(*model, train, options);
  trainer.run(on_step);
  return model;
}

}  // namespace flop
