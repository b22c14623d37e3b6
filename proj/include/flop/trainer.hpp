#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flop/binary_io.hpp"
#include "flop/controller.hpp"
#include "flop/model.hpp"
#include "flop/optim.hpp"
#include "flop/rng.hpp"

namespace flop {

struct TrainerOptions {
  std::size_t batch_size = 32;
  std::size_t unroll = 64;
  std::size_t total_steps = 1000;
  /// Steps with gates fixed open; nullopt uses 10% of total_steps.
  std::optional<std::size_t> warmup_steps;

  double lr = 0.3;
  std::size_t lr_ramp = 0;  // inverse-sqrt ramp; 0 keeps lr constant
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  double gate_lr = 0.1;  // Adam on gate logits
  double gate_beta1 = 0.5;
  double gate_beta2 = 0.9;

  double target_compression = 0.5;
  CompressionBasis basis = CompressionBasis::total;
  LagrangianOptions controller{.lr_lambda = 2.0, .anneal_steps = 0};
  /// Annealing length as a fraction of the pruning phase (used when
  /// controller.anneal_steps == 0, and for the AGP end step).
  double anneal_fraction = 0.5;

  double agp_l1 = 0.0;
  std::size_t agp_frequency = 10;

  KeptValue kept_value = KeptValue::rectified_mean;
  std::uint64_t seed = 1;
};

/// Per-step record; flattened into the metrics stream.
struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  bool pruning = false;
  double loss = 0.0;  // cross-entropy, nats per character
  double bpc = 0.0;
  double penalty = 0.0;
  double s = 0.0;
  double t = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lr = 0.0;
  double sparsity = 0.0;  // AGP only
  std::map<std::string, std::size_t> kept;  // per-gate kept components
};

/// Everything besides the model needed to resume bit-exactly.
struct TrainState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t cursor = 0;
  OptimizerState weights;
  OptimizerState gates;
  ControllerState controller;
  std::string rng;
  std::vector<Tensor> hidden;
  double best_valid = 0.0;
  bool has_best_valid = false;

  void save(BinaryWriter& w) const;
  static TrainState load(BinaryReader& r);
};

/// B parallel contiguous streams over a token sequence, unrolled T steps at
/// a time. Batches are time-major: row t*B + b.
class BatchStream {
 public:
  BatchStream(std::span<const std::size_t> data, std::size_t batch, std::size_t unroll);

  struct Batch {
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> targets;
    bool wrapped = false;  // a new pass started; hidden state must be reset
  };
  Batch next();
  std::size_t cursor() const { return cursor_; }
  void set_cursor(std::size_t c) { cursor_ = c; }
  std::size_t batch() const { return batch_; }
  std::size_t unroll() const { return unroll_; }

 private:
  std::span<const std::size_t> data_;
  std::size_t batch_;
  std::size_t unroll_;
  std::size_t stream_len_;
  std::size_t cursor_ = 0;
};

/// Warmup-then-prune training loop for one model and one training split.
class Trainer {
 public:
  Trainer(RecurrentLM& model, std::span<const std::size_t> train, TrainerOptions options);

  StepMetrics step();
  /// Runs until total_steps; the callback sees every step.
  void run(const std::function<void(const StepMetrics&)>& on_step = {});
  bool done() const { return state_.step >= options_.total_steps; }

  std::size_t warmup_steps() const { return warmup_; }
  std::size_t anneal_steps() const { return anneal_; }
  const TrainerOptions& options() const { return options_; }
  LagrangianController* controller() { return controller_ ? &*controller_ : nullptr; }
  const AgpScheduler& agp() const { return agp_; }

  TrainState state() const;
  void restore(const TrainState& s);
  /// Called with a reason before a numeric failure is rethrown.
  void set_abort_hook(std::function<void(const std::string&)> hook) { abort_hook_ = std::move(hook); }

 private:
  StepMetrics step_impl();

  RecurrentLM& model_;
  TrainerOptions options_;
  BatchStream stream_;
  std::size_t warmup_ = 0;
  std::size_t anneal_ = 1;
  std::unique_ptr<Optimizer> weights_;
  std::unique_ptr<Optimizer> gates_;
  std::optional<LagrangianController> controller_;
  AgpScheduler agp_;
  Rng rng_;
  TrainState state_;
  Graph graph_;
  std::function<void(const std::string&)> abort_hook_;
};

struct EvalResult {
  double nats = 0.0;  // summed cross-entropy
  std::size_t count = 0;
  double bpc() const;
};

/// Streaming evaluator with batch 1: hidden state and the last symbol carry
/// across feed() calls, so chunked and single-pass evaluation agree.
class Evaluator {
 public:
  explicit Evaluator(RecurrentLM& model, KeptValue kept = KeptValue::rectified_mean, std::size_t chunk = 256);
  void feed(std::span<const std::size_t> ids);
  const EvalResult& result() const { return result_; }

 private:
  RecurrentLM& model_;
  KeptValue kept_;
  std::size_t chunk_;
  std::vector<Tensor> hidden_;
  std::optional<std::size_t> last_;
  EvalResult result_;
  Graph graph_;
};

/// Bits per character of the model over a split (deterministic masks).
double evaluate(RecurrentLM& model, std::span<const std::size_t> ids, KeptValue kept = KeptValue::rectified_mean);

/// FAC baseline config: ranks and cluster dims scaled by (1 - c) on the
/// prunable basis, gates removed.
ModelConfig fac_config(ModelConfig base, double prunable_compression);

/// Builds the FAC model for the target and trains it from scratch.
std::unique_ptr<RecurrentLM> run_baseline_fac(const ModelConfig& base, std::span<const std::size_t> train,
                                              TrainerOptions options,
                                              const std::function<void(const StepMetrics&)>& on_step = {},
                                              std::vector<std::string>* warnings = nullptr);

}  // namespace flop
