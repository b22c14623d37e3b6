#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flop/corpus.hpp"
#include "flop/model.hpp"
#include "flop/trainer.hpp"

namespace flop {

struct ModelSection {
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t rank = 0;
  std::string embedding = "adaptive";  // adaptive | dense
  std::vector<double> cluster_boundaries{0.2, 0.5};
  bool tied = false;
  double alpha_init = 2.2;
  double alpha_jitter = 0.01;
  double hc_l = -0.1;
  double hc_r = 1.1;
  double hc_beta = 1.0;
  bool operator==(const ModelSection&) const = default;
};

struct TrainSection {
  std::size_t batch_size = 32;
  std::size_t unroll = 64;
  std::size_t total_steps = 1000;
  std::optional<std::size_t> warmup_steps;  // null: 10% of total_steps
  double lr = 0.3;
  std::size_t lr_ramp = 0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  double gate_lr = 0.1;
  double gate_beta1 = 0.5;
  double gate_beta2 = 0.9;
  std::string kept_value = "rectified-mean";  // rectified-mean | open-probability | one
  bool operator==(const TrainSection&) const = default;
};

struct ControllerSection {
  double target_compression = 0.5;
  std::string basis = "total";  // total | prunable
  std::string mode = "lagrangian";  // lagrangian | fixed-lambda
  double lr_lambda = 2.0;
  std::size_t anneal_steps = 0;  // 0: anneal_fraction of the pruning phase
  double anneal_fraction = 0.5;
  bool normalize = true;
  double fixed_lambda = 0.0;
  double agp_l1 = 0.0;
  std::size_t agp_frequency = 10;
  bool operator==(const ControllerSection&) const = default;
};

/// Complete description of one run; serialized as JSON.
struct RunConfig {
  std::string corpus = "data/desk_corpus.txt";
  std::string symbol_mode = "bytes";  // bytes | utf8
  std::vector<double> splits{0.9, 0.05, 0.05};
  std::string method = "flop-l0";
  ModelSection model;
  TrainSection train;
  ControllerSection controller;
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: --out, then FLOP_OUT_DIR, then "runs"
  bool operator==(const RunConfig&) const = default;

  /// Throws FormatError on unknown keys, wrong types or invalid values.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string render() const;
  void validate() const;

  SplitFractions split_fractions() const;
  SymbolMode symbols() const;
  ModelConfig model_config(std::size_t vocab) const;
  TrainerOptions trainer_options() const;
};

KeptValue parse_kept_value(const std::string& s);

}  // namespace flop
