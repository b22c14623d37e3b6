#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "flop/binary_io.hpp"
#include "flop/model.hpp"
#include "flop/trainer.hpp"

namespace flop {

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'O', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

enum class CheckpointStage : std::uint8_t { warmup = 0, trained = 1, pruned = 2, compacted = 3 };
std::string to_string(CheckpointStage s);

/// magic, version, precision, stage, run config text, model, optional train
/// state. All fields little-endian; shapes as u64.
struct Checkpoint {
  CheckpointStage stage = CheckpointStage::trained;
  std::string config;  // rendered RunConfig, may be empty
  std::unique_ptr<RecurrentLM> model;
  std::optional<TrainState> train_state;
};

void save_checkpoint(std::ostream& out, CheckpointStage stage, const std::string& config, const RecurrentLM& model,
                     const TrainState* state = nullptr, Precision precision = Precision::f64);
/// Writes through a temporary file and renames, so readers never see a torn file.
void save_checkpoint(const std::filesystem::path& path, CheckpointStage stage, const std::string& config,
                     const RecurrentLM& model, const TrainState* state = nullptr, Precision precision = Precision::f64);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);

}  // namespace flop
