#include "flop/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "flop/errors.hpp"

namespace flop {

std::string to_string(CheckpointStage s) {
  switch (s) {
    case CheckpointStage::warmup:
      return "warmup";
    case CheckpointStage::trained:
      return "trained";
    case CheckpointStage::pruned:
      return "pruned";
    case CheckpointStage::compacted:
      return "compacted";
  }
  return "?";
}

void save_checkpoint(std::ostream& out, CheckpointStage stage, const std::string& config, const RecurrentLM& model,
                     const TrainState* state, Precision precision) {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  BinaryWriter w(out, precision);
  w.u8(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(precision));
  w.u8(static_cast<std::uint8_t>(stage));
  w.str(config);
  model.save(w);
  w.u8(state ? 1 : 0);
  if (state) state->save(w);
  if (!out) throw FormatError("failed writing checkpoint");
}

void save_checkpoint(const std::filesystem::path& path, CheckpointStage stage, const std::string& config,
                     const RecurrentLM& model, const TrainState* state, Precision precision) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint '" + tmp + "'");
    save_checkpoint(out, stage, config, model, state, precision);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw FormatError("not a checkpoint (bad magic)");
  BinaryReader header(in, Precision::f64);
  const auto version = header.u8();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto precision = header.u8();
  if (precision > 1) throw FormatError("unknown checkpoint precision flag");
  const auto stage = header.u8();
  if (stage > static_cast<std::uint8_t>(CheckpointStage::compacted)) throw FormatError("unknown checkpoint stage");

  BinaryReader r(in, static_cast<Precision>(precision));
  Checkpoint c;
  c.stage = static_cast<CheckpointStage>(stage);
  c.config = r.str();
  c.model = RecurrentLM::load(r);
  if (r.u8() != 0) c.train_state = TrainState::load(r);
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

}  // namespace flop
