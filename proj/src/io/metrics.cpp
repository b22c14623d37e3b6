#include "flop/metrics.hpp"

#include <cmath>

#include "flop/errors.hpp"

namespace flop {

std::string render_record(const Record& record) {
  if (!record.is_object()) throw FormatError("metrics record must be an object");
  for (const auto& [key, value] : record.items()) {
    if (value.is_number_float() && !std::isfinite(value.get<double>()))
      throw FormatError("metrics value '" + key + "' is not finite");
    if (!(value.is_number() || value.is_string() || value.is_boolean()))
      throw FormatError("metrics value '" + key + "' must be a number, string or boolean");
  }
  // nlohmann objects are std::map backed, so keys come out sorted.
  return record.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw FormatError("cannot open metrics file '" + path.string() + "'");
}

void MetricsWriter::emit(const Record& record) {
  const std::string line = render_record(record);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw FormatError("failed writing metrics line");
  ++lines_;
}

Record step_record(const StepMetrics& m) {
  Record r = {{"event", "step"},     {"step", m.step},       {"epoch", m.epoch},      {"phase", m.pruning ? "prune" : "warmup"},
              {"loss", m.loss},      {"bpc", m.bpc},         {"penalty", m.penalty},  {"s", m.s},
              {"t", m.t},            {"lambda1", m.lambda1}, {"lambda2", m.lambda2},  {"lr", m.lr},
              {"sparsity", m.sparsity}};
  for (const auto& [name, kept] : m.kept) r["kept." + name] = kept;
  return r;
}

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read metrics file '" + path.string() + "'");
  std::vector<Record> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Record::parse(line));
    } catch (const Record::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace flop
