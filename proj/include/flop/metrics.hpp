#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "flop/trainer.hpp"

namespace flop {

using Record = nlohmann::json;

/// Line-delimited JSON: one flat object per line, keys sorted.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path, bool append = false);
  /// Throws FormatError for nested values or non-finite numbers.
  void emit(const Record& record);
  std::size_t lines() const { return lines_; }

 private:
  std::ofstream out_;
  std::size_t lines_ = 0;
};

std::string render_record(const Record& record);
Record step_record(const StepMetrics& m);
std::vector<Record> read_records(const std::filesystem::path& path);

}  // namespace flop
