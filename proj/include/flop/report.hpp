#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "flop/controller.hpp"
#include "flop/metrics.hpp"

namespace flop {

/// Final summary of one run, emitted as the last metrics line.
struct RunSummary {
  std::string method;
  double original_total = 0.0;
  double size = 0.0;  // actual parameter count after pruning
  double compression = 0.0;
  double expected_compression = 0.0;
  double prunable_compression = 0.0;
  double valid_bpc = 0.0;
  double test_bpc = 0.0;
  bool operator==(const RunSummary&) const = default;
};

RunSummary make_summary(const std::string& method, const PruneReport& report, double valid_bpc, double test_bpc);
Record summary_record(const RunSummary& s);
/// Reads the summary from the last line of a metrics stream.
RunSummary summary_from_metrics(const std::filesystem::path& path);

/// Method | Size | Compress | BPC table.
std::string summary_table(const std::vector<RunSummary>& rows);
std::string prune_report_json(const PruneReport& report);
std::string percent(double fraction);

}  // namespace flop
