#include "flop/report.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "flop/errors.hpp"

namespace flop {

RunSummary make_summary(const std::string& method, const PruneReport& report, double valid_bpc, double test_bpc) {
  RunSummary s;
  s.method = method;
  s.original_total = report.original_total;
  s.size = report.kept_total_actual();
  s.compression = report.compression();
  s.expected_compression = report.expected_compression();
  s.prunable_compression = report.prunable_compression();
  s.valid_bpc = valid_bpc;
  s.test_bpc = test_bpc;
  return s;
}

Record summary_record(const RunSummary& s) {
  return {{"event", "summary"},
          {"method", s.method},
          {"original_total", s.original_total},
          {"size", s.size},
          {"compression", s.compression},
          {"expected_compression", s.expected_compression},
          {"prunable_compression", s.prunable_compression},
          {"valid_bpc", s.valid_bpc},
          {"test_bpc", s.test_bpc}};
}

RunSummary summary_from_metrics(const std::filesystem::path& path) {
  const auto records = read_records(path);
  if (records.empty()) throw FormatError("metrics file '" + path.string() + "' is empty");
  const Record& r = records.back();
  if (r.value("event", "") != "summary")
    throw FormatError("metrics file '" + path.string() + "' does not end with a summary record");
  RunSummary s;
  try {
    s.method = r.at("method").get<std::string>();
    s.original_total = r.at("original_total").get<double>();
    s.size = r.at("size").get<double>();
    s.compression = r.at("compression").get<double>();
    s.expected_compression = r.at("expected_compression").get<double>();
    s.prunable_compression = r.at("prunable_compression").get<double>();
    s.valid_bpc = r.at("valid_bpc").get<double>();
    s.test_bpc = r.at("test_bpc").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("summary record in '" + path.string() + "': " + e.what());
  }
  return s;
}

std::string percent(double fraction) {
  std::ostringstream os;
  os << std::llround(fraction * 100.0) << "%";
  return os.str();
}

std::string summary_table(const std::vector<RunSummary>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "Method" << std::right << std::setw(10) << "Size" << std::setw(10) << "Compress"
     << std::setw(10) << "BPC" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.method << std::right << std::setw(10) << std::llround(r.size)
       << std::setw(10) << percent(r.compression) << std::setw(10) << std::fixed << std::setprecision(3)
       << r.valid_bpc << "\n";
  }
  return os.str();
}

std::string prune_report_json(const PruneReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : report.layers)
    layers.push_back({{"name", l.name},
                      {"components", l.components},
                      {"kept", l.kept},
                      {"prunable", l.prunable},
                      {"kept_expected", l.kept_expected},
                      {"kept_actual", l.kept_actual}});
  nlohmann::json j = {{"layers", layers},
                      {"original_total", report.original_total},
                      {"total", report.total},
                      {"prunable", report.prunable},
                      {"kept_expected", report.kept_expected},
                      {"kept_actual", report.kept_actual},
                      {"kept_total_actual", report.kept_total_actual()},
                      {"compression", report.compression()},
                      {"expected_compression", report.expected_compression()},
                      {"prunable_compression", report.prunable_compression()}};
  return j.dump(2) + "\n";
}

}  // namespace flop
