#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace flop {

struct BenchOptions {
  std::size_t warmup = 5;
  std::size_t trials = 30;
  double unstable_threshold = 0.2;  // IQR / median
  std::uint64_t seed = 1;
};

struct BenchResult {
  std::size_t d_out = 0;
  std::size_t d_in = 0;
  std::size_t r_full = 0;
  std::size_t kept = 0;
  std::size_t batch = 0;
  std::vector<double> times_ms;
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  double speedup = 0.0;  // full-rank median / this median
  bool unstable = false;
};

/// Times y = P'(Q' x) in 32-bit floats for every kept rank against the
/// full-rank layer of the same shape, single-threaded.
std::vector<BenchResult> bench_compacted(std::size_t d_out, std::size_t d_in, std::size_t r_full,
                                         const std::vector<std::size_t>& kept_ranks, std::size_t batch,
                                         const BenchOptions& options = {});

double median(std::vector<double> v);
/// Interquartile range with linear interpolation.
double iqr(std::vector<double> v);

std::string bench_table(const std::vector<BenchResult>& results);
std::string bench_json(const std::vector<BenchResult>& results);

}  // namespace flop
