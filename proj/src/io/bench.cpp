#include "flop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "flop/errors.hpp"
#include "flop/kernels.hpp"
#include "flop/rng.hpp"

namespace flop {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Compacted layer stored pre-transposed so both products stream rows.
struct FloatLayer {
  std::size_t d_in, d_out, rank;
  std::vector<float> qt;  // [d_in x rank]
  std::vector<float> pt;  // [rank x d_out]
  std::vector<float> h;

  FloatLayer(std::size_t in, std::size_t out, std::size_t r, Rng& rng)
      : d_in(in), d_out(out), rank(r), qt(in * r), pt(r * out) {
    for (float& x : qt) x = static_cast<float>(rng.normal() * 0.05);
    for (float& x : pt) x = static_cast<float>(rng.normal() * 0.05);
  }

  void forward(const std::vector<float>& x, std::vector<float>& y, std::size_t batch) {
    h.resize(batch * rank);
    kernels::gemm_nn(batch, rank, d_in, x.data(), qt.data(), h.data(), false);
    kernels::gemm_nn(batch, d_out, rank, h.data(), pt.data(), y.data(), false);
  }
};

}  // namespace

double iqr(std::vector<double> v) {
  if (v.size() < 2) return 0.0;
  std::sort(v.begin(), v.end());
  return quantile(v, 0.75) - quantile(v, 0.25);
}

std::vector<BenchResult> bench_compacted(std::size_t d_out, std::size_t d_in, std::size_t r_full,
                                         const std::vector<std::size_t>& kept_ranks, std::size_t batch,
                                         const BenchOptions& options) {
  if (d_out == 0 || d_in == 0 || r_full == 0 || batch == 0) throw DomainError("bench shapes must be positive");
  if (options.trials == 0) throw DomainError("bench needs at least one trial");
  for (std::size_t k : kept_ranks)
    if (k == 0 || k > r_full) throw DomainError("kept rank " + std::to_string(k) + " outside [1, r_full]");

  Rng rng(options.seed);
  std::vector<float> x(batch * d_in);
  for (float& v : x) v = static_cast<float>(rng.normal());
  std::vector<float> y(batch * d_out);

  auto time_layer = [&](std::size_t rank) {
    FloatLayer layer(d_in, d_out, rank, rng);
    BenchResult r;
    r.d_out = d_out;
    r.d_in = d_in;
    r.r_full = r_full;
    r.kept = rank;
    r.batch = batch;
    for (std::size_t i = 0; i < options.warmup; ++i) layer.forward(x, y, batch);
    for (std::size_t i = 0; i < options.trials; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      layer.forward(x, y, batch);
      const auto t1 = std::chrono::steady_clock::now();
      r.times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    // Keeps the optimizer from discarding the products.
    volatile float sink = y[0];
    (void)sink;
    r.median_ms = median(r.times_ms);
    r.iqr_ms = iqr(r.times_ms);
    r.unstable = r.median_ms > 0.0 && r.iqr_ms / r.median_ms > options.unstable_threshold;
    return r;
  };

  const BenchResult full = time_layer(r_full);
  std::vector<BenchResult> out;
  for (std::size_t k : kept_ranks) {
    BenchResult r = k == r_full ? full : time_layer(k);
    r.speedup = r.median_ms > 0.0 ? full.median_ms / r.median_ms : 0.0;
    out.push_back(std::move(r));
  }
  return out;
}

std::string bench_table(const std::vector<BenchResult>& results) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Shape" << std::right << std::setw(8) << "Kept" << std::setw(10) << "Reduce"
     << std::setw(12) << "Median ms" << std::setw(10) << "IQR ms" << std::setw(10) << "Speedup" << "\n";
  for (const auto& r : results) {
    const double reduction = 1.0 - static_cast<double>(r.kept) / static_cast<double>(r.r_full);
    std::ostringstream shape;
    shape << r.d_out << "x" << r.d_in;
    os << std::left << std::setw(14) << shape.str() << std::right << std::setw(8) << r.kept << std::setw(9)
       << std::fixed << std::setprecision(0) << reduction * 100.0 << "%" << std::setw(12) << std::setprecision(3)
       << r.median_ms << std::setw(10) << r.iqr_ms << std::setw(9) << std::setprecision(2) << r.speedup << "x"
       << (r.unstable ? "  unstable: rerun on an idle machine" : "") << "\n";
  }
  return os.str();
}

std::string bench_json(const std::vector<BenchResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results)
    arr.push_back({{"d_out", r.d_out},
                   {"d_in", r.d_in},
                   {"r_full", r.r_full},
                   {"kept", r.kept},
                   {"batch", r.batch},
                   {"median_ms", r.median_ms},
                   {"iqr_ms", r.iqr_ms},
                   {"speedup", r.speedup},
                   {"unstable", r.unstable},
                   {"trials", r.times_ms.size()}});
  return arr.dump(2) + "\n";
}

}  // namespace flop
