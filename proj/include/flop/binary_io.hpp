#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "flop/tensor.hpp"

namespace flop {

enum class Precision : std::uint8_t { f64 = 0, f32 = 1 };

/// Little-endian fixed-layout writer. Shapes and counts are u64; tensor
/// payloads are IEEE floats at the configured precision.
class BinaryWriter {
 public:
  BinaryWriter(std::ostream& out, Precision precision) : out_(out), precision_(precision) {}

  Precision precision() const { return precision_; }
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  /// Rank, dims, then values at the stream precision.
  void tensor(const Tensor& t);
  void doubles(const std::vector<double>& v);  // always f64
  void bytes(const std::vector<std::uint8_t>& v);

 private:
  std::ostream& out_;
  Precision precision_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, Precision precision) : in_(in), precision_(precision) {}

  Precision precision() const { return precision_; }
  void set_precision(Precision p) { precision_ = p; }
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Tensor tensor();
  std::vector<double> doubles();
  std::vector<std::uint8_t> bytes();

 private:
  void read_raw(void* dst, std::size_t n);

  std::istream& in_;
  Precision precision_;
};

}  // namespace flop
