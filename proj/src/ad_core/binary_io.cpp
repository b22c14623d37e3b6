#include "flop/binary_io.hpp"

#include <bit>
#include <cstring>

#include "flop/errors.hpp"

namespace flop {
namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

// Corrupt headers must not trigger giant allocations.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 30;

}  // namespace

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) {
  v = to_little(v);
  out_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::u64(std::uint64_t v) {
  v = to_little(v);
  out_.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(const std::string& s) {
  u64(s.size());
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::tensor(const Tensor& t) {
  u64(t.rank());
  for (std::size_t d : t.shape()) u64(d);
  if (precision_ == Precision::f64) {
    for (double v : t.data()) f64(v);
  } else {
    for (double v : t.data()) u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

void BinaryWriter::doubles(const std::vector<double>& v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void BinaryWriter::bytes(const std::vector<std::uint8_t>& v) {
  u64(v.size());
  out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
}

void BinaryReader::read_raw(void* dst, std::size_t n) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("unexpected end of binary stream");
}

std::uint8_t BinaryReader::u8() {
  std::uint8_t v;
  read_raw(&v, 1);
  return v;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  read_raw(&v, sizeof v);
  return to_little(v);
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  read_raw(&v, sizeof v);
  return to_little(v);
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (n > kMaxElements) throw FormatError("string length out of range");
  std::string s(n, '\0');
  read_raw(s.data(), n);
  return s;
}

Tensor BinaryReader::tensor() {
  const std::uint64_t rank = u64();
  if (rank > 4) throw FormatError("tensor rank out of range");
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = u64();
    count *= d;
    if (count > kMaxElements) throw FormatError("tensor size out of range");
  }
  std::vector<double> data(count);
  if (precision_ == Precision::f64) {
    for (double& v : data) v = f64();
  } else {
    for (double& v : data) v = std::bit_cast<float>(u32());
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<double> BinaryReader::doubles() {
  const std::uint64_t n = u64();
  if (n > kMaxElements) throw FormatError("array length out of range");
  std::vector<double> v(n);
  for (double& x : v) x = f64();
  return v;
}

std::vector<std::uint8_t> BinaryReader::bytes() {
  const std::uint64_t n = u64();
  if (n > kMaxElements) throw FormatError("array length out of range");
  std::vector<std::uint8_t> v(n);
  read_raw(v.data(), n);
  return v;
}

}  // namespace flop
