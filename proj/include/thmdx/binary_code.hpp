#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "thmdx/error.hpp"

namespace thmdx {

/// One bit per embedding dimension, packed little-endian into 64-bit words
/// (bit i lives in word i/64 at position i%64).
class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(std::size_t dimension) : dim_(dimension), words_((dimension + 63) / 64, 0) {}

  std::size_t dimension() const { return dim_; }
  std::span<const std::uint64_t> words() const { return words_; }

  bool bit(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1u; }
  void set(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }

  std::size_t byte_size() const { return (dim_ + 7) / 8; }

  /// Bytes in file order: dimension 0 is the least-significant bit of byte 0.
  void append_bytes(std::string& out) const {
    for (std::size_t b = 0; b < byte_size(); ++b)
      out.push_back(static_cast<char>((words_[b / 8] >> (8 * (b % 8))) & 0xFF));
  }

  static BinaryCode from_bytes(std::span<const unsigned char> bytes, std::size_t dimension) {
    BinaryCode code(dimension);
    for (std::size_t b = 0; b < code.byte_size() && b < bytes.size(); ++b)
      code.words_[b / 8] |= std::uint64_t{bytes[b]} << (8 * (b % 8));
    return code;
  }

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Sign quantization: bit i is 1 iff v[i] >= 0 (zero maps to 1).
inline BinaryCode quantize(std::span<const float> v) {
  BinaryCode code(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= 0.0f) code.set(i);
  return code;
}

inline BinaryCode quantize(std::span<const float> v, std::size_t expected_dimension) {
  if (v.size() != expected_dimension)
    throw Error(ErrorCode::DimensionMismatch, "vector has " + std::to_string(v.size()) + " dimensions, index has " +
                                                  std::to_string(expected_dimension));
  return quantize(v);
}

inline int hamming_unchecked(const BinaryCode& a, const BinaryCode& b) {
  auto wa = a.words();
  auto wb = b.words();
  int d = 0;
  for (std::size_t i = 0; i < wa.size(); ++i) d += std::popcount(wa[i] ^ wb[i]);
  return d;
}

inline int hamming(const BinaryCode& a, const BinaryCode& b) {
  if (a.dimension() != b.dimension())
    throw Error(ErrorCode::DimensionMismatch, "hamming distance between codes of different length");
  return hamming_unchecked(a, b);
}

/// Cosine similarity accumulated in double precision.
inline double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::DimensionMismatch, "cosine of vectors with different length");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * double(v[i]);
    nu += double(u[i]) * double(u[i]);
    nv += double(v[i]) * double(v[i]);
  }
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

}  // namespace thmdx
