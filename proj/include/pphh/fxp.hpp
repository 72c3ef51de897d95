#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

#include "pphh/tensor.hpp"

// Fixed-point tensors over the ring Z_{2^64}. Reals are embedded as
// round(x * 2^f) in two's complement; all arithmetic wraps mod 2^64.
// This is both the numeric substrate shared between the two compute
// parties and the plaintext oracle for the secure operations.
namespace pphh::fxp {

inline constexpr int kFracBits = 16;

struct EncodingOverflow : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RingTensor {
  std::vector<int64_t> shape;
  std::vector<uint64_t> data;
  int frac_bits = kFracBits;

  RingTensor() = default;
  RingTensor(std::vector<int64_t> s, int f) : shape(std::move(s)), data(shape_numel(shape), 0), frac_bits(f) {}
  RingTensor(std::vector<int64_t> s, std::vector<uint64_t> d, int f)
      : shape(std::move(s)), data(std::move(d)), frac_bits(f) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("ring tensor data/shape mismatch");
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
};

using RealTensor = Tensor;

inline void check_combinable(const RingTensor& a, const RingTensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.frac_bits != b.frac_bits)
    throw ShapeError(std::string(op) + ": frac_bits mismatch " + std::to_string(a.frac_bits) + " vs " +
                     std::to_string(b.frac_bits));
}

uint64_t encode_scalar(double x, int frac_bits);
double decode_scalar(uint64_t v, int frac_bits);

RingTensor encode(const RealTensor& x, int frac_bits = kFracBits);
RealTensor decode(const RingTensor& t);

RingTensor ring_add(const RingTensor& a, const RingTensor& b);
RingTensor ring_sub(const RingTensor& a, const RingTensor& b);
RingTensor ring_neg(const RingTensor& a);

// Arithmetic right shift on the signed interpretation, with rounding
// (adds 2^(d-1) first). Exact plaintext counterpart of the secure
// probabilistic truncation.
uint64_t trunc_scalar(uint64_t v, int d);
RingTensor trunc(const RingTensor& a, int d, int out_frac_bits);

// Elementwise product followed by truncation back to the common scale.
RingTensor mul_trunc(const RingTensor& a, const RingTensor& b);

// Ring matrix product with one truncation per accumulated output entry.
// Plaintext oracle for matmul_beaver.
RingTensor matmul_plain(const RingTensor& a, const RingTensor& b);

// Raw ring matmul, no truncation (used by the Beaver path).
void matmul_raw(const uint64_t* a, const uint64_t* b, uint64_t* c, int64_t m, int64_t k, int64_t n);

RingTensor uniform(std::mt19937_64& rng, std::vector<int64_t> shape, int frac_bits);

}  // namespace pphh::fxp
