#include "pphh/fxp.hpp"

#include <cmath>
#include <cstring>

namespace pphh::fxp {

uint64_t encode_scalar(double x, int frac_bits) {
  double scaled = std::round(x * static_cast<double>(1ULL << frac_bits));
  double limit = std::ldexp(1.0, 63);
  if (!(scaled < limit && scaled > -limit))
    throw EncodingOverflow("value " + std::to_string(x) + " not representable at f=" + std::to_string(frac_bits));
  return static_cast<uint64_t>(static_cast<int64_t>(scaled));
}

double decode_scalar(uint64_t v, int frac_bits) {
  return static_cast<double>(static_cast<int64_t>(v)) / static_cast<double>(1ULL << frac_bits);
}

RingTensor encode(const RealTensor& x, int frac_bits) {
  RingTensor out(x.shape, frac_bits);
  double limit = std::ldexp(1.0, 63);
  for (int64_t i = 0; i < x.numel(); ++i) {
    double scaled = std::round(x.data[i] * static_cast<double>(1ULL << frac_bits));
    if (!(scaled < limit && scaled > -limit))
      throw EncodingOverflow("encode overflow at index " + std::to_string(i) + " (value " +
                             std::to_string(x.data[i]) + ", f=" + std::to_string(frac_bits) + ")");
    out.data[i] = static_cast<uint64_t>(static_cast<int64_t>(scaled));
  }
  return out;
}

RealTensor decode(const RingTensor& t) {
  RealTensor out(t.shape);
  double inv = 1.0 / static_cast<double>(1ULL << t.frac_bits);
  for (int64_t i = 0; i < t.numel(); ++i)
    out.data[i] = static_cast<double>(static_cast<int64_t>(t.data[i])) * inv;
  return out;
}

RingTensor ring_add(const RingTensor& a, const RingTensor& b) {
  check_combinable(a, b, "ring_add");
  RingTensor out(a.shape, a.frac_bits);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

RingTensor ring_sub(const RingTensor& a, const RingTensor& b) {
  check_combinable(a, b, "ring_sub");
  RingTensor out(a.shape, a.frac_bits);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] - b.data[i];
  return out;
}

RingTensor ring_neg(const RingTensor& a) {
  RingTensor out(a.shape, a.frac_bits);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = ~a.data[i] + 1;
  return out;
}

uint64_t trunc_scalar(uint64_t v, int d) {
  if (d <= 0) return v;
  uint64_t rounded = v + (1ULL << (d - 1));
  return static_cast<uint64_t>(static_cast<int64_t>(rounded) >> d);
}

RingTensor trunc(const RingTensor& a, int d, int out_frac_bits) {
  RingTensor out(a.shape, out_frac_bits);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = trunc_scalar(a.data[i], d);
  return out;
}

RingTensor mul_trunc(const RingTensor& a, const RingTensor& b) {
  check_combinable(a, b, "mul_trunc");
  RingTensor out(a.shape, a.frac_bits);
  for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = trunc_scalar(a.data[i] * b.data[i], a.frac_bits);
  return out;
}

void matmul_raw(const uint64_t* a, const uint64_t* b, uint64_t* c, int64_t m, int64_t k, int64_t n) {
  add_flops(static_cast<uint64_t>(2 * m * k * n));
  std::memset(c, 0, sizeof(uint64_t) * static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    const uint64_t* arow = a + i * k;
    uint64_t* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      uint64_t av = arow[kk];
      if (av == 0) continue;
      const uint64_t* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

RingTensor matmul_plain(const RingTensor& a, const RingTensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul_plain: inner dimensions disagree " + shape_str(a.shape) + " x " + shape_str(b.shape));
  if (a.frac_bits != b.frac_bits) throw ShapeError("matmul_plain: frac_bits mismatch");
  RingTensor out({a.shape[0], b.shape[1]}, a.frac_bits);
  matmul_raw(a.data.data(), b.data.data(), out.data.data(), a.shape[0], a.shape[1], b.shape[1]);
  for (auto& v : out.data) v = trunc_scalar(v, a.frac_bits);
  return out;
}

RingTensor uniform(std::mt19937_64& rng, std::vector<int64_t> shape, int frac_bits) {
  RingTensor out(std::move(shape), frac_bits);
  for (auto& v : out.data) v = rng();
  return out;
}

}  // namespace pphh::fxp
