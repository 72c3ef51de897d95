#include "pphh/mpc.hpp"

namespace pphh::mpc {

namespace {

void share_words(std::mt19937_64& rng, const std::vector<uint64_t>& secret, std::vector<uint64_t>& s0,
                 std::vector<uint64_t>& s1) {
  s0.resize(secret.size());
  s1.resize(secret.size());
  for (size_t i = 0; i < secret.size(); ++i) {
    s0[i] = rng();
    s1[i] = secret[i] - s0[i];
  }
}

void xor_share_words(std::mt19937_64& rng, const std::vector<uint64_t>& secret, std::vector<uint64_t>& s0,
                     std::vector<uint64_t>& s1) {
  s0.resize(secret.size());
  s1.resize(secret.size());
  for (size_t i = 0; i < secret.size(); ++i) {
    s0[i] = rng();
    s1[i] = secret[i] ^ s0[i];
  }
}

}  // namespace

std::pair<DealerTape, DealerTape> dealer_generate(const TapeSpec& spec, uint64_t seed_hi, uint64_t seed_lo) {
  std::seed_seq seq{static_cast<uint32_t>(seed_hi >> 32), static_cast<uint32_t>(seed_hi),
                    static_cast<uint32_t>(seed_lo >> 32), static_cast<uint32_t>(seed_lo)};
  std::mt19937_64 rng(seq);

  DealerTape t0, t1;
  t0.party_id = 0;
  t1.party_id = 1;

  {  // elementwise Beaver triples: c = a * b in the ring, pre-truncation
    std::vector<uint64_t> a(spec.mul_elems), b(spec.mul_elems), c(spec.mul_elems);
    for (uint64_t i = 0; i < spec.mul_elems; ++i) {
      a[i] = rng();
      b[i] = rng();
      c[i] = a[i] * b[i];
    }
    share_words(rng, a, t0.mul_a, t1.mul_a);
    share_words(rng, b, t0.mul_b, t1.mul_b);
    share_words(rng, c, t0.mul_c, t1.mul_c);
  }

  for (const auto& [m, k, n] : spec.matmuls) {
    std::vector<uint64_t> a(m * k), b(k * n), c(m * n);
    for (auto& v : a) v = rng();
    for (auto& v : b) v = rng();
    fxp::matmul_raw(a.data(), b.data(), c.data(), m, k, n);
    MatmulTriple m0, m1;
    m0.m = m1.m = m;
    m0.k = m1.k = k;
    m0.n = m1.n = n;
    share_words(rng, a, m0.a, m1.a);
    share_words(rng, b, m0.b, m1.b);
    share_words(rng, c, m0.c, m1.c);
    t0.matmuls.push_back(std::move(m0));
    t1.matmuls.push_back(std::move(m1));
  }

  {  // msb masked pairs: arithmetic and bitwise shares of the same r
    std::vector<uint64_t> r(spec.msb_elems);
    for (auto& v : r) v = rng();
    share_words(rng, r, t0.msb_r, t1.msb_r);
    xor_share_words(rng, r, t0.msb_rbits, t1.msb_rbits);
  }

  {  // bit triples: word-packed, c = a & b
    std::vector<uint64_t> a(spec.bit_words), b(spec.bit_words), c(spec.bit_words);
    for (uint64_t i = 0; i < spec.bit_words; ++i) {
      a[i] = rng();
      b[i] = rng();
      c[i] = a[i] & b[i];
    }
    xor_share_words(rng, a, t0.bit_a, t1.bit_a);
    xor_share_words(rng, b, t0.bit_b, t1.bit_b);
    xor_share_words(rng, c, t0.bit_c, t1.bit_c);
  }

  {  // b2a bits: uniform rho with both XOR and arithmetic shares
    std::vector<uint64_t> rho(spec.b2a_elems);
    for (auto& v : rho) v = rng() & 1;
    xor_share_words(rng, rho, t0.b2a_bit, t1.b2a_bit);
    for (auto& v : t0.b2a_bit) v &= 1;
    for (auto& v : t1.b2a_bit) v &= 1;
    // re-derive: xor of masked low bits must equal rho
    for (size_t i = 0; i < rho.size(); ++i) t1.b2a_bit[i] = rho[i] ^ t0.b2a_bit[i];
    share_words(rng, rho, t0.b2a_arith, t1.b2a_arith);
  }

  return {std::move(t0), std::move(t1)};
}

}  // namespace pphh::mpc
