#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>

#include "pphh/fxp.hpp"
#include "pphh/netsim.hpp"
#include "pphh/transcript.hpp"

// Two-computational-party additive secret sharing over Z_{2^64} with a
// semi-honest trusted dealer. Both parties run the same op functions in
// lockstep over a channel; correlated randomness comes from the dealer tape.
//
// Round constants of this implementation (see docs/protocol.md):
//   open/reconstruct 1, mul/matmul 1, msb 8 (= 1 open + 6 borrow-circuit
//   levels + 1 bit conversion), relu 9, exp 9, reciprocal 38, inv_sqrt 42,
//   softmax 48.
namespace pphh::mpc {

struct DealerUnderrun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SharedTensor {
  int party_id = 0;
  fxp::RingTensor share;
  uint64_t session_id = 0;

  int64_t numel() const { return share.numel(); }
  const std::vector<int64_t>& shape() const { return share.shape; }
  int frac_bits() const { return share.frac_bits; }
};

struct MatmulTriple {
  int64_t m = 0, k = 0, n = 0;
  std::vector<uint64_t> a, b, c;  // this party's shares; c = a x b in the ring
};

// One party's half of the correlated randomness for a session. Every queue
// is consumed front-to-back exactly once; tapes for party 0/1 are generated
// together so the correlations reconstruct.
struct DealerTape {
  int party_id = 0;

  std::vector<uint64_t> mul_a, mul_b, mul_c;  // elementwise Beaver triples
  size_t mul_pos = 0;

  std::vector<MatmulTriple> matmuls;
  size_t matmul_pos = 0;

  std::vector<uint64_t> msb_r;      // arithmetic share of r
  std::vector<uint64_t> msb_rbits;  // XOR share of r's bits, one word per element
  size_t msb_pos = 0;

  std::vector<uint64_t> bit_a, bit_b, bit_c;  // XOR-shared word triples, c = a & b
  size_t bit_pos = 0;

  std::vector<uint64_t> b2a_bit;    // XOR share of a uniform bit (word 0/1)
  std::vector<uint64_t> b2a_arith;  // arithmetic share of the same bit
  size_t b2a_pos = 0;

  void take_mul(int64_t n, const uint64_t** a, const uint64_t** b, const uint64_t** c);
  const MatmulTriple& take_matmul(int64_t m, int64_t k, int64_t n);
  void take_msb(int64_t n, const uint64_t** r, const uint64_t** rbits);
  void take_bits(int64_t words, const uint64_t** a, const uint64_t** b, const uint64_t** c);
  void take_b2a(int64_t n, const uint64_t** bit, const uint64_t** arith);
};

// Per-primitive dealer-tape demand; also the analytic communication model.
struct TapeSpec {
  uint64_t mul_elems = 0;
  std::vector<std::array<int64_t, 3>> matmuls;
  uint64_t msb_elems = 0;
  uint64_t bit_words = 0;
  uint64_t b2a_elems = 0;

  void add(const TapeSpec& o) {
    mul_elems += o.mul_elems;
    for (auto& m : o.matmuls) matmuls.push_back(m);
    msb_elems += o.msb_elems;
    bit_words += o.bit_words;
    b2a_elems += o.b2a_elems;
  }
};

// Deterministic from the 128-bit seed; same seed, byte-identical tapes.
std::pair<DealerTape, DealerTape> dealer_generate(const TapeSpec& spec, uint64_t seed_hi, uint64_t seed_lo);

struct PartyContext {
  int party_id = 0;
  net::Channel* peer = nullptr;
  DealerTape tape;
  uint64_t session_id = 0;
  std::mt19937_64 rng{0xF00D};

  bool is_p0() const { return party_id == 0; }
};

// ---- sharing / reconstruction ----

std::pair<SharedTensor, SharedTensor> share(const fxp::RingTensor& secret, std::mt19937_64& rng,
                                            uint64_t session_id = 0);
fxp::RingTensor reconstruct(const SharedTensor& s0, const SharedTensor& s1);
// Over-channel variant; costs 1 round, |tensor| elements per direction.
fxp::RingTensor reconstruct(PartyContext& ctx, const SharedTensor& x);

// ---- linear (local) ----

SharedTensor add_shared(const SharedTensor& x, const SharedTensor& y);
SharedTensor sub_shared(const SharedTensor& x, const SharedTensor& y);
SharedTensor neg_shared(const SharedTensor& x);
SharedTensor add_public(const SharedTensor& x, const fxp::RingTensor& c);
SharedTensor sub_from_public(const fxp::RingTensor& c, const SharedTensor& x);
// Multiply by a public ring tensor/scalar; truncates by trunc_bits locally.
SharedTensor mul_public(const SharedTensor& x, const fxp::RingTensor& c, int trunc_bits);
SharedTensor mul_public_scalar(const SharedTensor& x, double c, int trunc_bits);
// Local probabilistic truncation (party 0 adds the rounding offset).
SharedTensor trunc_shared(const SharedTensor& x, int bits, int out_frac_bits);

// ---- interactive primitives ----

// 1 round; opens x-a and y-b. Result frac = fx + fy - trunc_bits.
SharedTensor mul_beaver(PartyContext& ctx, const SharedTensor& x, const SharedTensor& y, int trunc_bits);
// 1 round; opens (m*k + k*n) elements per direction.
SharedTensor matmul_beaver(PartyContext& ctx, const SharedTensor& x, const SharedTensor& w, int trunc_bits);
// weight-share variant that avoids copying large weight tensors
SharedTensor matmul_beaver(PartyContext& ctx, const SharedTensor& x, const fxp::RingTensor& w_share,
                           int trunc_bits);

// Shares of the sign bit (1 iff signed value < 0), frac_bits 0. 8 rounds.
SharedTensor msb_extract(PartyContext& ctx, const SharedTensor& x);
// x * (1 - msb(x)); msb rounds + 1.
SharedTensor relu_secure(PartyContext& ctx, const SharedTensor& x);

// (1 + u/2^8 + u^2/2^17)^(2^8) with an internal high-precision scale.
// Valid input range [-16, 4]; <= 1% relative error on [-5, 2].
// value_bound is a public bound on exp(max input), used to pick safe
// intermediate scales. out_frac selects the output scale.
SharedTensor exp_secure(PartyContext& ctx, const SharedTensor& x, double value_bound = 60.0,
                        int out_frac = fxp::kFracBits);

// Newton-Raphson reciprocal, 10 iterations, init 3*exp(0.5 - x) + 0.003
// with the exp argument clamped to >= -16. Valid range [0.1, 512].
SharedTensor reciprocal_secure(PartyContext& ctx, const SharedTensor& x);

// Newton-Raphson inverse square root, 8 iterations, init
// 2.5*exp(-x) + 0.05, internal scale 17. Valid range [0.05, 512].
SharedTensor inv_sqrt_secure(PartyContext& ctx, const SharedTensor& x);

// Row softmax over the trailing dimension: exp of publicly shifted rows,
// then multiplication by the reciprocal of the row sum. The public
// per-row shift must satisfy shift >= row max (contract: shift - max <= 2
// for the stated accuracy bound).
SharedTensor softmax_secure(PartyContext& ctx, const SharedTensor& rows, const std::vector<double>& row_shift);

// ---- cost model (mirrors the implementations exactly) ----

struct OpCost {
  uint64_t rounds = 0;
  uint64_t bytes_per_party = 0;  // on-the-wire bytes each party sends
  uint64_t messages = 0;         // messages each party sends
  TapeSpec tape;

  void add(const OpCost& o) {
    rounds += o.rounds;
    bytes_per_party += o.bytes_per_party;
    messages += o.messages;
    tape.add(o.tape);
  }
};

OpCost cost_open(int64_t elems);
OpCost cost_mul(int64_t elems);
OpCost cost_matmul(int64_t m, int64_t k, int64_t n);
OpCost cost_msb(int64_t elems);
OpCost cost_relu(int64_t elems);
OpCost cost_exp(int64_t elems);
OpCost cost_reciprocal(int64_t elems);
OpCost cost_inv_sqrt(int64_t elems);
OpCost cost_softmax(int64_t rows, int64_t cols);

inline constexpr uint64_t kMsbRounds = 8;
inline constexpr uint64_t kReluRounds = kMsbRounds + 1;
inline constexpr uint64_t kExpSquarings = 8;
inline constexpr uint64_t kExpRounds = kExpSquarings + 1;
inline constexpr uint64_t kRecipIters = 10;
inline constexpr uint64_t kRecipRounds = kReluRounds + kExpRounds + 2 * kRecipIters;
inline constexpr uint64_t kInvSqrtIters = 8;
inline constexpr uint64_t kInvSqrtRounds = kReluRounds + kExpRounds + 3 * kInvSqrtIters;
inline constexpr uint64_t kSoftmaxRounds = kExpRounds + kRecipRounds + 1;

// ---- two-party in-process harness ----

// Runs fn(ctx) for both parties on in-proc channels over `profile`;
// returns per-party results and fills transcripts if given.
void run_parties(const TapeSpec& tape_spec, uint64_t seed,
                 const std::function<void(PartyContext&)>& fn,
                 const net::NetworkProfile& profile = net::profile("LAN"),
                 net::ClockMode mode = net::ClockMode::kSimulated,
                 Transcript* transcript = nullptr);

}  // namespace pphh::mpc
