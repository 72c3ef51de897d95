#include "pphh/mpc.hpp"

#include <cmath>
#include <cstring>
#include <thread>

namespace pphh::mpc {

namespace {

constexpr int kRingBits = 64;
constexpr int kBorrowBits = 63;  // borrow circuit runs over bits 0..62

inline int64_t plane_words(int64_t n) { return (n + 63) / 64; }

// AND gates per borrow-circuit level for 63 leaves: {62,32,16,8,4,1}.
const int kLevelAnds[6] = {62, 32, 16, 8, 4, 1};
constexpr int kTotalAnds = 123;

std::vector<uint64_t> open_words(PartyContext& ctx, std::span<const uint64_t> mine, net::MsgKind kind) {
  auto theirs_bytes = ctx.peer->exchange_words(kind, mine);
  std::vector<uint64_t> out = net::to_words(theirs_bytes);
  for (size_t i = 0; i < out.size(); ++i) out[i] += mine[i];
  return out;
}

std::vector<uint64_t> open_xor(PartyContext& ctx, std::span<const uint64_t> mine) {
  auto theirs_bytes = ctx.peer->exchange_words(net::MsgKind::kBitPlanes, mine);
  std::vector<uint64_t> out = net::to_words(theirs_bytes);
  for (size_t i = 0; i < out.size(); ++i) out[i] ^= mine[i];
  return out;
}

}  // namespace

// ---- dealer tape ----

void DealerTape::take_mul(int64_t n, const uint64_t** a, const uint64_t** b, const uint64_t** c) {
  if (mul_pos + static_cast<size_t>(n) > mul_a.size())
    throw DealerUnderrun("elementwise triple tape exhausted (need " + std::to_string(n) + ")");
  *a = mul_a.data() + mul_pos;
  *b = mul_b.data() + mul_pos;
  *c = mul_c.data() + mul_pos;
  mul_pos += static_cast<size_t>(n);
}

const MatmulTriple& DealerTape::take_matmul(int64_t m, int64_t k, int64_t n) {
  if (matmul_pos >= matmuls.size()) throw DealerUnderrun("matmul triple tape exhausted");
  const MatmulTriple& t = matmuls[matmul_pos++];
  if (t.m != m || t.k != k || t.n != n)
    throw DealerUnderrun("matmul triple shape mismatch: tape has (" + std::to_string(t.m) + "," +
                         std::to_string(t.k) + "," + std::to_string(t.n) + "), op needs (" + std::to_string(m) +
                         "," + std::to_string(k) + "," + std::to_string(n) + ")");
  return t;
}

void DealerTape::take_msb(int64_t n, const uint64_t** r, const uint64_t** rbits) {
  if (msb_pos + static_cast<size_t>(n) > msb_r.size()) throw DealerUnderrun("msb masked-pair tape exhausted");
  *r = msb_r.data() + msb_pos;
  *rbits = msb_rbits.data() + msb_pos;
  msb_pos += static_cast<size_t>(n);
}

void DealerTape::take_bits(int64_t words, const uint64_t** a, const uint64_t** b, const uint64_t** c) {
  if (bit_pos + static_cast<size_t>(words) > bit_a.size()) throw DealerUnderrun("bit triple tape exhausted");
  *a = bit_a.data() + bit_pos;
  *b = bit_b.data() + bit_pos;
  *c = bit_c.data() + bit_pos;
  bit_pos += static_cast<size_t>(words);
}

void DealerTape::take_b2a(int64_t n, const uint64_t** bit, const uint64_t** arith) {
  if (b2a_pos + static_cast<size_t>(n) > b2a_bit.size()) throw DealerUnderrun("b2a shared-bit tape exhausted");
  *bit = b2a_bit.data() + b2a_pos;
  *arith = b2a_arith.data() + b2a_pos;
  b2a_pos += static_cast<size_t>(n);
}

// ---- sharing ----

std::pair<SharedTensor, SharedTensor> share(const fxp::RingTensor& secret, std::mt19937_64& rng,
                                            uint64_t session_id) {
  fxp::RingTensor s0(secret.shape, secret.frac_bits);
  fxp::RingTensor s1(secret.shape, secret.frac_bits);
  for (int64_t i = 0; i < secret.numel(); ++i) {
    s0.data[i] = rng();
    s1.data[i] = secret.data[i] - s0.data[i];
  }
  return {SharedTensor{0, std::move(s0), session_id}, SharedTensor{1, std::move(s1), session_id}};
}

fxp::RingTensor reconstruct(const SharedTensor& s0, const SharedTensor& s1) {
  if (s0.session_id != s1.session_id) throw ShapeError("reconstruct: session mismatch");
  fxp::check_combinable(s0.share, s1.share, "reconstruct");
  return fxp::ring_add(s0.share, s1.share);
}

fxp::RingTensor reconstruct(PartyContext& ctx, const SharedTensor& x) {
  auto opened = open_words(ctx, x.share.data, net::MsgKind::kReveal);
  return fxp::RingTensor(x.share.shape, std::move(opened), x.share.frac_bits);
}

// ---- local linear ----

SharedTensor add_shared(const SharedTensor& x, const SharedTensor& y) {
  if (x.session_id != y.session_id) throw ShapeError("add_shared: session mismatch");
  return {x.party_id, fxp::ring_add(x.share, y.share), x.session_id};
}

SharedTensor sub_shared(const SharedTensor& x, const SharedTensor& y) {
  if (x.session_id != y.session_id) throw ShapeError("sub_shared: session mismatch");
  return {x.party_id, fxp::ring_sub(x.share, y.share), x.session_id};
}

SharedTensor neg_shared(const SharedTensor& x) { return {x.party_id, fxp::ring_neg(x.share), x.session_id}; }

SharedTensor add_public(const SharedTensor& x, const fxp::RingTensor& c) {
  if (x.party_id != 0) return x;  // only party 0 adds the public value
  return {x.party_id, fxp::ring_add(x.share, c), x.session_id};
}

SharedTensor sub_from_public(const fxp::RingTensor& c, const SharedTensor& x) {
  SharedTensor out = neg_shared(x);
  return add_public(out, c);
}

SharedTensor mul_public(const SharedTensor& x, const fxp::RingTensor& c, int trunc_bits) {
  if (x.share.shape != c.shape) throw ShapeError("mul_public: shape mismatch");
  SharedTensor out = x;
  for (int64_t i = 0; i < x.numel(); ++i) out.share.data[i] = x.share.data[i] * c.data[i];
  out.share.frac_bits = x.share.frac_bits + c.frac_bits - trunc_bits;
  if (trunc_bits > 0) return trunc_shared(out, trunc_bits, out.share.frac_bits);
  return out;
}

SharedTensor mul_public_scalar(const SharedTensor& x, double c, int trunc_bits) {
  // scalar encoded at the truncation scale so the result keeps x's frac
  uint64_t enc = fxp::encode_scalar(c, trunc_bits);
  SharedTensor out = x;
  for (auto& v : out.share.data) v = v * enc;
  if (trunc_bits > 0) {
    out.share.frac_bits = x.share.frac_bits + trunc_bits;
    return trunc_shared(out, trunc_bits, x.share.frac_bits);
  }
  return out;
}

SharedTensor trunc_shared(const SharedTensor& x, int bits, int out_frac_bits) {
  if (bits <= 0) {
    SharedTensor out = x;
    out.share.frac_bits = out_frac_bits;
    return out;
  }
  SharedTensor out = x;
  out.share.frac_bits = out_frac_bits;
  if (x.party_id == 0) {
    uint64_t off = 1ULL << (bits - 1);
    for (auto& v : out.share.data) v = (v + off) >> bits;
  } else {
    for (auto& v : out.share.data) v = ~(((~v) + 1) >> bits) + 1;
  }
  return out;
}

// ---- Beaver multiplication ----

SharedTensor mul_beaver(PartyContext& ctx, const SharedTensor& x, const SharedTensor& y, int trunc_bits) {
  if (x.share.shape != y.share.shape) throw ShapeError("mul_beaver: shape mismatch");
  int64_t n = x.numel();
  const uint64_t *a, *b, *c;
  ctx.tape.take_mul(n, &a, &b, &c);

  std::vector<uint64_t> masked(2 * n);
  for (int64_t i = 0; i < n; ++i) {
    masked[i] = x.share.data[i] - a[i];
    masked[n + i] = y.share.data[i] - b[i];
  }
  auto opened = open_words(ctx, masked, net::MsgKind::kOpen);

  SharedTensor out;
  out.party_id = ctx.party_id;
  out.session_id = x.session_id;
  out.share = fxp::RingTensor(x.share.shape, x.share.frac_bits + y.share.frac_bits - trunc_bits);
  for (int64_t i = 0; i < n; ++i) {
    uint64_t eps = opened[i], dlt = opened[n + i];
    uint64_t z = c[i] + eps * b[i] + dlt * a[i];
    if (ctx.is_p0()) z += eps * dlt;
    out.share.data[i] = z;
  }
  if (trunc_bits > 0) {
    out.share.frac_bits = x.share.frac_bits + y.share.frac_bits;
    return trunc_shared(out, trunc_bits, x.share.frac_bits + y.share.frac_bits - trunc_bits);
  }
  return out;
}

SharedTensor matmul_beaver(PartyContext& ctx, const SharedTensor& x, const SharedTensor& w, int trunc_bits) {
  return matmul_beaver(ctx, x, w.share, trunc_bits);
}

SharedTensor matmul_beaver(PartyContext& ctx, const SharedTensor& x, const fxp::RingTensor& w, int trunc_bits) {
  if (x.share.ndim() != 2 || w.ndim() != 2 || x.share.shape[1] != w.shape[0])
    throw ShapeError("matmul_beaver: inner dimensions disagree");
  int64_t m = x.share.shape[0], k = x.share.shape[1], n = w.shape[1];
  const MatmulTriple& t = ctx.tape.take_matmul(m, k, n);

  std::vector<uint64_t> masked(m * k + k * n);
  for (int64_t i = 0; i < m * k; ++i) masked[i] = x.share.data[i] - t.a[i];
  for (int64_t i = 0; i < k * n; ++i) masked[m * k + i] = w.data[i] - t.b[i];
  auto opened = open_words(ctx, masked, net::MsgKind::kOpen);
  masked.clear();
  masked.shrink_to_fit();
  const uint64_t* eps = opened.data();
  const uint64_t* dlt = opened.data() + m * k;

  SharedTensor out;
  out.party_id = ctx.party_id;
  out.session_id = x.session_id;
  out.share = fxp::RingTensor({m, n}, x.share.frac_bits + w.frac_bits);
  std::vector<uint64_t> tmp(m * n);

  fxp::matmul_raw(eps, t.b.data(), out.share.data.data(), m, k, n);
  fxp::matmul_raw(t.a.data(), dlt, tmp.data(), m, k, n);
  for (int64_t i = 0; i < m * n; ++i) out.share.data[i] += tmp[i] + t.c[i];
  if (ctx.is_p0()) {
    fxp::matmul_raw(eps, dlt, tmp.data(), m, k, n);
    for (int64_t i = 0; i < m * n; ++i) out.share.data[i] += tmp[i];
  }
  if (trunc_bits > 0)
    return trunc_shared(out, trunc_bits, x.share.frac_bits + w.frac_bits - trunc_bits);
  return out;
}

// ---- msb: open x+r, then a tree borrow circuit over XOR-shared bit planes ----

namespace {

struct BitPlanes {
  int64_t n = 0, w = 0;
  std::vector<std::vector<uint64_t>> g, p;
};

// Secure AND of XOR-shared plane batches; one exchange for the whole batch.
// ops: list of (x_plane, y_plane, out_plane) index triples into a flat arena.
void and_planes(PartyContext& ctx, const std::vector<const uint64_t*>& xs,
                const std::vector<const uint64_t*>& ys, std::vector<std::vector<uint64_t>>& outs, int64_t w) {
  int64_t k = static_cast<int64_t>(xs.size());
  const uint64_t *ta, *tb, *tc;
  ctx.tape.take_bits(k * w, &ta, &tb, &tc);

  std::vector<uint64_t> masked(2 * k * w);
  for (int64_t j = 0; j < k; ++j)
    for (int64_t i = 0; i < w; ++i) {
      masked[j * 2 * w + i] = xs[j][i] ^ ta[j * w + i];
      masked[j * 2 * w + w + i] = ys[j][i] ^ tb[j * w + i];
    }
  auto opened = open_xor(ctx, masked);

  outs.resize(k);
  for (int64_t j = 0; j < k; ++j) {
    outs[j].assign(w, 0);
    const uint64_t* eps = opened.data() + j * 2 * w;
    const uint64_t* dlt = eps + w;
    for (int64_t i = 0; i < w; ++i) {
      uint64_t z = tc[j * w + i] ^ (eps[i] & tb[j * w + i]) ^ (dlt[i] & ta[j * w + i]);
      if (ctx.is_p0()) z ^= eps[i] & dlt[i];
      outs[j][i] = z;
    }
  }
}

}  // namespace

SharedTensor msb_extract(PartyContext& ctx, const SharedTensor& x) {
  int64_t n = x.numel();
  int64_t w = plane_words(n);
  const uint64_t *r_arith, *r_bits;
  ctx.tape.take_msb(n, &r_arith, &r_bits);

  // round 1: open d = x + r
  std::vector<uint64_t> dr(n);
  for (int64_t i = 0; i < n; ++i) dr[i] = x.share.data[i] + r_arith[i];
  auto d = open_words(ctx, dr, net::MsgKind::kOpen);

  // leaves: g_i = r_i & ~d_i ; p_i = ~(d_i ^ r_i), XOR-shared, bits 0..62
  std::vector<std::vector<uint64_t>> g(kBorrowBits, std::vector<uint64_t>(w, 0));
  std::vector<std::vector<uint64_t>> p(kBorrowBits, std::vector<uint64_t>(w, 0));
  for (int64_t e = 0; e < n; ++e) {
    uint64_t gw = r_bits[e] & ~d[e];
    uint64_t pw = ctx.is_p0() ? (d[e] ^ r_bits[e] ^ ~0ULL) : r_bits[e];
    uint64_t word = static_cast<uint64_t>(e) >> 6;
    uint64_t bit = 1ULL << (e & 63);
    for (int i = 0; i < kBorrowBits; ++i) {
      if ((gw >> i) & 1) g[i][word] |= bit;
      if ((pw >> i) & 1) p[i][word] |= bit;
    }
  }

  // tree combine: (G,P)_hi o (G,P)_lo = (G_hi ^ (P_hi & G_lo), P_hi & P_lo)
  int count = kBorrowBits;
  while (count > 1) {
    int pairs = count / 2;
    bool final_level = (count == 2);
    std::vector<const uint64_t*> xs, ys;
    for (int j = 0; j < pairs; ++j) {
      xs.push_back(p[2 * j + 1].data());  // P_hi & G_lo
      ys.push_back(g[2 * j].data());
      if (!final_level) {
        xs.push_back(p[2 * j + 1].data());  // P_hi & P_lo
        ys.push_back(p[2 * j].data());
      }
    }
    std::vector<std::vector<uint64_t>> outs;
    and_planes(ctx, xs, ys, outs, w);

    std::vector<std::vector<uint64_t>> ng(pairs + (count % 2)), np(pairs + (count % 2));
    int per = final_level ? 1 : 2;
    for (int j = 0; j < pairs; ++j) {
      ng[j].assign(w, 0);
      for (int64_t i = 0; i < w; ++i) ng[j][i] = g[2 * j + 1][i] ^ outs[j * per][i];
      if (!final_level)
        np[j] = std::move(outs[j * per + 1]);
      else
        np[j].assign(w, 0);
    }
    if (count % 2) {
      ng[pairs] = std::move(g[count - 1]);
      np[pairs] = std::move(p[count - 1]);
    }
    g = std::move(ng);
    p = std::move(np);
    count = pairs + (count % 2);
  }

  // msb plane = d_63 ^ r_63 ^ borrow
  std::vector<uint64_t> msb_plane = std::move(g[0]);
  for (int64_t e = 0; e < n; ++e) {
    uint64_t v = (r_bits[e] >> 63) & 1;
    if (ctx.is_p0()) v ^= (d[e] >> 63) & 1;
    if (v) msb_plane[e >> 6] ^= 1ULL << (e & 63);
  }

  // B2A: open m = v ^ rho, then arith = m + rho - 2*m*rho
  const uint64_t *rho_bit, *rho_arith;
  ctx.tape.take_b2a(n, &rho_bit, &rho_arith);
  std::vector<uint64_t> masked(w, 0);
  for (int64_t e = 0; e < n; ++e)
    if (((msb_plane[e >> 6] >> (e & 63)) ^ rho_bit[e]) & 1) masked[e >> 6] |= 1ULL << (e & 63);
  auto m_open = open_xor(ctx, masked);

  SharedTensor out;
  out.party_id = ctx.party_id;
  out.session_id = x.session_id;
  out.share = fxp::RingTensor(x.share.shape, 0);
  for (int64_t e = 0; e < n; ++e) {
    uint64_t m = (m_open[e >> 6] >> (e & 63)) & 1;
    uint64_t v = rho_arith[e];
    if (m) v = (ctx.is_p0() ? 1ULL : 0ULL) - v;  // 1 - rho
    out.share.data[e] = v;
  }
  return out;
}

SharedTensor relu_secure(PartyContext& ctx, const SharedTensor& x) {
  SharedTensor bit = msb_extract(ctx, x);
  SharedTensor xb = mul_beaver(ctx, x, bit, 0);
  SharedTensor out = sub_shared(x, xb);
  out.share.frac_bits = x.share.frac_bits;
  return out;
}

// ---- exp via squared Taylor base with a descending scale schedule ----

namespace {
constexpr int kExpBaseScale = 18;
constexpr int kWrapMarginBits = 25;
}  // namespace

SharedTensor exp_secure(PartyContext& ctx, const SharedTensor& x, double value_bound, int out_frac) {
  const int f = x.share.frac_bits;
  const int T = static_cast<int>(kExpSquarings);
  const int SB = kExpBaseScale;

  // base = 1 + u/2^T + u^2/2^(2T+1) at scale SB
  SharedTensor u_t = trunc_shared(x, f + T - SB, SB);
  SharedTensor sq = mul_beaver(ctx, x, x, 2 * f - SB);  // u^2 @ SB
  SharedTensor u2 = trunc_shared(sq, 2 * T + 1, SB);
  SharedTensor base = add_shared(u_t, u2);
  base = add_public(base, fxp::RingTensor(x.share.shape, std::vector<uint64_t>(x.numel(), 1ULL << SB), SB));
  base.share.frac_bits = SB;

  // scale schedule: keep precision while the value bound stays small
  std::vector<int> scales(T);
  int s = SB;
  double vb = 1.0 + 5.0 / (1 << T);
  for (int k = 0; k < T; ++k) {
    double nb = vb * vb;
    while (2 * s + std::log2(std::max(nb, 1.0)) > 63 - kWrapMarginBits && s > out_frac) --s;
    scales[k] = s;
    vb = std::min(nb, value_bound);
  }

  SharedTensor y = base;
  int cur = SB;
  for (int k = 0; k < T; ++k) {
    int out_s = std::min(k < T - 1 ? scales[k] : out_frac, cur);
    y = mul_beaver(ctx, y, y, 2 * cur - out_s);
    y.share.frac_bits = out_s;
    cur = out_s;
  }
  return y;
}

namespace {

// clamp(u, lo) = relu(u - lo) + lo, for public lo
SharedTensor clamp_min(PartyContext& ctx, const SharedTensor& u, double lo) {
  int f = u.share.frac_bits;
  fxp::RingTensor c(u.share.shape, std::vector<uint64_t>(u.numel(), fxp::encode_scalar(lo, f)), f);
  SharedTensor shifted = u;
  if (ctx.is_p0())
    for (int64_t i = 0; i < u.numel(); ++i) shifted.share.data[i] = u.share.data[i] - c.data[i];
  SharedTensor r = relu_secure(ctx, shifted);
  return add_public(r, c);
}

}  // namespace

SharedTensor reciprocal_secure(PartyContext& ctx, const SharedTensor& x) {
  const int f = x.share.frac_bits;
  fxp::RingTensor half(x.share.shape, std::vector<uint64_t>(x.numel(), fxp::encode_scalar(0.5, f)), f);
  SharedTensor u = sub_from_public(half, x);
  u = clamp_min(ctx, u, -16.0);
  SharedTensor e = exp_secure(ctx, u, std::exp(0.5), f);

  SharedTensor y = e;
  for (auto& v : y.share.data) v *= 3;
  y = add_public(y, fxp::RingTensor(x.share.shape,
                                    std::vector<uint64_t>(x.numel(), fxp::encode_scalar(0.003, f)), f));

  fxp::RingTensor two(x.share.shape, std::vector<uint64_t>(x.numel(), fxp::encode_scalar(2.0, f)), f);
  for (uint64_t it = 0; it < kRecipIters; ++it) {
    SharedTensor xy = mul_beaver(ctx, x, y, f);
    SharedTensor t = sub_from_public(two, xy);
    y = mul_beaver(ctx, y, t, f);
  }
  return y;
}

SharedTensor inv_sqrt_secure(PartyContext& ctx, const SharedTensor& x) {
  const int f = x.share.frac_bits;
  const int g = f + 1;  // internal scale
  SharedTensor u = neg_shared(x);
  u = clamp_min(ctx, u, -16.0);
  SharedTensor e = exp_secure(ctx, u, 1.0, g);

  SharedTensor y = mul_public_scalar(e, 2.5, f);  // stays @ g
  y = add_public(y, fxp::RingTensor(x.share.shape,
                                    std::vector<uint64_t>(x.numel(), fxp::encode_scalar(0.05, g)), g));

  fxp::RingTensor three(x.share.shape, std::vector<uint64_t>(x.numel(), fxp::encode_scalar(3.0, g)), g);
  for (uint64_t it = 0; it < kInvSqrtIters; ++it) {
    bool last = it + 1 == kInvSqrtIters;
    SharedTensor xy = mul_beaver(ctx, x, y, f);       // x*y @ g
    SharedTensor q = mul_beaver(ctx, xy, y, g);       // x*y*y @ g
    SharedTensor t = sub_from_public(three, q);
    // y*(3 - x*y^2)/2: fold the halving into the truncation
    int tb = g + 1 + (last ? g - f : 0);
    SharedTensor yn = mul_beaver(ctx, y, t, tb);
    yn.share.frac_bits = last ? f : g;
    y = yn;
  }
  return y;
}

SharedTensor softmax_secure(PartyContext& ctx, const SharedTensor& rows, const std::vector<double>& row_shift) {
  if (rows.share.ndim() != 2) throw ShapeError("softmax_secure: expected 2-d rows");
  int64_t r = rows.share.shape[0], c = rows.share.shape[1];
  if (static_cast<int64_t>(row_shift.size()) != r) throw ShapeError("softmax_secure: shift size mismatch");
  const int f = rows.share.frac_bits;

  SharedTensor shifted = rows;
  if (ctx.is_p0())
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j)
        shifted.share.data[i * c + j] -= fxp::encode_scalar(row_shift[i], f);

  SharedTensor ex = exp_secure(ctx, shifted, 1.0, f);

  SharedTensor sum;
  sum.party_id = ctx.party_id;
  sum.session_id = rows.session_id;
  sum.share = fxp::RingTensor({r}, f);
  for (int64_t i = 0; i < r; ++i) {
    uint64_t acc = 0;
    for (int64_t j = 0; j < c; ++j) acc += ex.share.data[i * c + j];
    sum.share.data[i] = acc;
  }

  SharedTensor inv = reciprocal_secure(ctx, sum);

  SharedTensor inv_b;  // broadcast over columns
  inv_b.party_id = ctx.party_id;
  inv_b.session_id = rows.session_id;
  inv_b.share = fxp::RingTensor({r, c}, f);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) inv_b.share.data[i * c + j] = inv.share.data[i];

  return mul_beaver(ctx, ex, inv_b, f);
}

// ---- analytic cost model ----

OpCost cost_open(int64_t elems) {
  OpCost c;
  c.rounds = 1;
  c.messages = 1;
  c.bytes_per_party = 8 * static_cast<uint64_t>(elems) + net::kHeaderBytes;
  return c;
}

OpCost cost_mul(int64_t elems) {
  OpCost c;
  c.rounds = 1;
  c.messages = 1;
  c.bytes_per_party = 16 * static_cast<uint64_t>(elems) + net::kHeaderBytes;
  c.tape.mul_elems = static_cast<uint64_t>(elems);
  return c;
}

OpCost cost_matmul(int64_t m, int64_t k, int64_t n) {
  OpCost c;
  c.rounds = 1;
  c.messages = 1;
  c.bytes_per_party = 8 * static_cast<uint64_t>(m * k + k * n) + net::kHeaderBytes;
  c.tape.matmuls.push_back({m, k, n});
  return c;
}

OpCost cost_msb(int64_t elems) {
  int64_t w = plane_words(elems);
  OpCost c;
  c.rounds = kMsbRounds;
  c.messages = kMsbRounds;
  c.bytes_per_party = 8 * static_cast<uint64_t>(elems) + net::kHeaderBytes;  // open x+r
  for (int lvl = 0; lvl < 6; ++lvl)
    c.bytes_per_party += 8 * static_cast<uint64_t>(kLevelAnds[lvl]) * 2 * w + net::kHeaderBytes;
  c.bytes_per_party += 8 * static_cast<uint64_t>(w) + net::kHeaderBytes;  // b2a open
  c.tape.msb_elems = static_cast<uint64_t>(elems);
  c.tape.bit_words = static_cast<uint64_t>(kTotalAnds) * w;
  c.tape.b2a_elems = static_cast<uint64_t>(elems);
  return c;
}

OpCost cost_relu(int64_t elems) {
  OpCost c = cost_msb(elems);
  c.add(cost_mul(elems));
  return c;
}

OpCost cost_exp(int64_t elems) {
  OpCost c;
  for (uint64_t i = 0; i < kExpRounds; ++i) c.add(cost_mul(elems));
  return c;
}

OpCost cost_reciprocal(int64_t elems) {
  OpCost c = cost_relu(elems);
  c.add(cost_exp(elems));
  for (uint64_t i = 0; i < 2 * kRecipIters; ++i) c.add(cost_mul(elems));
  return c;
}

OpCost cost_inv_sqrt(int64_t elems) {
  OpCost c = cost_relu(elems);
  c.add(cost_exp(elems));
  for (uint64_t i = 0; i < 3 * kInvSqrtIters; ++i) c.add(cost_mul(elems));
  return c;
}

OpCost cost_softmax(int64_t rows, int64_t cols) {
  OpCost c = cost_exp(rows * cols);
  c.add(cost_reciprocal(rows));
  c.add(cost_mul(rows * cols));
  return c;
}

// ---- in-process two-party harness ----

void run_parties(const TapeSpec& tape_spec, uint64_t seed, const std::function<void(PartyContext&)>& fn,
                 const net::NetworkProfile& profile, net::ClockMode mode, Transcript* transcript) {
  auto [ch0, ch1] = net::InProcChannel::make_pair();
  ch0->set_profile(profile);
  ch1->set_profile(profile);
  ch0->set_mode(mode);
  ch1->set_mode(mode);

  auto [tape0, tape1] = dealer_generate(tape_spec, seed, 0x5EED5EED5EED5EEDULL);

  PartyContext c0{0, ch0.get(), std::move(tape0), 0};
  PartyContext c1{1, ch1.get(), std::move(tape1), 0};
  c0.rng.seed(seed * 2 + 1);
  c1.rng.seed(seed * 2 + 2);

  std::exception_ptr err0, err1;
  std::thread t1([&] {
    try {
      fn(c1);
    } catch (...) {
      err1 = std::current_exception();
      ch1->send(net::MsgKind::kControl, {});
    }
  });
  try {
    fn(c0);
  } catch (...) {
    err0 = std::current_exception();
    ch0->send(net::MsgKind::kControl, {});
  }
  t1.join();
  if (err0) std::rethrow_exception(err0);
  if (err1) std::rethrow_exception(err1);

  if (transcript) {
    transcript->rounds += ch0->counters().rounds;
    transcript->bytes_sent[0] += ch0->counters().bytes_sent;
    transcript->bytes_sent[1] += ch1->counters().bytes_sent;
  }
}

}  // namespace pphh::mpc
