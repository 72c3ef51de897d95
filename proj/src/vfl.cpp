#include "pphh/vfl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <thread>

namespace pphh::vfl {

using fxp::RingTensor;
using mpc::PartyContext;
using mpc::SharedTensor;

// ---- partitioning and masked sequences ----

PartitionedSequence partition_sequence(const data::SequenceRecord& rec, int n_clients, std::mt19937_64& rng) {
  int len = static_cast<int>(rec.steps.size());
  auto owner = data::assign_clients(len, n_clients, rng);
  PartitionedSequence out;
  out.seq_id = rec.seq_id;
  out.total_len = len;
  out.label = rec.label;
  out.per_client.resize(n_clients);
  for (int t = 0; t < len; ++t) {
    OwnedStep s;
    s.global_pos = t;
    s.order_key = rec.steps[t].order_key;
    s.features = rec.steps[t].features;
    out.per_client[owner[t]].push_back(std::move(s));
  }
  return out;
}

MaskedSequence build_masked_sequence(const std::vector<OwnedStep>& view, const std::vector<int>& positions,
                                     int total_len, int feature_dim) {
  if (view.size() != positions.size()) throw ShapeError("build_masked_sequence: positions/view mismatch");
  MaskedSequence out;
  out.length = total_len;
  out.tokens = Tensor({total_len, feature_dim + 1});
  out.owned.assign(total_len, 0);
  for (int64_t i = 0; i < total_len; ++i) out.tokens.at(i, feature_dim) = 1.0;  // MASK sentinel rows
  for (size_t i = 0; i < view.size(); ++i) {
    int p = positions[i];
    if (p < 0 || p >= total_len)
      throw ShapeError("build_masked_sequence: position " + std::to_string(p) + " >= total_len " +
                       std::to_string(total_len));
    if (out.owned[p]) throw ShapeError("build_masked_sequence: duplicate position " + std::to_string(p));
    out.owned[p] = 1;
    for (int f = 0; f < feature_dim; ++f) out.tokens.at(p, f) = view[i].features[f];
    out.tokens.at(p, feature_dim) = 0.0;
  }
  return out;
}

uint64_t pack_order_key(int64_t order_key, int client, int local_idx) {
  return (static_cast<uint64_t>(order_key) << 16) | (static_cast<uint64_t>(client & 0xFF) << 8) |
         static_cast<uint64_t>(local_idx & 0xFF);
}

BatchShape batch_shape(const std::vector<PartitionedSequence>& batch) {
  BatchShape bs;
  bs.batch = static_cast<int64_t>(batch.size());
  for (const auto& seq : batch) {
    bs.seq_lens.push_back(seq.total_len);
    std::vector<int64_t> counts;
    for (const auto& v : seq.per_client) counts.push_back(static_cast<int64_t>(v.size()));
    bs.owned.push_back(std::move(counts));
  }
  return bs;
}

// ---- session plumbing ----

namespace {

uint64_t trunc_share_word(int party, uint64_t v, int bits) {
  if (party == 0) return (v + (1ULL << (bits - 1))) >> bits;
  return ~(((~v) + 1) >> bits) + 1;
}

struct Session {
  SessionConfig cfg;
  int n_clients;
  std::unique_ptr<net::InProcChannel> link[2];  // party0 <-> party1
  std::vector<std::unique_ptr<net::InProcChannel>> c2p[2];  // client-side endpoints
  std::vector<std::unique_ptr<net::InProcChannel>> p2c[2];  // party-side endpoints
  PartyContext ctx[2];

  Session(const mpc::TapeSpec& tape, const SessionConfig& c, int n) : cfg(c), n_clients(n) {
    auto [a, b] = net::InProcChannel::make_pair();
    link[0] = std::move(a);
    link[1] = std::move(b);
    for (int p = 0; p < 2; ++p) {
      link[p]->set_profile(cfg.profile);
      link[p]->set_mode(cfg.mode);
      for (int cl = 0; cl < n; ++cl) {
        auto [ce, pe] = net::InProcChannel::make_pair();
        for (auto* ch : {ce.get(), pe.get()}) {
          ch->set_profile(cfg.profile);
          ch->set_mode(cfg.mode);
        }
        c2p[p].push_back(std::move(ce));
        p2c[p].push_back(std::move(pe));
      }
    }
    auto [t0, t1] = mpc::dealer_generate(tape, cfg.seed, 0x7EA7EA7EA7EA7EAULL);
    ctx[0] = PartyContext{0, link[0].get(), std::move(t0), 0};
    ctx[1] = PartyContext{1, link[1].get(), std::move(t1), 0};
    ctx[0].rng.seed(cfg.seed * 2 + 1);
    ctx[1].rng.seed(cfg.seed * 2 + 2);
  }

  void run_phase(const std::function<void(PartyContext&)>& fn) {
    std::exception_ptr err0, err1;
    std::thread t1([&] {
      try {
        fn(ctx[1]);
      } catch (...) {
        err1 = std::current_exception();
        link[1]->send(net::MsgKind::kControl, {});
      }
    });
    try {
      fn(ctx[0]);
    } catch (...) {
      err0 = std::current_exception();
      link[0]->send(net::MsgKind::kControl, {});
    }
    t1.join();
    if (err0) std::rethrow_exception(err0);
    if (err1) std::rethrow_exception(err1);
  }

  // both endpoints see each exchange; one-way pushes on the link originate at
  // party 0, so party 0's clock carries the full link schedule
  double link_sim_time() const { return link[0]->sim_elapsed_s(); }
};

// one-way push phase latency: half an RTT plus the largest parallel payload
double push_phase_time(const std::vector<uint64_t>& payload_bytes, const net::NetworkProfile& prof) {
  uint64_t mx = 0;
  for (auto b : payload_bytes) mx = std::max(mx, b);
  return prof.rtt_ms / 2000.0 + net::serialization_s(mx, prof);
}

// Stage accounting. Stage time is always the deterministic model
// (link time + push latency + flops * sec_per_flop); in real-clock mode the
// channels additionally sleep, and the harness measures wall time itself.
struct StageRecorder {
  Session& s;
  mpc::Transcript transcript;
  double last_link_time = 0;
  uint64_t last_flops = 0;

  explicit StageRecorder(Session& sess) : s(sess) {}

  void mark(const std::string& label, uint64_t link_rounds, uint64_t push_phases, double push_time) {
    double link_t = s.link_sim_time();
    uint64_t flops = flop_count();
    double t = (link_t - last_link_time) + push_time +
               static_cast<double>(flops - last_flops) * s.cfg.sec_per_flop;
    transcript.rounds += link_rounds + push_phases;
    transcript.add_stage(label, t);
    last_link_time = link_t;
    last_flops = flops;
  }

  void resync() {
    last_link_time = s.link_sim_time();
    last_flops = flop_count();
  }

  void finish() {
    for (int p = 0; p < 2; ++p) {
      uint64_t b = s.link[p]->counters().bytes_sent;
      // client->party and party->client messages are attributed to party p's column
      for (int cl = 0; cl < s.n_clients; ++cl)
        b += s.p2c[p][cl]->counters().bytes_sent + s.c2p[p][cl]->counters().bytes_sent;
      transcript.bytes_sent[p] = b;
    }
  }
};

}  // namespace

// ---- fixed-point weight shares ----

namespace {

struct FixedLinearShares {
  RingTensor w, b;
};

struct FixedMlpShares {
  std::vector<FixedLinearShares> layers;
};

std::pair<FixedMlpShares, FixedMlpShares> share_mlp(nn::Mlp& mlp, std::mt19937_64& rng) {
  FixedMlpShares a, b;
  for (size_t i = 0; i < mlp.weights.size(); ++i) {
    auto [w0, w1] = mpc::share(fxp::encode(mlp.weights[i].value), rng);
    auto [b0, b1] = mpc::share(fxp::encode(mlp.biases[i].value), rng);
    a.layers.push_back({std::move(w0.share), std::move(b0.share)});
    b.layers.push_back({std::move(w1.share), std::move(b1.share)});
  }
  return {std::move(a), std::move(b)};
}

SharedTensor add_bias_shared(const SharedTensor& x, const RingTensor& bias) {
  SharedTensor out = x;
  int64_t rows = x.share.shape[0], cols = x.share.shape[1];
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out.share.data[r * cols + c] += bias.data[c];
  return out;
}

SharedTensor secure_mlp_forward(PartyContext& ctx, SharedTensor x, const FixedMlpShares& mlp) {
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    x = mpc::matmul_beaver(ctx, x, mlp.layers[i].w, fxp::kFracBits);
    x = add_bias_shared(x, mlp.layers[i].b);
    if (i + 1 < mlp.layers.size()) x = mpc::relu_secure(ctx, x);
  }
  return x;
}

mpc::OpCost cost_mlp_forward(const std::vector<int64_t>& widths, int64_t batch) {
  mpc::OpCost c;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    c.add(mpc::cost_matmul(batch, widths[i], widths[i + 1]));
    if (i + 2 < widths.size()) c.add(mpc::cost_relu(batch * widths[i + 1]));
  }
  return c;
}

std::pair<RingTensor, RingTensor> share_embedding(const Tensor& e, std::mt19937_64& rng) {
  auto enc = fxp::encode(e);
  auto [s0, s1] = mpc::share(enc, rng);
  return {std::move(s0.share), std::move(s1.share)};
}

std::vector<float> to_f32(const Tensor& t) {
  std::vector<float> out(t.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(t.data[i]);
  return out;
}

}  // namespace

// ---- protocol p ----

namespace {

struct KeyLayout {
  std::vector<int64_t> seq_start;
  std::vector<std::vector<int64_t>> client_start, client_count;
  int64_t total = 0;
  int64_t pairs = 0;
};

KeyLayout key_layout(const BatchShape& bs, int n_clients) {
  KeyLayout L;
  for (size_t q = 0; q < bs.seq_lens.size(); ++q) {
    L.seq_start.push_back(L.total);
    std::vector<int64_t> starts, counts;
    for (int c = 0; c < n_clients; ++c) {
      starts.push_back(L.total);
      counts.push_back(bs.owned[q][c]);
      L.total += bs.owned[q][c];
    }
    L.client_start.push_back(std::move(starts));
    L.client_count.push_back(std::move(counts));
    int64_t k = bs.seq_lens[q];
    L.pairs += k * (k - 1) / 2;
  }
  return L;
}

std::vector<uint64_t> per_client_key_counts(const BatchShape& bs, int n_clients) {
  std::vector<uint64_t> out(n_clients, 0);
  for (size_t q = 0; q < bs.seq_lens.size(); ++q)
    for (int c = 0; c < n_clients; ++c) out[c] += static_cast<uint64_t>(bs.owned[q][c]);
  return out;
}

}  // namespace

PipelineCost cost_position_recovery(const BatchShape& bs, int n_clients) {
  KeyLayout L = key_layout(bs, n_clients);
  auto counts = per_client_key_counts(bs, n_clients);
  PipelineCost pc;
  StageCost st;
  st.label = mpc::kStageReconstructInput;
  st.rounds += 1;  // key push phase
  for (auto kc : counts) st.bytes += 2 * (8 * kc + net::kHeaderBytes);
  mpc::OpCost msb = mpc::cost_msb(L.pairs);
  st.rounds += msb.rounds;
  st.bytes += 2 * msb.bytes_per_party;
  pc.tape.add(msb.tape);
  st.rounds += 1;  // position reveal phase
  for (auto kc : counts) st.bytes += 2 * (8 * kc + net::kHeaderBytes);
  pc.stages.push_back(std::move(st));
  return pc;
}

namespace {

std::vector<std::vector<std::vector<int>>> recovery_phase(Session& s, StageRecorder& rec,
                                                          const std::vector<PartitionedSequence>& batch) {
  int n = s.n_clients;
  auto p0_flops = std::make_shared<uint64_t>(0);
  BatchShape bs = batch_shape(batch);
  KeyLayout L = key_layout(bs, n);

  std::vector<uint64_t> push_bytes;
  {
    std::mt19937_64 crng(s.cfg.seed ^ 0xC11E57);
    for (int c = 0; c < n; ++c) {
      std::vector<uint64_t> keys;
      for (const auto& seq : batch) {
        const auto& view = seq.per_client[c];
        for (size_t i = 0; i < view.size(); ++i)
          keys.push_back(pack_order_key(view[i].order_key, c, static_cast<int>(i)));
      }
      int64_t n_keys = static_cast<int64_t>(keys.size());
      RingTensor kt({n_keys}, std::move(keys), 0);
      auto [s0, s1] = mpc::share(kt, crng);
      s.c2p[0][c]->send_words(net::MsgKind::kShare, s0.share.data);
      s.c2p[1][c]->send_words(net::MsgKind::kShare, s1.share.data);
      push_bytes.push_back(8 * static_cast<uint64_t>(s0.share.numel()) + net::kHeaderBytes);
    }
  }
  double push_t = push_phase_time(push_bytes, s.cfg.profile);

  s.run_phase([&](PartyContext& ctx) {
    uint64_t f0 = flop_count();
    std::vector<uint64_t> keys(L.total);
    for (int c = 0; c < n; ++c) {
      auto words = net::to_words(s.p2c[ctx.party_id][c]->receive(net::MsgKind::kShare));
      size_t w = 0;
      for (size_t q = 0; q < batch.size(); ++q) {
        int64_t off = L.client_start[q][c];
        for (int64_t i = 0; i < L.client_count[q][c]; ++i) keys[off + i] = words[w++];
      }
    }
    std::vector<uint64_t> diffs(L.pairs);
    int64_t d = 0;
    for (size_t q = 0; q < batch.size(); ++q) {
      int64_t base = L.seq_start[q];
      int64_t k = bs.seq_lens[q];
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = a + 1; b < k; ++b) diffs[d++] = keys[base + a] - keys[base + b];
    }
    SharedTensor dsh{ctx.party_id, RingTensor({L.pairs}, std::move(diffs), 0), 0};
    SharedTensor bits = mpc::msb_extract(ctx, dsh);  // 1 iff key_a < key_b

    std::vector<uint64_t> pos(L.total, 0);
    d = 0;
    for (size_t q = 0; q < batch.size(); ++q) {
      int64_t base = L.seq_start[q];
      int64_t k = bs.seq_lens[q];
      for (int64_t a = 0; a < k; ++a)
        for (int64_t b = a + 1; b < k; ++b) {
          uint64_t bit = bits.share.data[d++];
          pos[base + b] += bit;  // key_a < key_b puts a before b
          pos[base + a] += (ctx.is_p0() ? 1ULL : 0ULL) - bit;
        }
    }
    for (int c = 0; c < n; ++c) {
      std::vector<uint64_t> mine;
      for (size_t q = 0; q < batch.size(); ++q) {
        int64_t off = L.client_start[q][c];
        for (int64_t i = 0; i < L.client_count[q][c]; ++i) mine.push_back(pos[off + i]);
      }
      s.p2c[ctx.party_id][c]->send_words(net::MsgKind::kReveal, mine);
    }
    if (ctx.is_p0()) *p0_flops = flop_count() - f0;
  });

  std::vector<std::vector<std::vector<int>>> out(batch.size());
  for (size_t q = 0; q < batch.size(); ++q) out[q].resize(n);
  std::vector<uint64_t> reveal_bytes;
  for (int c = 0; c < n; ++c) {
    auto w0 = net::to_words(s.c2p[0][c]->receive(net::MsgKind::kReveal));
    auto w1 = net::to_words(s.c2p[1][c]->receive(net::MsgKind::kReveal));
    reveal_bytes.push_back(8 * static_cast<uint64_t>(w0.size()) + net::kHeaderBytes);
    size_t w = 0;
    for (size_t q = 0; q < batch.size(); ++q)
      for (int64_t i = 0; i < L.client_count[q][c]; ++i) {
        out[q][c].push_back(static_cast<int>(w0[w] + w1[w]));
        ++w;
      }
  }
  double reveal_t = push_phase_time(reveal_bytes, s.cfg.profile);
  rec.mark(mpc::kStageReconstructInput, mpc::kMsbRounds, 2,
           push_t + reveal_t + static_cast<double>(*p0_flops) * s.cfg.sec_per_flop);
  return out;
}

}  // namespace

std::vector<std::vector<std::vector<int>>> secure_position_recovery(
    const std::vector<PartitionedSequence>& batch, const SessionConfig& cfg) {
  BatchShape bs = batch_shape(batch);
  int n = static_cast<int>(batch.front().per_client.size());
  PipelineCost pc = cost_position_recovery(bs, n);
  Session s(pc.tape, cfg, n);
  StageRecorder rec(s);
  rec.resync();
  return recovery_phase(s, rec, batch);
}

// ---- client-side plaintext forward ----

std::vector<ClientInputs> build_client_inputs(const std::vector<PartitionedSequence>& batch, int feature_dim,
                                              const std::vector<std::vector<std::vector<int>>>* positions) {
  int n = static_cast<int>(batch.front().per_client.size());
  int64_t B = static_cast<int64_t>(batch.size());
  int64_t S = 0;
  for (const auto& seq : batch) S = std::max<int64_t>(S, seq.total_len);
  int F = feature_dim;

  std::vector<ClientInputs> out(n);
  for (int c = 0; c < n; ++c) {
    ClientInputs ci;
    ci.x = Tensor({B, S, F + 1});
    ci.attn = Tensor({B, S});
    ci.pool = Tensor({B, S});
    ci.pos.assign(B * S, 0);
    for (int64_t b = 0; b < B; ++b) {
      std::vector<int> pos_c;
      if (positions) {
        pos_c = (*positions)[b][c];
      } else {
        for (const auto& st : batch[b].per_client[c]) pos_c.push_back(st.global_pos);
      }
      auto masked = build_masked_sequence(batch[b].per_client[c], pos_c, batch[b].total_len, F);
      for (int64_t t = 0; t < masked.length; ++t) {
        for (int f = 0; f <= F; ++f) ci.x.data[(b * S + t) * (F + 1) + f] = masked.tokens.at(t, f);
        ci.attn.at(b, t) = 1.0;
        ci.pool.at(b, t) = masked.owned[t] ? 1.0 : 0.0;
        ci.pos[b * S + t] = t;
      }
    }
    out[c] = std::move(ci);
  }
  return out;
}

std::vector<ClientForward> client_encoder_forward(const std::vector<PartitionedSequence>& batch,
                                                  nn::ModelBundle& bundle,
                                                  const std::vector<std::vector<std::vector<int>>>& positions) {
  const auto& spec = bundle.spec;
  int n = spec.n_clients;
  int64_t B = static_cast<int64_t>(batch.size());
  auto inputs = build_client_inputs(batch, spec.feature_dim, &positions);

  std::vector<ClientForward> out(n);
  for (int c = 0; c < n; ++c) {
    nn::Graph g;
    auto e = bundle.encoders[c].forward(g, g.constant(inputs[c].x), inputs[c].pos, inputs[c].attn,
                                        inputs[c].pool);
    ClientForward cf;
    cf.e_pub = Tensor({B, static_cast<int64_t>(spec.h_pub)});
    cf.e_priv = Tensor({B, static_cast<int64_t>(spec.h_priv)});
    for (int64_t b = 0; b < B; ++b) {
      for (int j = 0; j < spec.h_pub; ++j) cf.e_pub.at(b, j) = e->value.at(b, j);
      for (int j = 0; j < spec.h_priv; ++j) cf.e_priv.at(b, j) = e->value.at(b, spec.h_pub + j);
    }
    out[c] = std::move(cf);
  }
  return out;
}

// ---- cost walkers ----

PipelineCost cost_vfl_mpc(const nn::ArchitectureSpec& spec, const BatchShape& bs) {
  PipelineCost pc = cost_position_recovery(bs, spec.n_clients);
  int64_t B = bs.batch;
  uint64_t n = static_cast<uint64_t>(spec.n_clients);

  pc.stages.push_back({mpc::kStageLocalTransformer, 0, 0});

  StageCost sh{mpc::kStageShareHandling, 1, 0};
  sh.bytes += 2 * n * (8 * static_cast<uint64_t>(B) * spec.h_priv + net::kHeaderBytes);
  pc.stages.push_back(sh);

  StageCost head{mpc::kStagePrivateHead, 0, 0};
  mpc::OpCost hc =
      cost_mlp_forward({static_cast<int64_t>(n) * spec.h_priv, spec.a_priv, spec.a_priv, 1}, B);
  head.rounds = hc.rounds;
  head.bytes = 2 * hc.bytes_per_party;
  pc.tape.add(hc.tape);
  pc.stages.push_back(head);

  StageCost rv{mpc::kStageOutputReveal, 1, 0};
  rv.bytes += 2 * n * (8 * static_cast<uint64_t>(B) + net::kHeaderBytes);
  pc.stages.push_back(rv);
  return pc;
}

PipelineCost cost_pphh(const nn::ArchitectureSpec& spec, const BatchShape& bs) {
  PipelineCost pc = cost_position_recovery(bs, spec.n_clients);
  int64_t B = bs.batch;
  uint64_t n = static_cast<uint64_t>(spec.n_clients);

  pc.stages.push_back({mpc::kStageLocalTransformer, 0, 0});

  StageCost sh{mpc::kStageShareHandling, 2, 0};
  sh.bytes += 2 * n * (8 * static_cast<uint64_t>(B) * spec.h_priv + net::kHeaderBytes);
  sh.bytes += n * (4 * static_cast<uint64_t>(B) * spec.h_pub + net::kHeaderBytes);
  pc.stages.push_back(sh);

  pc.stages.push_back({mpc::kStagePublicHead, 0, 0});

  StageCost priv{mpc::kStagePrivateHead, 0, 0};
  mpc::OpCost hc = cost_mlp_forward({static_cast<int64_t>(n) * spec.h_priv, spec.a_priv, spec.y_width}, B);
  priv.rounds = hc.rounds;
  priv.bytes = 2 * hc.bytes_per_party;
  pc.tape.add(hc.tape);
  pc.stages.push_back(priv);

  StageCost fus{mpc::kStageFusionHead, 1, 0};
  fus.bytes += 8 * static_cast<uint64_t>(B) * spec.y_width + net::kHeaderBytes;  // y_pub share push
  mpc::OpCost fc = cost_mlp_forward({2LL * spec.y_width, spec.fusion_hidden, 1}, B);
  fus.rounds += fc.rounds;
  fus.bytes += 2 * fc.bytes_per_party;
  pc.tape.add(fc.tape);
  pc.stages.push_back(fus);

  StageCost rv{mpc::kStageOutputReveal, 1, 0};
  rv.bytes += 2 * n * (8 * static_cast<uint64_t>(B) + net::kHeaderBytes);
  pc.stages.push_back(rv);
  return pc;
}

namespace {

struct E2eDims {
  int64_t B, S, F, d, H, dh, dff, hidden;
};

E2eDims e2e_dims(const nn::ArchitectureSpec& spec, const BatchShape& bs) {
  E2eDims dd;
  dd.B = bs.batch;
  dd.S = bs.seq_lens.at(0);
  for (auto l : bs.seq_lens)
    if (l != dd.S) throw ShapeError("e2e requires uniform sequence length within a batch");
  dd.F = spec.feature_dim;
  dd.d = spec.d_model;
  dd.H = spec.n_heads;
  dd.dh = spec.d_model / spec.n_heads;
  dd.dff = spec.d_ff;
  dd.hidden = spec.central_hidden;
  return dd;
}

mpc::OpCost cost_secure_layernorm(int64_t rows, int64_t width) {
  mpc::OpCost c = mpc::cost_mul(rows * width);  // square of centered values
  c.add(mpc::cost_inv_sqrt(rows));
  c.add(mpc::cost_mul(rows * width));  // centered * istd
  c.add(mpc::cost_mul(rows * width));  // gamma scale
  return c;
}

mpc::OpCost cost_batched_matmuls(const std::vector<std::array<int64_t, 3>>& list) {
  mpc::OpCost c;
  c.rounds = 1;
  c.messages = 1;
  uint64_t words = 0;
  for (const auto& mm : list) {
    words += static_cast<uint64_t>(mm[0] * mm[1] + mm[1] * mm[2]);
    c.tape.matmuls.push_back(mm);
  }
  c.bytes_per_party = 8 * words + net::kHeaderBytes;
  return c;
}

mpc::OpCost cost_e2e_forward(const E2eDims& dd, int n_layers) {
  mpc::OpCost c = cost_batched_matmuls({{dd.B * dd.S, dd.F, dd.d}});
  for (int l = 0; l < n_layers; ++l) {
    c.add(cost_batched_matmuls(
        {{dd.B * dd.S, dd.d, dd.d}, {dd.B * dd.S, dd.d, dd.d}, {dd.B * dd.S, dd.d, dd.d}}));
    std::vector<std::array<int64_t, 3>> scores, pv;
    for (int64_t i = 0; i < dd.B * dd.H; ++i) {
      scores.push_back({dd.S, dd.dh, dd.S});
      pv.push_back({dd.S, dd.S, dd.dh});
    }
    c.add(cost_batched_matmuls(scores));
    c.add(mpc::cost_softmax(dd.B * dd.H * dd.S, dd.S));
    c.add(cost_batched_matmuls(pv));
    c.add(cost_batched_matmuls({{dd.B * dd.S, dd.d, dd.d}}));
    c.add(cost_secure_layernorm(dd.B * dd.S, dd.d));
    c.add(cost_batched_matmuls({{dd.B * dd.S, dd.d, dd.dff}}));
    c.add(mpc::cost_relu(dd.B * dd.S * dd.dff));
    c.add(cost_batched_matmuls({{dd.B * dd.S, dd.dff, dd.d}}));
    c.add(cost_secure_layernorm(dd.B * dd.S, dd.d));
  }
  c.add(cost_batched_matmuls({{dd.B, dd.d, dd.d}}));  // pooled projection
  c.add(cost_batched_matmuls({{dd.B, dd.d, dd.hidden}}));
  c.add(mpc::cost_relu(dd.B * dd.hidden));
  c.add(cost_batched_matmuls({{dd.B, dd.hidden, 1}}));
  return c;
}

}  // namespace

PipelineCost cost_e2e(const nn::ArchitectureSpec& spec, const BatchShape& bs) {
  PipelineCost pc = cost_position_recovery(bs, spec.n_clients);
  E2eDims dd = e2e_dims(spec, bs);
  int n = spec.n_clients;
  auto counts = per_client_key_counts(bs, n);

  StageCost sh{mpc::kStageShareHandling, 1, 0};
  for (auto kc : counts) sh.bytes += 2 * (8 * kc * static_cast<uint64_t>(dd.F) + net::kHeaderBytes);
  pc.stages.push_back(sh);

  StageCost fw{mpc::kStagePrivateHead, 0, 0};  // secure model forward
  mpc::OpCost fc = cost_e2e_forward(dd, spec.n_layers);
  fw.rounds = fc.rounds;
  fw.bytes = 2 * fc.bytes_per_party;
  pc.tape.add(fc.tape);
  pc.stages.push_back(fw);

  StageCost rv{mpc::kStageOutputReveal, 1, 0};
  rv.bytes += 2 * static_cast<uint64_t>(n) * (8 * static_cast<uint64_t>(dd.B) + net::kHeaderBytes);
  pc.stages.push_back(rv);
  return pc;
}

// ---- VFL+MPC pipeline ----

PipelineResult run_vfl_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle,
                           const SessionConfig& cfg) {
  const auto& spec = bundle.spec;
  if (spec.is_hybrid()) throw ShapeError("run_vfl_mpc expects a P-variant bundle");
  int n = spec.n_clients;
  int64_t B = static_cast<int64_t>(batch.size());
  BatchShape bs = batch_shape(batch);
  PipelineCost pc = cost_vfl_mpc(spec, bs);

  // session setup: dealer tapes and secret-shared head weights (offline)
  std::mt19937_64 wrng(cfg.seed ^ 0xBEEF);
  auto [head0, head1] = share_mlp(bundle.vfl_head, wrng);
  FixedMlpShares* heads[2] = {&head0, &head1};
  Session s(pc.tape, cfg, n);
  StageRecorder rec(s);
  reset_flop_count();
  rec.resync();

  auto positions = recovery_phase(s, rec, batch);

  auto client_fwd = client_encoder_forward(batch, bundle, positions);
  rec.mark(mpc::kStageLocalTransformer, 0, 0, 0);

  std::mt19937_64 crng(cfg.seed ^ 0x5A5A5A);
  std::vector<uint64_t> push_bytes;
  for (int c = 0; c < n; ++c) {
    auto [s0, s1] = share_embedding(client_fwd[c].e_priv, crng);
    s.c2p[0][c]->send_words(net::MsgKind::kShare, s0.data);
    s.c2p[1][c]->send_words(net::MsgKind::kShare, s1.data);
    push_bytes.push_back(8 * static_cast<uint64_t>(s0.numel()) + net::kHeaderBytes);
  }
  rec.mark(mpc::kStageShareHandling, 0, 1, push_phase_time(push_bytes, cfg.profile));

  uint64_t p0_head_flops = 0;
  s.run_phase([&](PartyContext& ctx) {
    int p = ctx.party_id;
    uint64_t f0 = flop_count();
    std::vector<RingTensor> parts;
    for (int c = 0; c < n; ++c) {
      auto words = net::to_words(s.p2c[p][c]->receive(net::MsgKind::kShare));
      parts.emplace_back(std::vector<int64_t>{B, spec.h_priv}, std::move(words), fxp::kFracBits);
    }
    RingTensor x({B, static_cast<int64_t>(n) * spec.h_priv}, fxp::kFracBits);
    for (int64_t b = 0; b < B; ++b)
      for (int c = 0; c < n; ++c)
        std::memcpy(&x.data[(b * n + c) * spec.h_priv], &parts[c].data[b * spec.h_priv],
                    8 * static_cast<size_t>(spec.h_priv));
    SharedTensor xs{p, std::move(x), 0};
    SharedTensor logits = secure_mlp_forward(ctx, xs, *heads[p]);
    for (int c = 0; c < n; ++c) s.p2c[p][c]->send_words(net::MsgKind::kReveal, logits.share.data);
    if (ctx.is_p0()) p0_head_flops = flop_count() - f0;
  });
  uint64_t head_rounds = 0;
  for (const auto& st : pc.stages)
    if (st.label == mpc::kStagePrivateHead) head_rounds = st.rounds;
  rec.mark(mpc::kStagePrivateHead, head_rounds, 0, static_cast<double>(p0_head_flops) * cfg.sec_per_flop);

  std::vector<uint64_t> reveal_bytes(n, 8 * static_cast<uint64_t>(B) + net::kHeaderBytes);
  Tensor pred({B});
  {
    auto w0 = net::to_words(s.c2p[0][0]->receive(net::MsgKind::kReveal));
    auto w1 = net::to_words(s.c2p[1][0]->receive(net::MsgKind::kReveal));
    for (int c = 1; c < n; ++c) {
      s.c2p[0][c]->receive(net::MsgKind::kReveal);
      s.c2p[1][c]->receive(net::MsgKind::kReveal);
    }
    for (int64_t b = 0; b < B; ++b) pred.data[b] = fxp::decode_scalar(w0[b] + w1[b], fxp::kFracBits);
  }
  rec.mark(mpc::kStageOutputReveal, 0, 1, push_phase_time(reveal_bytes, cfg.profile));
  rec.finish();

  PipelineResult out;
  out.predictions = std::move(pred);
  out.transcript = std::move(rec.transcript);
  return out;
}

// ---- PPHH pipeline ----

PipelineResult run_pphh(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle,
                        const SessionConfig& cfg) {
  const auto& spec = bundle.spec;
  if (!spec.is_hybrid()) throw ShapeError("run_pphh expects an H-variant bundle");
  int n = spec.n_clients;
  int64_t B = static_cast<int64_t>(batch.size());
  BatchShape bs = batch_shape(batch);
  PipelineCost pc = cost_pphh(spec, bs);

  std::mt19937_64 wrng(cfg.seed ^ 0xBEEF);
  auto [priv0, priv1] = share_mlp(bundle.private_head, wrng);
  auto [fus0, fus1] = share_mlp(bundle.fusion_head, wrng);
  FixedMlpShares* priv_heads[2] = {&priv0, &priv1};
  FixedMlpShares* fus_heads[2] = {&fus0, &fus1};

  Session s(pc.tape, cfg, n);
  StageRecorder rec(s);
  reset_flop_count();
  rec.resync();

  auto positions = recovery_phase(s, rec, batch);

  auto client_fwd = client_encoder_forward(batch, bundle, positions);
  rec.mark(mpc::kStageLocalTransformer, 0, 0, 0);

  // clients push e_priv shares to both parties and float32 e_pub to the
  // aggregator (party 0); the plaintext push is the extra accounted round
  std::mt19937_64 crng(cfg.seed ^ 0x5A5A5A);
  std::vector<uint64_t> priv_push, pub_push;
  for (int c = 0; c < n; ++c) {
    auto [s0, s1] = share_embedding(client_fwd[c].e_priv, crng);
    s.c2p[0][c]->send_words(net::MsgKind::kShare, s0.data);
    s.c2p[1][c]->send_words(net::MsgKind::kShare, s1.data);
    priv_push.push_back(8 * static_cast<uint64_t>(s0.numel()) + net::kHeaderBytes);
    auto f32 = to_f32(client_fwd[c].e_pub);
    s.c2p[0][c]->send(net::MsgKind::kEmbedding,
                      {reinterpret_cast<const uint8_t*>(f32.data()), f32.size() * 4});
    pub_push.push_back(4 * f32.size() + net::kHeaderBytes);
  }
  rec.mark(mpc::kStageShareHandling, 0, 2,
           push_phase_time(priv_push, cfg.profile) + push_phase_time(pub_push, cfg.profile));

  uint64_t pub_flops = 0;
  double link_after_priv = 0;
  uint64_t p0_priv_flops = 0, p0_fus_flops = 0;
  s.run_phase([&](PartyContext& ctx) {
    int p = ctx.party_id;
    uint64_t phase_f0 = flop_count();
    std::vector<RingTensor> parts;
    for (int c = 0; c < n; ++c) {
      auto words = net::to_words(s.p2c[p][c]->receive(net::MsgKind::kShare));
      parts.emplace_back(std::vector<int64_t>{B, spec.h_priv}, std::move(words), fxp::kFracBits);
    }
    RingTensor xpriv({B, static_cast<int64_t>(n) * spec.h_priv}, fxp::kFracBits);
    for (int64_t b = 0; b < B; ++b)
      for (int c = 0; c < n; ++c)
        std::memcpy(&xpriv.data[(b * n + c) * spec.h_priv], &parts[c].data[b * spec.h_priv],
                    8 * static_cast<size_t>(spec.h_priv));

    // aggregator evaluates the public head in plaintext (parallel stage)
    Tensor y_pub;
    if (ctx.is_p0()) {
      Tensor xpub({B, static_cast<int64_t>(n) * spec.h_pub});
      for (int c = 0; c < n; ++c) {
        auto raw = s.p2c[0][c]->receive(net::MsgKind::kEmbedding);
        std::vector<float> f32(raw.size() / 4);
        std::memcpy(f32.data(), raw.data(), raw.size());
        for (int64_t b = 0; b < B; ++b)
          for (int j = 0; j < spec.h_pub; ++j)
            xpub.at(b, static_cast<int64_t>(c) * spec.h_pub + j) =
                static_cast<double>(f32[b * spec.h_pub + j]);
      }
      uint64_t f0 = flop_count();
      nn::Graph g;
      y_pub = bundle.public_head.forward(g, g.constant(xpub))->value;
      pub_flops = flop_count() - f0;
    }

    SharedTensor xs{p, std::move(xpriv), 0};
    SharedTensor y_priv = secure_mlp_forward(ctx, xs, *priv_heads[p]);
    if (ctx.is_p0()) {
      link_after_priv = s.link[0]->sim_elapsed_s();
      p0_priv_flops = flop_count() - phase_f0 - pub_flops;
    }

    SharedTensor ypub_sh;
    if (ctx.is_p0()) {
      auto enc = fxp::encode(y_pub);
      auto [sh0, sh1] = mpc::share(enc, ctx.rng);
      s.link[0]->send_words(net::MsgKind::kShare, sh1.share.data);
      ypub_sh = SharedTensor{0, std::move(sh0.share), 0};
    } else {
      auto words = net::to_words(s.link[1]->receive(net::MsgKind::kShare));
      ypub_sh = SharedTensor{1, RingTensor({B, spec.y_width}, std::move(words), fxp::kFracBits), 0};
    }
    RingTensor fused({B, 2LL * spec.y_width}, fxp::kFracBits);
    for (int64_t b = 0; b < B; ++b) {
      std::memcpy(&fused.data[b * 2 * spec.y_width], &ypub_sh.share.data[b * spec.y_width],
                  8 * static_cast<size_t>(spec.y_width));
      std::memcpy(&fused.data[b * 2 * spec.y_width + spec.y_width], &y_priv.share.data[b * spec.y_width],
                  8 * static_cast<size_t>(spec.y_width));
    }
    SharedTensor fin{p, std::move(fused), 0};
    SharedTensor y = secure_mlp_forward(ctx, fin, *fus_heads[p]);
    for (int c = 0; c < n; ++c) s.p2c[p][c]->send_words(net::MsgKind::kReveal, y.share.data);
    if (ctx.is_p0()) p0_fus_flops = flop_count() - phase_f0 - pub_flops - p0_priv_flops;
  });

  // split the phase into its public/private/fusion stages
  uint64_t priv_rounds = 0, fus_rounds = 0;
  for (const auto& st : pc.stages) {
    if (st.label == mpc::kStagePrivateHead) priv_rounds = st.rounds;
    if (st.label == mpc::kStageFusionHead) fus_rounds = st.rounds;
  }
  double pub_t = static_cast<double>(pub_flops) * cfg.sec_per_flop;
  rec.transcript.add_stage(mpc::kStagePublicHead, pub_t);
  double priv_t = (link_after_priv - rec.last_link_time) +
                  static_cast<double>(p0_priv_flops) * cfg.sec_per_flop;
  rec.transcript.rounds += priv_rounds;
  rec.transcript.add_stage(mpc::kStagePrivateHead, priv_t);
  double fus_t = (s.link_sim_time() - link_after_priv) +
                 static_cast<double>(p0_fus_flops) * cfg.sec_per_flop;
  rec.transcript.rounds += fus_rounds;
  rec.transcript.add_stage(mpc::kStageFusionHead, fus_t);
  rec.resync();

  std::vector<uint64_t> reveal_bytes(n, 8 * static_cast<uint64_t>(B) + net::kHeaderBytes);
  Tensor pred({B});
  {
    auto w0 = net::to_words(s.c2p[0][0]->receive(net::MsgKind::kReveal));
    auto w1 = net::to_words(s.c2p[1][0]->receive(net::MsgKind::kReveal));
    for (int c = 1; c < n; ++c) {
      s.c2p[0][c]->receive(net::MsgKind::kReveal);
      s.c2p[1][c]->receive(net::MsgKind::kReveal);
    }
    for (int64_t b = 0; b < B; ++b) pred.data[b] = fxp::decode_scalar(w0[b] + w1[b], fxp::kFracBits);
  }
  rec.mark(mpc::kStageOutputReveal, 0, 1, push_phase_time(reveal_bytes, cfg.profile));
  rec.finish();

  PipelineResult out;
  out.predictions = std::move(pred);
  out.transcript = std::move(rec.transcript);
  return out;
}

// ---- plaintext references ----

namespace {

std::vector<std::vector<std::vector<int>>> true_positions(const std::vector<PartitionedSequence>& batch,
                                                          int n_clients) {
  std::vector<std::vector<std::vector<int>>> pos(batch.size());
  for (size_t q = 0; q < batch.size(); ++q) {
    pos[q].resize(n_clients);
    for (int c = 0; c < n_clients; ++c)
      for (const auto& st : batch[q].per_client[c]) pos[q][c].push_back(st.global_pos);
  }
  return pos;
}

}  // namespace

Tensor plaintext_vfl_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle) {
  const auto& spec = bundle.spec;
  auto fwd = client_encoder_forward(batch, bundle, true_positions(batch, spec.n_clients));
  int64_t B = static_cast<int64_t>(batch.size());
  Tensor x({B, static_cast<int64_t>(spec.n_clients) * spec.h_priv});
  for (int64_t b = 0; b < B; ++b)
    for (int c = 0; c < spec.n_clients; ++c)
      for (int j = 0; j < spec.h_priv; ++j)
        x.at(b, static_cast<int64_t>(c) * spec.h_priv + j) = fwd[c].e_priv.at(b, j);
  nn::Graph g;
  auto y = bundle.vfl_head.forward(g, g.constant(x));
  Tensor out({B});
  for (int64_t b = 0; b < B; ++b) out.data[b] = y->value.data[b];
  return out;
}

Tensor plaintext_pphh(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle) {
  const auto& spec = bundle.spec;
  auto fwd = client_encoder_forward(batch, bundle, true_positions(batch, spec.n_clients));
  int64_t B = static_cast<int64_t>(batch.size());
  Tensor xpub({B, static_cast<int64_t>(spec.n_clients) * spec.h_pub});
  Tensor xpriv({B, static_cast<int64_t>(spec.n_clients) * spec.h_priv});
  for (int64_t b = 0; b < B; ++b)
    for (int c = 0; c < spec.n_clients; ++c) {
      for (int j = 0; j < spec.h_pub; ++j)
        xpub.at(b, static_cast<int64_t>(c) * spec.h_pub + j) = fwd[c].e_pub.at(b, j);
      for (int j = 0; j < spec.h_priv; ++j)
        xpriv.at(b, static_cast<int64_t>(c) * spec.h_priv + j) = fwd[c].e_priv.at(b, j);
    }
  nn::Graph g;
  auto y_pub = bundle.public_head.forward(g, g.constant(xpub));
  auto y_priv = bundle.private_head.forward(g, g.constant(xpriv));
  auto y = bundle.fusion_head.forward(g, nn::concat_cols(g, y_pub, y_priv));
  Tensor out({B});
  for (int64_t b = 0; b < B; ++b) out.data[b] = y->value.data[b];
  return out;
}

namespace {

Tensor assemble_full(const std::vector<PartitionedSequence>& batch, int feature_dim, int64_t S) {
  int64_t B = static_cast<int64_t>(batch.size());
  Tensor x({B, S, feature_dim});
  for (int64_t b = 0; b < B; ++b)
    for (const auto& view : batch[b].per_client)
      for (const auto& st : view)
        for (int f = 0; f < feature_dim; ++f)
          x.data[(b * S + st.global_pos) * feature_dim + f] = st.features[f];
  return x;
}

}  // namespace

Tensor plaintext_e2e(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& central) {
  const auto& spec = central.spec;
  int64_t B = static_cast<int64_t>(batch.size());
  int64_t S = batch.front().total_len;
  Tensor x = assemble_full(batch, spec.feature_dim, S);
  Tensor mask({B, S});
  for (auto& v : mask.data) v = 1.0;
  std::vector<int64_t> pos(B * S);
  for (int64_t i = 0; i < B * S; ++i) pos[i] = i % S;
  nn::Graph g;
  auto seq = central.central.forward_seq(g, g.constant(x), pos, mask);
  Tensor w({B, S});
  for (auto& v : w.data) v = 1.0 / static_cast<double>(S);
  auto pooled = nn::pool_rows(g, seq, w);
  auto dm =
      nn::add_bias(g, nn::matmul(g, pooled, g.param(central.central.out_w)), g.param(central.central.out_b));
  auto y = central.central_head.forward(g, dm);
  Tensor out({B});
  for (int64_t b = 0; b < B; ++b) out.data[b] = y->value.data[b];
  return out;
}

// ---- e2e secure forward ----

namespace {

struct FixedLayerShares {
  RingTensor wq, bq, wk, bk, wv, bv, wo, bo, w1, b1, w2, b2, ln1_g, ln1_b, ln2_g, ln2_b;
};

struct FixedCentralShares {
  RingTensor in_w, in_b, pos_embed, out_w, out_b;
  std::vector<FixedLayerShares> layers;
  FixedMlpShares head;
};

std::pair<FixedCentralShares, FixedCentralShares> share_central(nn::ModelBundle& central,
                                                                std::mt19937_64& rng) {
  FixedCentralShares a, b;
  auto sh = [&rng](nn::Parameter& p, RingTensor& ra, RingTensor& rb) {
    auto [s0, s1] = mpc::share(fxp::encode(p.value), rng);
    ra = std::move(s0.share);
    rb = std::move(s1.share);
  };
  auto& enc = central.central;
  sh(enc.in_w, a.in_w, b.in_w);
  sh(enc.in_b, a.in_b, b.in_b);
  sh(enc.pos_embed, a.pos_embed, b.pos_embed);
  sh(enc.out_w, a.out_w, b.out_w);
  sh(enc.out_b, a.out_b, b.out_b);
  for (auto& L : enc.layers) {
    FixedLayerShares la, lb;
    sh(L.wq, la.wq, lb.wq);
    sh(L.bq, la.bq, lb.bq);
    sh(L.wk, la.wk, lb.wk);
    sh(L.bk, la.bk, lb.bk);
    sh(L.wv, la.wv, lb.wv);
    sh(L.bv, la.bv, lb.bv);
    sh(L.wo, la.wo, lb.wo);
    sh(L.bo, la.bo, lb.bo);
    sh(L.w1, la.w1, lb.w1);
    sh(L.b1, la.b1, lb.b1);
    sh(L.w2, la.w2, lb.w2);
    sh(L.b2, la.b2, lb.b2);
    sh(L.ln1_g, la.ln1_g, lb.ln1_g);
    sh(L.ln1_b, la.ln1_b, lb.ln1_b);
    sh(L.ln2_g, la.ln2_g, lb.ln2_g);
    sh(L.ln2_b, la.ln2_b, lb.ln2_b);
    a.layers.push_back(std::move(la));
    b.layers.push_back(std::move(lb));
  }
  auto [h0, h1] = share_mlp(central.central_head, rng);
  a.head = std::move(h0);
  b.head = std::move(h1);
  return {std::move(a), std::move(b)};
}

// per-layer public softmax shift bounds from a plaintext calibration pass
std::vector<double> calibrate_softmax_shifts(nn::ModelBundle& central,
                                             const std::vector<PartitionedSequence>& batch) {
  const auto& spec = central.spec;
  int64_t B = static_cast<int64_t>(batch.size());
  int64_t S = batch.front().total_len;
  Tensor x = assemble_full(batch, spec.feature_dim, S);
  std::vector<int64_t> pos(B * S);
  for (int64_t i = 0; i < B * S; ++i) pos[i] = i % S;

  std::vector<double> shifts;
  nn::Graph g;
  int64_t d = spec.d_model, H = spec.n_heads, dh = d / H;
  nn::NodePtr h = nn::reshape(g, g.constant(x), {B * S, spec.feature_dim});
  h = nn::add_bias(g, nn::matmul(g, h, g.param(central.central.in_w)), g.param(central.central.in_b));
  h = nn::add(g, h, nn::gather_rows(g, g.param(central.central.pos_embed), pos));
  for (auto& L : central.central.layers) {
    auto heads = [&](nn::Parameter& w, nn::Parameter& bb) {
      auto t = nn::add_bias(g, nn::matmul(g, h, g.param(w)), g.param(bb));
      t = nn::reshape(g, t, {B, S, H, dh});
      t = nn::permute_0213(g, t);
      return nn::reshape(g, t, {B * H, S, dh});
    };
    auto q = heads(L.wq, L.bq), k = heads(L.wk, L.bk), v = heads(L.wv, L.bv);
    auto scores =
        nn::scale(g, nn::bmm(g, q, nn::transpose_last2(g, k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    double mx = -1e300;
    for (double sc : scores->value.data) mx = std::max(mx, sc);
    shifts.push_back(mx + 0.25);
    auto probs = nn::reshape(g, nn::softmax_rows(g, nn::reshape(g, scores, {B * H * S, S})), {B * H, S, S});
    auto ctx =
        nn::reshape(g, nn::permute_0213(g, nn::reshape(g, nn::bmm(g, probs, v), {B, H, S, dh})), {B * S, d});
    auto attn_out = nn::add_bias(g, nn::matmul(g, ctx, g.param(L.wo)), g.param(L.bo));
    h = nn::layernorm_rows(g, nn::add(g, h, attn_out), g.param(L.ln1_g), g.param(L.ln1_b), spec.ln_eps);
    auto ff = nn::add_bias(g, nn::matmul(g, h, g.param(L.w1)), g.param(L.b1));
    ff = nn::add_bias(g, nn::matmul(g, nn::relu(g, ff), g.param(L.w2)), g.param(L.b2));
    h = nn::layernorm_rows(g, nn::add(g, h, ff), g.param(L.ln2_g), g.param(L.ln2_b), spec.ln_eps);
  }
  return shifts;
}

// one opening round for a list of independent matmuls
void matmul_batched(PartyContext& ctx, const std::vector<const SharedTensor*>& xs,
                    const std::vector<const RingTensor*>& ws, int trunc_bits,
                    std::vector<SharedTensor>* outs) {
  std::vector<const mpc::MatmulTriple*> triples;
  std::vector<uint64_t> masked;
  for (size_t i = 0; i < xs.size(); ++i) {
    int64_t m = xs[i]->share.shape[0], k = xs[i]->share.shape[1], n = ws[i]->shape[1];
    const auto& t = ctx.tape.take_matmul(m, k, n);
    triples.push_back(&t);
    for (int64_t j = 0; j < m * k; ++j) masked.push_back(xs[i]->share.data[j] - t.a[j]);
    for (int64_t j = 0; j < k * n; ++j) masked.push_back(ws[i]->data[j] - t.b[j]);
  }
  auto opened = net::to_words(ctx.peer->exchange_words(net::MsgKind::kOpen, masked));
  for (size_t i = 0; i < opened.size(); ++i) opened[i] += masked[i];

  outs->clear();
  size_t off = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    const auto& t = *triples[i];
    int64_t m = t.m, k = t.k, n = t.n;
    const uint64_t* eps = opened.data() + off;
    const uint64_t* dlt = opened.data() + off + m * k;
    off += static_cast<size_t>(m * k + k * n);
    SharedTensor z;
    z.party_id = ctx.party_id;
    int fsum = xs[i]->share.frac_bits + ws[i]->frac_bits;
    z.share = RingTensor({m, n}, fsum);
    std::vector<uint64_t> tmp(m * n);
    fxp::matmul_raw(eps, t.b.data(), z.share.data.data(), m, k, n);
    fxp::matmul_raw(t.a.data(), dlt, tmp.data(), m, k, n);
    for (int64_t j = 0; j < m * n; ++j) z.share.data[j] += tmp[j] + t.c[j];
    if (ctx.is_p0()) {
      fxp::matmul_raw(eps, dlt, tmp.data(), m, k, n);
      for (int64_t j = 0; j < m * n; ++j) z.share.data[j] += tmp[j];
    }
    if (trunc_bits > 0) z = mpc::trunc_shared(z, trunc_bits, fsum - trunc_bits);
    outs->push_back(std::move(z));
  }
}

SharedTensor secure_layernorm(PartyContext& ctx, const SharedTensor& x, const RingTensor& gamma,
                              const RingTensor& beta, double eps) {
  const int f = fxp::kFracBits;
  int64_t rows = x.share.shape[0], d = x.share.shape[1];
  uint64_t inv_d = fxp::encode_scalar(1.0 / static_cast<double>(d), f);

  SharedTensor centered = x;
  for (int64_t r = 0; r < rows; ++r) {
    uint64_t acc = 0;
    for (int64_t j = 0; j < d; ++j) acc += x.share.data[r * d + j];
    uint64_t mu = trunc_share_word(ctx.party_id, acc * inv_d, f);
    for (int64_t j = 0; j < d; ++j) centered.share.data[r * d + j] -= mu;
  }
  SharedTensor sq = mpc::mul_beaver(ctx, centered, centered, f);
  SharedTensor var;
  var.party_id = ctx.party_id;
  var.session_id = x.session_id;
  var.share = RingTensor({rows}, f);
  for (int64_t r = 0; r < rows; ++r) {
    uint64_t acc = 0;
    for (int64_t j = 0; j < d; ++j) acc += sq.share.data[r * d + j];
    var.share.data[r] = trunc_share_word(ctx.party_id, acc * inv_d, f);
  }
  var = mpc::add_public(var, RingTensor({rows}, std::vector<uint64_t>(rows, fxp::encode_scalar(eps, f)), f));
  SharedTensor istd = mpc::inv_sqrt_secure(ctx, var);

  SharedTensor istd_b;
  istd_b.party_id = ctx.party_id;
  istd_b.share = RingTensor({rows, d}, f);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) istd_b.share.data[r * d + j] = istd.share.data[r];
  SharedTensor xhat = mpc::mul_beaver(ctx, centered, istd_b, f);

  SharedTensor gamma_b;
  gamma_b.party_id = ctx.party_id;
  gamma_b.share = RingTensor({rows, d}, f);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(&gamma_b.share.data[r * d], gamma.data.data(), 8 * static_cast<size_t>(d));
  SharedTensor scaled = mpc::mul_beaver(ctx, xhat, gamma_b, f);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) scaled.share.data[r * d + j] += beta.data[j];
  return scaled;
}

}  // namespace

PipelineResult run_e2e_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& central,
                           const SessionConfig& cfg) {
  const auto& spec = central.spec;
  int n = spec.n_clients;
  BatchShape bs = batch_shape(batch);
  E2eDims dd = e2e_dims(spec, bs);
  if (dd.B > cfg.max_e2e_batch)
    throw ShapeError("e2e batch of " + std::to_string(dd.B) + " exceeds the configured cap of " +
                     std::to_string(cfg.max_e2e_batch) + "; raise max_e2e_batch knowingly for large runs");

  PipelineCost pc = cost_e2e(spec, bs);

  // offline setup: weight shares + public softmax shift calibration
  std::mt19937_64 wrng(cfg.seed ^ 0xBEEF);
  auto shared_model = share_central(central, wrng);
  FixedCentralShares* models[2] = {&shared_model.first, &shared_model.second};
  std::vector<double> shifts = calibrate_softmax_shifts(central, batch);

  Session s(pc.tape, cfg, n);
  StageRecorder rec(s);
  reset_flop_count();
  rec.resync();

  auto positions = recovery_phase(s, rec, batch);

  // clients share rows tagged by recovered global position
  std::mt19937_64 crng(cfg.seed ^ 0x5A5A5A);
  std::vector<uint64_t> push_bytes;
  std::vector<std::vector<uint64_t>> row_pos(n);
  for (int c = 0; c < n; ++c) {
    int64_t rows = 0;
    for (const auto& seq : batch) rows += static_cast<int64_t>(seq.per_client[c].size());
    Tensor feats({rows, dd.F});
    int64_t r = 0;
    for (size_t q = 0; q < batch.size(); ++q) {
      const auto& view = batch[q].per_client[c];
      for (size_t i = 0; i < view.size(); ++i) {
        for (int64_t f = 0; f < dd.F; ++f) feats.at(r, f) = view[i].features[f];
        row_pos[c].push_back(q * static_cast<uint64_t>(dd.S) + static_cast<uint64_t>(positions[q][c][i]));
        ++r;
      }
    }
    auto [s0, s1] = mpc::share(fxp::encode(feats), crng);
    s.c2p[0][c]->send_words(net::MsgKind::kShare, s0.share.data);
    s.c2p[1][c]->send_words(net::MsgKind::kShare, s1.share.data);
    push_bytes.push_back(8 * static_cast<uint64_t>(s0.share.numel()) + net::kHeaderBytes);
  }
  rec.mark(mpc::kStageShareHandling, 0, 1, push_phase_time(push_bytes, cfg.profile));

  const int f = fxp::kFracBits;
  uint64_t p0_fwd_flops = 0;
  s.run_phase([&](PartyContext& ctx) {
    int p = ctx.party_id;
    uint64_t phase_f0 = flop_count();
    const FixedCentralShares& M = *models[p];

    RingTensor x({dd.B * dd.S, dd.F}, f);
    for (int c = 0; c < n; ++c) {
      auto words = net::to_words(s.p2c[p][c]->receive(net::MsgKind::kShare));
      for (size_t r = 0; r < row_pos[c].size(); ++r)
        std::memcpy(&x.data[row_pos[c][r] * dd.F], &words[r * dd.F], 8 * static_cast<size_t>(dd.F));
    }

    std::vector<SharedTensor> outs;
    SharedTensor xin{p, std::move(x), 0};
    matmul_batched(ctx, {&xin}, {&M.in_w}, f, &outs);
    SharedTensor h = add_bias_shared(outs[0], M.in_b);
    for (int64_t b = 0; b < dd.B; ++b)
      for (int64_t t = 0; t < dd.S; ++t)
        for (int64_t j = 0; j < dd.d; ++j)
          h.share.data[(b * dd.S + t) * dd.d + j] += M.pos_embed.data[t * dd.d + j];

    for (size_t l = 0; l < M.layers.size(); ++l) {
      const auto& L = M.layers[l];
      std::vector<SharedTensor> qkv;
      matmul_batched(ctx, {&h, &h, &h}, {&L.wq, &L.wk, &L.wv}, f, &qkv);
      qkv[0] = add_bias_shared(qkv[0], L.bq);
      qkv[1] = add_bias_shared(qkv[1], L.bk);
      qkv[2] = add_bias_shared(qkv[2], L.bv);

      auto head_block = [&](const SharedTensor& t, int64_t b, int64_t hh) {
        SharedTensor blk;
        blk.party_id = p;
        blk.share = RingTensor({dd.S, dd.dh}, f);
        for (int64_t i = 0; i < dd.S; ++i)
          std::memcpy(&blk.share.data[i * dd.dh], &t.share.data[(b * dd.S + i) * dd.d + hh * dd.dh],
                      8 * static_cast<size_t>(dd.dh));
        return blk;
      };
      std::vector<SharedTensor> qs, kts, vs;
      for (int64_t b = 0; b < dd.B; ++b)
        for (int64_t hh = 0; hh < dd.H; ++hh) {
          qs.push_back(head_block(qkv[0], b, hh));
          SharedTensor k = head_block(qkv[1], b, hh);
          SharedTensor kt;
          kt.party_id = p;
          kt.share = RingTensor({dd.dh, dd.S}, f);
          for (int64_t i = 0; i < dd.S; ++i)
            for (int64_t j = 0; j < dd.dh; ++j) kt.share.data[j * dd.S + i] = k.share.data[i * dd.dh + j];
          kts.push_back(std::move(kt));
          vs.push_back(head_block(qkv[2], b, hh));
        }
      std::vector<const SharedTensor*> qps;
      std::vector<const RingTensor*> ktps;
      for (size_t i = 0; i < qs.size(); ++i) {
        qps.push_back(&qs[i]);
        ktps.push_back(&kts[i].share);
      }
      std::vector<SharedTensor> scores;
      matmul_batched(ctx, qps, ktps, f, &scores);

      double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dd.dh));
      SharedTensor all_scores;
      all_scores.party_id = p;
      all_scores.share = RingTensor({dd.B * dd.H * dd.S, dd.S}, f);
      for (size_t i = 0; i < scores.size(); ++i) {
        SharedTensor sc = mpc::mul_public_scalar(scores[i], inv_sqrt_dh, f);
        std::memcpy(&all_scores.share.data[i * dd.S * dd.S], sc.share.data.data(),
                    8 * static_cast<size_t>(dd.S * dd.S));
      }
      std::vector<double> row_shift(dd.B * dd.H * dd.S, shifts[l]);
      SharedTensor probs = mpc::softmax_secure(ctx, all_scores, row_shift);

      std::vector<SharedTensor> pmats;
      for (int64_t i = 0; i < dd.B * dd.H; ++i) {
        SharedTensor pm;
        pm.party_id = p;
        pm.share = RingTensor({dd.S, dd.S}, f);
        std::memcpy(pm.share.data.data(), &probs.share.data[i * dd.S * dd.S],
                    8 * static_cast<size_t>(dd.S * dd.S));
        pmats.push_back(std::move(pm));
      }
      std::vector<const SharedTensor*> pps;
      std::vector<const RingTensor*> vps;
      for (size_t i = 0; i < pmats.size(); ++i) {
        pps.push_back(&pmats[i]);
        vps.push_back(&vs[i].share);
      }
      std::vector<SharedTensor> ctxs;
      matmul_batched(ctx, pps, vps, f, &ctxs);

      SharedTensor merged;
      merged.party_id = p;
      merged.share = RingTensor({dd.B * dd.S, dd.d}, f);
      for (int64_t b = 0; b < dd.B; ++b)
        for (int64_t hh = 0; hh < dd.H; ++hh) {
          const auto& blk = ctxs[b * dd.H + hh];
          for (int64_t i = 0; i < dd.S; ++i)
            std::memcpy(&merged.share.data[(b * dd.S + i) * dd.d + hh * dd.dh], &blk.share.data[i * dd.dh],
                        8 * static_cast<size_t>(dd.dh));
        }
      std::vector<SharedTensor> proj;
      matmul_batched(ctx, {&merged}, {&L.wo}, f, &proj);
      SharedTensor attn_out = add_bias_shared(proj[0], L.bo);
      h = mpc::add_shared(h, attn_out);
      h = secure_layernorm(ctx, h, L.ln1_g, L.ln1_b, spec.ln_eps);

      std::vector<SharedTensor> ff1;
      matmul_batched(ctx, {&h}, {&L.w1}, f, &ff1);
      SharedTensor a1 = mpc::relu_secure(ctx, add_bias_shared(ff1[0], L.b1));
      std::vector<SharedTensor> ff2;
      matmul_batched(ctx, {&a1}, {&L.w2}, f, &ff2);
      SharedTensor ff_out = add_bias_shared(ff2[0], L.b2);
      h = mpc::add_shared(h, ff_out);
      h = secure_layernorm(ctx, h, L.ln2_g, L.ln2_b, spec.ln_eps);
    }

    // mean pool over the sequence (local), output projection, head
    SharedTensor pooled;
    pooled.party_id = p;
    pooled.share = RingTensor({dd.B, dd.d}, f);
    uint64_t inv_s = fxp::encode_scalar(1.0 / static_cast<double>(dd.S), f);
    for (int64_t b = 0; b < dd.B; ++b)
      for (int64_t j = 0; j < dd.d; ++j) {
        uint64_t acc = 0;
        for (int64_t t = 0; t < dd.S; ++t) acc += h.share.data[(b * dd.S + t) * dd.d + j];
        pooled.share.data[b * dd.d + j] = trunc_share_word(p, acc * inv_s, f);
      }
    std::vector<SharedTensor> dm;
    matmul_batched(ctx, {&pooled}, {&M.out_w}, f, &dm);
    SharedTensor z = add_bias_shared(dm[0], M.out_b);
    SharedTensor y = secure_mlp_forward(ctx, z, M.head);
    for (int c = 0; c < n; ++c) s.p2c[p][c]->send_words(net::MsgKind::kReveal, y.share.data);
    if (ctx.is_p0()) p0_fwd_flops = flop_count() - phase_f0;
  });
  uint64_t fwd_rounds = 0;
  for (const auto& st : pc.stages)
    if (st.label == mpc::kStagePrivateHead) fwd_rounds = st.rounds;
  rec.mark(mpc::kStagePrivateHead, fwd_rounds, 0, static_cast<double>(p0_fwd_flops) * cfg.sec_per_flop);

  std::vector<uint64_t> reveal_bytes(n, 8 * static_cast<uint64_t>(dd.B) + net::kHeaderBytes);
  Tensor pred({dd.B});
  {
    auto w0 = net::to_words(s.c2p[0][0]->receive(net::MsgKind::kReveal));
    auto w1 = net::to_words(s.c2p[1][0]->receive(net::MsgKind::kReveal));
    for (int c = 1; c < n; ++c) {
      s.c2p[0][c]->receive(net::MsgKind::kReveal);
      s.c2p[1][c]->receive(net::MsgKind::kReveal);
    }
    for (int64_t b = 0; b < dd.B; ++b) pred.data[b] = fxp::decode_scalar(w0[b] + w1[b], fxp::kFracBits);
  }
  rec.mark(mpc::kStageOutputReveal, 0, 1, push_phase_time(reveal_bytes, cfg.profile));
  rec.finish();

  PipelineResult out;
  out.predictions = std::move(pred);
  out.transcript = std::move(rec.transcript);
  return out;
}

}  // namespace pphh::vfl
