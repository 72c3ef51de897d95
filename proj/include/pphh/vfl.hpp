#pragma once

#include <cstdint>
#include <random>

#include "pphh/data.hpp"
#include "pphh/mpc.hpp"
#include "pphh/nn.hpp"

// The three inference pipelines (End-to-End MPC, VFL+MPC, PPHH-VFL) plus
// time-step partitioning, secure position recovery (protocol p), and
// masked-sequence construction.
namespace pphh::vfl {

struct OwnedStep {
  int global_pos = 0;  // secret until recovered
  int64_t order_key = 0;
  std::vector<double> features;
};

struct PartitionedSequence {
  int64_t seq_id = 0;
  int total_len = 0;
  std::vector<std::vector<OwnedStep>> per_client;  // order_keys strictly increase within a client
  double label = 0;
};

// Uniform random assignment of time-steps to clients; every client owns at
// least one step. Requires n_clients >= 2 and len >= n_clients.
PartitionedSequence partition_sequence(const data::SequenceRecord& rec, int n_clients, std::mt19937_64& rng);

struct MaskedSequence {
  int length = 0;
  Tensor tokens;               // [length, F+1]; last channel: 1 = masked
  std::vector<uint8_t> owned;  // per-position ownership
};

// The client's full-length view: owned rows carry real features and mask
// channel 0; all others carry the zero MASK sentinel and mask channel 1.
MaskedSequence build_masked_sequence(const std::vector<OwnedStep>& view, const std::vector<int>& positions,
                                     int total_len, int feature_dim);

// Key packing for protocol p: (order_key << 16) | (client << 8) | local index.
// Makes all keys distinct by construction, so comparisons never tie.
uint64_t pack_order_key(int64_t order_key, int client, int local_idx);

struct SessionConfig {
  net::NetworkProfile profile = net::profile("LAN");
  net::ClockMode mode = net::ClockMode::kSimulated;
  uint64_t seed = 1;
  double sec_per_flop = 2e-11;  // deterministic compute-time model (50 GFLOP/s)
  int64_t max_e2e_batch = 8;    // full e2e is enormous; caller must raise this knowingly
};

// Plaintext oracle path for protocol p lives in the tests (argsort).
// The secure path: clients share packed keys to the two compute parties,
// parties evaluate all pairwise comparisons with one batched msb extraction,
// sum the comparison bits into position shares, and reveal each client's own
// positions only to it.
std::vector<std::vector<std::vector<int>>> secure_position_recovery(
    const std::vector<PartitionedSequence>& batch, const SessionConfig& cfg);

struct PipelineResult {
  Tensor predictions;  // [B] logits (classification) or values (regression)
  mpc::Transcript transcript;
};

// Pipelines. Bundles carry plaintext weights; fixed-point shares are derived
// internally at session setup (not part of the per-batch transcript).
PipelineResult run_vfl_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle,
                           const SessionConfig& cfg);
PipelineResult run_pphh(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle,
                        const SessionConfig& cfg);
PipelineResult run_e2e_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& central,
                           const SessionConfig& cfg);

// All-plaintext references for the same bundles (double precision).
Tensor plaintext_vfl_mpc(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle);
Tensor plaintext_pphh(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& bundle);
Tensor plaintext_e2e(const std::vector<PartitionedSequence>& batch, nn::ModelBundle& central);

// Client-side plaintext embeddings (shared by pipelines and training).
struct ClientForward {
  Tensor e_pub;   // [B, h_pub]
  Tensor e_priv;  // [B, h_priv]
};
std::vector<ClientForward> client_encoder_forward(const std::vector<PartitionedSequence>& batch,
                                                  nn::ModelBundle& bundle,
                                                  const std::vector<std::vector<std::vector<int>>>& positions);

// Per-client padded model inputs built from masked sequences; `positions`
// defaults to the ground-truth assignment when omitted (training path).
struct ClientInputs {
  Tensor x;      // [B, S, F+1]
  Tensor attn;   // [B, S]
  Tensor pool;   // [B, S]
  std::vector<int64_t> pos;  // flat B*S global positions
};
std::vector<ClientInputs> build_client_inputs(const std::vector<PartitionedSequence>& batch,
                                              int feature_dim,
                                              const std::vector<std::vector<std::vector<int>>>* positions = nullptr);

// ---- analytic cost model ----

struct StageCost {
  std::string label;
  uint64_t rounds = 0;
  uint64_t bytes = 0;  // total over all senders
};

struct PipelineCost {
  std::vector<StageCost> stages;
  mpc::TapeSpec tape;
  uint64_t rounds() const {
    uint64_t r = 0;
    for (const auto& s : stages) r += s.rounds;
    return r;
  }
  uint64_t bytes() const {
    uint64_t b = 0;
    for (const auto& s : stages) b += s.bytes;
    return b;
  }
  uint64_t stage_bytes(const std::string& label) const {
    for (const auto& s : stages)
      if (s.label == label) return s.bytes;
    return 0;
  }
};

// Shapes of one batch as the cost model sees it.
struct BatchShape {
  int64_t batch = 0;
  std::vector<int64_t> seq_lens;            // per sequence
  std::vector<std::vector<int64_t>> owned;  // [seq][client] counts
};
BatchShape batch_shape(const std::vector<PartitionedSequence>& batch);

PipelineCost cost_position_recovery(const BatchShape& bs, int n_clients);
PipelineCost cost_vfl_mpc(const nn::ArchitectureSpec& spec, const BatchShape& bs);
PipelineCost cost_pphh(const nn::ArchitectureSpec& spec, const BatchShape& bs);
PipelineCost cost_e2e(const nn::ArchitectureSpec& spec, const BatchShape& bs);

}  // namespace pphh::vfl
