#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pphh::mpc {

// Exact record of rounds, bytes, and per-stage time for one pipeline
// execution. Stage labels follow the inference-stage breakdown table.
struct Transcript {
  uint64_t rounds = 0;
  std::array<uint64_t, 2> bytes_sent{0, 0};
  std::vector<std::pair<std::string, double>> stage_times;

  uint64_t total_bytes() const { return bytes_sent[0] + bytes_sent[1]; }

  void add_stage(const std::string& label, double seconds) {
    for (auto& [l, t] : stage_times)
      if (l == label) {
        t += seconds;
        return;
      }
    stage_times.emplace_back(label, seconds);
  }

  double stage(const std::string& label) const {
    for (const auto& [l, t] : stage_times)
      if (l == label) return t;
    return 0.0;
  }

  double total_time() const {
    double s = 0;
    for (const auto& [l, t] : stage_times) s += t;
    return s;
  }

  // Sums bytes/rounds; overlapping stage times take the max of the two.
  void merge(const Transcript& other) {
    rounds += other.rounds;
    bytes_sent[0] += other.bytes_sent[0];
    bytes_sent[1] += other.bytes_sent[1];
    for (const auto& [l, t] : other.stage_times) {
      bool found = false;
      for (auto& [ml, mt] : stage_times)
        if (ml == l) {
          mt = std::max(mt, t);
          found = true;
        }
      if (!found) stage_times.emplace_back(l, t);
    }
  }
};

inline constexpr const char* kStageReconstructInput = "reconstruct_input";
inline constexpr const char* kStageLocalTransformer = "local_transformer_forward";
inline constexpr const char* kStageShareHandling = "communication_share_handling";
inline constexpr const char* kStagePublicHead = "public_head_forward";
inline constexpr const char* kStagePrivateHead = "private_head_forward";
inline constexpr const char* kStageFusionHead = "fusion_head_forward";
inline constexpr const char* kStageOutputReveal = "output_reveal";

}  // namespace pphh::mpc
