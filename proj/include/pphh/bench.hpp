#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pphh/privacy.hpp"
#include "pphh/vfl.hpp"

// Benchmark harness: trains/loads models, executes the three pipelines under
// chosen profiles and party counts, and emits runtime/communication/stage/
// privacy reports with confidence intervals.
namespace pphh::bench {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string method = "pphh";  // e2e | vfl_mpc | pphh
  std::string variant = "H1";   // P1..P4 / H1..H4 (ignored by e2e)
  int n_clients = 3;
  int batch_size = 64;
  int batches = 1;    // measured batches per repeat
  int repeats = 9;
  std::string profile = "WAN";
  std::string clock = "simulated";  // simulated | real
  uint64_t seed = 1;
  std::string dataset = "synth_classification";  // synth_classification | synth_regression | csv
  std::string csv_path, schema_path;
  int n_seqs = 192;
  int seq_len = 0;  // force uniform sequence length (required by e2e)
  std::string checkpoint;
  std::string out_dir = "out";
  double sec_per_flop = 2e-11;
  double alpha = 1.0;
  int epochs = 20;
  bool full_e2e = false;  // the --i-know-this-is-huge escape hatch
  // e2e tiny-model defaults (the paper-scale model is gated behind full_e2e)
  int e2e_d_model = 16, e2e_layers = 2, e2e_seq = 16;

  void validate() const;
};

ExperimentConfig load_config(const std::string& path);
// stable hash over the canonical key=value serialization
uint64_t config_hash(const ExperimentConfig& cfg);
std::string config_serialize(const ExperimentConfig& cfg);

struct ReportRow {
  std::string method, variant, profile;
  int n_clients = 0;
  int batch_size = 0;
  double mean_s_per_batch = 0;
  double ci95_half_width = 0;
  uint64_t rounds = 0;
  uint64_t bytes = 0;
  std::vector<std::pair<std::string, double>> stage_pct;  // sums to 100

  double stage_share(const std::string& label) const {
    for (const auto& [l, v] : stage_pct)
      if (l == label) return v;
    return 0.0;
  }
};

// Student-t 97.5th percentile (two-sided 95% CI) for df >= 1.
double t_critical_95(int df);
std::pair<double, double> mean_ci95(const std::vector<double>& xs);

// wall time of one pipeline run; public/private head stages overlap
double wall_time_s(const std::string& method, const mpc::Transcript& t);

// Warms up one batch, times `repeats` batches, verifies the transcript
// against the analytic cost model, aggregates into a row.
ReportRow run_benchmark(const ExperimentConfig& cfg);

// per-stage percentage table (pphh only)
ReportRow stage_breakdown(const ExperimentConfig& cfg);

// rows for n_clients in [n_lo, n_hi]
std::vector<ReportRow> party_sweep(const ExperimentConfig& cfg, int n_lo = 3, int n_hi = 8);

// CSV + aligned text + machine-readable JSON with config hash and labeled
// paper-reference annotations. Returns the written file paths.
std::vector<std::string> emit_report(const std::vector<ReportRow>& rows, const ExperimentConfig& cfg);
std::vector<ReportRow> read_report_csv(const std::string& path);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string privacy_report_path;  // pphh only
  privacy::PrivacyReport report;    // pphh only
  double majority_baseline = 0;
};

// Dispatches to the per-method trainer (e2e: Adam 3e-4/wd 1e-5/batch 32/10
// epochs; vfl_mpc: AdamW 1e-4/wd 1e-6/batch 64/20 epochs; pphh: adversarial
// defaults), saves checkpoints and reports.
TrainOutputs train_cli(const ExperimentConfig& cfg);

// dataset/bundle plumbing shared with the acceptance suite
data::SequenceDataset make_dataset(const ExperimentConfig& cfg);
nn::ModelBundle make_bundle(const ExperimentConfig& cfg);
std::vector<std::vector<vfl::PartitionedSequence>> make_batches(const data::SequenceDataset& ds,
                                                                const ExperimentConfig& cfg);

// supervised trainers used by the vfl_mpc and e2e baselines
void train_vfl(nn::ModelBundle& bundle, const data::SequenceDataset& ds, int epochs, int batch_size,
               double lr, double wd, uint64_t seed);
void train_central(nn::ModelBundle& bundle, const data::SequenceDataset& ds, int epochs, int batch_size,
                   double lr, double wd, uint64_t seed);

}  // namespace pphh::bench
