#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pphh/nn.hpp"
#include "pphh/tensor.hpp"

// Dataset ingestion (CSV + feature schema) and the self-contained synthetic
// generators every offline test runs on.
namespace pphh::data {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TimeStep {
  int64_t order_key = 0;
  std::vector<double> features;
};

struct SequenceRecord {
  int64_t seq_id = 0;
  std::vector<TimeStep> steps;  // sorted by order_key, strictly increasing
  double label = 0;
};

struct SequenceDataset {
  std::vector<SequenceRecord> records;
  nn::Task task = nn::Task::kClassification;
  int feature_dim = 0;
  int max_len = 0;
  std::vector<int64_t> train_idx, test_idx;
  // regression metadata: best-predictor RMSE given the generative model
  double noise_floor_rmse = 0;
};

// column -> role mapping; exactly one order key and one label definition
struct FeatureSchema {
  std::string entity_col;
  std::string order_key_col;
  std::string label_col;
  std::string label_mode = "any";  // any | last_value
  std::vector<std::string> numeric_cols;
  std::vector<std::string> categorical_cols;
  nn::Task task = nn::Task::kClassification;
};

FeatureSchema load_schema(const std::string& path);

// train-split normalization statistics + categorical vocabularies
struct NormStats {
  std::map<std::string, std::pair<double, double>> mean_std;   // numeric col -> (mean, std)
  std::map<std::string, std::map<std::string, int64_t>> vocab;  // categorical col -> token -> index (0 = UNK)
  bool empty() const { return mean_std.empty() && vocab.empty(); }
};

// Rows grouped by entity, sorted by order key, numerics z-normalized from
// train statistics, categoricals mapped through the train vocabulary with a
// reserved UNK index. When `stats` is empty it is computed from this file
// (train split); otherwise it is reused (test split).
SequenceDataset load_csv(const std::string& path, const FeatureSchema& schema, NormStats* stats = nullptr);

// Classification surrogate: AR(1) features, positive sequences carry an
// injected anomalous burst (mean shift on 3 consecutive steps at a uniform
// position); class balance is exactly 30/70 by construction.
SequenceDataset synth_classification(int n_seqs, int n_clients, uint64_t seed, int len_min = 24,
                                     int len_max = 96);

// The burst detector used to certify learnability (threshold on the max
// 3-step mean of feature 0).
double oracle_detector_accuracy(const SequenceDataset& ds);

// Regression surrogate: linear trend + weekly seasonality + noise; target is
// the final value given all previous steps. noise_floor_rmse = noise sigma.
SequenceDataset synth_regression(int n_seqs, uint64_t seed, double noise_sigma = 1.0);

struct Batch {
  std::vector<int64_t> record_idx;
  int max_len = 0;  // padded length of this batch
};

// Shuffled epoch batching; every record appears exactly once per epoch.
class BatchIter {
 public:
  BatchIter(const SequenceDataset& ds, std::vector<int64_t> indices, int batch_size, uint64_t seed);
  bool next(Batch& out);  // false at epoch end
  void reset();           // reshuffles for the next epoch

 private:
  const SequenceDataset& ds_;
  std::vector<int64_t> indices_;
  int batch_size_;
  size_t pos_ = 0;
  std::mt19937_64 rng_;
};

// Uniform client assignment over steps; every client owns at least one step
// (degenerate draws are resampled). Requires len >= n_clients >= 2.
std::vector<int> assign_clients(int len, int n_clients, std::mt19937_64& rng);

}  // namespace pphh::data
