#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pphh/data.hpp"
#include "pphh/nn.hpp"
#include "pphh/vfl.hpp"

// Adversarial training of the public/private embedding split and the
// empirical-privacy evaluation (origin discriminator accuracy, confusion
// matrix, generator task metrics).
namespace pphh::privacy {

struct AdversarialConfig {
  double alpha = 1.0;       // privacy-loss weight
  double lr_g = 2e-4, lr_d = 7e-5;
  double wd_g = 3e-7, wd_d = 8e-5;
  int batch_size = 64;
  int epochs = 20;
  int d_steps_per_g_step = 1;
  uint64_t seed = 1;
};

struct PrivacyReport {
  int n_clients = 0;
  std::vector<double> d_accuracy_per_epoch;          // in-training discriminator
  std::vector<double> task_metric_per_epoch;         // F1 (classification) or RMSE
  std::vector<std::vector<int64_t>> confusion;       // n x n counts, final discriminator
  std::vector<double> per_class_accuracy;
  double final_d_accuracy = 0;    // in-training discriminator, held out
  double fresh_d_accuracy = 0;    // freshly trained adversary, held out
  double task_metric = 0;         // held-out F1 / accuracy / RMSE
  double task_accuracy = 0;       // classification accuracy (when applicable)
  double random_baseline = 0;     // 1 / n_clients

  double accuracy_from_confusion() const;
};

// L_D = (1/n) sum_i CE(D(e_pub_i), i), averaged over the batch.
// Returns the loss; gradients flow into the discriminator parameters.
double loss_discriminator(nn::ModelBundle& bundle, const std::vector<Tensor>& e_pub_per_client);

// L_G = L_task + alpha * L_priv with L_priv = -L_D (discriminator frozen).
// Caller supplies the task loss node built on the same graph.
struct GeneratorLoss {
  double task = 0, disc = 0, total = 0;
};

// One adversarial training run over the partitioned dataset.
struct TrainResult {
  PrivacyReport report;
  double majority_baseline = 0;  // accuracy of always predicting the majority class
};
TrainResult adversarial_train(nn::ModelBundle& bundle, const data::SequenceDataset& ds,
                              const AdversarialConfig& cfg);

// Frozen-bundle evaluation: in-training-discriminator accuracy on held-out
// data plus a freshly trained adversary on frozen embeddings (the stronger
// test), confusion matrix, and the task metric.
PrivacyReport evaluate_privacy(nn::ModelBundle& bundle, const data::SequenceDataset& ds, uint64_t seed);

// columnar text serialization (epoch, d_acc, task_metric) + confusion grid
void write_report(const PrivacyReport& report, const std::string& path);

}  // namespace pphh::privacy
