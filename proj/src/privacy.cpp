#include "pphh/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace pphh::privacy {

using nn::Graph;
using nn::NodePtr;

double PrivacyReport::accuracy_from_confusion() const {
  int64_t trace = 0, total = 0;
  for (size_t i = 0; i < confusion.size(); ++i)
    for (size_t j = 0; j < confusion[i].size(); ++j) {
      total += confusion[i][j];
      if (i == j) trace += confusion[i][j];
    }
  return total ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
}

namespace {

// discriminator forward with frozen weights (constants, no gradient flow)
NodePtr discriminator_frozen(Graph& g, nn::Mlp& d, NodePtr x) {
  for (size_t i = 0; i < d.weights.size(); ++i) {
    x = nn::add_bias(g, nn::matmul(g, x, g.constant(d.weights[i].value)), g.constant(d.biases[i].value));
    if (i + 1 < d.weights.size()) x = nn::relu(g, x);
  }
  return x;
}

// stack per-client embedding nodes into one [n*B, h] node with client labels
NodePtr stack_clients(Graph& g, const std::vector<NodePtr>& per_client, std::vector<int64_t>* labels) {
  NodePtr out;
  labels->clear();
  for (size_t c = 0; c < per_client.size(); ++c) {
    int64_t rows = per_client[c]->value.shape[0];
    for (int64_t r = 0; r < rows; ++r) labels->push_back(static_cast<int64_t>(c));
    if (!out) {
      out = per_client[c];
    } else {
      // concatenate rows: build via reshape-free copy op
      int64_t r0 = out->value.shape[0], r1 = rows, w = per_client[c]->value.shape[1];
      Tensor v({r0 + r1, w});
      std::copy(out->value.data.begin(), out->value.data.end(), v.data.begin());
      std::copy(per_client[c]->value.data.begin(), per_client[c]->value.data.end(),
                v.data.begin() + r0 * w);
      out = g.make(std::move(v), {out, per_client[c]}, [r0, r1, w](nn::Node& nd) {
        if (nd.parents[0]->requires_grad) {
          Tensor& da = nd.parents[0]->ensure_grad();
          for (int64_t i = 0; i < r0 * w; ++i) da.data[i] += nd.grad.data[i];
        }
        if (nd.parents[1]->requires_grad) {
          Tensor& db = nd.parents[1]->ensure_grad();
          for (int64_t i = 0; i < r1 * w; ++i) db.data[i] += nd.grad.data[r0 * w + i];
        }
      });
    }
  }
  return out;
}

struct BatchNodes {
  NodePtr y;                       // task output [B]
  std::vector<NodePtr> e_pub;      // per client [B, h_pub]
  Tensor targets;                  // [B]
};

BatchNodes hybrid_forward(Graph& g, nn::ModelBundle& bundle,
                          const std::vector<vfl::PartitionedSequence>& batch) {
  const auto& spec = bundle.spec;
  auto inputs = vfl::build_client_inputs(batch, spec.feature_dim);
  BatchNodes out;
  std::vector<NodePtr> pubs, privs;
  for (int c = 0; c < spec.n_clients; ++c) {
    auto e = bundle.encoders[c].forward(g, g.constant(inputs[c].x), inputs[c].pos, inputs[c].attn,
                                        inputs[c].pool);
    pubs.push_back(nn::slice_cols(g, e, 0, spec.h_pub));
    privs.push_back(nn::slice_cols(g, e, spec.h_pub, spec.h_pub + spec.h_priv));
  }
  NodePtr xpub = pubs[0], xpriv = privs[0];
  for (int c = 1; c < spec.n_clients; ++c) {
    xpub = nn::concat_cols(g, xpub, pubs[c]);
    xpriv = nn::concat_cols(g, xpriv, privs[c]);
  }
  auto y_pub = bundle.public_head.forward(g, xpub);
  auto y_priv = bundle.private_head.forward(g, xpriv);
  out.y = bundle.fusion_head.forward(g, nn::concat_cols(g, y_pub, y_priv));
  out.e_pub = std::move(pubs);
  out.targets = Tensor({static_cast<int64_t>(batch.size())});
  for (size_t b = 0; b < batch.size(); ++b) out.targets.data[b] = batch[b].label;
  return out;
}

double f1_positive(const std::vector<double>& logits, const std::vector<double>& labels) {
  int64_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    bool pred = logits[i] > 0;
    bool truth = labels[i] > 0.5;
    if (pred && truth) ++tp;
    if (pred && !truth) ++fp;
    if (!pred && truth) ++fn;
  }
  if (tp == 0) return 0.0;
  double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2 * prec * rec / (prec + rec);
}

std::vector<vfl::PartitionedSequence> partition_all(const data::SequenceDataset& ds,
                                                    const std::vector<int64_t>& idx, int n_clients,
                                                    uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<vfl::PartitionedSequence> out;
  for (int64_t i : idx) out.push_back(vfl::partition_sequence(ds.records[i], n_clients, rng));
  return out;
}

// embeddings of a frozen bundle for a record set: returns [n][B, h_pub]
std::vector<Tensor> frozen_embeddings(nn::ModelBundle& bundle,
                                      const std::vector<vfl::PartitionedSequence>& seqs) {
  std::vector<std::vector<std::vector<int>>> pos(seqs.size());
  for (size_t q = 0; q < seqs.size(); ++q) {
    pos[q].resize(bundle.spec.n_clients);
    for (int c = 0; c < bundle.spec.n_clients; ++c)
      for (const auto& st : seqs[q].per_client[c]) pos[q][c].push_back(st.global_pos);
  }
  auto fwd = vfl::client_encoder_forward(seqs, bundle, pos);
  std::vector<Tensor> out;
  for (auto& f : fwd) out.push_back(std::move(f.e_pub));
  return out;
}

double discriminator_accuracy(nn::Mlp& d, const std::vector<Tensor>& e_pub,
                              std::vector<std::vector<int64_t>>* confusion) {
  int n = static_cast<int>(e_pub.size());
  if (confusion) confusion->assign(n, std::vector<int64_t>(n, 0));
  int64_t correct = 0, total = 0;
  for (int c = 0; c < n; ++c) {
    Graph g;
    auto logits = discriminator_frozen(g, d, g.constant(e_pub[c]));
    int64_t B = logits->value.shape[0];
    for (int64_t b = 0; b < B; ++b) {
      int best = 0;
      for (int j = 1; j < n; ++j)
        if (logits->value.at(b, j) > logits->value.at(b, best)) best = j;
      if (confusion) (*confusion)[c][best]++;
      correct += (best == c);
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

void train_discriminator(nn::Mlp& d, const std::vector<Tensor>& e_pub, int epochs, double lr, double wd,
                         uint64_t seed) {
  int n = static_cast<int>(e_pub.size());
  int64_t B = e_pub[0].shape[0];
  int64_t h = e_pub[0].shape[1];
  std::mt19937_64 rng(seed);
  std::vector<int64_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  nn::AdamConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = wd;
  auto params = d.params();
  int64_t t = 0;
  int64_t bs = 64;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t at = 0; at < B; at += bs) {
      int64_t m = std::min(bs, B - at);
      Tensor x({m * n, h});
      std::vector<int64_t> labels;
      for (int c = 0; c < n; ++c)
        for (int64_t i = 0; i < m; ++i) {
          std::memcpy(&x.at(c * m + i, 0), &e_pub[c].data[order[at + i] * h],
                      sizeof(double) * static_cast<size_t>(h));
          labels.push_back(c);
        }
      Graph g;
      auto loss = nn::cross_entropy_mean(g, d.forward(g, g.constant(x)), labels);
      nn::zero_grads(params);
      g.backward(loss);
      nn::adamw_step(params, cfg, ++t);
    }
  }
}

}  // namespace

double loss_discriminator(nn::ModelBundle& bundle, const std::vector<Tensor>& e_pub_per_client) {
  Graph g;
  std::vector<NodePtr> nodes;
  for (const auto& e : e_pub_per_client) nodes.push_back(g.constant(e));
  std::vector<int64_t> labels;
  auto x = stack_clients(g, nodes, &labels);
  auto loss = nn::cross_entropy_mean(g, bundle.discriminator.forward(g, x), labels);
  nn::zero_grads(bundle.discriminator.params());
  g.backward(loss);
  return loss->value.data[0];
}

TrainResult adversarial_train(nn::ModelBundle& bundle, const data::SequenceDataset& ds,
                              const AdversarialConfig& cfg) {
  auto& spec = bundle.spec;
  if (!spec.is_hybrid()) throw ShapeError("adversarial_train expects an H-variant bundle");
  int n = spec.n_clients;

  auto train_seqs = partition_all(ds, ds.train_idx, n, cfg.seed ^ 0x9A97);
  auto test_seqs = partition_all(ds, ds.test_idx, n, cfg.seed ^ 0x7A57);

  auto gen_params = bundle.generator_params();
  auto d_params = bundle.discriminator.params();
  nn::AdamConfig g_cfg{cfg.lr_g, 0.9, 0.999, 1e-8, cfg.wd_g};
  nn::AdamConfig d_cfg{cfg.lr_d, 0.9, 0.999, 1e-8, cfg.wd_d};

  TrainResult result;
  result.report.n_clients = n;
  result.report.random_baseline = 1.0 / n;

  std::mt19937_64 rng(cfg.seed);
  std::vector<int64_t> order(train_seqs.size());
  std::iota(order.begin(), order.end(), 0);
  int64_t tg = 0, td = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double d_correct = 0, d_total = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
      std::vector<vfl::PartitionedSequence> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch_size)); ++i)
        batch.push_back(train_seqs[order[i]]);

      // discriminator step(s): embeddings detached
      std::vector<Tensor> e_pub_vals;
      {
        Graph g;
        auto nodes = hybrid_forward(g, bundle, batch);
        for (auto& e : nodes.e_pub) e_pub_vals.push_back(e->value);
      }
      for (int dstep = 0; dstep < cfg.d_steps_per_g_step; ++dstep) {
        Graph g;
        std::vector<NodePtr> cnodes;
        for (auto& e : e_pub_vals) cnodes.push_back(g.constant(e));
        std::vector<int64_t> labels;
        auto x = stack_clients(g, cnodes, &labels);
        auto logits = bundle.discriminator.forward(g, x);
        auto loss = nn::cross_entropy_mean(g, logits, labels);
        nn::zero_grads(d_params);
        g.backward(loss);
        nn::adamw_step(d_params, d_cfg, ++td);
        // in-training discriminator accuracy over this batch
        for (int64_t r = 0; r < logits->value.shape[0]; ++r) {
          int best = 0;
          for (int j = 1; j < n; ++j)
            if (logits->value.at(r, j) > logits->value.at(r, best)) best = j;
          d_correct += (best == labels[static_cast<size_t>(r)]);
          d_total += 1;
        }
      }

      // generator step: task loss minus alpha * frozen-discriminator loss
      {
        Graph g;
        auto nodes = hybrid_forward(g, bundle, batch);
        NodePtr task = spec.task == nn::Task::kClassification
                           ? nn::bce_with_logits_mean(g, nodes.y, nodes.targets)
                           : nn::mse_mean(g, nodes.y, nodes.targets);
        std::vector<int64_t> labels;
        auto x = stack_clients(g, nodes.e_pub, &labels);
        auto d_loss = nn::cross_entropy_mean(g, discriminator_frozen(g, bundle.discriminator, x), labels);
        auto total = nn::add(g, task, nn::scale(g, d_loss, -cfg.alpha));
        if (!std::isfinite(task->value.data[0]))
          throw std::runtime_error("adversarial training diverged: non-finite task loss at epoch " +
                                   std::to_string(epoch));
        nn::zero_grads(gen_params);
        g.backward(total);
        nn::adamw_step(gen_params, g_cfg, ++tg);
      }
    }
    result.report.d_accuracy_per_epoch.push_back(d_total ? d_correct / d_total : 0.0);

    // held-out task metric per epoch
    {
      Graph g;
      auto nodes = hybrid_forward(g, bundle, test_seqs);
      if (spec.task == nn::Task::kClassification)
        result.report.task_metric_per_epoch.push_back(
            f1_positive(nodes.y->value.data, nodes.targets.data));
      else {
        double sse = 0;
        for (int64_t i = 0; i < nodes.targets.numel(); ++i) {
          double d = nodes.y->value.data[i] - nodes.targets.data[i];
          sse += d * d;
        }
        result.report.task_metric_per_epoch.push_back(std::sqrt(sse / nodes.targets.numel()));
      }
    }
  }

  auto eval = evaluate_privacy(bundle, ds, cfg.seed ^ 0xE7A1);
  eval.d_accuracy_per_epoch = result.report.d_accuracy_per_epoch;
  eval.task_metric_per_epoch = result.report.task_metric_per_epoch;
  result.report = std::move(eval);

  // majority-class baseline on the held-out split
  if (spec.task == nn::Task::kClassification) {
    double pos = 0;
    for (auto i : ds.test_idx) pos += ds.records[i].label;
    double frac = pos / static_cast<double>(ds.test_idx.size());
    result.majority_baseline = std::max(frac, 1.0 - frac);
  }
  return result;
}

PrivacyReport evaluate_privacy(nn::ModelBundle& bundle, const data::SequenceDataset& ds, uint64_t seed) {
  int n = bundle.spec.n_clients;
  PrivacyReport rep;
  rep.n_clients = n;
  rep.random_baseline = 1.0 / n;

  auto train_seqs = partition_all(ds, ds.train_idx, n, seed ^ 0x9A97);
  auto test_seqs = partition_all(ds, ds.test_idx, n, seed ^ 0x7A57);
  auto train_emb = frozen_embeddings(bundle, train_seqs);
  auto test_emb = frozen_embeddings(bundle, test_seqs);

  // in-training discriminator on held-out embeddings
  rep.final_d_accuracy = discriminator_accuracy(bundle.discriminator, test_emb, &rep.confusion);
  rep.per_class_accuracy.clear();
  for (int c = 0; c < n; ++c) {
    int64_t row = 0;
    for (int j = 0; j < n; ++j) row += rep.confusion[c][j];
    rep.per_class_accuracy.push_back(row ? static_cast<double>(rep.confusion[c][c]) / row : 0.0);
  }

  // fresh adversary retrained on frozen train-split embeddings
  std::mt19937_64 rng(seed);
  nn::Mlp fresh("fresh_d", {bundle.spec.h_pub, 128, 64, n}, rng);
  train_discriminator(fresh, train_emb, 30, 1e-3, 1e-4, seed ^ 0xF12E);
  rep.fresh_d_accuracy = discriminator_accuracy(fresh, test_emb, nullptr);

  // held-out task metric
  {
    nn::Graph g;
    auto nodes = hybrid_forward(g, bundle, test_seqs);
    if (bundle.spec.task == nn::Task::kClassification) {
      rep.task_metric = f1_positive(nodes.y->value.data, nodes.targets.data);
      int64_t correct = 0;
      for (int64_t i = 0; i < nodes.targets.numel(); ++i)
        correct += ((nodes.y->value.data[i] > 0) == (nodes.targets.data[i] > 0.5));
      rep.task_accuracy = static_cast<double>(correct) / static_cast<double>(nodes.targets.numel());
    } else {
      double sse = 0;
      for (int64_t i = 0; i < nodes.targets.numel(); ++i) {
        double d = nodes.y->value.data[i] - nodes.targets.data[i];
        sse += d * d;
      }
      rep.task_metric = std::sqrt(sse / static_cast<double>(nodes.targets.numel()));
      rep.task_accuracy = 0;
    }
  }
  return rep;
}

void write_report(const PrivacyReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write privacy report: " + path);
  f << "# epoch d_accuracy task_metric\n";
  for (size_t e = 0; e < rep.d_accuracy_per_epoch.size(); ++e)
    f << e << " " << rep.d_accuracy_per_epoch[e] << " "
      << (e < rep.task_metric_per_epoch.size() ? rep.task_metric_per_epoch[e] : 0.0) << "\n";
  f << "# held_out_d_accuracy " << rep.final_d_accuracy << "\n";
  f << "# fresh_d_accuracy " << rep.fresh_d_accuracy << "\n";
  f << "# task_metric " << rep.task_metric << "\n";
  f << "# task_accuracy " << rep.task_accuracy << "\n";
  f << "# random_baseline " << rep.random_baseline << "\n";
  f << "# per_class";
  for (double a : rep.per_class_accuracy) f << " " << a;
  f << "\n# confusion\n";
  for (const auto& row : rep.confusion) {
    for (size_t j = 0; j < row.size(); ++j) f << row[j] << (j + 1 < row.size() ? ' ' : '\n');
  }
}

}  // namespace pphh::privacy
