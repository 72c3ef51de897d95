#include "pphh/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace pphh::bench {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  if (method != "e2e" && method != "vfl_mpc" && method != "pphh")
    throw ConfigError("unknown method '" + method + "' (expected e2e | vfl_mpc | pphh)");
  if (method == "vfl_mpc" && !variant.empty() && variant[0] != 'P')
    throw ConfigError("vfl_mpc requires a P-variant, got '" + variant + "'");
  if (method == "pphh" && !variant.empty() && variant[0] != 'H')
    throw ConfigError("pphh requires an H-variant, got '" + variant + "'");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n_clients < 2) throw ConfigError("n_clients must be >= 2");
  if (clock != "simulated" && clock != "real") throw ConfigError("clock must be simulated | real");
  net::profile(profile);  // throws on unknown profile names
  if (dataset != "synth_classification" && dataset != "synth_regression" && dataset != "csv")
    throw ConfigError("unknown dataset '" + dataset + "'");
  if (dataset == "csv" && (csv_path.empty() || schema_path.empty()))
    throw ConfigError("csv dataset needs csv_path and schema_path");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  ExperimentConfig c;
  std::string line;
  while (std::getline(f, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (key == "method") c.method = val;
    else if (key == "variant") c.variant = val;
    else if (key == "n_clients") c.n_clients = std::stoi(val);
    else if (key == "batch_size") c.batch_size = std::stoi(val);
    else if (key == "batches") c.batches = std::stoi(val);
    else if (key == "repeats") c.repeats = std::stoi(val);
    else if (key == "profile") c.profile = val;
    else if (key == "clock") c.clock = val;
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "dataset") c.dataset = val;
    else if (key == "csv_path") c.csv_path = val;
    else if (key == "schema_path") c.schema_path = val;
    else if (key == "n_seqs") c.n_seqs = std::stoi(val);
    else if (key == "seq_len") c.seq_len = std::stoi(val);
    else if (key == "checkpoint") c.checkpoint = val;
    else if (key == "out_dir") c.out_dir = val;
    else if (key == "sec_per_flop") c.sec_per_flop = std::stod(val);
    else if (key == "alpha") c.alpha = std::stod(val);
    else if (key == "epochs") c.epochs = std::stoi(val);
    else if (key == "full_e2e") c.full_e2e = (val == "1" || val == "true");
    else if (key == "e2e_d_model") c.e2e_d_model = std::stoi(val);
    else if (key == "e2e_layers") c.e2e_layers = std::stoi(val);
    else if (key == "e2e_seq") c.e2e_seq = std::stoi(val);
    else throw ConfigError("unknown config key: " + key);
  }
  return c;
}

std::string config_serialize(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "method=" << c.method << "\nvariant=" << c.variant << "\nn_clients=" << c.n_clients
     << "\nbatch_size=" << c.batch_size << "\nbatches=" << c.batches << "\nrepeats=" << c.repeats
     << "\nprofile=" << c.profile << "\nclock=" << c.clock << "\nseed=" << c.seed
     << "\ndataset=" << c.dataset << "\ncsv_path=" << c.csv_path << "\nschema_path=" << c.schema_path
     << "\nn_seqs=" << c.n_seqs << "\nseq_len=" << c.seq_len << "\ncheckpoint=" << c.checkpoint
     << "\nsec_per_flop=" << c.sec_per_flop << "\nalpha=" << c.alpha << "\nepochs=" << c.epochs
     << "\nfull_e2e=" << c.full_e2e << "\ne2e_d_model=" << c.e2e_d_model << "\ne2e_layers=" << c.e2e_layers
     << "\ne2e_seq=" << c.e2e_seq << "\n";
  return os.str();
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_serialize(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double t_critical_95(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                 2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) throw ConfigError("t_critical_95: df must be >= 1");
  if (df <= 30) return table[df - 1];
  return 1.96;
}

std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  double half = t_critical_95(static_cast<int>(xs.size()) - 1) *
                std::sqrt(var / static_cast<double>(xs.size()));
  return {mean, half};
}

double wall_time_s(const std::string& method, const mpc::Transcript& t) {
  if (method == "pphh") {
    double serial = 0;
    for (const auto& [l, v] : t.stage_times)
      if (l != mpc::kStagePublicHead && l != mpc::kStagePrivateHead) serial += v;
    return serial + std::max(t.stage(mpc::kStagePublicHead), t.stage(mpc::kStagePrivateHead));
  }
  return t.total_time();
}

// ---- dataset / bundle plumbing ----

data::SequenceDataset make_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "csv") {
    auto schema = data::load_schema(cfg.schema_path);
    return data::load_csv(cfg.csv_path, schema);
  }
  if (cfg.dataset == "synth_regression") return data::synth_regression(cfg.n_seqs, cfg.seed);
  int len_min = cfg.seq_len > 0 ? cfg.seq_len : 24;
  int len_max = cfg.seq_len > 0 ? cfg.seq_len : 96;
  return data::synth_classification(cfg.n_seqs, cfg.n_clients, cfg.seed, len_min, len_max);
}

nn::ModelBundle make_bundle(const ExperimentConfig& cfg) {
  auto ds = make_dataset(cfg);
  nn::ArchitectureSpec spec;
  spec.n_clients = cfg.n_clients;
  spec.feature_dim = ds.feature_dim;
  spec.max_len = std::max(ds.max_len, cfg.seq_len);
  spec.task = ds.task;
  if (cfg.method == "e2e") {
    if (!cfg.full_e2e) {
      spec.d_model = cfg.e2e_d_model;
      spec.n_heads = 2;
      spec.n_layers = cfg.e2e_layers;
      spec.d_ff = 2 * cfg.e2e_d_model;
      spec.central_hidden = cfg.e2e_d_model;
    }
    spec.ln_eps = 0.05;  // secure layernorm domain
    auto bundle = nn::make_central_bundle(spec, cfg.seed ^ 0xB0B);
    if (!cfg.checkpoint.empty()) nn::load_checkpoint(cfg.checkpoint, bundle.spec, bundle.all_params());
    return bundle;
  }
  nn::apply_variant(spec, cfg.variant);
  auto bundle = nn::make_vfl_bundle(spec, cfg.seed ^ 0xB0B);
  if (!cfg.checkpoint.empty()) nn::load_checkpoint(cfg.checkpoint, bundle.spec, bundle.all_params());
  return bundle;
}

std::vector<std::vector<vfl::PartitionedSequence>> make_batches(const data::SequenceDataset& ds,
                                                                const ExperimentConfig& cfg) {
  std::mt19937_64 rng(cfg.seed ^ 0xBA7C4);
  std::vector<std::vector<vfl::PartitionedSequence>> out;
  data::BatchIter it(ds, ds.test_idx.empty() ? ds.train_idx : ds.test_idx, cfg.batch_size, cfg.seed ^ 0x17E8);
  data::Batch b;
  while (static_cast<int>(out.size()) < cfg.batches && it.next(b)) {
    std::vector<vfl::PartitionedSequence> batch;
    for (auto i : b.record_idx) batch.push_back(vfl::partition_sequence(ds.records[i], cfg.n_clients, rng));
    out.push_back(std::move(batch));
  }
  if (out.empty()) throw ConfigError("dataset too small for one batch");
  return out;
}

// ---- benchmark runners ----

namespace {

// merge() maxes overlapping stages; per-batch accumulation needs sums
mpc::Transcript sum_transcripts(const ExperimentConfig& cfg, nn::ModelBundle& bundle,
                                const std::vector<std::vector<vfl::PartitionedSequence>>& batches,
                                double* wall_sum) {
  vfl::SessionConfig scfg;
  scfg.profile = net::profile(cfg.profile);
  scfg.mode = cfg.clock == "real" ? net::ClockMode::kReal : net::ClockMode::kSimulated;
  scfg.seed = cfg.seed;
  scfg.sec_per_flop = cfg.sec_per_flop;
  scfg.max_e2e_batch = cfg.full_e2e ? (1 << 30) : 128;

  mpc::Transcript total;
  *wall_sum = 0;
  for (const auto& batch : batches) {
    vfl::PipelineResult r;
    if (cfg.method == "e2e") r = vfl::run_e2e_mpc(batch, bundle, scfg);
    else if (cfg.method == "vfl_mpc") r = vfl::run_vfl_mpc(batch, bundle, scfg);
    else r = vfl::run_pphh(batch, bundle, scfg);
    total.rounds += r.transcript.rounds;
    total.bytes_sent[0] += r.transcript.bytes_sent[0];
    total.bytes_sent[1] += r.transcript.bytes_sent[1];
    for (const auto& [l, v] : r.transcript.stage_times) total.add_stage(l, v);
    *wall_sum += wall_time_s(cfg.method, r.transcript);
  }
  return total;
}

void verify_against_model(const ExperimentConfig& cfg, const nn::ModelBundle& bundle,
                          const std::vector<std::vector<vfl::PartitionedSequence>>& batches,
                          const mpc::Transcript& total) {
  uint64_t rounds = 0, bytes = 0;
  for (const auto& batch : batches) {
    auto bs = vfl::batch_shape(batch);
    vfl::PipelineCost pc;
    if (cfg.method == "e2e") pc = vfl::cost_e2e(bundle.spec, bs);
    else if (cfg.method == "vfl_mpc") pc = vfl::cost_vfl_mpc(bundle.spec, bs);
    else pc = vfl::cost_pphh(bundle.spec, bs);
    rounds += pc.rounds();
    bytes += pc.bytes();
  }
  if (rounds != total.rounds)
    throw ConfigError("self-check failed: measured rounds " + std::to_string(total.rounds) +
                      " != analytic " + std::to_string(rounds));
  if (bytes != total.total_bytes())
    throw ConfigError("self-check failed: measured bytes " + std::to_string(total.total_bytes()) +
                      " != analytic " + std::to_string(bytes));
}

}  // namespace

ReportRow run_benchmark(const ExperimentConfig& cfg) {
  cfg.validate();
  auto ds = make_dataset(cfg);
  auto bundle = make_bundle(cfg);
  auto batches = make_batches(ds, cfg);

  double warm_wall = 0;
  auto warm = sum_transcripts(cfg, bundle, batches, &warm_wall);  // warm-up batch pass
  verify_against_model(cfg, bundle, batches, warm);

  std::vector<double> per_batch;
  mpc::Transcript total;
  int repeats = cfg.clock == "simulated" ? std::min(cfg.repeats, 3) : cfg.repeats;
  for (int r = 0; r < repeats; ++r) {
    double wall = 0;
    auto t0 = std::chrono::steady_clock::now();
    auto t = sum_transcripts(cfg, bundle, batches, &wall);  // sleeps when clock=real
    if (cfg.clock == "real")
      wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    per_batch.push_back(wall / static_cast<double>(batches.size()));
    if (r == 0) total = t;
  }
  // simulated mode is deterministic; replicate the row the paper-style way
  while (static_cast<int>(per_batch.size()) < cfg.repeats) per_batch.push_back(per_batch.front());

  auto [mean, half] = mean_ci95(per_batch);
  ReportRow row;
  row.method = cfg.method;
  row.variant = cfg.method == "e2e" ? "tiny" : cfg.variant;
  row.profile = cfg.profile;
  row.n_clients = cfg.n_clients;
  row.batch_size = cfg.batch_size;
  row.mean_s_per_batch = mean;
  row.ci95_half_width = half;
  row.rounds = total.rounds / batches.size();
  row.bytes = total.total_bytes() / batches.size();
  double sum = total.total_time();
  for (const auto& [l, v] : total.stage_times) row.stage_pct.emplace_back(l, 100.0 * v / sum);
  return row;
}

ReportRow stage_breakdown(const ExperimentConfig& cfg) {
  if (cfg.method != "pphh") throw ConfigError("stage breakdown is defined for method=pphh");
  ReportRow row = run_benchmark(cfg);
  double sum = 0;
  for (const auto& [l, v] : row.stage_pct) sum += v;
  if (std::abs(sum - 100.0) > 0.5)
    throw ConfigError("self-check failed: stage percentages sum to " + std::to_string(sum));
  return row;
}

std::vector<ReportRow> party_sweep(const ExperimentConfig& cfg, int n_lo, int n_hi) {
  if (cfg.method == "e2e") throw ConfigError("party sweep is defined for vfl_mpc and pphh");
  std::vector<ReportRow> rows;
  for (int n = n_lo; n <= n_hi; ++n) {
    ExperimentConfig c = cfg;
    c.n_clients = n;
    c.repeats = 1;  // deterministic rows; sweep cost dominated by big variants
    rows.push_back(run_benchmark(c));
  }
  return rows;
}

// ---- report emission ----

std::vector<std::string> emit_report(const std::vector<ReportRow>& rows, const ExperimentConfig& cfg) {
  if (rows.empty()) throw ConfigError("emit_report: no rows");
  fs::create_directories(cfg.out_dir);
  std::vector<std::string> written;

  std::string csv_path = cfg.out_dir + "/report.csv";
  {
    std::ofstream f(csv_path);
    if (!f) throw ConfigError("cannot write " + csv_path);
    f << "method,variant,profile,n_clients,batch_size,mean_s_per_batch,ci95_half_width,rounds,bytes\n";
    for (const auto& r : rows)
      f << r.method << ',' << r.variant << ',' << r.profile << ',' << r.n_clients << ',' << r.batch_size
        << ',' << std::setprecision(17) << r.mean_s_per_batch << ',' << r.ci95_half_width << ',' << r.rounds
        << ',' << r.bytes << "\n";
    written.push_back(csv_path);
  }

  std::string txt_path = cfg.out_dir + "/report.txt";
  {
    std::ofstream f(txt_path);
    f << std::left << std::setw(9) << "method" << std::setw(9) << "variant" << std::setw(8) << "profile"
      << std::setw(4) << "n" << std::right << std::setw(14) << "s/batch" << std::setw(12) << "ci95"
      << std::setw(9) << "rounds" << std::setw(14) << "bytes" << "\n";
    for (const auto& r : rows) {
      f << std::left << std::setw(9) << r.method << std::setw(9) << r.variant << std::setw(8) << r.profile
        << std::setw(4) << r.n_clients << std::right << std::setw(14) << std::fixed << std::setprecision(4)
        << r.mean_s_per_batch << std::setw(12) << r.ci95_half_width << std::setw(9) << r.rounds
        << std::setw(14) << r.bytes << "\n";
      f.unsetf(std::ios::fixed);
    }
    written.push_back(txt_path);
  }

  std::string json_path = cfg.out_dir + "/report.json";
  {
    nlohmann::json j;
    j["config_hash"] = config_hash(cfg);
    j["config"] = config_serialize(cfg);
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json jr;
      jr["method"] = r.method;
      jr["variant"] = r.variant;
      jr["profile"] = r.profile;
      jr["n_clients"] = r.n_clients;
      jr["batch_size"] = r.batch_size;
      jr["mean_s_per_batch"] = r.mean_s_per_batch;
      jr["ci95_half_width"] = r.ci95_half_width;
      jr["rounds"] = r.rounds;
      jr["bytes"] = r.bytes;
      for (const auto& [l, v] : r.stage_pct) jr["stage_pct"][l] = v;
      j["rows"].push_back(jr);
    }
    // published measurements from the original evaluation, included for
    // side-by-side reading only; a different protocol stack produced them
    j["paper_reference"]["note"] = "paper, different protocol stack";
    j["paper_reference"]["wan_s_per_batch"] = {{"P1", 3.17}, {"P4", 139.44}, {"H1", 3.10}, {"H4", 3.14}};
    j["paper_reference"]["lan_s_per_batch"] = {{"P1", 0.45}, {"P4", 15.05}, {"H1", 0.54}, {"H4", 0.64}};
    j["paper_reference"]["comm_mb"] = {{"P1", 6.42}, {"P4", 1732.31}, {"H1", 2.31}, {"H4", 19.00}};
    j["paper_reference"]["comm_rounds"] = {{"P", 32}, {"H", 33}};
    std::ofstream f(json_path);
    f << j.dump(2) << "\n";
    written.push_back(json_path);
  }
  return written;
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path);
  std::string line;
  std::getline(f, line);  // header
  std::vector<ReportRow> rows;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string field;
    ReportRow r;
    std::getline(ss, r.method, ',');
    std::getline(ss, r.variant, ',');
    std::getline(ss, r.profile, ',');
    std::getline(ss, field, ',');
    r.n_clients = std::stoi(field);
    std::getline(ss, field, ',');
    r.batch_size = std::stoi(field);
    std::getline(ss, field, ',');
    r.mean_s_per_batch = std::stod(field);
    std::getline(ss, field, ',');
    r.ci95_half_width = std::stod(field);
    std::getline(ss, field, ',');
    r.rounds = std::stoull(field);
    std::getline(ss, field, ',');
    r.bytes = std::stoull(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---- trainers ----

void train_vfl(nn::ModelBundle& bundle, const data::SequenceDataset& ds, int epochs, int batch_size,
               double lr, double wd, uint64_t seed) {
  const auto& spec = bundle.spec;
  std::mt19937_64 prng(seed ^ 0x9A97);
  std::vector<vfl::PartitionedSequence> seqs;
  for (auto i : ds.train_idx) seqs.push_back(vfl::partition_sequence(ds.records[i], spec.n_clients, prng));

  std::vector<nn::Parameter*> params;
  for (auto& e : bundle.encoders)
    for (auto* p : e.params()) params.push_back(p);
  for (auto* p : bundle.vfl_head.params()) params.push_back(p);
  nn::AdamConfig cfg{lr, 0.9, 0.999, 1e-8, wd};

  std::mt19937_64 rng(seed);
  std::vector<int64_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  int64_t t = 0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
      std::vector<vfl::PartitionedSequence> batch;
      for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(batch_size)); ++i)
        batch.push_back(seqs[order[i]]);
      auto inputs = vfl::build_client_inputs(batch, spec.feature_dim);
      nn::Graph g;
      std::vector<nn::NodePtr> privs;
      for (int c = 0; c < spec.n_clients; ++c) {
        auto emb = bundle.encoders[c].forward(g, g.constant(inputs[c].x), inputs[c].pos, inputs[c].attn,
                                              inputs[c].pool);
        privs.push_back(emb);
      }
      nn::NodePtr x = privs[0];
      for (int c = 1; c < spec.n_clients; ++c) x = nn::concat_cols(g, x, privs[c]);
      auto y = bundle.vfl_head.forward(g, x);
      Tensor targets({static_cast<int64_t>(batch.size())});
      for (size_t b = 0; b < batch.size(); ++b) targets.data[b] = batch[b].label;
      auto loss = spec.task == nn::Task::kClassification ? nn::bce_with_logits_mean(g, y, targets)
                                                         : nn::mse_mean(g, y, targets);
      if (!std::isfinite(loss->value.data[0])) throw ConfigError("vfl training diverged");
      nn::zero_grads(params);
      g.backward(loss);
      nn::adamw_step(params, cfg, ++t);
    }
  }
}

void train_central(nn::ModelBundle& bundle, const data::SequenceDataset& ds, int epochs, int batch_size,
                   double lr, double wd, uint64_t seed) {
  const auto& spec = bundle.spec;
  std::vector<nn::Parameter*> params;
  for (auto* p : bundle.central.params()) params.push_back(p);
  for (auto* p : bundle.central_head.params()) params.push_back(p);
  nn::AdamConfig cfg{lr, 0.9, 0.999, 1e-8, wd};

  std::mt19937_64 rng(seed);
  std::vector<int64_t> order(ds.train_idx.begin(), ds.train_idx.end());
  int64_t t = 0;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
      std::vector<int64_t> idx(order.begin() + at,
                               order.begin() + std::min(order.size(), at + static_cast<size_t>(batch_size)));
      int64_t B = static_cast<int64_t>(idx.size());
      int64_t S = 0;
      for (auto i : idx) S = std::max<int64_t>(S, static_cast<int64_t>(ds.records[i].steps.size()));
      Tensor x({B, S, spec.feature_dim});
      Tensor mask({B, S});
      std::vector<int64_t> pos(B * S, 0);
      Tensor targets({B});
      for (int64_t b = 0; b < B; ++b) {
        const auto& rec = ds.records[idx[b]];
        for (size_t s = 0; s < rec.steps.size(); ++s) {
          for (int f = 0; f < spec.feature_dim; ++f)
            x.data[(b * S + static_cast<int64_t>(s)) * spec.feature_dim + f] = rec.steps[s].features[f];
          mask.at(b, static_cast<int64_t>(s)) = 1.0;
          pos[b * S + static_cast<int64_t>(s)] = static_cast<int64_t>(s);
        }
        targets.data[b] = rec.label;
      }
      nn::Graph g;
      auto seq = bundle.central.forward_seq(g, g.constant(x), pos, mask);
      Tensor w({B, S});
      for (int64_t b = 0; b < B; ++b) {
        double cnt = 0;
        for (int64_t s = 0; s < S; ++s) cnt += mask.at(b, s);
        for (int64_t s = 0; s < S; ++s) w.at(b, s) = mask.at(b, s) / cnt;
      }
      auto pooled = nn::pool_rows(g, seq, w);
      auto dm = nn::add_bias(g, nn::matmul(g, pooled, g.param(bundle.central.out_w)),
                             g.param(bundle.central.out_b));
      auto y = bundle.central_head.forward(g, dm);
      auto loss = spec.task == nn::Task::kClassification ? nn::bce_with_logits_mean(g, y, targets)
                                                         : nn::mse_mean(g, y, targets);
      if (!std::isfinite(loss->value.data[0])) throw ConfigError("central training diverged");
      nn::zero_grads(params);
      g.backward(loss);
      nn::adamw_step(params, cfg, ++t);
    }
  }
}

TrainOutputs train_cli(const ExperimentConfig& cfg) {
  cfg.validate();
  auto ds = make_dataset(cfg);
  ExperimentConfig c2 = cfg;
  c2.checkpoint.clear();  // training starts from the seeded initialization
  auto bundle = make_bundle(c2);
  fs::create_directories(cfg.out_dir);

  TrainOutputs out;
  out.checkpoint_path = cfg.out_dir + "/" + cfg.method + "_" +
                        (cfg.method == "e2e" ? "tiny" : cfg.variant) + ".ckpt";
  if (cfg.method == "pphh") {
    privacy::AdversarialConfig acfg;
    acfg.alpha = cfg.alpha;
    acfg.epochs = cfg.epochs;
    acfg.batch_size = std::min(cfg.batch_size, 64);
    acfg.seed = cfg.seed;
    auto res = privacy::adversarial_train(bundle, ds, acfg);
    out.report = res.report;
    out.majority_baseline = res.majority_baseline;
    out.privacy_report_path = cfg.out_dir + "/privacy_report.txt";
    privacy::write_report(res.report, out.privacy_report_path);
  } else if (cfg.method == "vfl_mpc") {
    train_vfl(bundle, ds, cfg.epochs, 64, 1e-4, 1e-6, cfg.seed);
  } else {
    train_central(bundle, ds, std::min(cfg.epochs, 10), 32, 3e-4, 1e-5, cfg.seed);
  }
  nn::save_checkpoint(out.checkpoint_path, bundle.spec, bundle.all_params());
  return out;
}

}  // namespace pphh::bench
