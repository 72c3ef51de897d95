#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "pphh/bench.hpp"

using namespace pphh;

namespace {

void add_common(CLI::App* cmd, bench::ExperimentConfig& cfg, std::string& config_path) {
  cmd->add_option("--config", config_path, "key=value config file (flags override)");
  cmd->add_option("--method", cfg.method, "e2e | vfl_mpc | pphh");
  cmd->add_option("--variant", cfg.variant, "P1..P4 / H1..H4");
  cmd->add_option("--n-clients", cfg.n_clients, "non-computational parties");
  cmd->add_option("--batch-size", cfg.batch_size);
  cmd->add_option("--batches", cfg.batches, "measured batches per repeat");
  cmd->add_option("--repeats", cfg.repeats);
  cmd->add_option("--profile", cfg.profile, "LAN | WAN");
  cmd->add_option("--clock", cfg.clock, "simulated | real");
  cmd->add_option("--seed", cfg.seed);
  cmd->add_option("--dataset", cfg.dataset, "synth_classification | synth_regression | csv");
  cmd->add_option("--csv-path", cfg.csv_path);
  cmd->add_option("--schema-path", cfg.schema_path);
  cmd->add_option("--n-seqs", cfg.n_seqs);
  cmd->add_option("--seq-len", cfg.seq_len, "force uniform sequence length (e2e requires this)");
  cmd->add_option("--checkpoint", cfg.checkpoint);
  cmd->add_option("--out-dir", cfg.out_dir);
  cmd->add_option("--sec-per-flop", cfg.sec_per_flop, "simulated compute model constant");
  cmd->add_option("--alpha", cfg.alpha, "privacy-loss weight");
  cmd->add_option("--epochs", cfg.epochs);
  cmd->add_flag("--i-know-this-is-huge", cfg.full_e2e, "allow full-scale e2e runs");
}

bench::ExperimentConfig finalize(const CLI::App* cmd, bench::ExperimentConfig flags,
                                 const std::string& config_path) {
  bench::ExperimentConfig cfg = flags;
  if (!config_path.empty()) {
    cfg = bench::load_config(config_path);
    // re-apply any flags the user passed explicitly
    auto take = [&](const std::string& name, auto member) {
      if (cmd->count(name)) cfg.*member = flags.*member;
    };
    take("--method", &bench::ExperimentConfig::method);
    take("--variant", &bench::ExperimentConfig::variant);
    take("--n-clients", &bench::ExperimentConfig::n_clients);
    take("--batch-size", &bench::ExperimentConfig::batch_size);
    take("--batches", &bench::ExperimentConfig::batches);
    take("--repeats", &bench::ExperimentConfig::repeats);
    take("--profile", &bench::ExperimentConfig::profile);
    take("--clock", &bench::ExperimentConfig::clock);
    take("--seed", &bench::ExperimentConfig::seed);
    take("--dataset", &bench::ExperimentConfig::dataset);
    take("--csv-path", &bench::ExperimentConfig::csv_path);
    take("--schema-path", &bench::ExperimentConfig::schema_path);
    take("--n-seqs", &bench::ExperimentConfig::n_seqs);
    take("--seq-len", &bench::ExperimentConfig::seq_len);
    take("--checkpoint", &bench::ExperimentConfig::checkpoint);
    take("--out-dir", &bench::ExperimentConfig::out_dir);
    take("--sec-per-flop", &bench::ExperimentConfig::sec_per_flop);
    take("--alpha", &bench::ExperimentConfig::alpha);
    take("--epochs", &bench::ExperimentConfig::epochs);
    take("--i-know-this-is-huge", &bench::ExperimentConfig::full_e2e);
  }
  if (const char* env = std::getenv("PPHH_OUT_DIR"); env && *env) cfg.out_dir = env;
  return cfg;
}

void print_rows(const std::vector<bench::ReportRow>& rows) {
  std::cout << "method    variant  profile n      s/batch        ci95   rounds         bytes\n";
  for (const auto& r : rows) {
    std::printf("%-9s %-8s %-7s %-3d %12.4f %10.4f %8llu %13llu\n", r.method.c_str(), r.variant.c_str(),
                r.profile.c_str(), r.n_clients, r.mean_s_per_batch, r.ci95_half_width,
                static_cast<unsigned long long>(r.rounds), static_cast<unsigned long long>(r.bytes));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"private time-series VFL inference benchmark harness"};
  app.require_subcommand(1);

  bench::ExperimentConfig cfg;
  std::string config_path;

  auto* train = app.add_subcommand("train", "train a model and save its checkpoint");
  add_common(train, cfg, config_path);

  auto* run = app.add_subcommand("bench", "run the inference benchmark");
  add_common(run, cfg, config_path);

  auto* stages = app.add_subcommand("stages", "per-stage runtime breakdown (pphh)");
  add_common(stages, cfg, config_path);

  auto* sweep = app.add_subcommand("sweep-parties", "runtime across 3..8 clients");
  int n_lo = 3, n_hi = 8;
  add_common(sweep, cfg, config_path);
  sweep->add_option("--n-lo", n_lo);
  sweep->add_option("--n-hi", n_hi);

  auto* peval = app.add_subcommand("privacy-eval", "evaluate a trained bundle's empirical privacy");
  add_common(peval, cfg, config_path);

  auto* report = app.add_subcommand("report", "re-emit report files from a CSV");
  std::string csv_in;
  add_common(report, cfg, config_path);
  report->add_option("--csv", csv_in, "input report.csv")->required();

  auto* interop = app.add_subcommand("interop-party", "run one wire-protocol party (testing)");
  int party_id = 0;
  uint16_t port = 19777;
  uint64_t interop_seed = 7;
  interop->add_option("--party", party_id)->required();
  interop->add_option("--port", port);
  interop->add_option("--seed", interop_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto c = finalize(train, cfg, config_path);
      auto out = bench::train_cli(c);
      std::cout << "checkpoint: " << out.checkpoint_path << "\n";
      std::cout << "checkpoint_hash: " << nn::checkpoint_hash(out.checkpoint_path) << "\n";
      if (!out.privacy_report_path.empty()) {
        std::cout << "privacy_report: " << out.privacy_report_path << "\n";
        std::cout << "fresh_d_accuracy: " << out.report.fresh_d_accuracy << "\n";
        std::cout << "task_accuracy: " << out.report.task_accuracy << "\n";
      }
    } else if (*run) {
      auto c = finalize(run, cfg, config_path);
      auto row = bench::run_benchmark(c);
      print_rows({row});
      bench::emit_report({row}, c);
    } else if (*stages) {
      auto c = finalize(stages, cfg, config_path);
      auto row = bench::stage_breakdown(c);
      print_rows({row});
      std::cout << "stage breakdown (% of stage-time total):\n";
      for (const auto& [l, v] : row.stage_pct) std::printf("  %-32s %6.2f\n", l.c_str(), v);
      bench::emit_report({row}, c);
    } else if (*sweep) {
      auto c = finalize(sweep, cfg, config_path);
      auto rows = bench::party_sweep(c, n_lo, n_hi);
      print_rows(rows);
      bench::emit_report(rows, c);
      double lo = rows.front().mean_s_per_batch, hi = rows.back().mean_s_per_batch;
      std::printf("relative increase %d -> %d clients: %.2f%%\n", n_lo, n_hi, 100.0 * (hi - lo) / lo);
    } else if (*peval) {
      auto c = finalize(peval, cfg, config_path);
      if (c.checkpoint.empty()) throw bench::ConfigError("privacy-eval needs --checkpoint");
      auto ds = bench::make_dataset(c);
      auto bundle = bench::make_bundle(c);
      auto rep = privacy::evaluate_privacy(bundle, ds, c.seed);
      std::cout << "held_out_d_accuracy: " << rep.final_d_accuracy << "\n";
      std::cout << "fresh_d_accuracy: " << rep.fresh_d_accuracy << "\n";
      std::cout << "task_metric: " << rep.task_metric << "\n";
      std::cout << "random_baseline: " << rep.random_baseline << "\n";
      std::filesystem::create_directories(c.out_dir);
      privacy::write_report(rep, c.out_dir + "/privacy_report.txt");
    } else if (*report) {
      auto c = finalize(report, cfg, config_path);
      auto rows = bench::read_report_csv(csv_in);
      auto files = bench::emit_report(rows, c);
      for (const auto& p : files) std::cout << "wrote " << p << "\n";
    } else if (*interop) {
      // one party of a small cross-process session over the documented wire
      // format; prints the reconstructed value and a transcript digest
      std::unique_ptr<net::SocketChannel> ch;
      if (party_id == 0) ch = net::SocketChannel::listen_one(port);
      else ch = net::SocketChannel::connect("127.0.0.1", port);

      mpc::TapeSpec spec;
      spec.mul_elems = 8;
      auto [t0, t1] = mpc::dealer_generate(spec, interop_seed, 0x5EED);
      mpc::PartyContext ctx{party_id, ch.get(), party_id == 0 ? std::move(t0) : std::move(t1), 0};

      std::mt19937_64 rng(interop_seed);
      Tensor x({8}), y({8});
      for (int i = 0; i < 8; ++i) {
        x.data[i] = 0.5 * (i + 1);
        y.data[i] = 0.25 * (8 - i);
      }
      auto [xs0, xs1] = mpc::share(fxp::encode(x), rng);
      auto [ys0, ys1] = mpc::share(fxp::encode(y), rng);
      auto prod = mpc::mul_beaver(ctx, party_id == 0 ? xs0 : xs1, party_id == 0 ? ys0 : ys1, 16);
      auto opened = mpc::reconstruct(ctx, prod);
      uint64_t digest = 0xcbf29ce484222325ULL;
      for (uint64_t v : opened.data) {
        for (int b = 0; b < 8; ++b) {
          digest ^= (v >> (8 * b)) & 0xFF;
          digest *= 0x100000001b3ULL;
        }
      }
      std::cout << "party " << party_id << " transcript_digest " << digest << " first "
                << fxp::decode(opened).data[0] << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
