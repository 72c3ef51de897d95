#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pphh/bench.hpp"
#include "pphh/privacy.hpp"

namespace py = pybind11;
using namespace pphh;

namespace {

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Tensor t;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) t.shape.push_back(arr.shape(i));
  t.data.assign(arr.data(), arr.data() + arr.size());
  return t;
}

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> arr(t.shape);
  std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
  return arr;
}

// run a secure unary op on both parties in-process, return decoded result
// plus the transcript counters
py::tuple secure_unary(const Tensor& input, const std::string& op, double shift) {
  auto secret = fxp::encode(input);
  std::mt19937_64 rng(0x9E1);
  auto [s0, s1] = mpc::share(secret, rng);

  int64_t n = input.numel();
  mpc::TapeSpec tape;
  if (op == "relu") tape = mpc::cost_relu(n).tape;
  else if (op == "exp") tape = mpc::cost_exp(n).tape;
  else if (op == "reciprocal") tape = mpc::cost_reciprocal(n).tape;
  else if (op == "inv_sqrt") tape = mpc::cost_inv_sqrt(n).tape;
  else if (op == "msb") tape = mpc::cost_msb(n).tape;
  else if (op == "softmax") tape = mpc::cost_softmax(input.shape[0], input.shape[1]).tape;
  else throw std::invalid_argument("unknown op: " + op);

  mpc::SharedTensor out[2];
  mpc::Transcript tr;
  mpc::run_parties(tape, 0xD0, [&](mpc::PartyContext& ctx) {
    const mpc::SharedTensor& mine = ctx.party_id == 0 ? s0 : s1;
    if (op == "relu") out[ctx.party_id] = mpc::relu_secure(ctx, mine);
    else if (op == "exp") out[ctx.party_id] = mpc::exp_secure(ctx, mine);
    else if (op == "reciprocal") out[ctx.party_id] = mpc::reciprocal_secure(ctx, mine);
    else if (op == "inv_sqrt") out[ctx.party_id] = mpc::inv_sqrt_secure(ctx, mine);
    else if (op == "msb") out[ctx.party_id] = mpc::msb_extract(ctx, mine);
    else {
      std::vector<double> shifts(input.shape[0], shift);
      out[ctx.party_id] = mpc::softmax_secure(ctx, mine, shifts);
    }
  }, net::profile("LAN"), net::ClockMode::kSimulated, &tr);

  Tensor decoded = fxp::decode(mpc::reconstruct(out[0], out[1]));
  return py::make_tuple(to_numpy(decoded), tr.rounds, tr.total_bytes());
}

py::tuple secure_matmul(const Tensor& a, const Tensor& b) {
  auto ea = fxp::encode(a), eb = fxp::encode(b);
  std::mt19937_64 rng(0x9E2);
  auto [a0, a1] = mpc::share(ea, rng);
  auto [b0, b1] = mpc::share(eb, rng);
  mpc::TapeSpec tape;
  tape.matmuls.push_back({a.shape[0], a.shape[1], b.shape[1]});
  mpc::SharedTensor out[2];
  mpc::Transcript tr;
  mpc::run_parties(tape, 0xD1, [&](mpc::PartyContext& ctx) {
    out[ctx.party_id] = mpc::matmul_beaver(ctx, ctx.party_id == 0 ? a0 : a1, ctx.party_id == 0 ? b0 : b1,
                                           fxp::kFracBits);
  }, net::profile("LAN"), net::ClockMode::kSimulated, &tr);
  return py::make_tuple(to_numpy(fxp::decode(mpc::reconstruct(out[0], out[1]))), tr.rounds,
                        tr.total_bytes());
}

py::dict run_pipeline(const std::string& method, const std::string& variant, int n_clients, int batch_size,
                      int n_seqs, int seq_len, const std::string& profile, uint64_t seed) {
  bench::ExperimentConfig cfg;
  cfg.method = method;
  cfg.variant = variant;
  cfg.n_clients = n_clients;
  cfg.batch_size = batch_size;
  cfg.n_seqs = n_seqs;
  cfg.seq_len = seq_len;
  cfg.profile = profile;
  cfg.seed = seed;
  cfg.repeats = 1;
  auto row = bench::run_benchmark(cfg);
  py::dict d;
  d["method"] = row.method;
  d["variant"] = row.variant;
  d["s_per_batch"] = row.mean_s_per_batch;
  d["rounds"] = row.rounds;
  d["bytes"] = row.bytes;
  py::dict stages;
  for (const auto& [l, v] : row.stage_pct) stages[l.c_str()] = v;
  d["stage_pct"] = stages;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pphh, m) {
  m.doc() = "two-party secure inference for time-series VFL: fixed-point MPC core and pipelines";
  m.attr("__version__") = "1.0.0";
  m.attr("FRAC_BITS") = fxp::kFracBits;

  m.def("encode", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, int frac) {
    auto enc = fxp::encode(from_numpy(x), frac);
    py::array_t<uint64_t> arr(enc.shape);
    std::copy(enc.data.begin(), enc.data.end(), arr.mutable_data());
    return arr;
  }, py::arg("x"), py::arg("frac_bits") = fxp::kFracBits);

  m.def("decode", [](const py::array_t<uint64_t, py::array::c_style | py::array::forcecast>& v, int frac) {
    fxp::RingTensor t;
    for (py::ssize_t i = 0; i < v.ndim(); ++i) t.shape.push_back(v.shape(i));
    t.data.assign(v.data(), v.data() + v.size());
    t.frac_bits = frac;
    return to_numpy(fxp::decode(t));
  }, py::arg("v"), py::arg("frac_bits") = fxp::kFracBits);

  m.def("share", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto [s0, s1] = mpc::share(fxp::encode(from_numpy(x)), rng);
    py::array_t<uint64_t> a0(s0.share.shape), a1(s1.share.shape);
    std::copy(s0.share.data.begin(), s0.share.data.end(), a0.mutable_data());
    std::copy(s1.share.data.begin(), s1.share.data.end(), a1.mutable_data());
    return py::make_tuple(a0, a1);
  }, py::arg("x"), py::arg("seed") = 1);

  m.def("secure_eval", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                          const std::string& op, double softmax_shift) {
    return secure_unary(from_numpy(x), op, softmax_shift);
  }, py::arg("x"), py::arg("op"), py::arg("softmax_shift") = 0.0,
     "run a secure op on secret-shared input; returns (result, rounds, bytes)");

  m.def("secure_matmul", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                            const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
    return secure_matmul(from_numpy(a), from_numpy(b));
  });

  m.def("run_pipeline", &run_pipeline, py::arg("method"), py::arg("variant") = "H1",
        py::arg("n_clients") = 3, py::arg("batch_size") = 8, py::arg("n_seqs") = 48,
        py::arg("seq_len") = 12, py::arg("profile") = "WAN", py::arg("seed") = 1,
        "run one benchmark batch; returns timing/round/byte accounting");

  m.def("synth_classification", [](int n_seqs, int n_clients, uint64_t seed) {
    auto ds = data::synth_classification(n_seqs, n_clients, seed);
    py::list records;
    for (const auto& r : ds.records) {
      Tensor feats({static_cast<int64_t>(r.steps.size()), ds.feature_dim});
      for (size_t s = 0; s < r.steps.size(); ++s)
        for (int f = 0; f < ds.feature_dim; ++f) feats.at(static_cast<int64_t>(s), f) = r.steps[s].features[f];
      records.append(py::make_tuple(to_numpy(feats), r.label));
    }
    return records;
  }, py::arg("n_seqs"), py::arg("n_clients") = 3, py::arg("seed") = 1);

  m.def("lan_profile", [] { return py::make_tuple(1.0, 1e9); });
  m.def("wan_profile", [] { return py::make_tuple(40.0, 1e8); });
}
