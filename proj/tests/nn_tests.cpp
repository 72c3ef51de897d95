#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "pphh/nn.hpp"

using namespace pphh;
using namespace pphh::nn;

TEST_CASE("linear with identity weight is identity") {
  Graph g;
  Parameter w("w", Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Parameter b("b", Tensor::zeros({3}));
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto out = add_bias(g, matmul(g, g.constant(x), g.param(w)), g.param(b));
  CHECK(out->value.data == x.data);
}

TEST_CASE("softmax rows sum to one") {
  Graph g;
  std::mt19937_64 rng(1);
  Tensor x({8, 5});
  std::uniform_real_distribution<double> d(-3, 3);
  for (auto& v : x.data) v = d(rng);
  auto y = softmax_rows(g, g.constant(x));
  for (int i = 0; i < 8; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += y->value.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layernorm has near zero mean unit variance") {
  Graph g;
  std::mt19937_64 rng(2);
  Tensor x({6, 32});
  std::uniform_real_distribution<double> d(-4, 9);
  for (auto& v : x.data) v = d(rng);
  Parameter gamma("g", Tensor::full({32}, 1.0)), beta("b", Tensor::zeros({32}));
  auto y = layernorm_rows(g, g.constant(x), g.param(gamma), g.param(beta), 1e-5);
  for (int i = 0; i < 6; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 32; ++j) mu += y->value.at(i, j);
    mu /= 32;
    for (int j = 0; j < 32; ++j) var += (y->value.at(i, j) - mu) * (y->value.at(i, j) - mu);
    var /= 32;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("gradient of x^2 at x=3") {
  Parameter p("x", Tensor::scalar(3.0));
  Graph g;
  auto x = g.param(p);
  auto loss = mean_all(g, mul(g, x, x));
  p.zero_grad();
  g.backward(loss);
  CHECK(p.grad.data[0] == doctest::Approx(6.0).epsilon(1e-10));
}

TEST_CASE("zero loss gives zero gradients") {
  Parameter p("x", Tensor({4}, {1, 2, 3, 4}));
  Graph g;
  auto x = g.param(p);
  auto loss = mean_all(g, scale(g, x, 0.0));
  p.zero_grad();
  g.backward(loss);
  for (auto v : p.grad.data) CHECK(v == 0.0);
}

static double layer_gradcheck(const std::function<NodePtr(Graph&, NodePtr)>& f, std::vector<int64_t> shape,
                              uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.5, 1.5);
  Parameter p("x", Tensor(shape));
  for (auto& v : p.value.data) v = d(rng);
  Tensor targets;
  {
    Graph g;
    auto y = f(g, g.param(p));
    targets = Tensor(y->value.shape);
    for (auto& v : targets.data) v = d(rng);
  }
  auto loss_value = [&] {
    Graph g;
    auto y = f(g, g.param(p));
    return mse_mean(g, y, targets)->value.data[0];
  };
  auto backward = [&] {
    Graph g;
    auto y = f(g, g.param(p));
    g.backward(mse_mean(g, y, targets));
  };
  return grad_check({&p}, loss_value, backward, 1e-5);
}

TEST_CASE("per-layer gradient checks") {
  CHECK(layer_gradcheck([](Graph& g, NodePtr x) { return relu(g, x); }, {4, 6}) < 1e-4);
  CHECK(layer_gradcheck([](Graph& g, NodePtr x) { return sigmoid(g, x); }, {4, 6}) < 1e-4);
  CHECK(layer_gradcheck([](Graph& g, NodePtr x) { return softmax_rows(g, x); }, {4, 6}) < 1e-4);
  CHECK(layer_gradcheck([](Graph& g, NodePtr x) { return scale(g, mul(g, x, x), 0.5); }, {3, 5}) < 1e-4);
  CHECK(layer_gradcheck(
            [](Graph& g, NodePtr x) {
              auto x3 = reshape(g, x, {2, 3, 4});
              return reshape(g, bmm(g, x3, transpose_last2(g, x3)), {2, 9});
            },
            {6, 4}) < 1e-4);
  CHECK(layer_gradcheck(
            [](Graph& g, NodePtr x) {
              return reshape(g, permute_0213(g, reshape(g, x, {2, 3, 2, 2})), {6, 4});
            },
            {6, 4}) < 1e-4);
  CHECK(layer_gradcheck(
            [](Graph& g, NodePtr x) { return concat_cols(g, slice_cols(g, x, 0, 2), slice_cols(g, x, 2, 6)); },
            {4, 6}) < 1e-4);
}

TEST_CASE("layernorm full gradient check") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-2, 2);
  Parameter x("x", Tensor({3, 7})), gamma("g", Tensor({7})), beta("b", Tensor({7}));
  for (auto& v : x.value.data) v = d(rng);
  for (auto& v : gamma.value.data) v = 1.0 + 0.1 * d(rng);
  for (auto& v : beta.value.data) v = 0.1 * d(rng);
  Tensor targets({3, 7});
  for (auto& v : targets.data) v = d(rng);
  auto loss_value = [&] {
    Graph g;
    auto y = layernorm_rows(g, g.param(x), g.param(gamma), g.param(beta), 1e-5);
    return mse_mean(g, y, targets)->value.data[0];
  };
  auto backward = [&] {
    Graph g;
    auto y = layernorm_rows(g, g.param(x), g.param(gamma), g.param(beta), 1e-5);
    g.backward(mse_mean(g, y, targets));
  };
  CHECK(grad_check({&x, &gamma, &beta}, loss_value, backward) < 1e-4);
}

TEST_CASE("cross entropy and bce gradcheck") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(-2, 2);
  Parameter z("z", Tensor({5, 3}));
  for (auto& v : z.value.data) v = d(rng);
  std::vector<int64_t> labels = {0, 2, 1, 1, 0};
  auto lv = [&] {
    Graph g;
    return cross_entropy_mean(g, g.param(z), labels)->value.data[0];
  };
  auto bw = [&] {
    Graph g;
    g.backward(cross_entropy_mean(g, g.param(z), labels));
  };
  CHECK(grad_check({&z}, lv, bw) < 1e-4);
  CHECK_THROWS_AS([&] {
    Graph g;
    cross_entropy_mean(g, g.param(z), {0, 1, 2, 3, 0});
  }(), ShapeError);

  Parameter zl("zl", Tensor({6}));
  for (auto& v : zl.value.data) v = d(rng);
  Tensor t({6}, {1, 0, 1, 1, 0, 0});
  auto lv2 = [&] {
    Graph g;
    return bce_with_logits_mean(g, g.param(zl), t)->value.data[0];
  };
  auto bw2 = [&] {
    Graph g;
    g.backward(bce_with_logits_mean(g, g.param(zl), t));
  };
  CHECK(grad_check({&zl}, lv2, bw2) < 1e-4);
}

TEST_CASE("adamw: zero grad leaves params unchanged, descent works") {
  Parameter p("p", Tensor({2}, {1.0, -2.0}));
  p.zero_grad();
  AdamConfig cfg;
  cfg.lr = 0.1;
  adamw_step({&p}, cfg, 1);
  CHECK(p.value.data[0] == 1.0);
  CHECK(p.value.data[1] == -2.0);

  Tensor target({2}, {3.0, -1.0});
  auto loss_of = [&](const Tensor& v) {
    double a = v.data[0] - 3, b = v.data[1] + 1;
    return a * a + b * b;
  };
  double before = loss_of(p.value);
  Graph g;
  auto x = g.param(p);
  auto loss = mse_mean(g, x, target);
  p.zero_grad();
  g.backward(loss);
  adamw_step({&p}, cfg, 1);
  CHECK(loss_of(p.value) < before);

  Parameter q("q", Tensor({2}, {3.5, -1.5}));
  for (int t = 1; t <= 100; ++t) {
    Graph g2;
    auto xn = g2.param(q);
    auto l = mse_mean(g2, xn, target);
    q.zero_grad();
    g2.backward(l);
    AdamConfig c2;
    c2.lr = 0.5;
    adamw_step({&q}, c2, t);
  }
  CHECK(std::abs(q.value.data[0] - 3.0) < 1e-3);
  CHECK(std::abs(q.value.data[1] + 1.0) < 1e-3);
}

static ArchitectureSpec tiny_spec() {
  ArchitectureSpec s;
  s.d_model = 8;
  s.n_heads = 2;
  s.n_layers = 1;
  s.d_ff = 16;
  s.h_pub = 3;
  s.a_pub = 4;
  s.h_priv = 2;
  s.a_priv = 4;
  s.y_width = 2;
  s.fusion_hidden = 4;
  s.feature_dim = 3;
  s.max_len = 6;
  s.n_clients = 2;
  return s;
}

TEST_CASE("attention: length-1 sequence and fully-masked error") {
  auto spec = tiny_spec();
  std::mt19937_64 rng(5);
  TransformerEncoder enc("e", spec, spec.feature_dim + 1, 5, rng);

  Tensor x({1, 1, 4}, {0.3, -0.2, 0.5, 0.0});
  Tensor mask({1, 1}, {1.0});
  Graph g;
  auto out = enc.forward(g, g.constant(x), {0}, mask, mask);
  CHECK(out->value.shape == std::vector<int64_t>({1, 5}));

  Tensor x2({1, 2, 4});
  Tensor allmasked({1, 2}, {0.0, 0.0});
  Graph g2;
  CHECK_THROWS_WITH_AS(enc.forward(g2, g2.constant(x2), {0, 1}, allmasked, allmasked),
                       doctest::Contains("fully-masked"), ShapeError);
}

TEST_CASE("attention permutation symmetry without positional encodings") {
  auto spec = tiny_spec();
  std::mt19937_64 rng(6);
  TransformerEncoder enc("e", spec, spec.feature_dim + 1, 5, rng);
  for (auto& v : enc.pos_embed.value.data) v = 0.0;

  int64_t S = 5;
  std::mt19937_64 drng(7);
  std::uniform_real_distribution<double> d(-1, 1);
  Tensor x({1, S, 4});
  for (auto& v : x.data) v = d(drng);
  Tensor mask({1, S});
  for (auto& v : mask.data) v = 1.0;

  Graph g;
  auto seq = enc.forward_seq(g, g.constant(x), std::vector<int64_t>(S, 0), mask);

  std::vector<int64_t> perm = {2, 0, 4, 1, 3};
  Tensor xp({1, S, 4});
  for (int64_t s = 0; s < S; ++s)
    for (int64_t f = 0; f < 4; ++f) xp.data[perm[s] * 4 + f] = x.data[s * 4 + f];
  Graph g2;
  auto seq_p = enc.forward_seq(g2, g2.constant(xp), std::vector<int64_t>(S, 0), mask);

  for (int64_t s = 0; s < S; ++s)
    for (int64_t k = 0; k < spec.d_model; ++k)
      CHECK(seq->value.data[s * spec.d_model + k] ==
            doctest::Approx(seq_p->value.data[perm[s] * spec.d_model + k]).epsilon(1e-9));
}

TEST_CASE("encoder output widths match the variant table") {
  ArchitectureSpec s;
  apply_variant(s, "H1");
  CHECK(s.h_pub == 48);
  CHECK(s.a_pub == 64);
  CHECK(s.h_priv == 16);
  CHECK(s.a_priv == 32);
  CHECK(s.encoder_out_width() == 64);
  apply_variant(s, "H4");
  CHECK(s.h_pub == 3072);
  CHECK(s.a_priv == 256);
  apply_variant(s, "P4");
  CHECK(s.h_priv == 4096);
  CHECK(s.h_pub == 0);
  CHECK_THROWS(apply_variant(s, "Z9"));

  auto spec = tiny_spec();
  spec.max_len = 4;
  std::mt19937_64 rng(8);
  TransformerEncoder enc("e", spec, spec.feature_dim + 1, spec.encoder_out_width(), rng);
  Tensor x({2, 4, 4});
  Tensor mask({2, 4});
  for (auto& v : mask.data) v = 1.0;
  Graph g;
  auto out = enc.forward(g, g.constant(x), std::vector<int64_t>(8, 0), mask, mask);
  CHECK(out->value.shape == std::vector<int64_t>({2, spec.h_pub + spec.h_priv}));

  Graph g2;
  auto out2 = enc.forward(g2, g2.constant(x), std::vector<int64_t>(8, 0), mask, mask);
  CHECK(out->value.data == out2->value.data);  // determinism
}

TEST_CASE("full tiny hybrid model gradient check vs finite differences") {
  auto spec = tiny_spec();
  auto bundle = make_vfl_bundle(spec, 99);

  int64_t B = 2, S = 4;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<Tensor> inputs(spec.n_clients, Tensor({B, S, spec.feature_dim + 1}));
  for (auto& t : inputs)
    for (auto& v : t.data) v = d(rng);
  Tensor mask({B, S});
  for (auto& v : mask.data) v = 1.0;
  Tensor targets({B}, {1.0, 0.0});
  std::vector<int64_t> pos(B * S);
  for (int64_t i = 0; i < B * S; ++i) pos[i] = i % S;

  auto forward = [&](Graph& g) {
    std::vector<NodePtr> pubs, privs;
    for (int c = 0; c < spec.n_clients; ++c) {
      auto e = bundle.encoders[c].forward(g, g.constant(inputs[c]), pos, mask, mask);
      pubs.push_back(slice_cols(g, e, 0, spec.h_pub));
      privs.push_back(slice_cols(g, e, spec.h_pub, spec.h_pub + spec.h_priv));
    }
    NodePtr pub = pubs[0], priv = privs[0];
    for (int c = 1; c < spec.n_clients; ++c) {
      pub = concat_cols(g, pub, pubs[c]);
      priv = concat_cols(g, priv, privs[c]);
    }
    auto y_pub = bundle.public_head.forward(g, pub);
    auto y_priv = bundle.private_head.forward(g, priv);
    auto y = bundle.fusion_head.forward(g, concat_cols(g, y_pub, y_priv));
    return bce_with_logits_mean(g, y, targets);
  };

  auto params = bundle.generator_params();
  auto loss_value = [&] {
    Graph g;
    return forward(g)->value.data[0];
  };
  auto backward = [&] {
    Graph g;
    g.backward(forward(g));
  };
  CHECK(grad_check(params, loss_value, backward, 1e-5) < 1e-4);
}

TEST_CASE("pool excludes zero-weight rows exactly") {
  auto spec = tiny_spec();
  std::mt19937_64 rng(10);
  TransformerEncoder enc("e", spec, spec.feature_dim + 1, 5, rng);
  int64_t S = 4;
  Tensor x({1, S, 4});
  std::uniform_real_distribution<double> d(-1, 1);
  for (auto& v : x.data) v = d(rng);
  Tensor attn({1, S});
  for (auto& v : attn.data) v = 1.0;
  Tensor pool({1, S}, {1, 0, 1, 0});
  std::vector<int64_t> pos = {0, 1, 2, 3};

  Graph g;
  auto a = enc.forward(g, g.constant(x), pos, attn, pool);
  Graph g2;
  auto seq = enc.forward_seq(g2, g2.constant(x), pos, attn);
  Tensor w({1, S}, {0.5, 0, 0.5, 0});
  auto pooled = pool_rows(g2, seq, w);
  auto manual = add_bias(g2, matmul(g2, pooled, g2.param(enc.out_w)), g2.param(enc.out_b));
  for (int64_t i = 0; i < a->value.numel(); ++i)
    CHECK(a->value.data[i] == doctest::Approx(manual->value.data[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint roundtrip and determinism") {
  auto spec = tiny_spec();
  auto b1 = make_vfl_bundle(spec, 1234);
  auto b2 = make_vfl_bundle(spec, 1234);
  auto b3 = make_vfl_bundle(spec, 1235);
  CHECK(b1.encoders[0].in_w.value.data == b2.encoders[0].in_w.value.data);
  CHECK(b1.encoders[0].in_w.value.data != b3.encoders[0].in_w.value.data);

  std::string path = "/tmp/pphh_test_ckpt.bin";
  save_checkpoint(path, spec, b1.all_params());
  uint64_t h1 = checkpoint_hash(path);

  b1.encoders[0].in_w.value.data[0] += 1.0;
  ArchitectureSpec loaded;
  load_checkpoint(path, loaded, b1.all_params());
  CHECK(b1.encoders[0].in_w.value.data == b2.encoders[0].in_w.value.data);
  CHECK(loaded.h_pub == spec.h_pub);
  CHECK(loaded.n_clients == spec.n_clients);

  save_checkpoint(path, spec, b1.all_params());
  CHECK(checkpoint_hash(path) == h1);
  std::remove(path.c_str());
}
