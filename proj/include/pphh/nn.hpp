#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>

#include "pphh/tensor.hpp"

// Plaintext neural-network stack: tape-based reverse-mode autodiff over
// dense tensors, the transformer encoder and MLP heads used by the three
// pipelines, AdamW, and the checkpoint container.
namespace pphh::nn {

using pphh::add_flops;
using pphh::flop_count;
using pphh::reset_flop_count;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    return grad;
  }
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m, v;  // Adam moments

  explicit Parameter(std::string n = "", Tensor val = {}) : name(std::move(n)), value(std::move(val)) {}
  void zero_grad() { grad = Tensor::zeros(value.shape); }
};

class Graph {
 public:
  NodePtr constant(Tensor v);
  NodePtr param(Parameter& p);
  NodePtr make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn);

  // Reverse pass from a scalar loss; visits each node exactly once in
  // reverse creation (= topological) order, then accumulates parameter grads.
  void backward(const NodePtr& loss);

 private:
  std::vector<NodePtr> order_;
  std::vector<std::pair<NodePtr, Parameter*>> params_;
};

// ---- ops ----
NodePtr add(Graph& g, NodePtr a, NodePtr b);
NodePtr sub(Graph& g, NodePtr a, NodePtr b);
NodePtr mul(Graph& g, NodePtr a, NodePtr b);
NodePtr scale(Graph& g, NodePtr a, double s);
NodePtr add_bias(Graph& g, NodePtr x, NodePtr b);              // [.., H] + [H]
NodePtr matmul(Graph& g, NodePtr a, NodePtr b);                // [m,k]x[k,n]
NodePtr bmm(Graph& g, NodePtr a, NodePtr b);                   // [N,m,k]x[N,k,n]
NodePtr transpose_last2(Graph& g, NodePtr a);                  // [N,a,b] -> [N,b,a]
NodePtr permute_0213(Graph& g, NodePtr a);                     // [A,B,C,D] -> [A,C,B,D]
NodePtr reshape(Graph& g, NodePtr a, std::vector<int64_t> shape);
NodePtr relu(Graph& g, NodePtr a);
NodePtr sigmoid(Graph& g, NodePtr a);
NodePtr softmax_rows(Graph& g, NodePtr a);                     // [R,C]
NodePtr layernorm_rows(Graph& g, NodePtr x, NodePtr gamma, NodePtr beta, double eps = 1e-5);
NodePtr concat_cols(Graph& g, NodePtr a, NodePtr b);
NodePtr slice_cols(Graph& g, NodePtr a, int64_t c0, int64_t c1);
NodePtr gather_rows(Graph& g, NodePtr table, const std::vector<int64_t>& idx);
// weighted pool: x [B,S,D], w [B,S] constant rows summing to 1 -> [B,D]
NodePtr pool_rows(Graph& g, NodePtr x, const Tensor& w);
NodePtr mean_all(Graph& g, NodePtr a);
NodePtr bce_with_logits_mean(Graph& g, NodePtr logits, const Tensor& targets);
NodePtr mse_mean(Graph& g, NodePtr pred, const Tensor& targets);
NodePtr cross_entropy_mean(Graph& g, NodePtr logits, const std::vector<int64_t>& labels);

// ---- architecture ----

enum class Task { kClassification, kRegression };

struct ArchitectureSpec {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 512;
  int h_pub = 0, a_pub = 0;
  int h_priv = 0, a_priv = 0;
  int fusion_hidden = 16;
  int y_width = 8;
  int central_hidden = 64;
  int feature_dim = 0;   // raw feature width (mask channel added on top)
  int max_len = 0;
  int n_clients = 3;
  std::string variant;   // P1..P4 or H1..H4, empty for e2e
  Task task = Task::kClassification;
  double ln_eps = 1e-5;

  bool is_hybrid() const { return h_pub > 0; }
  int encoder_out_width() const { return h_pub + h_priv; }
  int out_width() const { return 1; }
};

// Head widths per variant: P1=(64,64) .. P4=(4096,4096),
// H1=(48,64|16,32) .. H4=(3072,4096|128,256).
void apply_variant(ArchitectureSpec& spec, const std::string& variant);

struct Mlp {
  std::vector<Parameter> weights, biases;
  Mlp() = default;
  Mlp(const std::string& prefix, const std::vector<int64_t>& widths, std::mt19937_64& rng);
  NodePtr forward(Graph& g, NodePtr x);  // ReLU between layers, linear out
  std::vector<Parameter*> params();
};

struct EncoderLayer {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter w1, b1, w2, b2;
  Parameter ln1_g, ln1_b, ln2_g, ln2_b;
};

// Input mask channel is appended to features before the input projection.
struct TransformerEncoder {
  ArchitectureSpec spec;
  Parameter in_w, in_b;
  Parameter pos_embed;  // max_len x d_model, indexed by global position
  std::vector<EncoderLayer> layers;
  Parameter out_w, out_b;
  int out_width = 0;

  TransformerEncoder() = default;
  TransformerEncoder(const std::string& prefix, const ArchitectureSpec& s, int in_width, int out_w_,
                     std::mt19937_64& rng);

  // x [B,S,in], positions [B,S] global indices, attn_mask [B,S] (1 = attend),
  // pool_mask [B,S] (1 = pooled). Returns [B, out_width].
  NodePtr forward(Graph& g, NodePtr x, const std::vector<int64_t>& positions, const Tensor& attn_mask,
                  const Tensor& pool_mask);
  // sequence output before pooling, [B,S,d_model]
  NodePtr forward_seq(Graph& g, NodePtr x, const std::vector<int64_t>& positions, const Tensor& attn_mask);
  std::vector<Parameter*> params();
};

struct ModelBundle {
  ArchitectureSpec spec;
  std::vector<TransformerEncoder> encoders;  // one per client (distinct weights)
  Mlp vfl_head;       // P-variants: [n*h_priv -> a_priv -> a_priv -> out]
  Mlp public_head;    // H-variants: [n*h_pub -> a_pub -> a_pub -> y_width]
  Mlp private_head;   // H-variants: [n*h_priv -> a_priv -> y_width]
  Mlp fusion_head;    // [2*y_width -> fusion_hidden -> out]
  Mlp discriminator;  // [h_pub -> 128 -> 64 -> n_clients]
  TransformerEncoder central;  // e2e central model (encoder over full sequence)
  Mlp central_head;

  std::vector<Parameter*> generator_params();  // encoders + task heads
  std::vector<Parameter*> all_params();
};

ModelBundle make_vfl_bundle(const ArchitectureSpec& spec, uint64_t seed);
ModelBundle make_central_bundle(const ArchitectureSpec& spec, uint64_t seed);

// ---- optimizer ----

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam moments with decoupled weight decay and bias correction.
void adamw_step(const std::vector<Parameter*>& params, const AdamConfig& cfg, int64_t t);
void zero_grads(const std::vector<Parameter*>& params);

// ---- utilities ----

Tensor xavier(std::vector<int64_t> shape, std::mt19937_64& rng);

// Max relative error of analytic grads vs central finite differences.
double grad_check(std::vector<Parameter*> params, const std::function<double()>& loss_fn,
                  const std::function<void()>& backward_fn, double eps = 1e-5);

// ---- checkpoints ----
// Binary container: magic "PPHHCKP1", little-endian; architecture fields,
// then named row-major float64 tensors. See docs/formats.md.
void save_checkpoint(const std::string& path, const ArchitectureSpec& spec,
                     const std::vector<Parameter*>& params);
void load_checkpoint(const std::string& path, ArchitectureSpec& spec, std::vector<Parameter*> params);
uint64_t checkpoint_hash(const std::string& path);

}  // namespace pphh::nn
