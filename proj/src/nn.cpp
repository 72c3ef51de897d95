#include "pphh/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pphh::nn {

// ---- graph ----

NodePtr Graph::constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  order_.push_back(n);
  return n;
}

NodePtr Graph::param(Parameter& p) {
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->requires_grad = true;
  order_.push_back(n);
  params_.emplace_back(n, &p);
  return n;
}

NodePtr Graph::make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backward_fn = std::move(fn);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  order_.push_back(n);
  return n;
}

void Graph::backward(const NodePtr& loss) {
  if (loss->value.numel() != 1) throw ShapeError("backward: loss must be scalar");
  loss->ensure_grad().data[0] = 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node& n = **it;
    if (!n.requires_grad || n.grad.data.empty() || !n.backward_fn) continue;
    n.backward_fn(n);
  }
  for (auto& [node, p] : params_) {
    if (node->grad.data.empty()) continue;
    if (p->grad.data.empty()) p->grad = Tensor::zeros(p->value.shape);
    for (int64_t i = 0; i < node->grad.numel(); ++i) p->grad.data[i] += node->grad.data[i];
  }
}

namespace {

void accumulate(NodePtr& p, const Tensor& g) {
  if (!p->requires_grad) return;
  Tensor& pg = p->ensure_grad();
  for (int64_t i = 0; i < g.numel(); ++i) pg.data[i] += g.data[i];
}

}  // namespace

// ---- elementwise and linear ops ----

NodePtr add(Graph& g, NodePtr a, NodePtr b) {
  check_same_shape(a->value, b->value, "add");
  Tensor v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v.data[i] += b->value.data[i];
  add_flops(v.numel());
  return g.make(std::move(v), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

NodePtr sub(Graph& g, NodePtr a, NodePtr b) {
  check_same_shape(a->value, b->value, "sub");
  Tensor v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v.data[i] -= b->value.data[i];
  add_flops(v.numel());
  return g.make(std::move(v), {a, b}, [](Node& n) {
    accumulate(n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor neg = n.grad;
      for (auto& x : neg.data) x = -x;
      accumulate(n.parents[1], neg);
    }
  });
}

NodePtr mul(Graph& g, NodePtr a, NodePtr b) {
  check_same_shape(a->value, b->value, "mul");
  Tensor v = a->value;
  for (int64_t i = 0; i < v.numel(); ++i) v.data[i] *= b->value.data[i];
  add_flops(v.numel());
  return g.make(std::move(v), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor da = n.grad;
      for (int64_t i = 0; i < da.numel(); ++i) da.data[i] *= n.parents[1]->value.data[i];
      accumulate(n.parents[0], da);
    }
    if (n.parents[1]->requires_grad) {
      Tensor db = n.grad;
      for (int64_t i = 0; i < db.numel(); ++i) db.data[i] *= n.parents[0]->value.data[i];
      accumulate(n.parents[1], db);
    }
  });
}

NodePtr scale(Graph& g, NodePtr a, double s) {
  Tensor v = a->value;
  for (auto& x : v.data) x *= s;
  add_flops(v.numel());
  return g.make(std::move(v), {a}, [s](Node& n) {
    Tensor da = n.grad;
    for (auto& x : da.data) x *= s;
    accumulate(n.parents[0], da);
  });
}

NodePtr add_bias(Graph& g, NodePtr x, NodePtr b) {
  int64_t h = b->value.numel();
  if (x->value.numel() % h != 0) throw ShapeError("add_bias: width mismatch");
  Tensor v = x->value;
  for (int64_t i = 0; i < v.numel(); ++i) v.data[i] += b->value.data[i % h];
  add_flops(v.numel());
  return g.make(std::move(v), {x, b}, [h](Node& n) {
    accumulate(n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor db = Tensor::zeros({h});
      for (int64_t i = 0; i < n.grad.numel(); ++i) db.data[i % h] += n.grad.data[i];
      accumulate(n.parents[1], db);
    }
  });
}

namespace {

void dmatmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  add_flops(static_cast<uint64_t>(2 * m * k * n));
}

// c[m,k] += a[m,n] * b[k,n]^T
void dmatmul_bt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double acc = 0;
      const double* arow = a + i * n;
      const double* brow = b + j * n;
      for (int64_t t = 0; t < n; ++t) acc += arow[t] * brow[t];
      c[i * k + j] += acc;
    }
  add_flops(static_cast<uint64_t>(2 * m * n * k));
}

// c[k,n] += a[m,k]^T * b[m,n]
void dmatmul_at(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t t = 0; t < k; ++t) {
      double av = arow[t];
      if (av == 0.0) continue;
      double* crow = c + t * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  add_flops(static_cast<uint64_t>(2 * m * k * n));
}

}  // namespace

NodePtr matmul(Graph& g, NodePtr a, NodePtr b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.shape[1] != b->value.shape[0])
    throw ShapeError("matmul: bad shapes " + shape_str(a->value.shape) + " x " + shape_str(b->value.shape));
  int64_t m = a->value.shape[0], k = a->value.shape[1], n = b->value.shape[1];
  Tensor v({m, n});
  dmatmul(a->value.data.data(), b->value.data.data(), v.data.data(), m, k, n);
  return g.make(std::move(v), {a, b}, [m, k, n](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& da = nd.parents[0]->ensure_grad();
      dmatmul_bt(nd.grad.data.data(), nd.parents[1]->value.data.data(), da.data.data(), m, n, k);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& db = nd.parents[1]->ensure_grad();
      dmatmul_at(nd.parents[0]->value.data.data(), nd.grad.data.data(), db.data.data(), m, k, n);
    }
  });
}

NodePtr bmm(Graph& g, NodePtr a, NodePtr b) {
  if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.shape[0] != b->value.shape[0] ||
      a->value.shape[2] != b->value.shape[1])
    throw ShapeError("bmm: bad shapes");
  int64_t nb = a->value.shape[0], m = a->value.shape[1], k = a->value.shape[2], n = b->value.shape[2];
  Tensor v({nb, m, n});
  for (int64_t i = 0; i < nb; ++i)
    dmatmul(a->value.data.data() + i * m * k, b->value.data.data() + i * k * n, v.data.data() + i * m * n, m,
            k, n);
  return g.make(std::move(v), {a, b}, [nb, m, k, n](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& da = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < nb; ++i)
        dmatmul_bt(nd.grad.data.data() + i * m * n, nd.parents[1]->value.data.data() + i * k * n,
                   da.data.data() + i * m * k, m, n, k);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& db = nd.parents[1]->ensure_grad();
      for (int64_t i = 0; i < nb; ++i)
        dmatmul_at(nd.parents[0]->value.data.data() + i * m * k, nd.grad.data.data() + i * m * n,
                   db.data.data() + i * k * n, m, k, n);
    }
  });
}

NodePtr transpose_last2(Graph& g, NodePtr a) {
  if (a->value.ndim() != 3) throw ShapeError("transpose_last2: expects 3-d");
  int64_t nb = a->value.shape[0], r = a->value.shape[1], c = a->value.shape[2];
  Tensor v({nb, c, r});
  for (int64_t i = 0; i < nb; ++i)
    for (int64_t x = 0; x < r; ++x)
      for (int64_t y = 0; y < c; ++y) v.data[i * r * c + y * r + x] = a->value.data[i * r * c + x * c + y];
  return g.make(std::move(v), {a}, [nb, r, c](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < nb; ++i)
      for (int64_t x = 0; x < r; ++x)
        for (int64_t y = 0; y < c; ++y) da.data[i * r * c + x * c + y] += nd.grad.data[i * r * c + y * r + x];
  });
}

NodePtr permute_0213(Graph& g, NodePtr a) {
  if (a->value.ndim() != 4) throw ShapeError("permute_0213: expects 4-d");
  int64_t A = a->value.shape[0], B = a->value.shape[1], C = a->value.shape[2], D = a->value.shape[3];
  Tensor v({A, C, B, D});
  for (int64_t x = 0; x < A; ++x)
    for (int64_t y = 0; y < B; ++y)
      for (int64_t z = 0; z < C; ++z)
        std::memcpy(v.data.data() + ((x * C + z) * B + y) * D, a->value.data.data() + ((x * B + y) * C + z) * D,
                    sizeof(double) * static_cast<size_t>(D));
  return g.make(std::move(v), {a}, [A, B, C, D](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t x = 0; x < A; ++x)
      for (int64_t y = 0; y < B; ++y)
        for (int64_t z = 0; z < C; ++z) {
          const double* src = nd.grad.data.data() + ((x * C + z) * B + y) * D;
          double* dst = da.data.data() + ((x * B + y) * C + z) * D;
          for (int64_t w = 0; w < D; ++w) dst[w] += src[w];
        }
  });
}

NodePtr reshape(Graph& g, NodePtr a, std::vector<int64_t> shape) {
  if (shape_numel(shape) != a->value.numel()) throw ShapeError("reshape: numel mismatch");
  Tensor v(std::move(shape), a->value.data);
  return g.make(std::move(v), {a}, [](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) da.data[i] += nd.grad.data[i];
  });
}

NodePtr relu(Graph& g, NodePtr a) {
  Tensor v = a->value;
  for (auto& x : v.data) x = x > 0 ? x : 0.0;
  add_flops(v.numel());
  return g.make(std::move(v), {a}, [](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i)
      if (nd.parents[0]->value.data[i] > 0) da.data[i] += nd.grad.data[i];
  });
}

NodePtr sigmoid(Graph& g, NodePtr a) {
  Tensor v = a->value;
  for (auto& x : v.data) x = 1.0 / (1.0 + std::exp(-x));
  add_flops(4 * v.numel());
  return g.make(std::move(v), {a}, [](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < nd.grad.numel(); ++i) {
      double y = nd.value.data[i];
      da.data[i] += nd.grad.data[i] * y * (1 - y);
    }
  });
}

NodePtr softmax_rows(Graph& g, NodePtr a) {
  if (a->value.ndim() != 2) throw ShapeError("softmax_rows: expects 2-d");
  int64_t r = a->value.shape[0], c = a->value.shape[1];
  Tensor v = a->value;
  for (int64_t i = 0; i < r; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, v.at(i, j));
    double s = 0;
    for (int64_t j = 0; j < c; ++j) {
      v.at(i, j) = std::exp(v.at(i, j) - mx);
      s += v.at(i, j);
    }
    for (int64_t j = 0; j < c; ++j) v.at(i, j) /= s;
  }
  add_flops(6 * v.numel());
  return g.make(std::move(v), {a}, [r, c](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < r; ++i) {
      double dot = 0;
      for (int64_t j = 0; j < c; ++j) dot += nd.grad.at(i, j) * nd.value.at(i, j);
      for (int64_t j = 0; j < c; ++j) da.at(i, j) += nd.value.at(i, j) * (nd.grad.at(i, j) - dot);
    }
  });
}

NodePtr layernorm_rows(Graph& g, NodePtr x, NodePtr gamma, NodePtr beta, double eps) {
  if (x->value.ndim() != 2) throw ShapeError("layernorm_rows: expects 2-d");
  int64_t r = x->value.shape[0], c = x->value.shape[1];
  Tensor v({r, c});
  auto xhat = std::make_shared<Tensor>(Tensor({r, c}));
  auto istd = std::make_shared<Tensor>(Tensor({r}));
  for (int64_t i = 0; i < r; ++i) {
    double mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += x->value.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0;
    for (int64_t j = 0; j < c; ++j) {
      double d = x->value.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    istd->data[i] = is;
    for (int64_t j = 0; j < c; ++j) {
      double h = (x->value.at(i, j) - mu) * is;
      xhat->at(i, j) = h;
      v.at(i, j) = h * gamma->value.data[j] + beta->value.data[j];
    }
  }
  add_flops(8 * v.numel());
  return g.make(std::move(v), {x, gamma, beta}, [r, c, xhat, istd](Node& nd) {
    NodePtr xp = nd.parents[0], gp = nd.parents[1], bp = nd.parents[2];
    if (gp->requires_grad) {
      Tensor& dg = gp->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) dg.data[j] += nd.grad.at(i, j) * xhat->at(i, j);
    }
    if (bp->requires_grad) {
      Tensor& db = bp->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) db.data[j] += nd.grad.at(i, j);
    }
    if (xp->requires_grad) {
      Tensor& dx = xp->ensure_grad();
      for (int64_t i = 0; i < r; ++i) {
        double m1 = 0, m2 = 0;
        for (int64_t j = 0; j < c; ++j) {
          double dh = nd.grad.at(i, j) * gp->value.data[j];
          m1 += dh;
          m2 += dh * xhat->at(i, j);
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (int64_t j = 0; j < c; ++j) {
          double dh = nd.grad.at(i, j) * gp->value.data[j];
          dx.at(i, j) += istd->data[i] * (dh - m1 - xhat->at(i, j) * m2);
        }
      }
    }
  });
}

NodePtr concat_cols(Graph& g, NodePtr a, NodePtr b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.shape[0] != b->value.shape[0])
    throw ShapeError("concat_cols: bad shapes");
  int64_t r = a->value.shape[0], ca = a->value.shape[1], cb = b->value.shape[1];
  Tensor v({r, ca + cb});
  for (int64_t i = 0; i < r; ++i) {
    std::memcpy(&v.at(i, 0), &a->value.at(i, 0), sizeof(double) * static_cast<size_t>(ca));
    std::memcpy(&v.at(i, ca), &b->value.at(i, 0), sizeof(double) * static_cast<size_t>(cb));
  }
  return g.make(std::move(v), {a, b}, [r, ca, cb](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& da = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < ca; ++j) da.at(i, j) += nd.grad.at(i, j);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& db = nd.parents[1]->ensure_grad();
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < cb; ++j) db.at(i, j) += nd.grad.at(i, ca + j);
    }
  });
}

NodePtr slice_cols(Graph& g, NodePtr a, int64_t c0, int64_t c1) {
  if (a->value.ndim() != 2 || c0 < 0 || c1 > a->value.shape[1] || c0 >= c1)
    throw ShapeError("slice_cols: bad range");
  int64_t r = a->value.shape[0], w = c1 - c0;
  Tensor v({r, w});
  for (int64_t i = 0; i < r; ++i)
    std::memcpy(&v.at(i, 0), &a->value.at(i, c0), sizeof(double) * static_cast<size_t>(w));
  return g.make(std::move(v), {a}, [r, c0, w](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j) da.at(i, c0 + j) += nd.grad.at(i, j);
  });
}

NodePtr gather_rows(Graph& g, NodePtr table, const std::vector<int64_t>& idx) {
  if (table->value.ndim() != 2) throw ShapeError("gather_rows: table must be 2-d");
  int64_t w = table->value.shape[1];
  Tensor v({static_cast<int64_t>(idx.size()), w});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table->value.shape[0]) throw ShapeError("gather_rows: index out of range");
    std::memcpy(&v.at(static_cast<int64_t>(i), 0), &table->value.at(idx[i], 0),
                sizeof(double) * static_cast<size_t>(w));
  }
  auto idx_copy = idx;
  return g.make(std::move(v), {table}, [idx_copy, w](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& dt = nd.parents[0]->ensure_grad();
    for (size_t i = 0; i < idx_copy.size(); ++i)
      for (int64_t j = 0; j < w; ++j) dt.at(idx_copy[i], j) += nd.grad.at(static_cast<int64_t>(i), j);
  });
}

NodePtr pool_rows(Graph& g, NodePtr x, const Tensor& w) {
  if (x->value.ndim() != 3) throw ShapeError("pool_rows: expects [B,S,D]");
  int64_t B = x->value.shape[0], S = x->value.shape[1], D = x->value.shape[2];
  if (w.shape != std::vector<int64_t>({B, S})) throw ShapeError("pool_rows: weight shape mismatch");
  Tensor v({B, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t s = 0; s < S; ++s) {
      double ww = w.at(b, s);
      if (ww == 0.0) continue;
      for (int64_t d = 0; d < D; ++d) v.at(b, d) += ww * x->value.data[(b * S + s) * D + d];
    }
  add_flops(2 * static_cast<uint64_t>(x->value.numel()));
  auto wc = std::make_shared<Tensor>(w);
  return g.make(std::move(v), {x}, [B, S, D, wc](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& dx = nd.parents[0]->ensure_grad();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t s = 0; s < S; ++s) {
        double ww = wc->at(b, s);
        if (ww == 0.0) continue;
        for (int64_t d = 0; d < D; ++d) dx.data[(b * S + s) * D + d] += ww * nd.grad.at(b, d);
      }
  });
}

NodePtr mean_all(Graph& g, NodePtr a) {
  double s = 0;
  for (double x : a->value.data) s += x;
  int64_t n = a->value.numel();
  return g.make(Tensor::scalar(s / static_cast<double>(n)), {a}, [n](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& da = nd.parents[0]->ensure_grad();
    double gg = nd.grad.data[0] / static_cast<double>(n);
    for (auto& x : da.data) x += gg;
  });
}

NodePtr bce_with_logits_mean(Graph& g, NodePtr logits, const Tensor& targets) {
  if (logits->value.numel() != targets.numel()) throw ShapeError("bce: size mismatch");
  int64_t n = logits->value.numel();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    double z = logits->value.data[i], t = targets.data[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  add_flops(6 * static_cast<uint64_t>(n));
  auto tc = std::make_shared<Tensor>(targets);
  return g.make(Tensor::scalar(loss / static_cast<double>(n)), {logits}, [n, tc](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& dz = nd.parents[0]->ensure_grad();
    double gg = nd.grad.data[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double z = nd.parents[0]->value.data[i];
      dz.data[i] += gg * (1.0 / (1.0 + std::exp(-z)) - tc->data[i]);
    }
  });
}

NodePtr mse_mean(Graph& g, NodePtr pred, const Tensor& targets) {
  if (pred->value.numel() != targets.numel()) throw ShapeError("mse: size mismatch");
  int64_t n = pred->value.numel();
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = pred->value.data[i] - targets.data[i];
    loss += d * d;
  }
  add_flops(3 * static_cast<uint64_t>(n));
  auto tc = std::make_shared<Tensor>(targets);
  return g.make(Tensor::scalar(loss / static_cast<double>(n)), {pred}, [n, tc](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& dp = nd.parents[0]->ensure_grad();
    double gg = nd.grad.data[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) dp.data[i] += gg * 2.0 * (nd.parents[0]->value.data[i] - tc->data[i]);
  });
}

NodePtr cross_entropy_mean(Graph& g, NodePtr logits, const std::vector<int64_t>& labels) {
  if (logits->value.ndim() != 2 || logits->value.shape[0] != static_cast<int64_t>(labels.size()))
    throw ShapeError("cross_entropy: bad shapes");
  int64_t n = logits->value.shape[0], c = logits->value.shape[1];
  auto probs = std::make_shared<Tensor>(Tensor({n, c}));
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw ShapeError("cross_entropy: label out of range");
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, logits->value.at(i, j));
    double s = 0;
    for (int64_t j = 0; j < c; ++j) {
      probs->at(i, j) = std::exp(logits->value.at(i, j) - mx);
      s += probs->at(i, j);
    }
    for (int64_t j = 0; j < c; ++j) probs->at(i, j) /= s;
    loss -= std::log(std::max(probs->at(i, labels[i]), 1e-300));
  }
  add_flops(6 * static_cast<uint64_t>(logits->value.numel()));
  auto lc = labels;
  return g.make(Tensor::scalar(loss / static_cast<double>(n)), {logits}, [n, c, probs, lc](Node& nd) {
    if (!nd.parents[0]->requires_grad) return;
    Tensor& dz = nd.parents[0]->ensure_grad();
    double gg = nd.grad.data[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < c; ++j) dz.at(i, j) += gg * (probs->at(i, j) - (j == lc[i] ? 1.0 : 0.0));
  });
}

// ---- init and optimizer ----

Tensor xavier(std::vector<int64_t> shape, std::mt19937_64& rng) {
  Tensor t(shape);
  double fan_in = static_cast<double>(shape[0]);
  double fan_out = shape.size() > 1 ? static_cast<double>(shape[1]) : fan_in;
  double lim = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> d(-lim, lim);
  for (auto& v : t.data) v = d(rng);
  return t;
}

void adamw_step(const std::vector<Parameter*>& params, const AdamConfig& cfg, int64_t t) {
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : params) {
    if (p->grad.data.empty()) continue;
    if (p->m.data.empty()) {
      p->m = Tensor::zeros(p->value.shape);
      p->v = Tensor::zeros(p->value.shape);
    }
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double gr = p->grad.data[i];
      p->m.data[i] = cfg.beta1 * p->m.data[i] + (1 - cfg.beta1) * gr;
      p->v.data[i] = cfg.beta2 * p->v.data[i] + (1 - cfg.beta2) * gr * gr;
      double mhat = p->m.data[i] / bc1;
      double vhat = p->v.data[i] / bc2;
      p->value.data[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p->value.data[i]);
    }
  }
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

// ---- Mlp ----

Mlp::Mlp(const std::string& prefix, const std::vector<int64_t>& widths, std::mt19937_64& rng) {
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    weights.emplace_back(prefix + ".w" + std::to_string(i), xavier({widths[i], widths[i + 1]}, rng));
    biases.emplace_back(prefix + ".b" + std::to_string(i), Tensor::zeros({widths[i + 1]}));
  }
}

NodePtr Mlp::forward(Graph& g, NodePtr x) {
  for (size_t i = 0; i < weights.size(); ++i) {
    x = add_bias(g, matmul(g, x, g.param(weights[i])), g.param(biases[i]));
    if (i + 1 < weights.size()) x = relu(g, x);
  }
  return x;
}

std::vector<Parameter*> Mlp::params() {
  std::vector<Parameter*> out;
  for (size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

// ---- transformer encoder ----

TransformerEncoder::TransformerEncoder(const std::string& prefix, const ArchitectureSpec& s, int in_width,
                                       int out_w_, std::mt19937_64& rng)
    : spec(s), out_width(out_w_) {
  int d = s.d_model;
  in_w = Parameter(prefix + ".in_w", xavier({in_width, d}, rng));
  in_b = Parameter(prefix + ".in_b", Tensor::zeros({d}));
  {
    Tensor pe({s.max_len, d});
    std::uniform_real_distribution<double> pd(-0.05, 0.05);
    for (auto& v : pe.data) v = pd(rng);
    pos_embed = Parameter(prefix + ".pos_embed", std::move(pe));
  }
  for (int l = 0; l < s.n_layers; ++l) {
    EncoderLayer L;
    std::string lp = prefix + ".layer" + std::to_string(l);
    L.wq = Parameter(lp + ".wq", xavier({d, d}, rng));
    L.bq = Parameter(lp + ".bq", Tensor::zeros({d}));
    L.wk = Parameter(lp + ".wk", xavier({d, d}, rng));
    L.bk = Parameter(lp + ".bk", Tensor::zeros({d}));
    L.wv = Parameter(lp + ".wv", xavier({d, d}, rng));
    L.bv = Parameter(lp + ".bv", Tensor::zeros({d}));
    L.wo = Parameter(lp + ".wo", xavier({d, d}, rng));
    L.bo = Parameter(lp + ".bo", Tensor::zeros({d}));
    L.w1 = Parameter(lp + ".w1", xavier({d, s.d_ff}, rng));
    L.b1 = Parameter(lp + ".b1", Tensor::zeros({s.d_ff}));
    L.w2 = Parameter(lp + ".w2", xavier({s.d_ff, d}, rng));
    L.b2 = Parameter(lp + ".b2", Tensor::zeros({d}));
    L.ln1_g = Parameter(lp + ".ln1_g", Tensor::full({d}, 1.0));
    L.ln1_b = Parameter(lp + ".ln1_b", Tensor::zeros({d}));
    L.ln2_g = Parameter(lp + ".ln2_g", Tensor::full({d}, 1.0));
    L.ln2_b = Parameter(lp + ".ln2_b", Tensor::zeros({d}));
    layers.push_back(std::move(L));
  }
  out_w = Parameter(prefix + ".out_w", xavier({d, out_w_}, rng));
  out_b = Parameter(prefix + ".out_b", Tensor::zeros({out_w_}));
}

NodePtr TransformerEncoder::forward_seq(Graph& g, NodePtr x, const std::vector<int64_t>& positions,
                                        const Tensor& attn_mask) {
  int64_t B = x->value.shape[0], S = x->value.shape[1];
  int d = spec.d_model, H = spec.n_heads, dh = d / H;
  if (attn_mask.shape != std::vector<int64_t>({B, S})) throw ShapeError("encoder: attn_mask shape");
  for (int64_t b = 0; b < B; ++b) {
    bool any = false;
    for (int64_t s = 0; s < S; ++s) any |= attn_mask.at(b, s) > 0;
    if (!any)
      throw ShapeError("encoder: fully-masked key set is forbidden (batch row " + std::to_string(b) + ")");
  }

  NodePtr h = reshape(g, x, {B * S, x->value.shape[2]});
  h = add_bias(g, matmul(g, h, g.param(in_w)), g.param(in_b));
  h = add(g, h, gather_rows(g, g.param(pos_embed), positions));

  Tensor amask({B * H, S, S});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t hh = 0; hh < H; ++hh)
      for (int64_t i = 0; i < S; ++i)
        for (int64_t j = 0; j < S; ++j)
          amask.data[((b * H + hh) * S + i) * S + j] = attn_mask.at(b, j) > 0 ? 0.0 : -1e9;
  NodePtr mask_node = g.constant(std::move(amask));

  for (auto& L : layers) {
    auto heads = [&](Parameter& w, Parameter& bb) {
      NodePtr t = add_bias(g, matmul(g, h, g.param(w)), g.param(bb));
      t = reshape(g, t, {B, S, H, dh});
      t = permute_0213(g, t);
      return reshape(g, t, {B * H, S, dh});
    };
    NodePtr q = heads(L.wq, L.bq), k = heads(L.wk, L.bk), v = heads(L.wv, L.bv);
    NodePtr scores = scale(g, bmm(g, q, transpose_last2(g, k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    scores = add(g, scores, mask_node);
    NodePtr probs = reshape(g, softmax_rows(g, reshape(g, scores, {B * H * S, S})), {B * H, S, S});
    NodePtr ctx = bmm(g, probs, v);
    ctx = reshape(g, permute_0213(g, reshape(g, ctx, {B, H, S, dh})), {B * S, d});
    NodePtr attn_out = add_bias(g, matmul(g, ctx, g.param(L.wo)), g.param(L.bo));
    h = layernorm_rows(g, add(g, h, attn_out), g.param(L.ln1_g), g.param(L.ln1_b), spec.ln_eps);
    NodePtr ff = add_bias(g, matmul(g, h, g.param(L.w1)), g.param(L.b1));
    ff = add_bias(g, matmul(g, relu(g, ff), g.param(L.w2)), g.param(L.b2));
    h = layernorm_rows(g, add(g, h, ff), g.param(L.ln2_g), g.param(L.ln2_b), spec.ln_eps);
  }
  return reshape(g, h, {B, S, d});
}

NodePtr TransformerEncoder::forward(Graph& g, NodePtr x, const std::vector<int64_t>& positions,
                                    const Tensor& attn_mask, const Tensor& pool_mask) {
  int64_t B = x->value.shape[0], S = x->value.shape[1];
  NodePtr seq = forward_seq(g, x, positions, attn_mask);
  Tensor w({B, S});
  for (int64_t b = 0; b < B; ++b) {
    double s = 0;
    for (int64_t i = 0; i < S; ++i) s += pool_mask.at(b, i);
    if (s <= 0) throw ShapeError("encoder: empty pooling set (batch row " + std::to_string(b) + ")");
    for (int64_t i = 0; i < S; ++i) w.at(b, i) = pool_mask.at(b, i) / s;
  }
  NodePtr pooled = pool_rows(g, seq, w);
  return add_bias(g, matmul(g, pooled, g.param(out_w)), g.param(out_b));
}

std::vector<Parameter*> TransformerEncoder::params() {
  std::vector<Parameter*> out{&in_w, &in_b, &pos_embed};
  for (auto& L : layers)
    for (Parameter* p : {&L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo, &L.w1, &L.b1, &L.w2, &L.b2,
                         &L.ln1_g, &L.ln1_b, &L.ln2_g, &L.ln2_b})
      out.push_back(p);
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

// ---- bundles ----

void apply_variant(ArchitectureSpec& spec, const std::string& variant) {
  spec.variant = variant;
  struct Row {
    const char* name;
    int h_pub, a_pub, h_priv, a_priv;
  };
  static const Row rows[] = {
      {"P1", 0, 0, 64, 64},       {"P2", 0, 0, 256, 256},       {"P3", 0, 0, 1024, 1024},
      {"P4", 0, 0, 4096, 4096},   {"H1", 48, 64, 16, 32},       {"H2", 192, 256, 32, 64},
      {"H3", 768, 1024, 64, 128}, {"H4", 3072, 4096, 128, 256},
  };
  for (const auto& r : rows)
    if (variant == r.name) {
      spec.h_pub = r.h_pub;
      spec.a_pub = r.a_pub;
      spec.h_priv = r.h_priv;
      spec.a_priv = r.a_priv;
      return;
    }
  throw ShapeError("unknown architecture variant: " + variant);
}

ModelBundle make_vfl_bundle(const ArchitectureSpec& spec, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.spec = spec;
  int in_width = spec.feature_dim + 1;  // mask channel appended
  for (int i = 0; i < spec.n_clients; ++i)
    b.encoders.emplace_back("encoder" + std::to_string(i), spec, in_width, spec.encoder_out_width(), rng);
  int64_t n = spec.n_clients;
  if (spec.is_hybrid()) {
    b.public_head = Mlp("public_head", {n * spec.h_pub, spec.a_pub, spec.a_pub, spec.y_width}, rng);
    b.private_head = Mlp("private_head", {n * spec.h_priv, spec.a_priv, spec.y_width}, rng);
    b.fusion_head = Mlp("fusion_head", {2LL * spec.y_width, spec.fusion_hidden, 1}, rng);
    b.discriminator = Mlp("discriminator", {spec.h_pub, 128, 64, n}, rng);
  } else {
    b.vfl_head = Mlp("vfl_head", {n * spec.h_priv, spec.a_priv, spec.a_priv, 1}, rng);
  }
  return b;
}

ModelBundle make_central_bundle(const ArchitectureSpec& spec, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.spec = spec;
  b.central = TransformerEncoder("central", spec, spec.feature_dim, spec.d_model, rng);
  b.central_head = Mlp("central_head", {spec.d_model, spec.central_hidden, 1}, rng);
  return b;
}

std::vector<Parameter*> ModelBundle::generator_params() {
  std::vector<Parameter*> out;
  for (auto& e : encoders)
    for (auto* p : e.params()) out.push_back(p);
  for (Mlp* m : {&vfl_head, &public_head, &private_head, &fusion_head})
    for (auto* p : m->params()) out.push_back(p);
  return out;
}

std::vector<Parameter*> ModelBundle::all_params() {
  auto out = generator_params();
  for (auto* p : discriminator.params()) out.push_back(p);
  if (!central.layers.empty()) {
    for (auto* p : central.params()) out.push_back(p);
    for (auto* p : central_head.params()) out.push_back(p);
  }
  return out;
}

// ---- grad check ----

double grad_check(std::vector<Parameter*> params, const std::function<double()>& loss_fn,
                  const std::function<void()>& backward_fn, double eps) {
  zero_grads(params);
  backward_fn();
  double worst = 0;
  for (Parameter* p : params) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double keep = p->value.data[i];
      p->value.data[i] = keep + eps;
      double lp = loss_fn();
      p->value.data[i] = keep - eps;
      double lm = loss_fn();
      p->value.data[i] = keep;
      double num = (lp - lm) / (2 * eps);
      double ana = p->grad.data.empty() ? 0.0 : p->grad.data[i];
      double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-4});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[9] = "PPHHCKP1";

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ArchitectureSpec& spec,
                     const std::vector<Parameter*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put<uint32_t>(f, 1);
  for (int v : {spec.d_model, spec.n_heads, spec.n_layers, spec.d_ff, spec.h_pub, spec.a_pub, spec.h_priv,
                spec.a_priv, spec.fusion_hidden, spec.y_width, spec.central_hidden, spec.feature_dim,
                spec.max_len, spec.n_clients})
    put<int32_t>(f, v);
  put<uint8_t>(f, spec.task == Task::kClassification ? 0 : 1);
  put<double>(f, spec.ln_eps);
  put<uint16_t>(f, static_cast<uint16_t>(spec.variant.size()));
  f.write(spec.variant.data(), static_cast<std::streamsize>(spec.variant.size()));
  put<uint32_t>(f, static_cast<uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<uint16_t>(f, static_cast<uint16_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<uint8_t>(f, static_cast<uint8_t>(p->value.shape.size()));
    for (int64_t d : p->value.shape) put<int64_t>(f, d);
    f.write(reinterpret_cast<const char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * 8));
  }
}

void load_checkpoint(const std::string& path, ArchitectureSpec& spec, std::vector<Parameter*> params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic: " + path);
  uint32_t version = get<uint32_t>(f);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  spec.d_model = get<int32_t>(f);
  spec.n_heads = get<int32_t>(f);
  spec.n_layers = get<int32_t>(f);
  spec.d_ff = get<int32_t>(f);
  spec.h_pub = get<int32_t>(f);
  spec.a_pub = get<int32_t>(f);
  spec.h_priv = get<int32_t>(f);
  spec.a_priv = get<int32_t>(f);
  spec.fusion_hidden = get<int32_t>(f);
  spec.y_width = get<int32_t>(f);
  spec.central_hidden = get<int32_t>(f);
  spec.feature_dim = get<int32_t>(f);
  spec.max_len = get<int32_t>(f);
  spec.n_clients = get<int32_t>(f);
  spec.task = get<uint8_t>(f) == 0 ? Task::kClassification : Task::kRegression;
  spec.ln_eps = get<double>(f);
  uint16_t vl = get<uint16_t>(f);
  spec.variant.resize(vl);
  f.read(spec.variant.data(), vl);
  uint32_t count = get<uint32_t>(f);
  if (count != params.size())
    throw std::runtime_error("checkpoint tensor count mismatch: file has " + std::to_string(count) +
                             ", model has " + std::to_string(params.size()));
  for (Parameter* p : params) {
    uint16_t nl = get<uint16_t>(f);
    std::string name(nl, 0);
    f.read(name.data(), nl);
    if (name != p->name) throw std::runtime_error("checkpoint tensor order mismatch at " + name);
    uint8_t nd = get<uint8_t>(f);
    std::vector<int64_t> shape(nd);
    for (auto& d : shape) d = get<int64_t>(f);
    if (shape != p->value.shape) throw std::runtime_error("checkpoint shape mismatch at " + name);
    f.read(reinterpret_cast<char*>(p->value.data.data()),
           static_cast<std::streamsize>(p->value.data.size() * 8));
  }
}

uint64_t checkpoint_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (f) {
    f.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace pphh::nn
