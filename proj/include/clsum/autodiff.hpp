#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "clsum/util.hpp"

namespace clsum {

// Dense row-major tensor node in a reverse-mode computation graph. Ops build
// fresh nodes holding closures that scatter the node's gradient into its
// parents; backward() runs them in reverse topological order. Gradients
// accumulate until zero_grads, which is what lets one optimizer step consume
// several forward/backward passes.
struct Node {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first use, same length as data
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
  std::size_t rows() const { return shape.empty() ? 1 : numel() / shape.back(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using Tensor = std::shared_ptr<Node>;

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline Tensor constant(std::vector<std::size_t> shape, std::vector<double> data) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (node->data.size() != node->numel())
    throw std::invalid_argument("constant: data length " + std::to_string(node->data.size()) +
                                " does not match shape " + shape_str(node->shape));
  return node;
}

inline Tensor constant(std::vector<std::size_t> shape, double fill = 0.0) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data.assign(node->numel(), fill);
  return node;
}

inline Tensor param(std::vector<std::size_t> shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t->requires_grad = true;
  return t;
}

inline double scalar_value(const Tensor& t) {
  if (t->numel() != 1)
    throw std::invalid_argument("scalar_value: tensor has shape " + shape_str(t->shape));
  return t->data[0];
}

namespace detail {

inline Tensor make_op(std::vector<std::size_t> shape, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data.assign(node->numel(), 0.0);
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
  return node;
}

inline void check_2d(const Tensor& t, const char* op) {
  if (t->shape.size() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " +
                                shape_str(t->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  std::size_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
  if (k != k2)
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                                shape_str(b->shape));
  Tensor out = detail::make_op({m, n}, {a, b}, [m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    A.ensure_grad();
    B.ensure_grad();
    const double* dC = self.grad.data();
    // dA += dC * B^T ; dB += A^T * dC
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double g = dC[i * n + j];
        if (g == 0.0) continue;
        const double* brow = &B.data[j];
        for (std::size_t p = 0; p < k; ++p) A.grad[i * k + p] += g * brow[p * n];
        const double* arow = &A.data[i * k];
        for (std::size_t p = 0; p < k; ++p) B.grad[p * n + j] += g * arow[p];
      }
  });
  const double* pa = a->data.data();
  const double* pb = b->data.data();
  double* pc = out->data.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &pb[p * n];
      double* crow = &pc[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::check_2d(a, "transpose");
  std::size_t m = a->shape[0], n = a->shape[1];
  Tensor out = detail::make_op({n, m}, {a}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument("add: shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  Tensor out = detail::make_op(a->shape, {a, b}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      A.grad[i] += self.grad[i];
      B.grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  return out;
}

// Row-broadcast add: b has shape [n] or [1,n] and is added to every row of a.
inline Tensor add_rowwise(const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "add_rowwise");
  std::size_t n = a->shape[1];
  if (b->numel() != n)
    throw std::invalid_argument("add_rowwise: bias shape " + shape_str(b->shape) +
                                " does not match row width " + std::to_string(n));
  std::size_t m = a->shape[0];
  Tensor out = detail::make_op(a->shape, {a, b}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        A.grad[i * n + j] += self.grad[i * n + j];
        B.grad[j] += self.grad[i * n + j];
      }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->data[i * n + j] = a->data[i * n + j] + b->data[j];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a->shape != b->shape)
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
  Tensor out = detail::make_op(a->shape, {a, b}, [](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    A.ensure_grad();
    B.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      A.grad[i] += self.grad[i] * B.data[i];
      B.grad[i] += self.grad[i] * A.data[i];
    }
  });
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::make_op(a->shape, {a}, [c](Node& self) {
    Node& A = *self.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += c * self.grad[i];
  });
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * a->data[i];
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = detail::make_op(a->shape, {a}, [](Node& self) {
    Node& A = *self.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (A.data[i] > 0.0) A.grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::max(0.0, a->data[i]);
  return out;
}

namespace detail {

// Shared softmax backward: dx = y * (dy - sum(dy * y)) per row. Rows where y
// is identically zero (fully masked) contribute nothing.
inline void softmax_backward(Node& self, std::size_t rows, std::size_t cols) {
  Node& A = *self.parents[0];
  A.ensure_grad();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* y = &self.data[r * cols];
    const double* dy = &self.grad[r * cols];
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
    for (std::size_t c = 0; c < cols; ++c) A.grad[r * cols + c] += y[c] * (dy[c] - dot);
  }
}

}  // namespace detail

// Softmax over the last axis, max-subtracted for stability.
inline Tensor softmax(const Tensor& a) {
  if (a->shape.empty()) throw std::invalid_argument("softmax: scalar input");
  std::size_t cols = a->cols(), rows = a->rows();
  Tensor out = detail::make_op(a->shape, {a}, [rows, cols](Node& self) {
    detail::softmax_backward(self, rows, cols);
  });
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &a->data[r * cols];
    double* y = &out->data[r * cols];
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
  }
  return out;
}

// Softmax over the last axis restricted to visible entries (mask true =
// visible). Hidden entries never enter the max/sum and come out exactly 0,
// so a masked position cannot perturb visible outputs even at the bit level.
inline Tensor masked_softmax(const Tensor& a, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != a->numel())
    throw std::invalid_argument("masked_softmax: mask length " + std::to_string(mask.size()) +
                                " does not match shape " + shape_str(a->shape));
  std::size_t cols = a->cols(), rows = a->rows();
  Tensor out = detail::make_op(a->shape, {a}, [rows, cols](Node& self) {
    detail::softmax_backward(self, rows, cols);
  });
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &a->data[r * cols];
    const std::uint8_t* m = &mask[r * cols];
    double* y = &out->data[r * cols];
    double mx = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c)
      if (m[c]) {
        mx = any ? std::max(mx, x[c]) : x[c];
        any = true;
      }
    if (!any)
      throw std::runtime_error("masked_softmax: fully masked row " + std::to_string(r));
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (m[c]) {
        y[c] = std::exp(x[c] - mx);
        sum += y[c];
      }
    for (std::size_t c = 0; c < cols; ++c)
      if (m[c]) y[c] /= sum;
  }
  return out;
}

// Layer normalization over the last axis with learned gain and bias.
// Population variance (divide by n), eps inside the square root.
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-9) {
  std::size_t cols = a->cols(), rows = a->rows();
  if (gain->numel() != cols || bias->numel() != cols)
    throw std::invalid_argument("layer_norm: gain/bias shape " + shape_str(gain->shape) + "/" +
                                shape_str(bias->shape) + " does not match width " +
                                std::to_string(cols));
  auto xhat = std::make_shared<std::vector<double>>(a->numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  Tensor out = detail::make_op(a->shape, {a, gain, bias}, [rows, cols, xhat,
                                                           inv_sigma](Node& self) {
    Node& A = *self.parents[0];
    Node& G = *self.parents[1];
    Node& B = *self.parents[2];
    A.ensure_grad();
    G.ensure_grad();
    B.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* dy = &self.grad[r * cols];
      const double* xh = &(*xhat)[r * cols];
      double isg = (*inv_sigma)[r];
      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        double dxh = dy[c] * G.data[c];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * xh[c];
        G.grad[c] += dy[c] * xh[c];
        B.grad[c] += dy[c];
      }
      mean_dxh /= static_cast<double>(cols);
      mean_dxh_xh /= static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) {
        double dxh = dy[c] * G.data[c];
        A.grad[r * cols + c] += isg * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
      }
    }
  });
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &a->data[r * cols];
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<double>(cols);
    double isg = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = isg;
    for (std::size_t c = 0; c < cols; ++c) {
      double xh = (x[c] - mean) * isg;
      (*xhat)[r * cols + c] = xh;
      out->data[r * cols + c] = xh * gain->data[c] + bias->data[c];
    }
  }
  return out;
}

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  detail::check_2d(table, "embedding_lookup");
  if (ids.empty()) throw std::invalid_argument("embedding_lookup: empty id list");
  std::size_t v = table->shape[0], d = table->shape[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                  " outside table of " + std::to_string(v) + " rows");
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  Tensor out = detail::make_op({ids.size(), d}, {table}, [d, ids_copy](Node& self) {
    Node& T = *self.parents[0];
    T.ensure_grad();
    for (std::size_t i = 0; i < ids_copy->size(); ++i) {
      double* dst = &T.grad[static_cast<std::size_t>((*ids_copy)[i]) * d];
      const double* src = &self.grad[i * d];
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(&table->data[static_cast<std::size_t>(ids[i]) * d], d, &out->data[i * d]);
  return out;
}

// Inverted dropout: surviving activations are scaled by 1/(1-p) at train
// time so inference applies no correction. Identity when train is false or
// p == 0.
inline Tensor dropout(const Tensor& a, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!train || p == 0.0) return a;
  auto mask = std::make_shared<std::vector<double>>(a->numel());
  double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = detail::make_op(a->shape, {a}, [mask](Node& self) {
    Node& A = *self.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i] * (*mask)[i];
  });
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * (*mask)[i];
  return out;
}

// Concatenate 2-d tensors along the last axis (equal row counts).
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  std::size_t m = 0, total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    detail::check_2d(parts[i], "concat_cols");
    if (i == 0)
      m = parts[i]->shape[0];
    else if (parts[i]->shape[0] != m)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0]->shape) +
                                  " vs " + shape_str(parts[i]->shape));
    total += parts[i]->shape[1];
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p->shape[1]);
  Tensor out = detail::make_op({m, total}, parts, [m, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& P = *self.parents[pi];
      P.ensure_grad();
      std::size_t w = widths[pi];
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < w; ++c)
          P.grad[r * w + c] += self.grad[r * total + offset + c];
      offset += w;
    }
  });
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::size_t w = p->shape[1];
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(&p->data[r * w], w, &out->data[r * total + offset]);
    offset += w;
  }
  return out;
}

// Token-level cross entropy: mean over non-pad target positions of
// -log softmax(logits)[t, target_t], computed via logsumexp. Optional label
// smoothing spreads (1 - smoothing) on the target and smoothing/V uniformly.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id,
                            double smoothing = 0.0) {
  detail::check_2d(logits, "cross_entropy");
  std::size_t m = logits->shape[0], v = logits->shape[1];
  if (targets.size() != m)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(m) + " logit rows");
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw std::invalid_argument("cross_entropy: smoothing must be in [0,1)");
  std::size_t active = 0;
  for (int t : targets) {
    if (t != pad_id) {
      ++active;
      if (t < 0 || static_cast<std::size_t>(t) >= v)
        throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                    " outside vocab of " + std::to_string(v));
    }
  }
  if (active == 0) throw std::invalid_argument("cross_entropy: all target positions are pad");
  auto tcopy = std::make_shared<std::vector<int>>(targets);
  Tensor out = detail::make_op(
      {}, {logits}, [m, v, tcopy, pad_id, smoothing, active](Node& self) {
        Node& L = *self.parents[0];
        L.ensure_grad();
        double g = self.grad[0] / static_cast<double>(active);
        for (std::size_t r = 0; r < m; ++r) {
          int tgt = (*tcopy)[r];
          if (tgt == pad_id) continue;
          const double* x = &L.data[r * v];
          double mx = x[0];
          for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, x[c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < v; ++c) sum += std::exp(x[c] - mx);
          for (std::size_t c = 0; c < v; ++c) {
            double p = std::exp(x[c] - mx) / sum;
            double target_mass = smoothing / static_cast<double>(v) +
                                 (static_cast<std::size_t>(tgt) == c ? 1.0 - smoothing : 0.0);
            L.grad[r * v + c] += g * (p - target_mass);
          }
        }
      });
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    int tgt = targets[r];
    if (tgt == pad_id) continue;
    const double* x = &logits->data[r * v];
    double mx = x[0];
    for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < v; ++c) sum += std::exp(x[c] - mx);
    double lse = mx + std::log(sum);
    if (smoothing == 0.0) {
      total += lse - x[tgt];
    } else {
      double uniform_term = 0.0;
      for (std::size_t c = 0; c < v; ++c) uniform_term += lse - x[c];
      total += (1.0 - smoothing) * (lse - x[tgt]) +
               smoothing / static_cast<double>(v) * uniform_term;
    }
  }
  out->data[0] = total / static_cast<double>(active);
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  Tensor out = detail::make_op({}, {a}, [](Node& self) {
    Node& A = *self.parents[0];
    A.ensure_grad();
    for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += self.grad[0];
  });
  double s = 0.0;
  for (double v : a->data) s += v;
  out->data[0] = s;
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode accumulation

inline std::vector<Node*> toposort(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx].get();
      ++idx;
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // post-order: parents before children
}

inline void backward(const Tensor& loss) {
  if (loss->numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss->shape));
  std::vector<Node*> order = toposort(loss.get());
  for (Node* n : order) n->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

inline void zero_grad(const Tensor& t) { t->grad.assign(t->data.size(), 0.0); }

template <typename Range>
inline void zero_grads(const Range& params) {
  for (const auto& p : params) {
    if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Tensor>)
      zero_grad(p);
    else
      zero_grad(p.second);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference checking. f must be a pure scalar-valued function of the
// tensor it is handed (it may capture fixed parameters).

inline double grad_check(const std::function<Tensor(const Tensor&)>& f,
                         const std::vector<std::size_t>& shape, std::vector<double> x0,
                         double eps = 1e-5) {
  Tensor x = param(shape, x0);
  Tensor loss = f(x);
  if (loss->numel() != 1)
    throw std::invalid_argument("grad_check: f must be scalar-valued, got shape " +
                                shape_str(loss->shape));
  backward(loss);
  std::vector<double> analytic = x->grad;
  double max_err = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    double orig = x0[i];
    x0[i] = orig + eps;
    double up = scalar_value(f(constant(shape, x0)));
    x0[i] = orig - eps;
    double down = scalar_value(f(constant(shape, x0)));
    x0[i] = orig;
    double numeric = (up - down) / (2.0 * eps);
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_err = std::max(max_err, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

// ---------------------------------------------------------------------------
// Named-parameter checkpoints: versioned little-endian binary, bit-identical
// on round-trip. Writes go to a temp file renamed into place so a crash
// never leaves a half-written checkpoint behind.

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline constexpr char kCkptMagic[8] = {'C', 'L', 'S', 'C', 'K', 'P', 'T', '\0'};

}  // namespace detail

inline void save_params(const NamedParams& params, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_params: cannot open " + tmp);
    out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    detail::write_pod<std::uint32_t>(out, 1);  // version
    detail::write_pod<std::uint64_t>(out, params.size());
    for (const auto& [name, tensor] : params) {
      detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->shape.size()));
      for (std::size_t d : tensor->shape) detail::write_pod<std::uint64_t>(out, d);
      for (double v : tensor->data) detail::write_pod<double>(out, v);
    }
    if (!out) throw std::runtime_error("save_params: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_params: cannot rename " + tmp + " to " + path);
}

struct StoredParam {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

inline std::vector<StoredParam> load_stored_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_params: " + path + " is not a checkpoint file");
  std::uint32_t version = detail::read_pod<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("load_params: unsupported version " + std::to_string(version));
  std::uint64_t count = detail::read_pod<std::uint64_t>(in);
  std::vector<StoredParam> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    StoredParam p;
    std::uint32_t name_len = detail::read_pod<std::uint32_t>(in);
    p.name.resize(name_len);
    in.read(p.name.data(), name_len);
    if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
    std::uint32_t ndim = detail::read_pod<std::uint32_t>(in);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      p.shape.push_back(static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in)));
      numel *= p.shape.back();
    }
    p.data.resize(numel);
    for (std::size_t j = 0; j < numel; ++j) p.data[j] = detail::read_pod<double>(in);
    out.push_back(std::move(p));
  }
  return out;
}

// Fill an existing parameter set from a checkpoint; names and shapes must
// match exactly (order in the file is free).
inline void load_params_into(NamedParams& params, const std::string& path) {
  std::vector<StoredParam> stored = load_stored_params(path);
  std::unordered_map<std::string, StoredParam*> by_name;
  for (auto& s : stored) by_name[s.name] = &s;
  for (auto& [name, tensor] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("load_params: checkpoint missing parameter " + name);
    if (it->second->shape != tensor->shape)
      throw std::runtime_error("load_params: shape mismatch for " + name + ": file " +
                               shape_str(it->second->shape) + " vs model " +
                               shape_str(tensor->shape));
    tensor->data = it->second->data;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("load_params: checkpoint has extra parameter " +
                             by_name.begin()->first);
}

}  // namespace clsum
