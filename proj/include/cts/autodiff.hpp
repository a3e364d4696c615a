#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// Every op appends a node holding its output value and a closure that pushes
// the node's gradient to its inputs. A node requires grad iff one of its
// inputs does; parameter leaves require grad iff the parameter is trainable,
// so frozen sub-graphs are never visited by backward().

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cts/kernels.hpp"
#include "cts/tensor.hpp"

namespace cts {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  /// A tape with gradients disabled records values only.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value) { return push(Node{std::move(value), nullptr, false, nullptr, {}}); }

  /// Leaf whose gradient is kept on the tape (read via Var::grad()).
  Var variable(Tensor value) { return push(Node{std::move(value), nullptr, grad_enabled_, nullptr, {}}); }

  /// Leaf bound to a Parameter; backward() adds into `p.grad` when trainable.
  Var param(Parameter& p) {
    Node n{Tensor(), &p.value, grad_enabled_ && p.trainable, &p, {}};
    return push(std::move(n));
  }

  /// Appends an op output. Throws NumericError when `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
    bool rg = false;
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw Error(std::string(op) + ": operand recorded on another tape");
      rg = rg || nodes_[v.id_].requires_grad;
    }
    return push(Node{std::move(value), nullptr, rg, nullptr, rg ? std::move(fn) : BackwardFn{}});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }

  const Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != value(id).size()) n.grad = Tensor::zeros(value(id).shape());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of `v`, allocated on first use. Only valid for nodes
  /// that require grad; callers must check before accumulating.
  Tensor& grad_buffer(const Var& v) {
    Node& n = nodes_[v.id_];
    const Tensor& val = value(v.id_);
    if (n.grad.size() != val.size() || n.grad.shape() != val.shape()) {
      n.grad = Tensor::zeros(val.shape());
    }
    return n.grad;
  }

  void accumulate(const Var& v, const Tensor& g) {
    if (!nodes_[v.id_].requires_grad) return;
    Tensor& buf = grad_buffer(v);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }

  /// Reverse sweep from a scalar loss. Parameter gradients are summed into
  /// Parameter::grad.
  void backward(const Var& loss) {
    if (loss.tape_ != this) throw Error("backward: loss recorded on another tape");
    if (value(loss.id_).size() != 1) {
      throw DimensionError("backward: loss must be scalar, got " + shape_str(value(loss.id_).shape()));
    }
    if (!nodes_[loss.id_].requires_grad) return;
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        // Closures write into other nodes' buffers only, never this one.
        const Tensor& g = n.grad;
        n.backward(*this, g);
      }
      if (n.param && n.param->trainable) {
        Tensor& pg = n.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref;
    bool requires_grad;
    Parameter* param;
    BackwardFn backward;
    Tensor grad{};
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Ops

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) kernels::matmul_bt_acc(g, b.value(), t.grad_buffer(a));
    if (b.requires_grad()) kernels::matmul_at_acc(a.value(), g, t.grad_buffer(b));
  });
}

inline Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

/// x[m×n] + bias[n] broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  const std::size_t n = x.value().cols();
  if (bias.value().size() != n) throw DimensionError("add_bias: bias width mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.value()[i % n];
  return x.tape().record("add_bias", std::move(out), {x, bias}, [x, bias, n](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (bias.requires_grad()) {
      Tensor& bg = t.grad_buffer(bias);
      for (std::size_t i = 0; i < g.size(); ++i) bg[i % n] += g[i];
    }
  });
}

/// x + c for a constant tensor c of the same shape.
inline Var add_const(const Var& x, const Tensor& c) {
  if (x.shape() != c.shape()) throw DimensionError("add_const: shape mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return x.tape().record("add_const", std::move(out), {x},
                         [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return x.tape().record("scale", std::move(out), {x}, [x, s](Tape& t, const Tensor& g) {
    if (!x.requires_grad()) return;
    Tensor& xg = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += s * g[i];
  });
}

/// Sum of all elements, as a scalar.
inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    if (!x.requires_grad()) return;
    Tensor& xg = t.grad_buffer(x);
    for (double& v : xg.data()) v += g[0];
  });
}

inline Var gelu(const Var& x) {
  return x.tape().record("gelu", kernels::gelu(x.value()), {x}, [x](Tape& t, const Tensor& g) {
    if (!x.requires_grad()) return;
    Tensor& xg = t.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * kernels::gelu_grad(xv[i]);
  });
}

inline Var softmax_lastdim(const Var& x) {
  Tensor y = kernels::softmax_lastdim(x.value());
  Tensor saved = y;
  return x.tape().record("softmax", std::move(y), {x}, [x, y = std::move(saved)](Tape& t, const Tensor& g) {
    if (!x.requires_grad()) return;
    Tensor& xg = t.grad_buffer(x);
    const std::size_t c = y.cols();
    for (std::size_t r = 0; r < y.size() / c; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) xg[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

inline Var log_softmax_lastdim(const Var& x) {
  Tensor out = kernels::log_softmax_lastdim(x.value());
  Tensor probs = out;
  for (double& v : probs.data()) v = std::exp(v);
  return x.tape().record("log_softmax", std::move(out), {x},
                         [x, probs = std::move(probs)](Tape& t, const Tensor& g) {
                           if (!x.requires_grad()) return;
                           Tensor& xg = t.grad_buffer(x);
                           const std::size_t c = probs.cols();
                           for (std::size_t r = 0; r < probs.size() / c; ++r) {
                             double gs = 0.0;
                             for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
                             for (std::size_t j = 0; j < c; ++j)
                               xg[r * c + j] += g[r * c + j] - probs[r * c + j] * gs;
                           }
                         });
}

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
  kernels::LayerNormParts parts = kernels::layer_norm_parts(x.value());
  const std::size_t c = x.value().cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("layer_norm: affine width mismatch");
  }
  Tensor out = parts.xhat;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * gamma.value()[i % c] + beta.value()[i % c];
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, c, parts = std::move(parts)](Tape& t, const Tensor& g) {
        const Tensor& xhat = parts.xhat;
        if (gamma.requires_grad()) {
          Tensor& gg = t.grad_buffer(gamma);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % c] += g[i] * xhat[i];
        }
        if (beta.requires_grad()) {
          Tensor& bg = t.grad_buffer(beta);
          for (std::size_t i = 0; i < g.size(); ++i) bg[i % c] += g[i];
        }
        if (!x.requires_grad()) return;
        Tensor& xg = t.grad_buffer(x);
        const double n = static_cast<double>(c);
        std::vector<double> dxhat(c);
        for (std::size_t r = 0; r < g.size() / c; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dxhat[j] = g[r * c + j] * gamma.value()[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xhat[r * c + j];
          }
          const double inv = parts.inv_std[r];
          for (std::size_t j = 0; j < c; ++j)
            xg[r * c + j] += inv / n * (n * dxhat[j] - s1 - xhat[r * c + j] * s2);
        }
      });
}

/// Mean over rows of −log softmax(logits)[target].
inline Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Tensor& z = logits.value();
  kernels::require_matrix(z, "cross_entropy");
  const std::size_t rows = z.dim(0), v = z.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  if (rows == 0) throw DimensionError("cross_entropy: no positions");
  for (int id : targets) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw LabelError("cross_entropy: target id " + std::to_string(id) + " outside [0," +
                       std::to_string(v) + ")");
    }
  }
  Tensor lp = kernels::log_softmax_lastdim(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) loss -= lp.at(r, static_cast<std::size_t>(targets[r]));
  loss /= static_cast<double>(rows);
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, lp = std::move(lp), tgt = std::move(tgt)](Tape& t, const Tensor& g) {
        if (!logits.requires_grad()) return;
        Tensor& xg = t.grad_buffer(logits);
        const std::size_t rows = lp.dim(0), v = lp.dim(1);
        const double w = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < v; ++j) xg.at(r, j) += w * std::exp(lp.at(r, j));
          xg.at(r, static_cast<std::size_t>(tgt[r])) -= w;
        }
      });
}

/// Row-pair concatenation with zero padding; halves the time axis.
inline Var pair_stack(const Var& x) {
  return x.tape().record("pair_stack", kernels::pair_stack(x.value()), {x},
                         [x](Tape& t, const Tensor& g) {
                           if (!x.requires_grad()) return;
                           Tensor& xg = t.grad_buffer(x);
                           for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
                         });
}

/// Rows of x at `index`, in the given order.
inline Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  kernels::require_matrix(xv, "gather_rows");
  const std::size_t c = xv.cols();
  Tensor out({index.size(), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(xv.row(index[i]).begin(), c, out.row(i).begin());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.tape().record("gather_rows", std::move(out), {x},
                         [x, idx = std::move(idx), c](Tape& t, const Tensor& g) {
                           if (!x.requires_grad()) return;
                           Tensor& xg = t.grad_buffer(x);
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (std::size_t j = 0; j < c; ++j) xg.at(idx[i], j) += g.at(i, j);
                         });
}

/// Embedding lookup: rows of `table` for each id.
inline Var embedding(const Var& table, std::span<const int> ids) {
  std::vector<std::size_t> idx;
  idx.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= table.value().dim(0)) {
      throw LabelError("embedding: id " + std::to_string(id) + " out of range");
    }
    idx.push_back(static_cast<std::size_t>(id));
  }
  return gather_rows(table, idx);
}

/// Fused multi-head attention; see kernels::attention.
inline Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
                     const kernels::AttentionMask& mask, std::uint64_t* macs = nullptr,
                     Tensor* probs_out = nullptr) {
  kernels::AttentionResult r = kernels::attention(q.value(), k.value(), v.value(), heads, mask, macs);
  if (probs_out) *probs_out = r.probs;
  return q.tape().record(
      "attention", std::move(r.out), {q, k, v},
      [q, k, v, heads, probs = std::move(r.probs)](Tape& t, const Tensor& g) {
        const Tensor& Q = q.value();
        const Tensor& K = k.value();
        const Tensor& V = v.value();
        const std::size_t lq = Q.dim(0), lk = K.dim(0), d = Q.dim(1), dh = d / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor* qg = q.requires_grad() ? &t.grad_buffer(q) : nullptr;
        Tensor* kg = k.requires_grad() ? &t.grad_buffer(k) : nullptr;
        Tensor* vg = v.requires_grad() ? &t.grad_buffer(v) : nullptr;
        std::vector<double> dp(lk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < lq; ++i) {
            const double* p = probs.data().data() + (h * lq + i) * lk;
            const double* gi = g.data().data() + i * d + off;
            double dot = 0.0;
            for (std::size_t j = 0; j < lk; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += gi[c] * V[j * d + off + c];
              dp[j] = s;
              dot += s * p[j];
              if (vg && p[j] != 0.0)
                for (std::size_t c = 0; c < dh; ++c) (*vg)[j * d + off + c] += p[j] * gi[c];
            }
            for (std::size_t j = 0; j < lk; ++j) {
              if (p[j] == 0.0) continue;
              const double ds = p[j] * (dp[j] - dot) * scale;
              for (std::size_t c = 0; c < dh; ++c) {
                if (qg) (*qg)[i * d + off + c] += ds * K[j * d + off + c];
                if (kg) (*kg)[j * d + off + c] += ds * Q[i * d + off + c];
              }
            }
          }
        }
      });
}

}  // namespace cts
