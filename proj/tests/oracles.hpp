#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cts/autodiff.hpp"
#include "cts/ctc.hpp"
#include "cts/tensor.hpp"

namespace cts::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Central finite difference of a scalar function with respect to every
/// entry of `x`.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i − b_i| / max(1, |a|_∞, |b|_∞); gradient-check metric.
inline double relative_error(const Tensor& a, const Tensor& b) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Triple-loop matrix product.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

/// Softmax of one row through long double exp/sum.
inline std::vector<double> softmax_extended(const std::vector<double>& x) {
  long double mx = x[0];
  for (double v : x) mx = std::max<long double>(mx, v);
  long double sum = 0;
  std::vector<long double> e;
  for (double v : x) {
    e.push_back(std::exp(static_cast<long double>(v) - mx));
    sum += e.back();
  }
  std::vector<double> out;
  for (long double v : e) out.push_back(static_cast<double>(v / sum));
  return out;
}

/// Collapse repeats then drop blank 0; written independently of ctc_collapse.
inline std::vector<int> collapse_oracle(const std::vector<int>& path) {
  std::vector<int> merged;
  for (std::size_t i = 0; i < path.size(); ++i)
    if (i == 0 || path[i] != path[i - 1]) merged.push_back(path[i]);
  std::vector<int> out;
  for (int v : merged)
    if (v != 0) out.push_back(v);
  return out;
}

/// Σ over all V^T frame paths collapsing to `target` of Π p[t][path_t].
inline double brute_force_ctc_probability(const Tensor& probs, const std::vector<int>& target) {
  const std::size_t t_len = probs.dim(0), v = probs.dim(1);
  std::vector<int> path(t_len, 0);
  double total = 0.0;
  while (true) {
    if (collapse_oracle(path) == target) {
      double p = 1.0;
      for (std::size_t t = 0; t < t_len; ++t) p *= probs.at(t, static_cast<std::size_t>(path[t]));
      total += p;
    }
    std::size_t k = 0;
    while (k < t_len && path[k] == static_cast<int>(v) - 1) path[k++] = 0;
    if (k == t_len) break;
    ++path[k];
  }
  return total;
}

/// Plain O(n·m) Levenshtein distance.
inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Analytic gradient of f at x through a fresh tape.
inline Tensor analytic_gradient(const std::function<Var(const Var&)>& f, const Tensor& x) {
  Tape tape;
  Var xv = tape.variable(x);
  Var y = f(xv);
  tape.backward(y);
  return xv.grad();
}

inline double evaluate(const std::function<Var(const Var&)>& f, const Tensor& x) {
  Tape tape;
  return f(tape.variable(x)).value().item();
}

inline double gradient_error(const std::function<Var(const Var&)>& f, const Tensor& x) {
  const Tensor num = numeric_gradient([&](const Tensor& p) { return evaluate(f, p); }, x);
  return relative_error(analytic_gradient(f, x), num);
}

// Random linear readout so every output entry reaches the loss.
inline Var readout(const Var& y, const Tensor& weights) {
  Tape& t = y.tape();
  Tensor w = weights;
  Var prod = t.record("weighted", y.value(), {y}, [y](Tape& tape, const Tensor& g) { tape.accumulate(y, g); });
  Tensor out = prod.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w[i];
  return sum(t.record("mul_const", out, {prod}, [prod, w](Tape& tape, const Tensor& g) {
    Tensor gg = g;
    for (std::size_t i = 0; i < gg.size(); ++i) gg[i] *= w[i];
    tape.accumulate(prod, gg);
  }));
}

// Independently coded pipeline: find runs by scanning, pick argmax by scan.
inline std::vector<bool> mask_oracle(const Posterior& p, bool keep_blanks) {
  const std::size_t t_len = p.frames(), v = p.vocab();
  std::vector<int> lab(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    double best = -1;
    for (std::size_t w = 0; w < v; ++w)
      if (p.probs.at(t, w) > best) {
        best = p.probs.at(t, w);
        lab[t] = static_cast<int>(w);
      }
  }
  std::vector<bool> keep(t_len, false);
  std::size_t s = 0;
  while (s < t_len) {
    std::size_t e = s;
    while (e + 1 < t_len && lab[e + 1] == lab[s]) ++e;
    if (keep_blanks || lab[s] != 0) {
      std::size_t arg = s;
      for (std::size_t t = s; t <= e; ++t)
        if (p.probs.at(t, static_cast<std::size_t>(lab[s])) > p.probs.at(arg, static_cast<std::size_t>(lab[s]))) arg = t;
      keep[arg] = true;
    }
    s = e + 1;
  }
  return keep;
}

}  // namespace cts::testing
