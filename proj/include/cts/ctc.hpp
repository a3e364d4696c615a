#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cts/autodiff.hpp"
#include "cts/kernels.hpp"
#include "cts/tensor.hpp"

namespace cts {

inline constexpr int kBlank = 0;

/// Per-frame label distribution [T×V]; column 0 is blank.
struct Posterior {
  Tensor probs;

  std::size_t frames() const { return probs.rank() == 2 ? probs.dim(0) : 0; }
  std::size_t vocab() const { return probs.rank() == 2 ? probs.dim(1) : 0; }
  double at(std::size_t t, int w) const { return probs.at(t, static_cast<std::size_t>(w)); }
};

/// Greedy per-frame decisions: labels[t] and its winning probability.
struct Alignment {
  std::vector<int> labels;
  std::vector<double> scores;

  std::size_t size() const { return labels.size(); }
};

inline Posterior framewise_posteriors(const Tensor& y, const Tensor& head) {
  if (y.rank() != 2 || head.rank() != 2 || y.dim(1) != head.dim(0)) {
    throw DimensionError("framewise_posteriors: encoder width " + shape_str(y.shape()) +
                         " does not match CTC head " + shape_str(head.shape()));
  }
  return Posterior{kernels::softmax_lastdim(kernels::matmul(y, head))};
}

inline Posterior framewise_posteriors(const Tensor& y, const Parameter& head) {
  return framewise_posteriors(y, head.value);
}

/// Lowest label id wins ties.
inline Alignment greedy_alignment(const Posterior& p) {
  Alignment a;
  const std::size_t t_len = p.frames(), v = p.vocab();
  a.labels.reserve(t_len);
  a.scores.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto row = p.probs.row(t);
    std::size_t best = 0;
    for (std::size_t w = 1; w < v; ++w)
      if (row[w] > row[best]) best = w;
    a.labels.push_back(static_cast<int>(best));
    a.scores.push_back(row[best]);
  }
  return a;
}

/// Merge adjacent repeats, then drop blanks.
inline std::vector<int> ctc_collapse(std::span<const int> labels) {
  std::vector<int> out;
  int prev = -1;
  for (int l : labels) {
    if (l != prev && l != kBlank) out.push_back(l);
    prev = l;
  }
  return out;
}

/// Minimum number of frames needed to emit `target`.
inline std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace detail {

inline double log_add(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Forward lattice over the blank-interleaved target. alpha[t*S + s].
struct CtcLattice {
  std::vector<int> ext;        // extended labels, size S = 2L+1
  std::vector<bool> skip_ok;   // s may be entered from s-2
  std::vector<double> alpha;
  std::size_t frames = 0;
  double log_total = 0.0;
};

inline CtcLattice ctc_forward(const Tensor& log_probs, std::span<const int> target) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss: log_probs must be [T×V]");
  const std::size_t t_len = log_probs.dim(0), v = log_probs.dim(1);
  for (int id : target) {
    if (id == kBlank) throw LabelError("ctc_loss: target contains the blank id");
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw LabelError("ctc_loss: target id " + std::to_string(id) + " outside vocabulary");
    }
  }
  const std::size_t need = ctc_min_frames(target);
  if (t_len == 0 || t_len < need) {
    throw InfeasibleTargetError("ctc_loss: target needs " + std::to_string(std::max<std::size_t>(need, 1)) +
                                " frames, only " + std::to_string(t_len) + " available");
  }
  CtcLattice lat;
  const std::size_t s_len = 2 * target.size() + 1;
  lat.ext.resize(s_len, kBlank);
  lat.skip_ok.resize(s_len, false);
  for (std::size_t i = 0; i < target.size(); ++i) {
    lat.ext[2 * i + 1] = target[i];
    lat.skip_ok[2 * i + 1] = i > 0 && target[i] != target[i - 1];
  }
  lat.frames = t_len;
  lat.alpha.assign(t_len * s_len, kNegInf);
  auto lp = [&](std::size_t t, std::size_t s) {
    return log_probs.at(t, static_cast<std::size_t>(lat.ext[s]));
  };
  lat.alpha[0] = lp(0, 0);
  if (s_len > 1) lat.alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < t_len; ++t) {
    const double* prev = lat.alpha.data() + (t - 1) * s_len;
    double* cur = lat.alpha.data() + t * s_len;
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (lat.skip_ok[s]) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, s);
    }
  }
  const double* last = lat.alpha.data() + (t_len - 1) * s_len;
  lat.log_total = s_len > 1 ? log_add(last[s_len - 1], last[s_len - 2]) : last[0];
  return lat;
}

}  // namespace detail

/// −log Σ over alignments collapsing to `target` of Π_t exp(log_probs[t][a_t]).
inline double ctc_loss_value(const Tensor& log_probs, std::span<const int> target) {
  const double lt = detail::ctc_forward(log_probs, target).log_total;
  if (!std::isfinite(lt)) throw NumericError("ctc_loss: total path probability underflowed");
  return -lt;
}

/// Taped CTC loss. The backward pass is the reverse sweep of the forward
/// log-sum-exp recursion: each cell's adjoint flows to its predecessors in
/// proportion to their share of the cell's sum, and to its emission entry.
inline Var ctc_loss(const Var& log_probs, std::span<const int> target) {
  detail::CtcLattice lat = detail::ctc_forward(log_probs.value(), target);
  if (!std::isfinite(lat.log_total)) throw NumericError("ctc_loss: total path probability underflowed");
  return log_probs.tape().record(
      "ctc_loss", Tensor::scalar(-lat.log_total), {log_probs},
      [log_probs, lat = std::move(lat)](Tape& tape, const Tensor& g) {
        if (!log_probs.requires_grad()) return;
        constexpr double kNegInf = -std::numeric_limits<double>::infinity();
        const Tensor& lpv = log_probs.value();
        Tensor& lg = tape.grad_buffer(log_probs);
        const std::size_t s_len = lat.ext.size(), t_len = lat.frames;
        std::vector<double> adj(t_len * s_len, 0.0);
        const double* last = lat.alpha.data() + (t_len - 1) * s_len;
        // d(−log_total)/d alpha_final = −exp(alpha − log_total)
        for (std::size_t s = (s_len > 1 ? s_len - 2 : 0); s < s_len; ++s) {
          if (last[s] != kNegInf) adj[(t_len - 1) * s_len + s] = -g[0] * std::exp(last[s] - lat.log_total);
        }
        for (std::size_t t = t_len; t-- > 0;) {
          for (std::size_t s = 0; s < s_len; ++s) {
            const double a = adj[t * s_len + s];
            if (a == 0.0) continue;
            const auto col = static_cast<std::size_t>(lat.ext[s]);
            lg.at(t, col) += a;
            if (t == 0) continue;
            const double emit = lpv.at(t, col);
            const double sum_prev = lat.alpha[t * s_len + s] - emit;
            const double* prev = lat.alpha.data() + (t - 1) * s_len;
            auto push = [&](std::size_t p) {
              if (prev[p] != kNegInf) adj[(t - 1) * s_len + p] += a * std::exp(prev[p] - sum_prev);
            };
            push(s);
            if (s >= 1) push(s - 1);
            if (lat.skip_ok[s]) push(s - 2);
          }
        }
      });
}

}  // namespace cts
