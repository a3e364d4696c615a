#pragma once

// Plain forward kernels shared by the autodiff ops and the tape-free
// inference path used during beam search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cts/tensor.hpp"

namespace cts::kernels {

inline constexpr double kMaskedScore = -1e30;
inline constexpr double kLayerNormEps = 1e-5;

/// Multiply-accumulate tally for instrumented attention runs.
struct MacCounter {
  std::uint64_t cross_attention = 0;
  std::uint64_t self_attention = 0;
};

inline std::size_t rows_of(const Tensor& t) {
  return t.cols() == 0 ? 0 : t.size() / t.cols();
}

inline void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

/// out[m×n] += a[m×k] · b[k×n]
inline void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  matmul_acc(a, b, out);
  return out;
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
inline void matmul_bt_acc(const Tensor& g, const Tensor& b, Tensor& out) {
  const std::size_t m = g.dim(0), n = g.dim(1), k = b.dim(0);
  const double* G = g.data().data();
  const double* B = b.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      const double* grow = G + i * n;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      O[i * k + p] += s;
    }
  }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
inline void matmul_at_acc(const Tensor& a, const Tensor& g, Tensor& out) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = g.dim(1);
  const double* A = a.data().data();
  const double* G = g.data().data();
  double* O = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      double* orow = O + p * n;
      const double* grow = G + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

/// y = x·w + b with b broadcast over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  const std::size_t n = out.cols();
  if (b.size() != n) throw DimensionError("linear: bias width mismatch");
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < n; ++j) row[j] += b[j];
  }
  return out;
}

inline void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline void log_softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  const double lse = mx + std::log(sum);
  for (double& x : v) x -= lse;
}

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.cols() == 0) {
    throw DimensionError("softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.size() / c; ++r) softmax_inplace(out.data().subspan(r * c, c));
  return out;
}

inline Tensor log_softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.cols() == 0) {
    throw DimensionError("log_softmax_lastdim: empty last dimension in " + shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.size() / c; ++r) log_softmax_inplace(out.data().subspan(r * c, c));
  return out;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

inline Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = gelu(v);
  return out;
}

/// Normalized slices (pre-affine) plus per-slice 1/sqrt(var + eps).
struct LayerNormParts {
  Tensor xhat;
  std::vector<double> inv_std;
};

inline LayerNormParts layer_norm_parts(const Tensor& x) {
  const std::size_t c = x.cols();
  if (x.rank() == 0 || c < 2) {
    throw DimensionError("layer_norm: normalized width must be >= 2, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.size() / c;
  LayerNormParts parts{x, std::vector<double>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    auto s = parts.xhat.data().subspan(r * c, c);
    double mean = 0.0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : s) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (double& v : s) v = (v - mean) * inv;
    parts.inv_std[r] = inv;
  }
  return parts;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  LayerNormParts parts = layer_norm_parts(x);
  const std::size_t c = x.cols();
  if (gamma.size() != c || beta.size() != c) throw DimensionError("layer_norm: affine width mismatch");
  Tensor& y = parts.xhat;
  for (std::size_t r = 0; r < y.size() / c; ++r) {
    auto s = y.data().subspan(r * c, c);
    for (std::size_t j = 0; j < c; ++j) s[j] = s[j] * gamma[j] + beta[j];
  }
  return std::move(y);
}

/// Which keys a query may see. `keep` (may be empty = all) applies to every
/// query; `causal` additionally hides keys after the query position.
struct AttentionMask {
  std::vector<bool> keep;
  bool causal = false;

  bool visible(std::size_t query, std::size_t key) const {
    if (causal && key > query) return false;
    return keep.empty() || keep[key];
  }
};

struct AttentionResult {
  Tensor out;    // [Lq×d]
  Tensor probs;  // [heads×Lq×Lk]
};

/// Multi-head scaled dot-product attention over pre-projected q, k, v.
/// Hidden keys receive kMaskedScore before the softmax.
inline AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 std::size_t heads, const AttentionMask& mask,
                                 std::uint64_t* macs = nullptr) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk) {
    throw DimensionError("attention: q/k/v shapes disagree");
  }
  if (heads == 0 || d % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (!mask.keep.empty() && mask.keep.size() != lk) {
    throw DimensionError("attention: key mask length " + std::to_string(mask.keep.size()) +
                         " != key count " + std::to_string(lk));
  }
  if (lk == 0) throw DimensionError("attention: no keys");
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult res{Tensor({lq, d}), Tensor({heads, lq, lk})};
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < lq; ++i) {
      double* p = res.probs.data().data() + (h * lq + i) * lk;
      const double* qi = q.data().data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        const double* kj = k.data().data() + j * d + off;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= scale;
        if (!mask.visible(i, j)) s += kMaskedScore;
        p[j] = s;
      }
      softmax_inplace(std::span<double>(p, lk));
      double* oi = res.out.data().data() + i * d + off;
      for (std::size_t j = 0; j < lk; ++j) {
        const double w = p[j];
        const double* vj = v.data().data() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
      }
    }
  }
  if (macs) *macs += static_cast<std::uint64_t>(2) * lq * lk * d;
  return res;
}

/// Sinusoidal absolute position table [len×d].
inline Tensor sinusoidal_positions(std::size_t len, std::size_t d) {
  Tensor pe({len, d});
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < d) pe.at(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

/// Concatenates each pair of consecutive rows; odd row counts get a zero row
/// appended first. [T×c] -> [ceil(T/2)×2c].
inline Tensor pair_stack(const Tensor& x) {
  require_matrix(x, "pair_stack");
  const std::size_t t = x.dim(0), c = x.dim(1);
  const std::size_t half = (t + 1) / 2;
  Tensor out({half, 2 * c});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  return out;
}

}  // namespace cts::kernels
