#pragma once

// Differentiable primitives over Tensor. Each op computes its forward result,
// then (when recording and any input requires grad) appends one backward
// closure to the active tape. Reductions and normalizers accumulate in double
// even though storage is float32.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mint/core/error.hpp"
#include "mint/core/tensor.hpp"

namespace mint {

namespace detail {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline ECMap as_mat(const Tensor& t, int rows, int cols) {
  return ECMap(t.data().data(), rows, cols);
}

inline void check_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw ShapeError(std::string(who) + " expects a 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

/// C = A * B for 2-d tensors, [m,k] x [k,n] -> [m,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n}, grad_enabled_for(a, b));
  {
    detail::EMap oc(out.mutable_data().data(), m, n);
    oc.noalias() = detail::as_mat(a, m, k) * detail::as_mat(b, k, n);
  }
  if (out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    GradTape::active().record([ac, bc, oc, m, k, n]() mutable {
      detail::ECMap go(oc.grad().data(), m, n);
      if (ac.requires_grad()) {
        detail::EMap ga(ac.grad_buffer().data(), m, k);
        ga.noalias() += go * detail::as_mat(bc, k, n).transpose();
      }
      if (bc.requires_grad()) {
        detail::EMap gb(bc.grad_buffer().data(), k, n);
        gb.noalias() += detail::as_mat(ac, m, k).transpose() * go;
      }
    });
  }
  return out;
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a, b));
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  if (out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    GradTape::active().record([ac, bc, oc]() mutable {
      auto go = oc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

/// Adds a length-n bias vector to every row of an [m,n] tensor.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::check_2d(x, "add_bias");
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_bias expects bias [" + std::to_string(x.dim(1)) + "], got " +
                     shape_str(bias.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m, n}, grad_enabled_for(x, bias));
  auto od = out.mutable_data();
  auto xd = x.data();
  auto bd = bias.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[i * n + j] = xd[i * n + j] + bd[j];
  if (out.requires_grad()) {
    Tensor xc = x, bc = bias, oc = out;
    GradTape::active().record([xc, bc, oc, m, n]() mutable {
      auto go = oc.grad();
      if (xc.requires_grad()) {
        auto gx = xc.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad_buffer();
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += go[i * n + j];
          gb[j] += static_cast<float>(s);
        }
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a, b));
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  if (out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    GradTape::active().record([ac, bc, oc]() mutable {
      auto go = oc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad_buffer();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

/// Elementwise (Hadamard) product of two same-shape tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a, b));
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  if (out.requires_grad()) {
    Tensor ac = a, bc = b, oc = out;
    GradTape::active().record([ac, bc, oc]() mutable {
      auto go = oc.grad();
      if (ac.requires_grad()) {
        auto ga = ac.grad_buffer();
        auto bd2 = bc.data();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd2[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad_buffer();
        auto ad2 = ac.data();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad2[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a));
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc, c]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::check_2d(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({n, m}, grad_enabled_for(a));
  auto od = out.mutable_data();
  auto ad = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) od[j * m + i] = ad[i * n + j];
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc, m, n]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

/// Shape change sharing the underlying buffer; gradient flows one-to-one.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor out = Tensor::alias(a, std::move(shape), grad_enabled_for(a));
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad_buffer();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

/// Scalar sum of all elements, accumulated in double.
inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (float x : a.data()) s += x;
  Tensor out = Tensor::scalar(static_cast<float>(s), grad_enabled_for(a));
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc]() mutable {
      float g = oc.grad()[0];
      auto ga = ac.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (float x : a.data()) s += x;
  Tensor out = Tensor::scalar(static_cast<float>(s * inv_n), grad_enabled_for(a));
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc, inv_n]() mutable {
      float g = static_cast<float>(oc.grad()[0] * inv_n);
      auto ga = ac.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

/// Euclidean norm of the flattened tensor, accumulated in double.
inline Tensor l2_norm(const Tensor& a) {
  double s = 0.0;
  for (float x : a.data()) s += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(s);
  Tensor out = Tensor::scalar(static_cast<float>(norm), grad_enabled_for(a));
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
    GradTape::active().record([ac, oc, inv]() mutable {
      double g = static_cast<double>(oc.grad()[0]) * inv;
      auto ga = ac.grad_buffer();
      auto ad = ac.data();
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += static_cast<float>(g * static_cast<double>(ad[i]));
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a));
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] > 0.0f ? ad[i] : 0.0f;
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc]() mutable {
      auto go = oc.grad();
      auto ga = ac.grad_buffer();
      auto ad2 = ac.data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (ad2[i] > 0.0f) ga[i] += go[i];
    });
  }
  return out;
}

/// Exact (erf-based) GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a));
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    double x = ad[i];
    od[i] = static_cast<float>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc]() mutable {
      constexpr double kInvSqrt2Pi = 0.3989422804014326779;
      auto go = oc.grad();
      auto ga = ac.grad_buffer();
      auto ad2 = ac.data();
      for (std::size_t i = 0; i < go.size(); ++i) {
        double x = ad2[i];
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += static_cast<float>(go[i] * (cdf + x * pdf));
      }
    });
  }
  return out;
}

namespace detail {

// Shared softmax kernel over contiguous rows: max-subtraction, float exp,
// double row sums. Writes probabilities into out.
inline void softmax_rows(const float* in, float* out, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const float* x = in + static_cast<std::size_t>(i) * cols;
    float* p = out + static_cast<std::size_t>(i) * cols;
    float m = x[0];
    for (int j = 1; j < cols; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      p[j] = std::exp(x[j] - m);
      z += p[j];
    }
    const float inv_z = static_cast<float>(1.0 / z);
    for (int j = 0; j < cols; ++j) p[j] *= inv_z;
  }
}

// dx = p * (dy - sum(dy * p)) per row; the inner product in double.
inline void softmax_rows_backward(const float* p, const float* gy, float* gx, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const float* pi = p + static_cast<std::size_t>(i) * cols;
    const float* gi = gy + static_cast<std::size_t>(i) * cols;
    float* xi = gx + static_cast<std::size_t>(i) * cols;
    double dot = 0.0;
    for (int j = 0; j < cols; ++j) dot += static_cast<double>(gi[j]) * pi[j];
    for (int j = 0; j < cols; ++j)
      xi[j] += static_cast<float>(pi[j] * (static_cast<double>(gi[j]) - dot));
  }
}

}  // namespace detail

/// Softmax along an axis of a 1-d or 2-d tensor.
inline Tensor softmax(const Tensor& a, int axis = -1) {
  if (a.ndim() == 1) {
    if (axis != 0 && axis != -1) throw ShapeError("softmax axis out of range for 1-d tensor");
    Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a));
    detail::softmax_rows(a.data().data(), out.mutable_data().data(), 1, a.dim(0));
    if (out.requires_grad()) {
      Tensor ac = a, oc = out;
      int n = a.dim(0);
      GradTape::active().record([ac, oc, n]() mutable {
        detail::softmax_rows_backward(oc.data().data(), oc.grad().data(),
                                      ac.grad_buffer().data(), 1, n);
      });
    }
    return out;
  }
  detail::check_2d(a, "softmax");
  if (axis == -1) axis = 1;
  if (axis != 0 && axis != 1) throw ShapeError("softmax axis out of range for 2-d tensor");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  const int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros(a.shape(), grad_enabled_for(a));
  detail::softmax_rows(a.data().data(), out.mutable_data().data(), m, n);
  if (out.requires_grad()) {
    Tensor ac = a, oc = out;
    GradTape::active().record([ac, oc, m, n]() mutable {
      detail::softmax_rows_backward(oc.data().data(), oc.grad().data(), ac.grad_buffer().data(),
                                    m, n);
    });
  }
  return out;
}

/// Mean negative log-likelihood of integer targets under softmax(logits).
/// Log-sum-exp and the mean run in double.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  detail::check_2d(logits, "cross_entropy");
  const int m = logits.dim(0), n = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    throw ShapeError("cross_entropy expects " + std::to_string(m) + " targets, got " +
                     std::to_string(targets.size()));
  auto xd = logits.data();
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= n)
      throw InputError("cross_entropy target " + std::to_string(t) + " out of range [0," +
                       std::to_string(n) + ") at row " + std::to_string(i));
    const float* x = xd.data() + static_cast<std::size_t>(i) * n;
    float mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(static_cast<double>(x[j]) - mx);
    total += std::log(z) + mx - x[t];
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / m), grad_enabled_for(logits));
  if (out.requires_grad()) {
    Tensor lc = logits, oc = out;
    auto tgt = targets;
    GradTape::active().record([lc, oc, tgt, m, n]() mutable {
      const float g = oc.grad()[0] / static_cast<float>(m);
      auto gl = lc.grad_buffer();
      std::vector<float> probs(static_cast<std::size_t>(m) * n);
      detail::softmax_rows(lc.data().data(), probs.data(), m, n);
      for (int i = 0; i < m; ++i) {
        float* gi = gl.data() + static_cast<std::size_t>(i) * n;
        const float* pi = probs.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gi[j] += g * pi[j];
        gi[tgt[static_cast<std::size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

/// Gathers rows of a [v,n] table by index: out[i,:] = table[ids[i],:].
/// Backward scatter-adds, so repeated ids accumulate correctly.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  detail::check_2d(table, "gather_rows");
  const int v = table.dim(0), n = table.dim(1);
  const int m = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({m, n}, grad_enabled_for(table));
  auto od = out.mutable_data();
  auto td = table.data();
  for (int i = 0; i < m; ++i) {
    int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v)
      throw InputError("gather_rows index " + std::to_string(id) + " out of range [0," +
                       std::to_string(v) + ")");
    std::copy_n(td.data() + static_cast<std::size_t>(id) * n, n,
                od.data() + static_cast<std::size_t>(i) * n);
  }
  if (out.requires_grad()) {
    Tensor tc = table, oc = out;
    auto idc = ids;
    GradTape::active().record([tc, oc, idc, n]() mutable {
      auto go = oc.grad();
      auto gt = tc.grad_buffer();
      for (std::size_t i = 0; i < idc.size(); ++i) {
        float* dst = gt.data() + static_cast<std::size_t>(idc[i]) * n;
        const float* src = go.data() + i * n;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

/// Row-wise layer normalization with learned gain and bias.
/// Per-row mean and variance accumulate in double; variance is the biased
/// (1/n) estimate with eps added before the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
  detail::check_2d(x, "layer_norm");
  const int m = x.dim(0), n = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 || beta.dim(0) != n)
    throw ShapeError("layer_norm expects gamma/beta of shape [" + std::to_string(n) + "]");
  bool rg = GradTape::active().recording() &&
            (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  Tensor out = Tensor::zeros({m, n}, rg);
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  auto od = out.mutable_data();
  std::vector<float> xhat(static_cast<std::size_t>(m) * n);
  std::vector<float> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const float* xi = xd.data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = xi[j] - mu;
      var += d * d;
    }
    var /= n;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = static_cast<float>(istd);
    float* hi = xhat.data() + static_cast<std::size_t>(i) * n;
    float* oi = od.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      hi[j] = static_cast<float>((xi[j] - mu) * istd);
      oi[j] = hi[j] * gd[j] + bd[j];
    }
  }
  if (rg) {
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    auto xh = std::make_shared<std::vector<float>>(std::move(xhat));
    auto is = std::make_shared<std::vector<float>>(std::move(inv_std));
    GradTape::active().record([xc, gc, bc, oc, xh, is, m, n]() mutable {
      auto go = oc.grad();
      auto gd2 = gc.data();
      if (gc.requires_grad()) {
        auto gg = gc.grad_buffer();
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i)
            s += static_cast<double>(go[static_cast<std::size_t>(i) * n + j]) *
                 (*xh)[static_cast<std::size_t>(i) * n + j];
          gg[j] += static_cast<float>(s);
        }
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad_buffer();
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += go[static_cast<std::size_t>(i) * n + j];
          gb[j] += static_cast<float>(s);
        }
      }
      if (xc.requires_grad()) {
        auto gx = xc.grad_buffer();
        for (int i = 0; i < m; ++i) {
          const float* goi = go.data() + static_cast<std::size_t>(i) * n;
          const float* hi = xh->data() + static_cast<std::size_t>(i) * n;
          float* gxi = gx.data() + static_cast<std::size_t>(i) * n;
          double s1 = 0.0, s2 = 0.0;
          for (int j = 0; j < n; ++j) {
            double dh = static_cast<double>(goi[j]) * gd2[j];
            s1 += dh;
            s2 += dh * hi[j];
          }
          const double istd = (*is)[static_cast<std::size_t>(i)];
          for (int j = 0; j < n; ++j) {
            double dh = static_cast<double>(goi[j]) * gd2[j];
            gxi[j] += static_cast<float>(istd * (dh - s1 / n - hi[j] * s2 / n));
          }
        }
      }
    });
  }
  return out;
}

/// Result of the fused causal attention kernel. probs holds the full
/// [batch, heads, seq, seq] attention pattern; entries after each query
/// position are exact zeros.
struct CausalAttentionResult {
  Tensor out;  // [batch*seq, heads*d_head]
  std::shared_ptr<const std::vector<float>> probs;
  int batch = 0, seq = 0, heads = 0, d_head = 0;

  float prob(int b, int h, int i, int j) const {
    return (*probs)[((static_cast<std::size_t>(b) * heads + h) * seq + i) * seq + j];
  }
};

/// Scaled dot-product attention with a causal mask, all heads fused in one
/// tape node. q, k, v are [batch*seq, heads*d_head] with head channels
/// contiguous; scores use 1/sqrt(d_head).
inline CausalAttentionResult causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                              int batch, int seq, int heads, int d_head) {
  detail::check_2d(q, "causal_attention");
  const int rows = batch * seq, width = heads * d_head;
  for (const Tensor* t : {&q, &k, &v})
    if (t->ndim() != 2 || t->dim(0) != rows || t->dim(1) != width)
      throw ShapeError("causal_attention expects [" + std::to_string(rows) + "x" +
                       std::to_string(width) + "], got " + shape_str(t->shape()));
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(d_head));
  bool rg = GradTape::active().recording() &&
            (q.requires_grad() || k.requires_grad() || v.requires_grad());
  Tensor out = Tensor::zeros({rows, width}, rg);
  auto probs = std::make_shared<std::vector<float>>(
      static_cast<std::size_t>(batch) * heads * seq * seq, 0.0f);
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  auto od = out.mutable_data();
  std::vector<float> scores(static_cast<std::size_t>(seq));
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const int col = h * d_head;
      float* pbh = probs->data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq;
      for (int i = 0; i < seq; ++i) {
        const float* qi = qd.data() + (static_cast<std::size_t>(b) * seq + i) * width + col;
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j <= i; ++j) {
          const float* kj = kd.data() + (static_cast<std::size_t>(b) * seq + j) * width + col;
          float s = 0.0f;
          for (int d = 0; d < d_head; ++d) s += qi[d] * kj[d];
          s *= inv_scale;
          scores[static_cast<std::size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        float* pi = pbh + static_cast<std::size_t>(i) * seq;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
          z += pi[j];
        }
        const float inv_z = static_cast<float>(1.0 / z);
        for (int j = 0; j <= i; ++j) pi[j] *= inv_z;
        float* oi = od.data() + (static_cast<std::size_t>(b) * seq + i) * width + col;
        for (int d = 0; d < d_head; ++d) {
          double acc = 0.0;
          for (int j = 0; j <= i; ++j)
            acc += static_cast<double>(pi[j]) *
                   vd[(static_cast<std::size_t>(b) * seq + j) * width + col + d];
          oi[d] = static_cast<float>(acc);
        }
      }
    }
  }
  if (rg) {
    Tensor qc = q, kc = k, vc = v, oc = out;
    GradTape::active().record([qc, kc, vc, oc, probs, batch, seq, heads, d_head, width,
                               inv_scale]() mutable {
      auto go = oc.grad();
      auto qd2 = qc.data();
      auto kd2 = kc.data();
      auto vd2 = vc.data();
      auto gq = qc.requires_grad() ? qc.grad_buffer() : std::span<float>();
      auto gk = kc.requires_grad() ? kc.grad_buffer() : std::span<float>();
      auto gv = vc.requires_grad() ? vc.grad_buffer() : std::span<float>();
      std::vector<float> dp(static_cast<std::size_t>(seq));
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
          const int col = h * d_head;
          const float* pbh = probs->data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq;
          for (int i = 0; i < seq; ++i) {
            const float* pi = pbh + static_cast<std::size_t>(i) * seq;
            const float* goi = go.data() + (static_cast<std::size_t>(b) * seq + i) * width + col;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) {
              const float* vj = vd2.data() + (static_cast<std::size_t>(b) * seq + j) * width + col;
              float d = 0.0f;
              for (int e = 0; e < d_head; ++e) d += goi[e] * vj[e];
              dp[static_cast<std::size_t>(j)] = d;
              dot += static_cast<double>(pi[j]) * d;
              if (!gv.empty()) {
                float* gvj = gv.data() + (static_cast<std::size_t>(b) * seq + j) * width + col;
                for (int e = 0; e < d_head; ++e) gvj[e] += pi[j] * goi[e];
              }
            }
            if (gq.empty() && gk.empty()) continue;
            const float* qi = qd2.data() + (static_cast<std::size_t>(b) * seq + i) * width + col;
            for (int j = 0; j <= i; ++j) {
              float ds = static_cast<float>(pi[j] * (dp[static_cast<std::size_t>(j)] - dot)) *
                         inv_scale;
              const float* kj = kd2.data() + (static_cast<std::size_t>(b) * seq + j) * width + col;
              if (!gq.empty()) {
                float* gqi = gq.data() + (static_cast<std::size_t>(b) * seq + i) * width + col;
                for (int e = 0; e < d_head; ++e) gqi[e] += ds * kj[e];
              }
              if (!gk.empty()) {
                float* gkj = gk.data() + (static_cast<std::size_t>(b) * seq + j) * width + col;
                for (int e = 0; e < d_head; ++e) gkj[e] += ds * qi[e];
              }
            }
          }
        }
      }
    });
  }
  CausalAttentionResult res;
  res.out = out;
  res.probs = probs;
  res.batch = batch;
  res.seq = seq;
  res.heads = heads;
  res.d_head = d_head;
  return res;
}

/// Index of the largest element per row; ties resolve to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& x) {
  detail::check_2d(x, "argmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<int> out(static_cast<std::size_t>(m));
  auto xd = x.data();
  for (int i = 0; i < m; ++i) {
    const float* xi = xd.data() + static_cast<std::size_t>(i) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (xi[j] > xi[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace mint
