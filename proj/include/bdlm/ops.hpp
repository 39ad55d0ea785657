#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdlm/masking.hpp"
#include "bdlm/tensor.hpp"

// Reverse-mode ops over 2-D tensors. Every op takes an optional tape; a null
// tape runs the forward pass only. Backward closures accumulate into the
// inputs' grad buffers (+=), never overwrite.
namespace bdlm::ops {

namespace detail {

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// out[m x n] = a[m x k] . b[k x n]
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(k) +
                                " vs " + std::to_string(b.dim(0)) + ")");
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      T* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (tape) {
    tape->record(out, [a, b, out, m, k, n]() mutable {
      const T* g = out.grad().data();
      // a.grad += g . b^T
      {
        T* ga = a.grad().data();
        const T* pb2 = b.data();
        for (int i = 0; i < m; ++i) {
          for (int p = 0; p < k; ++p) {
            T acc = T(0);
            const T* grow = g + i * n;
            const T* brow = pb2 + p * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + p] += acc;
          }
        }
      }
      // b.grad += a^T . g
      {
        T* gb = b.grad().data();
        const T* pa2 = a.data();
        for (int p = 0; p < k; ++p) {
          for (int i = 0; i < m; ++i) {
            const T av = pa2[i * k + p];
            const T* grow = g + i * n;
            T* gbrow = gb + p * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// out[m x n] = a[m x k] . b[n x k]^T
template <typename T>
Tensor<T> matmul_nt(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      const T* arow = pa + i * k;
      const T* brow = pb + j * k;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * n + j] = acc;
    }
  }
  if (tape) {
    tape->record(out, [a, b, out, m, k, n]() mutable {
      const T* g = out.grad().data();
      // a.grad += g . b
      {
        T* ga = a.grad().data();
        const T* pb2 = b.data();
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const T gv = g[i * n + j];
            const T* brow = pb2 + j * k;
            T* garow = ga + i * k;
            for (int p = 0; p < k; ++p) garow[p] += gv * brow[p];
          }
        }
      }
      // b.grad += g^T . a
      {
        T* gb = b.grad().data();
        const T* pa2 = a.data();
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const T gv = g[i * n + j];
            const T* arow = pa2 + i * k;
            T* gbrow = gb + j * k;
            for (int p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape) {
    tape->record(out, [a, b, out, n]() mutable {
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      T* gb = b.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }
  return out;
}

// elementwise product
template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape) {
    tape->record(out, [a, b, out, n]() mutable {
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      T* gb = b.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += g[i] * b.data()[i];
        gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T factor) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (tape) {
    tape->record(out, [a, out, factor, n]() mutable {
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

namespace detail {
template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}
}  // namespace detail

// x * sigmoid(x)
template <typename T>
Tensor<T> silu(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T x = a.data()[i];
    out.data()[i] = x * detail::sigmoid(x);
  }
  if (tape) {
    tape->record(out, [a, out, n]() mutable {
      const T* g = out.grad().data();
      T* ga = a.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T x = a.data()[i];
        const T s = detail::sigmoid(x);
        ga[i] += g[i] * (s + x * s * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  out.data()[0] = acc;
  if (tape) {
    tape->record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      T* ga = a.grad().data();
      for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

// x / sqrt(mean(x^2) + eps) * weight, along the last axis of a 2-D tensor.
template <typename T>
Tensor<T> rmsnorm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  detail::require_2d(x, "rmsnorm");
  if (weight.ndim() != 1 || weight.dim(0) != x.dim(1)) {
    throw std::invalid_argument("rmsnorm: weight must be 1-D of the feature width");
  }
  if (!(eps > T(0))) throw std::invalid_argument("rmsnorm: eps must be > 0");
  const int rows = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_rms(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const T* xr = x.data() + i * d;
    T ms = T(0);
    for (int j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms = ms / static_cast<T>(d);
    const T r = T(1) / std::sqrt(ms + eps);
    inv_rms[static_cast<std::size_t>(i)] = r;
    T* orow = out.data() + i * d;
    for (int j = 0; j < d; ++j) orow[j] = xr[j] * r * weight.data()[j];
  }
  if (tape) {
    tape->record(out, [x, weight, out, inv_rms, rows, d]() mutable {
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      T* gw = weight.grad().data();
      for (int i = 0; i < rows; ++i) {
        const T* xr = x.data() + i * d;
        const T* grow = g + i * d;
        const T r = inv_rms[static_cast<std::size_t>(i)];
        // dL/dx_j = r*g_j*w_j - (r^3/d) * x_j * sum_i(g_i*w_i*x_i)
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += grow[j] * weight.data()[j] * xr[j];
        const T c = r * r * r * dot / static_cast<T>(d);
        for (int j = 0; j < d; ++j) {
          gx[i * d + j] += r * grow[j] * weight.data()[j] - c * xr[j];
          gw[j] += grow[j] * xr[j] * r;
        }
      }
    });
  }
  return out;
}

// Row-wise softmax restricted to the pattern's admissible entries.
// Disallowed entries are excluded from the reduction and are exactly zero in
// the output.
template <typename T>
Tensor<T> softmax_masked(Tape<T>* tape, const Tensor<T>& scores, const AttentionPattern& pattern) {
  detail::require_2d(scores, "softmax_masked");
  const int q = scores.dim(0), k = scores.dim(1);
  if (pattern.n_queries() != q || pattern.n_keys() != k) {
    throw std::invalid_argument("softmax_masked: pattern dimensions do not match scores");
  }
  Tensor<T> out = Tensor<T>::zeros(scores.shape());
  for (int i = 0; i < q; ++i) {
    const T* srow = scores.data() + i * k;
    T* orow = out.data() + i * k;
    T mx = T(0);
    bool any = false;
    for (int j = 0; j < k; ++j) {
      if (!pattern.allowed(i, j)) continue;
      if (!any || srow[j] > mx) mx = srow[j];
      any = true;
    }
    if (!any) {
      throw std::invalid_argument("softmax_masked: query row " + std::to_string(i) +
                                  " admits no keys");
    }
    T denom = T(0);
    for (int j = 0; j < k; ++j) {
      if (!pattern.allowed(i, j)) continue;
      const T e = std::exp(srow[j] - mx);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j < k; ++j) {
      if (pattern.allowed(i, j)) orow[j] /= denom;
    }
  }
  if (tape) {
    tape->record(out, [scores, out, pattern, q, k]() mutable {
      const T* g = out.grad().data();
      T* gs = scores.grad().data();
      for (int i = 0; i < q; ++i) {
        const T* prow = out.data() + i * k;
        const T* grow = g + i * k;
        T dot = T(0);
        for (int j = 0; j < k; ++j) dot += grow[j] * prow[j];
        for (int j = 0; j < k; ++j) {
          if (pattern.allowed(i, j)) gs[i * k + j] += prow[j] * (grow[j] - dot);
        }
      }
    });
  }
  return out;
}

// Rows of the embedding table selected by token id.
template <typename T>
Tensor<T> embedding_gather(Tape<T>* tape, const Tensor<T>& table, std::span<const int> ids) {
  detail::require_2d(table, "embedding_gather");
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  Tensor<T> out = Tensor<T>::zeros({n, d});
  for (int i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= v) {
      throw std::invalid_argument("embedding_gather: token id " + std::to_string(id) +
                                  " out of range");
    }
    const T* src = table.data() + id * d;
    T* dst = out.data() + i * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  if (tape) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    tape->record(out, [table, out, ids_copy, d]() mutable {
      const T* g = out.grad().data();
      T* gt = table.grad().data();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        const T* grow = g + i * static_cast<std::size_t>(d);
        T* trow = gt + static_cast<std::size_t>(ids_copy[i]) * static_cast<std::size_t>(d);
        for (int j = 0; j < d; ++j) trow[j] += grow[j];
      }
    });
  }
  return out;
}

namespace detail {
template <typename T>
void rope_rotate(const T* src, T* dst, int d, double position, double base, bool invert) {
  for (int p = 0; p < d / 2; ++p) {
    const double freq = std::pow(base, -2.0 * p / d);
    const double angle = position * freq;
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(invert ? -std::sin(angle) : std::sin(angle));
    const T x0 = src[2 * p];
    const T x1 = src[2 * p + 1];
    dst[2 * p] = x0 * c - x1 * s;
    dst[2 * p + 1] = x0 * s + x1 * c;
  }
}
}  // namespace detail

// Rotary position embedding over consecutive pairs of the last axis.
template <typename T>
Tensor<T> rope(Tape<T>* tape, const Tensor<T>& x, std::span<const int> positions, double base) {
  detail::require_2d(x, "rope");
  const int n = x.dim(0), d = x.dim(1);
  if (d % 2 != 0) throw std::invalid_argument("rope: feature width must be even");
  if (static_cast<int>(positions.size()) != n) {
    throw std::invalid_argument("rope: one position per row required");
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < n; ++i) {
    detail::rope_rotate(x.data() + i * d, out.data() + i * d, d,
                        static_cast<double>(positions[static_cast<std::size_t>(i)]), base, false);
  }
  if (tape) {
    std::vector<int> pos_copy(positions.begin(), positions.end());
    tape->record(out, [x, out, pos_copy, base, n, d]() mutable {
      // rotation is orthogonal: pull the gradient back through the inverse rotation
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      std::vector<T> tmp(static_cast<std::size_t>(d));
      for (int i = 0; i < n; ++i) {
        detail::rope_rotate(g + i * d, tmp.data(), d,
                            static_cast<double>(pos_copy[static_cast<std::size_t>(i)]), base,
                            true);
        for (int j = 0; j < d; ++j) gx[i * d + j] += tmp[static_cast<std::size_t>(j)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>* tape, const Tensor<T>& x, int start, int count) {
  detail::require_2d(x, "slice_rows");
  const int n = x.dim(0), d = x.dim(1);
  if (start < 0 || count < 1 || start + count > n) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Tensor<T> out = Tensor<T>::zeros({count, d});
  for (int i = 0; i < count; ++i) {
    const T* src = x.data() + (start + i) * d;
    T* dst = out.data() + i * d;
    for (int j = 0; j < d; ++j) dst[j] = src[j];
  }
  if (tape) {
    tape->record(out, [x, out, start, count, d]() mutable {
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      for (int i = 0; i < count; ++i) {
        for (int j = 0; j < d; ++j) gx[(start + i) * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, int start, int width) {
  detail::require_2d(x, "slice_cols");
  const int n = x.dim(0), d = x.dim(1);
  if (start < 0 || width < 1 || start + width > d) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  Tensor<T> out = Tensor<T>::zeros({n, width});
  for (int i = 0; i < n; ++i) {
    const T* src = x.data() + i * d + start;
    T* dst = out.data() + i * width;
    for (int j = 0; j < width; ++j) dst[j] = src[j];
  }
  if (tape) {
    tape->record(out, [x, out, start, width, d, n]() mutable {
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < width; ++j) gx[i * d + start + j] += g[i * width + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int n = parts.front().dim(0);
  int total = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.dim(0) != n) throw std::invalid_argument("concat_cols: row counts disagree");
    total += p.dim(1);
  }
  Tensor<T> out = Tensor<T>::zeros({n, total});
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < n; ++i) {
      const T* src = p.data() + i * w;
      T* dst = out.data() + i * total + off;
      for (int j = 0; j < w; ++j) dst[j] = src[j];
    }
    off += w;
  }
  if (tape) {
    tape->record(out, [parts, out, n, total]() mutable {
      const T* g = out.grad().data();
      int off2 = 0;
      for (auto& p : parts) {
        const int w = p.dim(1);
        T* gp = p.grad().data();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return out;
}

// Sum over active rows of -log softmax(logits_row)[label]. Inactive rows
// contribute exactly zero to the value and to the gradient. Returns the sum,
// not the mean.
template <typename T>
Tensor<T> cross_entropy_masked(Tape<T>* tape, const Tensor<T>& logits,
                               std::span<const int> labels,
                               std::span<const std::uint8_t> active) {
  detail::require_2d(logits, "cross_entropy_masked");
  const int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(labels.size()) != n || static_cast<int>(active.size()) != n) {
    throw std::invalid_argument("cross_entropy_masked: labels/active must have one entry per row");
  }
  int n_active = 0;
  for (int i = 0; i < n; ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    ++n_active;
    const int lbl = labels[static_cast<std::size_t>(i)];
    if (lbl < 0 || lbl >= v) {
      throw std::invalid_argument("cross_entropy_masked: label out of range at row " +
                                  std::to_string(i));
    }
  }
  if (n_active == 0) {
    throw std::invalid_argument("cross_entropy_masked: no active positions");
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    const T* row = logits.data() + i * v;
    T mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    acc += lse - row[labels[static_cast<std::size_t>(i)]];
  }
  out.data()[0] = acc;
  if (tape) {
    std::vector<int> labels_copy(labels.begin(), labels.end());
    std::vector<std::uint8_t> active_copy(active.begin(), active.end());
    tape->record(out, [logits, out, labels_copy, active_copy, n, v]() mutable {
      const T g = out.grad()[0];
      T* gl = logits.grad().data();
      for (int i = 0; i < n; ++i) {
        if (!active_copy[static_cast<std::size_t>(i)]) continue;
        const T* row = logits.data() + i * v;
        T mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        for (int j = 0; j < v; ++j) {
          const T p = std::exp(row[j] - mx) / denom;
          gl[i * v + j] += g * p;
        }
        gl[i * v + labels_copy[static_cast<std::size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

}  // namespace bdlm::ops
