// Copyright 2026 The costa-workbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable operations over Graph nodes. Every op evaluates eagerly and
// registers a closure that accumulates input gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "costa/numerics/graph.hpp"

namespace costa {

namespace detail {

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename T>
void require_matrix(const Array<T>& a, const char* op) {
  require(a.rank() == 2, op, "expected a matrix, got shape " + shape_string(a.shape()));
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x k] += D[m x n] * B[k x n]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* d, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* di = d + i * n;
    T* ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += di[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * D[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* d, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* di = d + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * di[j];
    }
  }
}

template <typename T>
void softmax_row(const T* x, T* y, std::size_t n) {
  T mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  T z{0};
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - mx);
    z += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= z;
}

template <typename T>
T logsumexp_row(const T* x, std::size_t n) {
  T mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  if (mx == -std::numeric_limits<T>::infinity()) return mx;
  T z{0};
  for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
  return mx + std::log(z);
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  detail::require(bv.rows() == k, "matmul",
                  "inner extents differ: " + shape_string(av.shape()) + " * " +
                      shape_string(bv.shape()));
  Array<T> out = Array<T>::matrix(m, n);
  detail::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  return g.emit(std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& g, const Array<T>& dy) {
    if (g.requires_grad(a)) detail::gemm_nt(m, n, k, dy.data(), b.value().data(), g.grad(a).data());
    if (g.requires_grad(b)) detail::gemm_tn(m, n, k, a.value().data(), dy.data(), g.grad(b).data());
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  detail::require(av.shape() == bv.shape(), "add",
                  "shapes differ: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Array<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph<T>& g, const Array<T>& dy) {
    for (Var<T> v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      Array<T>& gv = g.grad(v);
      for (std::size_t i = 0; i < dy.size(); ++i) gv[i] += dy[i];
    }
  });
}

/// Adds a 1 x n row to every row of an m x n matrix.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const Array<T>& av = a.value();
  const Array<T>& rv = row.value();
  detail::require_matrix(av, "add_row");
  detail::require(rv.size() == av.cols(), "add_row",
                  "row " + shape_string(rv.shape()) + " does not match " + shape_string(av.shape()));
  Array<T> out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += rv[j];
  return a.graph->emit(std::move(out), {a, row}, [a, row, m, n](Graph<T>& g, const Array<T>& dy) {
    if (g.requires_grad(a)) {
      Array<T>& ga = g.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
    }
    if (g.requires_grad(row)) {
      Array<T>& gr = g.grad(row);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += dy(i, j);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Array<T> out = a.value();
  for (T& x : out.values()) x *= s;
  return a.graph->emit(std::move(out), {a}, [a, s](Graph<T>& g, const Array<T>& dy) {
    Array<T>& ga = g.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += s * dy[i];
  });
}

/// Elementwise product of equally shaped arrays.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  detail::require(av.shape() == bv.shape(), "mul",
                  "shapes differ: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Array<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph->emit(std::move(out), {a, b}, [a, b](Graph<T>& g, const Array<T>& dy) {
    if (g.requires_grad(a)) {
      Array<T>& ga = g.grad(a);
      const Array<T>& bv = b.value();
      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      Array<T>& gb = g.grad(b);
      const Array<T>& av = a.value();
      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Array<T> out = a.value();
  for (T& x : out.values()) x = x > T{0} ? x : T{0};
  return a.graph->emit(std::move(out), {a}, [a](Graph<T>& g, const Array<T>& dy) {
    Array<T>& ga = g.grad(a);
    const Array<T>& av = a.value();
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (av[i] > T{0}) ga[i] += dy[i];
  });
}

/// Sum of every element, as a 1 x 1 array.
template <typename T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (T x : a.value().values()) s += x;
  return a.graph->emit(Array<T>::scalar(s), {a}, [a](Graph<T>& g, const Array<T>& dy) {
    Array<T>& ga = g.grad(a);
    for (T& x : ga.values()) x += dy[0];
  });
}

/// Rows of `table` selected by `ids`.
template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  const Array<T>& tv = table.value();
  detail::require_matrix(tv, "embedding");
  detail::require(!ids.empty(), "embedding", "empty id list");
  const std::size_t d = tv.cols();
  Array<T> out = Array<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.rows(), "embedding",
                    "id " + std::to_string(ids[i]) + " outside table " + shape_string(tv.shape()));
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  return table.graph->emit(std::move(out), {table}, [table, ids, d](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gt = g.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt(ids[i], j) += dy(i, j);
  });
}

/// Output length of a valid (unpadded) strided convolution.
inline std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (length < kernel) return 0;
  return (length - kernel) / stride + 1;
}

/// 1-D convolution over the row (time) axis.
///
/// x is L x C, weight is (kernel*C) x O with taps stacked row-wise, bias is
/// 1 x O. Output is ceil((L - kernel + 1) / stride) x O.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t kernel, std::size_t stride) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = weight.value();
  detail::require_matrix(xv, "conv1d");
  detail::require_matrix(wv, "conv1d");
  detail::require(kernel >= 1 && stride >= 1, "conv1d", "kernel and stride must be positive");
  const std::size_t len = xv.rows(), c = xv.cols(), o = wv.cols();
  detail::require(wv.rows() == kernel * c, "conv1d",
                  "weight " + shape_string(wv.shape()) + " does not match kernel " +
                      std::to_string(kernel) + " over " + std::to_string(c) + " channels");
  detail::require(bias.value().size() == o, "conv1d", "bias does not match output channels");
  detail::require(len >= kernel, "conv1d",
                  "input length " + std::to_string(len) + " shorter than kernel " + std::to_string(kernel));
  const std::size_t out_len = conv_output_length(len, kernel, stride);
  const std::size_t patch = kernel * c;
  // Taps of one output step are consecutive rows, hence contiguous memory.
  Array<T> out = Array<T>::matrix(out_len, o);
  for (std::size_t t = 0; t < out_len; ++t) {
    detail::gemm_nn(1, o, patch, xv.data() + t * stride * c, wv.data(), out.data() + t * o);
    for (std::size_t j = 0; j < o; ++j) out(t, j) += bias.value()[j];
  }
  return x.graph->emit(std::move(out), {x, weight, bias},
                       [x, weight, bias, out_len, patch, o, stride, c](Graph<T>& g, const Array<T>& dy) {
    const Array<T>& xv = x.value();
    if (g.requires_grad(x)) {
      Array<T>& gx = g.grad(x);
      for (std::size_t t = 0; t < out_len; ++t)
        detail::gemm_nt(1, o, patch, dy.data() + t * o, weight.value().data(),
                        gx.data() + t * stride * c);
    }
    if (g.requires_grad(weight)) {
      Array<T>& gw = g.grad(weight);
      for (std::size_t t = 0; t < out_len; ++t)
        detail::gemm_tn(1, o, patch, xv.data() + t * stride * c, dy.data() + t * o, gw.data());
    }
    if (g.requires_grad(bias)) {
      Array<T>& gb = g.grad(bias);
      for (std::size_t t = 0; t < out_len; ++t)
        for (std::size_t j = 0; j < o; ++j) gb[j] += dy(t, j);
    }
  });
}

/// Inclusive 0-based row range.
struct RowSpan {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t width() const { return last - first + 1; }
};

/// Row j of the result is the mean of rows spans[j].first..spans[j].last.
template <typename T>
Var<T> segment_mean(Var<T> x, const std::vector<RowSpan>& spans) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "segment_mean");
  detail::require(!spans.empty(), "segment_mean", "no spans");
  const std::size_t d = xv.cols();
  Array<T> out = Array<T>::matrix(spans.size(), d);
  for (std::size_t j = 0; j < spans.size(); ++j) {
    const RowSpan s = spans[j];
    if (s.last < s.first) throw InvalidArgument("segment_mean: empty span");
    detail::require(s.last < xv.rows(), "segment_mean",
                    "span end " + std::to_string(s.last + 1) + " beyond " + std::to_string(xv.rows()) + " rows");
    const T inv = T{1} / static_cast<T>(s.width());
    for (std::size_t r = s.first; r <= s.last; ++r)
      for (std::size_t k = 0; k < d; ++k) out(j, k) += xv(r, k) * inv;
  }
  return x.graph->emit(std::move(out), {x}, [x, spans, d](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    for (std::size_t j = 0; j < spans.size(); ++j) {
      const T inv = T{1} / static_cast<T>(spans[j].width());
      for (std::size_t r = spans[j].first; r <= spans[j].last; ++r)
        for (std::size_t k = 0; k < d; ++k) gx(r, k) += dy(j, k) * inv;
    }
  });
}

/// Mean over one inclusive row span, as a 1 x d row.
template <typename T>
Var<T> mean_rows(Var<T> x, RowSpan span) {
  return segment_mean(x, std::vector<RowSpan>{span});
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "layer_norm");
  const std::size_t m = xv.rows(), n = xv.cols();
  detail::require(gamma.value().size() == n && beta.value().size() == n, "layer_norm",
                  "gain/bias do not match width " + std::to_string(n));
  auto xhat = std::make_shared<Array<T>>(Array<T>::matrix(m, n));
  auto inv_std = std::make_shared<std::vector<T>>(m);
  Array<T> out = Array<T>::matrix(m, n);
  const Array<T>& gv = gamma.value();
  const Array<T>& bv = beta.value();
  for (std::size_t i = 0; i < m; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<T>(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xv(i, j) - mean) * is;
      (*xhat)(i, j) = h;
      out(i, j) = gv[j] * h + bv[j];
    }
  }
  return x.graph->emit(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_std, m, n](Graph<T>& g, const Array<T>& dy) {
    const Array<T>& gv = gamma.value();
    if (g.requires_grad(x)) {
      Array<T>& gx = g.grad(x);
      for (std::size_t i = 0; i < m; ++i) {
        T sum_d{0}, sum_dh{0};
        for (std::size_t j = 0; j < n; ++j) {
          const T dh = dy(i, j) * gv[j];
          sum_d += dh;
          sum_dh += dh * (*xhat)(i, j);
        }
        const T is = (*inv_std)[i] / static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j) {
          const T dh = dy(i, j) * gv[j];
          gx(i, j) += is * (static_cast<T>(n) * dh - sum_d - (*xhat)(i, j) * sum_dh);
        }
      }
    }
    if (g.requires_grad(gamma)) {
      Array<T>& gg = g.grad(gamma);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += dy(i, j) * (*xhat)(i, j);
    }
    if (g.requires_grad(beta)) {
      Array<T>& gb = g.grad(beta);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy(i, j);
    }
  });
}

/// Row-wise softmax.
template <typename T>
Var<T> softmax(Var<T> x) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "softmax");
  const std::size_t m = xv.rows(), n = xv.cols();
  Array<T> out = Array<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) detail::softmax_row(xv.data() + i * n, out.data() + i * n, n);
  auto y = std::make_shared<Array<T>>(out);
  return x.graph->emit(std::move(out), {x}, [x, y, m, n](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += dy(i, j) * (*y)(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += (*y)(i, j) * (dy(i, j) - dot);
    }
  });
}

/// Row-wise log-softmax, overflow safe.
template <typename T>
Var<T> log_softmax(Var<T> x) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "log_softmax");
  const std::size_t m = xv.rows(), n = xv.cols();
  Array<T> out = Array<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const T lse = detail::logsumexp_row(xv.data() + i * n, n);
    for (std::size_t j = 0; j < n; ++j) out(i, j) = xv(i, j) - lse;
  }
  auto y = std::make_shared<Array<T>>(out);
  return x.graph->emit(std::move(out), {x}, [x, y, m, n](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < m; ++i) {
      T total{0};
      for (std::size_t j = 0; j < n; ++j) total += dy(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += dy(i, j) - std::exp((*y)(i, j)) * total;
    }
  });
}

/// Row-wise log-sum-exp; m x n -> m x 1.
template <typename T>
Var<T> logsumexp(Var<T> x) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "logsumexp");
  const std::size_t m = xv.rows(), n = xv.cols();
  Array<T> out = Array<T>::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) out[i] = detail::logsumexp_row(xv.data() + i * n, n);
  auto lse = std::make_shared<Array<T>>(out);
  return x.graph->emit(std::move(out), {x}, [x, lse, m, n](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    const Array<T>& xv = x.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += dy[i] * std::exp(xv(i, j) - (*lse)[i]);
  });
}

/// Scaled dot-product attention with `heads` equal column groups.
///
/// q is L x d, k and v are S x d. With `causal`, query i only attends to keys
/// 0..i (requires L == S).
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, bool causal) {
  const Array<T>& qv = q.value();
  const Array<T>& kv = k.value();
  const Array<T>& vv = v.value();
  detail::require_matrix(qv, "attention");
  const std::size_t len = qv.rows(), src = kv.rows(), d = qv.cols();
  detail::require(kv.cols() == d && vv.cols() == d && vv.rows() == src, "attention",
                  "q " + shape_string(qv.shape()) + ", k " + shape_string(kv.shape()) + ", v " +
                      shape_string(vv.shape()));
  detail::require(heads >= 1 && d % heads == 0, "attention",
                  std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  detail::require(!causal || len == src, "attention", "causal mask needs square scores");
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  // probs[h] is len x src
  auto probs = std::make_shared<std::vector<T>>(heads * len * src, T{0});
  Array<T> out = Array<T>::matrix(len, d);
  std::vector<T> scores(src);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t visible = causal ? i + 1 : src;
      for (std::size_t j = 0; j < visible; ++j) {
        T s{0};
        for (std::size_t c = 0; c < dh; ++c) s += qv(i, off + c) * kv(j, off + c);
        scores[j] = s * inv_sqrt;
      }
      T* p = probs->data() + (h * len + i) * src;
      detail::softmax_row(scores.data(), p, visible);
      for (std::size_t j = 0; j < visible; ++j) {
        const T pj = p[j];
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += pj * vv(j, off + c);
      }
    }
  }
  return q.graph->emit(std::move(out), {q, k, v},
                       [q, k, v, probs, heads, len, src, dh, inv_sqrt, causal](Graph<T>& g, const Array<T>& dy) {
    const Array<T>& qv = q.value();
    const Array<T>& kv = k.value();
    const Array<T>& vv = v.value();
    const bool need_q = g.requires_grad(q), need_k = g.requires_grad(k), need_v = g.requires_grad(v);
    Array<T>* gq = need_q ? &g.grad(q) : nullptr;
    Array<T>* gk = need_k ? &g.grad(k) : nullptr;
    Array<T>* gv = need_v ? &g.grad(v) : nullptr;
    std::vector<T> dp(src);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t visible = causal ? i + 1 : src;
        const T* p = probs->data() + (h * len + i) * src;
        T dot{0};
        for (std::size_t j = 0; j < visible; ++j) {
          T s{0};
          for (std::size_t c = 0; c < dh; ++c) s += dy(i, off + c) * vv(j, off + c);
          dp[j] = s;
          dot += s * p[j];
          if (gv)
            for (std::size_t c = 0; c < dh; ++c) (*gv)(j, off + c) += p[j] * dy(i, off + c);
        }
        for (std::size_t j = 0; j < visible; ++j) {
          const T ds = p[j] * (dp[j] - dot) * inv_sqrt;
          if (gq)
            for (std::size_t c = 0; c < dh; ++c) (*gq)(i, off + c) += ds * kv(j, off + c);
          if (gk)
            for (std::size_t c = 0; c < dh; ++c) (*gk)(j, off + c) += ds * qv(i, off + c);
        }
      }
    }
  });
}

/// Inverted dropout. Identity unless the graph is in training mode.
template <typename T>
Var<T> dropout(Var<T> x, T rate) {
  Graph<T>& g = *x.graph;
  if (!g.training() || rate <= T{0}) return x;
  if (rate >= T{1}) throw InvalidArgument("dropout rate must be below 1");
  const Array<T>& xv = x.value();
  auto mask = std::make_shared<std::vector<T>>(xv.size());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T scale_kept = T{1} / (T{1} - rate);
  Array<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(g.rng()) ? scale_kept : T{0};
    out[i] *= (*mask)[i];
  }
  return g.emit(std::move(out), {x}, [x, mask](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i] * (*mask)[i];
  });
}

enum class Reduction { kSum, kMean };

/// Cross-entropy of row-wise softmax(logits) against integer targets.
/// Rows whose target equals `ignore_index` contribute nothing; kMean divides
/// by the number of counted rows.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, int ignore_index = -1,
                     Reduction reduction = Reduction::kMean) {
  const Array<T>& lv = logits.value();
  detail::require_matrix(lv, "cross_entropy");
  const std::size_t m = lv.rows(), n = lv.cols();
  detail::require(targets.size() == m, "cross_entropy",
                  std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  auto probs = std::make_shared<Array<T>>(Array<T>::matrix(m, n));
  T total{0};
  std::size_t counted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] == ignore_index) continue;
    detail::require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < n, "cross_entropy",
                    "target " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(n));
    const T lse = detail::logsumexp_row(lv.data() + i * n, n);
    total += lse - lv(i, targets[i]);
    for (std::size_t j = 0; j < n; ++j) (*probs)(i, j) = std::exp(lv(i, j) - lse);
    ++counted;
  }
  const T norm = (reduction == Reduction::kMean && counted > 0) ? T{1} / static_cast<T>(counted) : T{1};
  return logits.graph->emit(Array<T>::scalar(total * norm), {logits},
                            [logits, targets, probs, ignore_index, norm, m, n](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gl = g.grad(logits);
    const T s = dy[0] * norm;
    for (std::size_t i = 0; i < m; ++i) {
      if (targets[i] == ignore_index) continue;
      for (std::size_t j = 0; j < n; ++j) gl(i, j) += s * (*probs)(i, j);
      gl(i, targets[i]) -= s;
    }
  });
}

/// Stacks matrices with equal column counts.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Var<T>& p : parts) {
    detail::require(p.cols() == n, "concat_rows",
                    "column mismatch: " + shape_string(p.shape()) + " vs width " + std::to_string(n));
    m += p.rows();
  }
  Array<T> out = Array<T>::matrix(m, n);
  std::size_t at = 0;
  for (const Var<T>& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + at);
    at += p.value().size();
  }
  return parts.front().graph->emit(std::move(out), parts, [parts](Graph<T>& g, const Array<T>& dy) {
    std::size_t at = 0;
    for (const Var<T>& p : parts) {
      const std::size_t sz = p.value().size();
      if (g.requires_grad(p)) {
        Array<T>& gp = g.grad(p);
        for (std::size_t i = 0; i < sz; ++i) gp[i] += dy[at + i];
      }
      at += sz;
    }
  });
}

/// [a | b] for matrices with equal row counts.
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  detail::require(av.rows() == bv.rows(), "concat_cols",
                  "row mismatch: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const std::size_t m = av.rows(), na = av.cols(), nb = bv.cols();
  Array<T> out = Array<T>::matrix(m, na + nb);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.data() + i * na, na, out.data() + i * (na + nb));
    std::copy_n(bv.data() + i * nb, nb, out.data() + i * (na + nb) + na);
  }
  return a.graph->emit(std::move(out), {a, b}, [a, b, m, na, nb](Graph<T>& g, const Array<T>& dy) {
    if (g.requires_grad(a)) {
      Array<T>& ga = g.grad(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < na; ++j) ga(i, j) += dy(i, j);
    }
    if (g.requires_grad(b)) {
      Array<T>& gb = g.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < nb; ++j) gb(i, j) += dy(i, na + j);
    }
  });
}

/// Row i of the result is row idx[i] of x. Indices may repeat.
template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& idx) {
  const Array<T>& xv = x.value();
  detail::require_matrix(xv, "gather_rows");
  detail::require(!idx.empty(), "gather_rows", "empty index list");
  const std::size_t n = xv.cols();
  Array<T> out = Array<T>::matrix(idx.size(), n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::require(idx[i] < xv.rows(), "gather_rows",
                    "row " + std::to_string(idx[i]) + " outside " + shape_string(xv.shape()));
    std::copy_n(xv.data() + idx[i] * n, n, out.data() + i * n);
  }
  return x.graph->emit(std::move(out), {x}, [x, idx, n](Graph<T>& g, const Array<T>& dy) {
    Array<T>& gx = g.grad(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx(idx[i], j) += dy(i, j);
  });
}

}  // namespace costa
