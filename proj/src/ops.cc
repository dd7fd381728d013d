// Copyright 2026 The KGR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kgr/ops.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kgr/errors.h"

namespace kgr::ops {
namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ContractError(std::string(op) + ": " + detail);
}

std::string shapes(Var a, Var b) { return a.shape().str() + " vs " + b.shape().str(); }

void check_same_graph(const char* op, Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) {
    shape_error(op, "operands belong to different graphs");
  }
}

std::vector<double> copy_values(Var v) {
  auto s = v.values();
  return std::vector<double>(s.begin(), s.end());
}

}  // namespace

// ---------------------------------------------------------------------------
// Kernels

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += arow[p] * brow[p];
        s1 += arow[p + 1] * brow[p + 1];
        s2 += arow[p + 2] * brow[p + 2];
        s3 += arow[p + 3] * brow[p + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  check_same_graph("matmul", a, b);
  if (a.cols() != b.rows()) shape_error("matmul", shapes(a, b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  const int ia = a.id, ib = b.id;
  return a.graph->push(
      OpKind::kMatMul, {m, n}, std::move(out), {a, b},
      [ia, ib, m, k, n](Graph& g, int self) {
        const double* gy = g.grad_of(self).data();
        if (double* ga = g.grad_buffer(ia)) {
          gemm_nt(gy, g.values_of(ib).data(), ga, m, n, k, true);
        }
        if (double* gb = g.grad_buffer(ib)) {
          gemm_tn(g.values_of(ia).data(), gy, gb, m, k, n, true);
        }
      });
}

Var matmul_nt(Var a, Var b) {
  check_same_graph("matmul_nt", a, b);
  if (a.cols() != b.cols()) shape_error("matmul_nt", shapes(a, b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  const int ia = a.id, ib = b.id;
  return a.graph->push(
      OpKind::kMatMulNT, {m, n}, std::move(out), {a, b},
      [ia, ib, m, k, n](Graph& g, int self) {
        const double* gy = g.grad_of(self).data();
        if (double* ga = g.grad_buffer(ia)) {
          gemm_nn(gy, g.values_of(ib).data(), ga, m, n, k, true);
        }
        if (double* gb = g.grad_buffer(ib)) {
          gemm_tn(gy, g.values_of(ia).data(), gb, m, n, k, true);
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  check_same_graph("add", a, b);
  if (!(a.shape() == b.shape())) shape_error("add", shapes(a, b));
  std::vector<double> out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->push(OpKind::kAdd, a.shape(), std::move(out), {a, b},
                       [ia, ib](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         for (int id : {ia, ib}) {
                           if (double* gx = g.grad_buffer(id)) {
                             for (std::size_t i = 0; i < gy.size(); ++i) {
                               gx[i] += gy[i];
                             }
                           }
                         }
                       });
}

Var add_row(Var a, Var row) {
  check_same_graph("add_row", a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    shape_error("add_row", shapes(a, row));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out = copy_values(a);
  auto rv = row.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  }
  const int ia = a.id, ir = row.id;
  return a.graph->push(OpKind::kAddRow, a.shape(), std::move(out), {a, row},
                       [ia, ir, m, n](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             ga[i] += gy[i];
                           }
                         }
                         if (double* gr = g.grad_buffer(ir)) {
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) {
                               gr[j] += gy[i * n + j];
                             }
                           }
                         }
                       });
}

Var sub(Var a, Var b) {
  check_same_graph("sub", a, b);
  if (!(a.shape() == b.shape())) shape_error("sub", shapes(a, b));
  std::vector<double> out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->push(OpKind::kSub, a.shape(), std::move(out), {a, b},
                       [ia, ib](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             ga[i] += gy[i];
                           }
                         }
                         if (double* gb = g.grad_buffer(ib)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             gb[i] -= gy[i];
                           }
                         }
                       });
}

Var mul(Var a, Var b) {
  check_same_graph("mul", a, b);
  if (!(a.shape() == b.shape())) shape_error("mul", shapes(a, b));
  std::vector<double> out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return a.graph->push(OpKind::kMul, a.shape(), std::move(out), {a, b},
                       [ia, ib](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         auto av = g.values_of(ia);
                         auto bv = g.values_of(ib);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             ga[i] += gy[i] * bv[i];
                           }
                         }
                         if (double* gb = g.grad_buffer(ib)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             gb[i] += gy[i] * av[i];
                           }
                         }
                       });
}

Var scale(Var a, double factor) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v *= factor;
  const int ia = a.id;
  return a.graph->push(OpKind::kScale, a.shape(), std::move(out), {a},
                       [ia, factor](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             ga[i] += factor * gy[i];
                           }
                         }
                       });
}

Var add_scalar(Var a, double c) {
  std::vector<double> out = copy_values(a);
  for (double& v : out) v += c;
  const int ia = a.id;
  return a.graph->push(OpKind::kAddScalar, a.shape(), std::move(out), {a},
                       [ia](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             ga[i] += gy[i];
                           }
                         }
                       });
}

Var mask(Var x, const Tensor& m) {
  if (!(m.shape() == x.shape())) {
    shape_error("mask", x.shape().str() + " vs " + m.shape().str());
  }
  std::vector<double> out = copy_values(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  const int ix = x.id;
  return x.graph->push(OpKind::kMask, x.shape(), std::move(out), {x},
                       [ix, m](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* gx = g.grad_buffer(ix)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             gx[i] += gy[i] * m[i];
                           }
                         }
                       });
}

Var max_const(Var x, double c) {
  std::vector<double> out = copy_values(x);
  for (double& v : out) v = std::max(v, c);
  const int ix = x.id;
  return x.graph->push(OpKind::kMaxConst, x.shape(), std::move(out), {x},
                       [ix, c](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         auto xv = g.values_of(ix);
                         if (double* gx = g.grad_buffer(ix)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             if (xv[i] > c) gx[i] += gy[i];
                           }
                         }
                       });
}

Var gelu(Var x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  const int ix = x.id;
  return x.graph->push(
      OpKind::kGelu, x.shape(), std::move(out), {x}, [ix](Graph& g, int self) {
        auto gy = g.grad_of(self);
        auto xv = g.values_of(ix);
        if (double* gx = g.grad_buffer(ix)) {
          for (std::size_t i = 0; i < gy.size(); ++i) {
            const double v = xv[i];
            const double t = std::tanh(kC * (v + kA * v * v * v));
            const double d = 0.5 * (1.0 + t) +
                             0.5 * v * (1.0 - t * t) * kC *
                                 (1.0 + 3.0 * kA * v * v);
            gx[i] += gy[i] * d;
          }
        }
      });
}

Var log(Var x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0.0)) shape_error("log", "non-positive input");
    out[i] = std::log(xv[i]);
  }
  const int ix = x.id;
  return x.graph->push(
      OpKind::kLog, x.shape(), std::move(out), {x}, [ix](Graph& g, int self) {
        auto gy = g.grad_of(self);
        auto xv = g.values_of(ix);
        if (double* gx = g.grad_buffer(ix)) {
          for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / xv[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

Var softmax(Var a, double tau, const RowMask& mask) {
  if (!(tau > 0.0)) shape_error("softmax", "temperature must be > 0");
  const std::size_t m = a.rows(), n = a.cols();
  if (!mask.allowed.empty() && mask.allowed.size() != m * n) {
    shape_error("softmax", "mask size does not match " + a.shape().str());
  }
  auto allowed = [&](std::size_t r, std::size_t c) {
    if (mask.causal && c > r) return false;
    return mask.allowed.empty() || mask.allowed[r * n + c] != 0;
  };
  auto av = a.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (allowed(r, c)) mx = std::max(mx, av[r * n + c] / tau);
    }
    if (!std::isfinite(mx)) shape_error("softmax", "row with no allowed entry");
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!allowed(r, c)) continue;
      const double e = std::exp(av[r * n + c] / tau - mx);
      out[r * n + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  const int ia = a.id;
  return a.graph->push(
      OpKind::kSoftmax, a.shape(), std::move(out), {a},
      [ia, m, n, tau](Graph& g, int self) {
        auto gy = g.grad_of(self);
        auto p = g.values_of(self);
        if (double* ga = g.grad_buffer(ia)) {
          for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += gy[r * n + c] * p[r * n + c];
            for (std::size_t c = 0; c < n; ++c) {
              ga[r * n + c] += p[r * n + c] * (gy[r * n + c] - dot) / tau;
            }
          }
        }
      });
}

Var log_softmax(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, av[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(av[r * n + c] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] - lz;
  }
  const int ia = a.id;
  return a.graph->push(OpKind::kLogSoftmax, a.shape(), std::move(out), {a},
                       [ia, m, n](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         auto y = g.values_of(self);
                         if (double* ga = g.grad_buffer(ia)) {
                           for (std::size_t r = 0; r < m; ++r) {
                             double s = 0.0;
                             for (std::size_t c = 0; c < n; ++c) s += gy[r * n + c];
                             for (std::size_t c = 0; c < n; ++c) {
                               ga[r * n + c] +=
                                   gy[r * n + c] - std::exp(y[r * n + c]) * s;
                             }
                           }
                         }
                       });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_graph("layer_norm", x, gain);
  check_same_graph("layer_norm", x, bias);
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || !(bias.shape() == gain.shape())) {
    shape_error("layer_norm", x.shape().str() + " with gain " +
                                  gain.shape().str() + " bias " +
                                  bias.shape().str());
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xv[r * n + c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
    }
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return x.graph->push(
      OpKind::kLayerNorm, x.shape(), std::move(out), {x, gain, bias},
      [ix, ig, ib, m, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Graph& g, int self) {
        auto gy = g.grad_of(self);
        auto gv = g.values_of(ig);
        if (double* gg = g.grad_buffer(ig)) {
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              gg[c] += gy[r * n + c] * xhat[r * n + c];
            }
          }
        }
        if (double* gb = g.grad_buffer(ib)) {
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) gb[c] += gy[r * n + c];
          }
        }
        if (double* gx = g.grad_buffer(ix)) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < m; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double d = gy[r * n + c] * gv[c];
              mean_d += d;
              mean_dx += d * xhat[r * n + c];
            }
            mean_d *= inv_n;
            mean_dx *= inv_n;
            for (std::size_t c = 0; c < n; ++c) {
              const double d = gy[r * n + c] * gv[c];
              gx[r * n + c] +=
                  inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

Var embedding(Var table, std::span<const int> indices) {
  const std::size_t v = table.rows(), d = table.cols();
  auto tv = table.values();
  std::vector<double> out(indices.size() * d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= v) {
      throw LookupError("embedding: index " + std::to_string(idx) +
                        " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(tv.data() + idx * d, d, out.data() + i * d);
  }
  const int it = table.id;
  std::vector<int> idx(indices.begin(), indices.end());
  return table.graph->push(OpKind::kEmbedding, {indices.size(), d},
                           std::move(out), {table},
                           [it, d, idx = std::move(idx)](Graph& g, int self) {
                             auto gy = g.grad_of(self);
                             if (double* gt = g.grad_buffer(it)) {
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 double* dst = gt + idx[i] * d;
                                 for (std::size_t c = 0; c < d; ++c) {
                                   dst[c] += gy[i * d + c];
                                 }
                               }
                             }
                           });
}

Var mean_rows(Var x, std::span<const std::uint8_t> row_mask) {
  const std::size_t m = x.rows(), n = x.cols();
  if (!row_mask.empty() && row_mask.size() != m) {
    shape_error("mean_rows", "mask length " + std::to_string(row_mask.size()) +
                                 " for " + x.shape().str());
  }
  std::vector<std::uint8_t> keep(m, 1);
  if (!row_mask.empty()) keep.assign(row_mask.begin(), row_mask.end());
  std::size_t count = 0;
  for (auto k : keep) count += k != 0 ? 1 : 0;
  if (count == 0) shape_error("mean_rows", "no valid rows to average");
  auto xv = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    if (keep[r] == 0) continue;
    for (std::size_t c = 0; c < n; ++c) out[c] += xv[r * n + c];
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : out) v *= inv;
  const int ix = x.id;
  return x.graph->push(
      OpKind::kMeanRows, {1, n}, std::move(out), {x},
      [ix, m, n, inv, keep = std::move(keep)](Graph& g, int self) {
        auto gy = g.grad_of(self);
        if (double* gx = g.grad_buffer(ix)) {
          for (std::size_t r = 0; r < m; ++r) {
            if (keep[r] == 0) continue;
            for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += gy[c] * inv;
          }
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", shapes(parts[0], p));
    if (p.graph != parts[0].graph) shape_error("concat_rows", "mixed graphs");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::pair<int, std::size_t>> spans;  // (id, offset)
  for (const Var& p : parts) {
    spans.emplace_back(p.id, out.size());
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return parts[0].graph->push_many(
      OpKind::kConcatRows, {m, n}, std::move(out), parts,
      [spans = std::move(spans)](Graph& g, int self) {
        auto gy = g.grad_of(self);
        for (const auto& [id, off] : spans) {
          if (double* gx = g.grad_buffer(id)) {
            const std::size_t len = g.shape_of(id).size();
            for (std::size_t i = 0; i < len; ++i) gx[i] += gy[off + i];
          }
        }
      });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) shape_error("concat_cols", shapes(parts[0], p));
    if (p.graph != parts[0].graph) shape_error("concat_cols", "mixed graphs");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::vector<std::pair<int, std::size_t>> spans;  // (id, column offset)
  std::size_t col = 0;
  for (const Var& p : parts) {
    auto v = p.values();
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(v.data() + r * w, w, out.data() + r * n + col);
    }
    spans.emplace_back(p.id, col);
    col += w;
  }
  return parts[0].graph->push_many(
      OpKind::kConcatCols, {m, n}, std::move(out), parts,
      [spans = std::move(spans), m, n](Graph& g, int self) {
        auto gy = g.grad_of(self);
        for (const auto& [id, off] : spans) {
          if (double* gx = g.grad_buffer(id)) {
            const std::size_t w = g.shape_of(id).cols;
            for (std::size_t r = 0; r < m; ++r) {
              for (std::size_t c = 0; c < w; ++c) {
                gx[r * w + c] += gy[r * n + off + c];
              }
            }
          }
        }
      });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows()) {
    shape_error("slice_rows", "range [" + std::to_string(begin) + ", " +
                                  std::to_string(end) + ") of " +
                                  x.shape().str());
  }
  const std::size_t n = x.cols();
  auto xv = x.values();
  std::vector<double> out(xv.begin() + begin * n, xv.begin() + end * n);
  const int ix = x.id;
  return x.graph->push(OpKind::kSliceRows, {end - begin, n}, std::move(out),
                       {x}, [ix, begin, n](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* gx = g.grad_buffer(ix)) {
                           double* dst = gx + begin * n;
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             dst[i] += gy[i];
                           }
                         }
                       });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols()) {
    shape_error("slice_cols", "range [" + std::to_string(begin) + ", " +
                                  std::to_string(end) + ") of " +
                                  x.shape().str());
  }
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  auto xv = x.values();
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xv.data() + r * n + begin, w, out.data() + r * w);
  }
  const int ix = x.id;
  return x.graph->push(OpKind::kSliceCols, {m, w}, std::move(out), {x},
                       [ix, begin, m, n, w](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* gx = g.grad_buffer(ix)) {
                           for (std::size_t r = 0; r < m; ++r) {
                             for (std::size_t c = 0; c < w; ++c) {
                               gx[r * n + begin + c] += gy[r * w + c];
                             }
                           }
                         }
                       });
}

Var reshape(Var x, Shape shape) {
  if (shape.size() != x.shape().size()) {
    shape_error("reshape", x.shape().str() + " to " + shape.str());
  }
  const int ix = x.id;
  return x.graph->push(OpKind::kReshape, shape, copy_values(x), {x},
                       [ix](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* gx = g.grad_buffer(ix)) {
                           for (std::size_t i = 0; i < gy.size(); ++i) {
                             gx[i] += gy[i];
                           }
                         }
                       });
}

// ---------------------------------------------------------------------------
// Losses and reductions

Var nll(Var logits, std::span<const int> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    shape_error("nll", std::to_string(targets.size()) + " targets for " +
                           logits.shape().str());
  }
  auto lv = logits.values();
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= n) {
      shape_error("nll", "target " + std::to_string(t) + " outside " +
                             std::to_string(n) + " classes");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, lv[r * n + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      probs[r * n + c] = std::exp(lv[r * n + c] - mx);
      z += probs[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] /= z;
    total -= lv[r * n + t] - mx - std::log(z);
  }
  const int il = logits.id;
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.graph->push(
      OpKind::kNll, {1, 1}, {total}, {logits},
      [il, n, tg = std::move(tg), probs = std::move(probs)](Graph& g, int self) {
        const double gy = g.grad_of(self)[0];
        if (double* gl = g.grad_buffer(il)) {
          for (std::size_t r = 0; r < tg.size(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              gl[r * n + c] += gy * probs[r * n + c];
            }
            gl[r * n + tg[r]] -= gy;
          }
        }
      });
}

Var gather(Var x, std::span<const int> cols) {
  const std::size_t m = x.rows(), n = x.cols();
  if (cols.size() != m) {
    shape_error("gather", std::to_string(cols.size()) + " indices for " +
                              x.shape().str());
  }
  auto xv = x.values();
  std::vector<double> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= n) {
      shape_error("gather", "index " + std::to_string(cols[r]) + " outside " +
                                std::to_string(n) + " columns");
    }
    out[r] = xv[r * n + cols[r]];
  }
  const int ix = x.id;
  std::vector<int> idx(cols.begin(), cols.end());
  return x.graph->push(OpKind::kGather, {m, 1}, std::move(out), {x},
                       [ix, n, idx = std::move(idx)](Graph& g, int self) {
                         auto gy = g.grad_of(self);
                         if (double* gx = g.grad_buffer(ix)) {
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             gx[r * n + idx[r]] += gy[r];
                           }
                         }
                       });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const int ix = x.id;
  return x.graph->push(OpKind::kSum, {1, 1}, {s}, {x},
                       [ix](Graph& g, int self) {
                         const double gy = g.grad_of(self)[0];
                         if (double* gx = g.grad_buffer(ix)) {
                           const std::size_t len = g.shape_of(ix).size();
                           for (std::size_t i = 0; i < len; ++i) gx[i] += gy;
                         }
                       });
}

Var mean(Var x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.shape().size()));
}

Var neg_sq_dist(Var u, Var rows) {
  check_same_graph("neg_sq_dist", u, rows);
  if (u.rows() != 1 || u.cols() != rows.cols()) {
    shape_error("neg_sq_dist", shapes(u, rows));
  }
  const std::size_t n = rows.rows(), d = rows.cols();
  auto uv = u.values();
  auto rv = rows.values();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = uv[c] - rv[j * d + c];
      s += diff * diff;
    }
    out[j] = -s;
  }
  const int iu = u.id, ir = rows.id;
  return u.graph->push(
      OpKind::kNegSqDist, {1, n}, std::move(out), {u, rows},
      [iu, ir, n, d](Graph& g, int self) {
        auto gy = g.grad_of(self);
        auto uv = g.values_of(iu);
        auto rv = g.values_of(ir);
        double* gu = g.grad_buffer(iu);
        double* gr = g.grad_buffer(ir);
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < d; ++c) {
            const double diff = uv[c] - rv[j * d + c];
            if (gu != nullptr) gu[c] -= 2.0 * gy[j] * diff;
            if (gr != nullptr) gr[j * d + c] += 2.0 * gy[j] * diff;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Gradient routing

Var stop_gradient(Var x) {
  Graph& g = *x.graph;
  Tensor v = g.frozen(x.value());
  return g.constant(std::move(v));
}

Var straight_through(const Tensor& hard, Var soft) {
  if (!(hard.shape() == soft.shape())) {
    shape_error("straight_through", hard.shape().str() + " vs " +
                                        soft.shape().str());
  }
  Graph& g = *soft.graph;
  // The tape slot keeps record and replay passes aligned.
  const Tensor sg = g.frozen(soft.value());
  std::vector<double> out = hard.values();
  if (g.replaying()) {
    auto sv = soft.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] - sg[i] + sv[i];
  }
  const int is = soft.id;
  return g.push(OpKind::kStraightThrough, hard.shape(), std::move(out), {soft},
                [is](Graph& gr, int self) {
                  auto gy = gr.grad_of(self);
                  if (double* gs = gr.grad_buffer(is)) {
                    for (std::size_t i = 0; i < gy.size(); ++i) gs[i] += gy[i];
                  }
                });
}

}  // namespace kgr::ops
