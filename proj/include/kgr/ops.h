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

// Differentiable primitives. Every op checks shapes (ContractError naming the
// op and shapes) and output finiteness (NumericError).

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kgr/graph.h"

namespace kgr::ops {

// Attention-style mask for softmax rows: allowed[r * cols + c] != 0.
struct RowMask {
  bool causal = false;
  std::vector<std::uint8_t> allowed;  // empty = everything allowed

  bool empty() const { return !causal && allowed.empty(); }
};

Var matmul(Var a, Var b);     // (m x k)(k x n)
Var matmul_nt(Var a, Var b);  // (m x k)(n x k)^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
// Row softmax of a / tau; masked entries get probability exactly 0.
Var softmax(Var a, double tau = 1.0, const RowMask& mask = {});
Var log_softmax(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, std::span<const int> indices);
// Mean over rows whose mask entry is non-zero (all rows for an empty mask).
Var mean_rows(Var x, std::span<const std::uint8_t> row_mask = {});
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);
// Sum over rows of -log softmax(logits_r)[targets_r]; a 1 x 1 result.
Var nll(Var logits, std::span<const int> targets);
// out_r = x[r, cols_r]; an m x 1 result.
Var gather(Var x, std::span<const int> cols);
// Elementwise max(x, c). The gradient flows only where x > c.
Var max_const(Var x, double c);
Var stop_gradient(Var x);
// Forward value is |hard|; the backward pass routes the incoming gradient to
// |soft| unchanged. Equivalent to hard - sg[soft] + soft, but bit-exact.
Var straight_through(const Tensor& hard, Var soft);
Var gelu(Var x);
// Natural log; every input entry must be positive.
Var log(Var x);
Var sum(Var x);
Var mean(Var x);
// out_j = -||u - rows_j||^2 for a 1 x d query u against an n x d matrix.
Var neg_sq_dist(Var u, Var rows);
// Elementwise product with a constant mask (dropout, padding).
Var mask(Var x, const Tensor& m);

// Raw kernels with a fixed summation order; row r of the result depends only
// on row r of |a|.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

}  // namespace kgr::ops
