#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flop/graph.hpp"

namespace flop {

// Differentiable operations on the tape. Binary elementwise ops accept equal
// shapes or a scalar on either side; row-wise broadcasting is spelled out
// explicitly (add_row, mul_row) because those are the only cases the models use.

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var sigmoid(Var a);
Var tanh(Var a);
Var log(Var a);
Var square(Var a);
Var abs(Var a);
/// Gradient is 1 strictly inside (lo, hi) and 0 elsewhere, boundaries included.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

/// a[m x n] + b[n] on every row.
Var add_row(Var a, Var b);
/// a[m x n] scaled column-wise by v[n].
Var mul_row(Var a, Var v);

Var gather(Var v, std::span<const std::size_t> index);       // vector entries
Var gather_rows(Var a, std::span<const std::size_t> index);  // matrix rows
Var gather_cols(Var a, std::span<const std::size_t> index);  // matrix columns
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
/// Builds a [rows x cols] matrix whose row positions[p][i] is parts[p] row i.
/// Rows not covered by any part are zero.
Var assemble_rows(std::span<const Var> parts,
                  const std::vector<std::vector<std::size_t>>& positions, std::size_t rows,
                  std::size_t cols);

/// Mean negative log-likelihood (nats) of integer targets under softmax(logits).
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

}  // namespace flop
