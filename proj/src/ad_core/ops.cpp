#include "flop/ops.hpp"

#include <algorithm>
#include <cmath>

#include "flop/errors.hpp"
#include "flop/kernels.hpp"

namespace flop {
namespace {

Graph& same_graph(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw GraphError("operation on an unbound Var");
  if (&a.graph() != &b.graph()) throw GraphError("operands belong to different graphs");
  return a.graph();
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw GraphError("operation on an unbound Var");
  return a.graph();
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.size() == 1 && a.rank() <= 1) return Broadcast::left_scalar;
  if (b.size() == 1 && b.rank() <= 1) return Broadcast::right_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class D>
Var unary(const char* op, Var a, F f, D df) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return g.record(op, std::move(y), {ia}, [ia, df](Graph& gr, std::size_t self) {
    const Tensor& x = gr.value(ia);
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_of(ia);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(A.shape()) + " * " +
                         shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C(Shape{m, n});
  kernels::gemm_nn(m, n, k, A.storage().data(), B.storage().data(), C.storage().data(), false);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record("matmul", std::move(C), {ia, ib}, [ia, ib, m, n, k](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.grad(self);
    if (gr.needs_grad(ia)) {
      // dA = dC * B^T
      Tensor& dA = gr.grad_of(ia);
      kernels::gemm_nt(m, k, n, dC.storage().data(), gr.value(ib).storage().data(),
                       dA.storage().data(), true, gr.scratch());
    }
    if (gr.needs_grad(ib)) {
      // dB = A^T * dC
      Tensor& dB = gr.grad_of(ib);
      kernels::gemm_tn(k, n, m, gr.value(ia).storage().data(), dC.storage().data(),
                       dB.storage().data(), true);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "matmul_nt");
  require_matrix(B, "matmul_nt");
  if (A.cols() != B.cols())
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_string(A.shape()) +
                         " * " + shape_string(B.shape()) + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor C(Shape{m, n});
  kernels::gemm_nt(m, n, k, A.storage().data(), B.storage().data(), C.storage().data(), false,
                   g.scratch());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record("matmul_nt", std::move(C), {ia, ib},
                  [ia, ib, m, n, k](Graph& gr, std::size_t self) {
                    const Tensor& dC = gr.grad(self);
                    if (gr.needs_grad(ia)) {
                      // dA = dC * B
                      Tensor& dA = gr.grad_of(ia);
                      kernels::gemm_nn(m, k, n, dC.storage().data(),
                                       gr.value(ib).storage().data(), dA.storage().data(), true);
                    }
                    if (gr.needs_grad(ib)) {
                      // dB = dC^T * A
                      Tensor& dB = gr.grad_of(ib);
                      kernels::gemm_tn(n, k, m, dC.storage().data(),
                                       gr.value(ia).storage().data(), dB.storage().data(), true);
                    }
                  });
}

namespace {

template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Broadcast kind = broadcast_kind(A, B, op);
  const Shape& out_shape = kind == Broadcast::left_scalar ? B.shape() : A.shape();
  Tensor C(out_shape);
  for (std::size_t i = 0; i < C.size(); ++i) {
    const double x = kind == Broadcast::left_scalar ? A[0] : A[i];
    const double y = kind == Broadcast::right_scalar ? B[0] : B[i];
    C[i] = f(x, y);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(op, std::move(C), {ia, ib}, [ia, ib, kind, da, db](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.grad(self);
    const Tensor& A = gr.value(ia);
    const Tensor& B = gr.value(ib);
    const bool need_a = gr.needs_grad(ia), need_b = gr.needs_grad(ib);
    Tensor* dA = need_a ? &gr.grad_of(ia) : nullptr;
    Tensor* dB = need_b ? &gr.grad_of(ib) : nullptr;
    for (std::size_t i = 0; i < dC.size(); ++i) {
      const std::size_t ai = kind == Broadcast::left_scalar ? 0 : i;
      const std::size_t bi = kind == Broadcast::right_scalar ? 0 : i;
      if (dA) (*dA)[ai] += dC[i] * da(A[ai], B[bi]);
      if (dB) (*dB)[bi] += dC[i] * db(A[ai], B[bi]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return g.record("sum", Tensor::scalar(total), {ia}, [ia](Graph& gr, std::size_t self) {
    const double dy = gr.grad(self)[0];
    Tensor& dx = gr.grad_of(ia);
    for (double& v : dx.data()) v += dy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var add_row(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix(A, "add_row");
  if (B.rank() != 1 || B.size() != A.cols())
    throw DimensionError("add_row: row vector " + shape_string(B.shape()) + " does not fit " +
                         shape_string(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = A;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] += B[j];
  const std::size_t ia = a.id(), ib = b.id();
  return g.record("add_row", std::move(C), {ia, ib}, [ia, ib, m, n](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.grad(self);
    if (gr.needs_grad(ia)) add_into(gr.grad_of(ia), dC);
    if (gr.needs_grad(ib)) {
      Tensor& dB = gr.grad_of(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dB[j] += dC[i * n + j];
    }
  });
}

Var mul_row(Var a, Var v) {
  Graph& g = same_graph(a, v);
  const Tensor& A = a.value();
  const Tensor& V = v.value();
  require_matrix(A, "mul_row");
  if (V.rank() != 1 || V.size() != A.cols())
    throw DimensionError("mul_row: scale vector " + shape_string(V.shape()) + " does not fit " +
                         shape_string(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] = A[i * n + j] * V[j];
  const std::size_t ia = a.id(), iv = v.id();
  return g.record("mul_row", std::move(C), {ia, iv}, [ia, iv, m, n](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.grad(self);
    const Tensor& A = gr.value(ia);
    const Tensor& V = gr.value(iv);
    if (gr.needs_grad(ia)) {
      Tensor& dA = gr.grad_of(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += dC[i * n + j] * V[j];
    }
    if (gr.needs_grad(iv)) {
      Tensor& dV = gr.grad_of(iv);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dV[j] += dC[i * n + j] * A[i * n + j];
    }
  });
}

Var gather(Var v, std::span<const std::size_t> index) {
  Graph& g = graph_of(v);
  const Tensor& V = v.value();
  if (V.rank() != 1) throw DimensionError("gather expects a vector, got " + shape_string(V.shape()));
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= V.size()) throw DimensionError("gather index out of range");
    out[i] = V[idx[i]];
  }
  const std::size_t iv = v.id();
  return g.record("gather", std::move(out), {iv}, [iv, idx](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    Tensor& dv = gr.grad_of(iv);
    for (std::size_t i = 0; i < idx.size(); ++i) dv[idx[i]] += dy[i];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_matrix(A, "gather_rows");
  const std::size_t n = A.cols();
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{idx.size(), n});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows()) throw DimensionError("gather_rows index out of range");
    std::copy_n(A.storage().begin() + idx[i] * n, n, out.storage().begin() + i * n);
  }
  const std::size_t ia = a.id();
  return g.record("gather_rows", std::move(out), {ia}, [ia, idx, n](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    Tensor& dA = gr.grad_of(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) dA[idx[i] * n + j] += dy[i * n + j];
  });
}

Var gather_cols(Var a, std::span<const std::size_t> index) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_matrix(A, "gather_cols");
  const std::size_t m = A.rows(), n = A.cols(), k = index.size();
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t c : idx)
    if (c >= n) throw DimensionError("gather_cols index out of range");
  Tensor out(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = A[i * n + idx[j]];
  const std::size_t ia = a.id();
  return g.record("gather_cols", std::move(out), {ia},
                  [ia, idx, m, n, k](Graph& gr, std::size_t self) {
                    const Tensor& dy = gr.grad(self);
                    Tensor& dA = gr.grad_of(ia);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < k; ++j) dA[i * n + idx[j]] += dy[i * k + j];
                  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_matrix(A, "slice_rows");
  if (start + count > A.rows()) throw DimensionError("slice_rows out of range");
  const std::size_t n = A.cols();
  Tensor out(Shape{count, n});
  std::copy_n(A.storage().begin() + start * n, count * n, out.storage().begin());
  const std::size_t ia = a.id();
  return g.record("slice_rows", std::move(out), {ia}, [ia, start, n](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    Tensor& dA = gr.grad_of(ia);
    for (std::size_t i = 0; i < dy.size(); ++i) dA[start * n + i] += dy[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  Graph& g = graph_of(parts[0]);
  const std::size_t n = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw GraphError("operands belong to different graphs");
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != n) throw DimensionError("concat_rows: column counts differ");
    rows += p.value().rows();
    ids.push_back(p.id());
  }
  Tensor out(Shape{rows, n});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(),
              out.storage().begin() + offset);
    offset += p.value().size();
  }
  return g.record("concat_rows", std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t len = gr.value(id).size();
      if (gr.needs_grad(id)) {
        Tensor& dp = gr.grad_of(id);
        for (std::size_t i = 0; i < len; ++i) dp[i] += dy[offset + i];
      }
      offset += len;
    }
  });
}

Var assemble_rows(std::span<const Var> parts, const std::vector<std::vector<std::size_t>>& positions,
                  std::size_t rows, std::size_t cols) {
  if (parts.size() != positions.size()) throw DimensionError("assemble_rows: parts/positions mismatch");
  if (parts.empty()) throw DimensionError("assemble_rows of nothing");
  Graph& g = graph_of(parts[0]);
  Tensor out(Shape{rows, cols});
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& part = parts[p].value();
    require_matrix(part, "assemble_rows");
    if (part.cols() != cols || part.rows() != positions[p].size())
      throw DimensionError("assemble_rows: part " + std::to_string(p) + " has shape " +
                           shape_string(part.shape()));
    for (std::size_t i = 0; i < positions[p].size(); ++i) {
      const std::size_t r = positions[p][i];
      if (r >= rows) throw DimensionError("assemble_rows: row position out of range");
      std::copy_n(part.storage().begin() + i * cols, cols, out.storage().begin() + r * cols);
    }
    ids.push_back(parts[p].id());
  }
  return g.record("assemble_rows", std::move(out), ids,
                  [ids, positions, cols](Graph& gr, std::size_t self) {
                    const Tensor& dy = gr.grad(self);
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      if (!gr.needs_grad(ids[p])) continue;
                      Tensor& dp = gr.grad_of(ids[p]);
                      for (std::size_t i = 0; i < positions[p].size(); ++i)
                        for (std::size_t j = 0; j < cols; ++j)
                          dp[i * cols + j] += dy[positions[p][i] * cols + j];
                    }
                  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  Graph& g = graph_of(logits);
  const Tensor& L = logits.value();
  require_matrix(L, "cross_entropy");
  const std::size_t m = L.rows(), n = L.cols();
  if (targets.size() != m)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  // Softmax probabilities are kept for the backward pass.
  std::vector<double> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (tgt[i] >= n) throw DimensionError("cross_entropy: target id out of range");
    const double* row = L.storage().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(row[j] - mx);
      z += probs[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] /= z;
    total += std::log(z) + mx - row[tgt[i]];
  }
  const std::size_t il = logits.id();
  return g.record("cross_entropy", Tensor::scalar(total / static_cast<double>(m)), {il},
                  [il, tgt = std::move(tgt), probs = std::move(probs), m, n](Graph& gr,
                                                                              std::size_t self) {
                    const double dy = gr.grad(self)[0] / static_cast<double>(m);
                    Tensor& dL = gr.grad_of(il);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < n; ++j) dL[i * n + j] += dy * probs[i * n + j];
                      dL[i * n + tgt[i]] -= dy;
                    }
                  });
}

}  // namespace flop
