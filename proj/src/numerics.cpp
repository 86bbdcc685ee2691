#include "pscs/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>

#include <Eigen/Core>

namespace pscs::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using CMapV = Eigen::Map<const Eigen::RowVectorXf>;

CMapM mat(const Tensor& t) { return CMapM(t.data.data(), t.rows(), t.cols()); }
MapM gmat(Graph& g, int id) {
  const Tensor& v = g.value(id);
  return MapM(g.grad(id), v.rows(), v.cols());
}

// Plain loop on purpose: Eigen's vectorized reductions peel by the runtime
// alignment of the pointer, so the summation order (and the last bits) would
// depend on where malloc put the buffer.
float dotf(const float* a, const float* b, std::int64_t n) {
  float s = 0.0f;
  for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// out[c] += sum over rows of m[r, c], rows in order
void add_column_sums(const float* m, std::int64_t rows, std::int64_t cols, float* out) {
  std::vector<float> acc(m, m + (rows > 0 ? cols : 0));
  for (std::int64_t r = 1; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += m[r * cols + c];
  for (std::int64_t c = 0; c < cols && rows > 0; ++c) out[c] += acc[static_cast<std::size_t>(c)];
}

void require(bool ok, const char* what) {
  if (!ok) throw InvalidArgument(what);
}

void same_graph(Var a, Var b) { require(a.graph && a.graph == b.graph, "ops on vars from different graphs"); }

void check_offsets(std::span<const std::int32_t> offsets, std::int64_t rows, const char* op) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
    throw InvalidArgument(std::string(op) + ": offsets do not cover the input rows");
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    if (offsets[s + 1] <= offsets[s]) throw InvalidArgument(std::string(op) + ": empty or decreasing segment");
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::int64_t> dims, float fill) : shape(std::move(dims)) {
  data.assign(static_cast<std::size_t>(numel()), fill);
}

Tensor Tensor::matrix(std::int64_t rows, std::int64_t cols, float fill) { return Tensor({rows, cols}, fill); }

Tensor Tensor::matrix(std::int64_t rows, std::int64_t cols, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != rows * cols) throw InvalidArgument("Tensor::matrix: size mismatch");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(values);
  return t;
}

std::int64_t Tensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::int64_t Tensor::rows() const { return shape.size() >= 2 ? shape[0] : 1; }
std::int64_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.size() >= 2 ? numel() / shape[0] : shape[0];
}

void Tensor::enable_grad() {
  requires_grad = true;
  grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

// ---------------------------------------------------------------- Graph

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Graph::parameter(Tensor& tensor) {
  Node n;
  n.external_value = &tensor;
  if (track_ && tensor.requires_grad) {
    if (tensor.grad.size() != tensor.data.size()) tensor.grad.assign(tensor.data.size(), 0.0f);
    n.needs_grad = true;
    n.external_grad = tensor.grad.data();
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

float* Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.has_grad = true;
  if (n.external_grad) return n.external_grad;
  if (n.grad.empty()) n.grad.assign(value(id).data.size(), 0.0f);
  return n.grad.data();
}

std::vector<float> Graph::grad_of(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) return {};
  if (n.external_grad) return {n.external_grad, n.external_grad + value(v.id).data.size()};
  return n.grad;
}

Var Graph::push(Tensor value, std::span<const int> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Graph::backward(Var loss) {
  require(loss.graph == this, "backward: loss belongs to another graph");
  require(value(loss).numel() == 1, "backward: loss must be a scalar");
  if (!nodes_[static_cast<std::size_t>(loss.id)].needs_grad) return;
  grad(loss.id)[0] += 1.0f;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.needs_grad && n.backward) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &B = g.value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  Tensor out = Tensor::matrix(A.rows(), B.cols());
  MapM(out.data.data(), A.rows(), B.cols()).noalias() = mat(A) * mat(B);
  const int ia = a.id, ib = b.id;
  const int in[] = {ia, ib};
  return g.push(std::move(out), in, [ia, ib](Graph& g, int self) {
    auto G = gmat(g, self);
    if (g.needs_grad(ia)) gmat(g, ia).noalias() += G * mat(g.value(ib)).transpose();
    if (g.needs_grad(ib)) gmat(g, ib).noalias() += mat(g.value(ia)).transpose() * G;
  });
}

Var matmul_nt(Var a, Var b) {
  same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &B = g.value(b);
  require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ");
  Tensor out = Tensor::matrix(A.rows(), B.rows());
  MapM(out.data.data(), A.rows(), B.rows()).noalias() = mat(A) * mat(B).transpose();
  const int ia = a.id, ib = b.id;
  const int in[] = {ia, ib};
  return g.push(std::move(out), in, [ia, ib](Graph& g, int self) {
    auto G = gmat(g, self);
    if (g.needs_grad(ia)) gmat(g, ia).noalias() += G * mat(g.value(ib));
    if (g.needs_grad(ib)) gmat(g, ib).noalias() += G.transpose() * mat(g.value(ia));
  });
}

namespace {

template <typename Fwd, typename Bwd>
Var elementwise2(Var a, Var b, const char* name, Fwd fwd, Bwd bwd) {
  same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &B = g.value(b);
  if (A.numel() != B.numel() || A.rows() != B.rows()) throw InvalidArgument(std::string(name) + ": shape mismatch");
  Tensor out = Tensor::matrix(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(A.data[i], B.data[i]);
  const int ia = a.id, ib = b.id;
  const int in[] = {ia, ib};
  return g.push(std::move(out), in, [ia, ib, bwd](Graph& g, int self) {
    const float* G = g.grad(self);
    const auto& av = g.value(ia).data;
    const auto& bv = g.value(ib).data;
    float* ga = g.needs_grad(ia) ? g.grad(ia) : nullptr;
    float* gb = g.needs_grad(ib) ? g.grad(ib) : nullptr;
    for (std::size_t i = 0; i < av.size(); ++i) bwd(G[i], av[i], bv[i], ga ? ga + i : nullptr, gb ? gb + i : nullptr);
  });
}

template <typename Fwd, typename Deriv>
Var elementwise1(Var a, Fwd fwd, Deriv deriv_from_output) {
  Graph& g = *a.graph;
  const Tensor& A = g.value(a);
  Tensor out = Tensor::matrix(A.rows(), A.cols());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(A.data[i]);
  const int ia = a.id;
  const int in[] = {ia};
  return g.push(std::move(out), in, [ia, deriv_from_output](Graph& g, int self) {
    const float* G = g.grad(self);
    const auto& y = g.value(self).data;
    const auto& x = g.value(ia).data;
    float* ga = g.grad(ia);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += G[i] * deriv_from_output(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise2(a, b, "add", [](float x, float y) { return x + y; },
                      [](float G, float, float, float* ga, float* gb) {
                        if (ga) *ga += G;
                        if (gb) *gb += G;
                      });
}

Var sub(Var a, Var b) {
  return elementwise2(a, b, "sub", [](float x, float y) { return x - y; },
                      [](float G, float, float, float* ga, float* gb) {
                        if (ga) *ga += G;
                        if (gb) *gb -= G;
                      });
}

Var mul(Var a, Var b) {
  return elementwise2(a, b, "mul", [](float x, float y) { return x * y; },
                      [](float G, float x, float y, float* ga, float* gb) {
                        if (ga) *ga += G * y;
                        if (gb) *gb += G * x;
                      });
}

Var add_row(Var a, Var row) {
  same_graph(a, row);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &R = g.value(row);
  require(R.numel() == A.cols(), "add_row: width mismatch");
  Tensor out = A;
  out.shape = {A.rows(), A.cols()};
  out.requires_grad = false;
  out.grad.clear();
  MapM(out.data.data(), A.rows(), A.cols()).rowwise() += CMapV(R.data.data(), A.cols());
  const int ia = a.id, ir = row.id;
  const int in[] = {ia, ir};
  return g.push(std::move(out), in, [ia, ir](Graph& g, int self) {
    auto G = gmat(g, self);
    if (g.needs_grad(ia)) gmat(g, ia) += G;
    if (g.needs_grad(ir)) add_column_sums(G.data(), G.rows(), G.cols(), g.grad(ir));
  });
}

Var scale(Var a, float s) {
  return elementwise1(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(Var a, float s) {
  return elementwise1(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var sigmoid(Var a) {
  return elementwise1(a, [](float x) { return sigmoidf(x); }, [](float, float y) { return y * (1.0f - y); });
}

Var tanh(Var a) {
  return elementwise1(a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Var relu(Var a) {
  return elementwise1(a, [](float x) { return x <= 0.0f ? 0.0f : x; },
                      [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------- reshaping

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Graph& g = *parts.front().graph;
  const std::int64_t rows = g.value(parts.front()).rows();
  std::int64_t cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    same_graph(parts.front(), p);
    require(g.value(p).rows() == rows, "concat_cols: row counts differ");
    cols += g.value(p).cols();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::matrix(rows, cols);
  MapM o(out.data.data(), rows, cols);
  std::int64_t at = 0;
  for (Var p : parts) {
    const Tensor& v = g.value(p);
    o.middleCols(at, v.cols()) = mat(v);
    at += v.cols();
  }
  return g.push(std::move(out), ids, [ids](Graph& g, int self) {
    auto G = gmat(g, self);
    std::int64_t at = 0;
    for (int id : ids) {
      const auto w = g.value(id).cols();
      if (g.needs_grad(id)) gmat(g, id) += G.middleCols(at, w);
      at += w;
    }
  });
}

Var slice_cols(Var a, std::int64_t start, std::int64_t width) {
  Graph& g = *a.graph;
  const Tensor& A = g.value(a);
  require(start >= 0 && width > 0 && start + width <= A.cols(), "slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(A.rows(), width);
  MapM(out.data.data(), A.rows(), width) = mat(A).middleCols(start, width);
  const int ia = a.id;
  const int in[] = {ia};
  return g.push(std::move(out), in, [ia, start, width](Graph& g, int self) {
    gmat(g, ia).middleCols(start, width) += gmat(g, self);
  });
}

Var gather_rows(Var a, std::span<const std::int32_t> rows) {
  Graph& g = *a.graph;
  const Tensor& A = g.value(a);
  const std::int64_t d = A.cols();
  Tensor out = Tensor::matrix(static_cast<std::int64_t>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < A.rows(), "gather_rows: row index out of range");
    std::copy_n(A.data.begin() + rows[r] * d, d, out.data.begin() + static_cast<std::int64_t>(r) * d);
  }
  std::vector<std::int32_t> idx(rows.begin(), rows.end());
  const int ia = a.id;
  const int in[] = {ia};
  return g.push(std::move(out), in, [ia, idx = std::move(idx), d](Graph& g, int self) {
    const float* G = g.grad(self);
    float* ga = g.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      float* dst = ga + idx[r] * d;
      const float* src = G + static_cast<std::int64_t>(r) * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var embedding_lookup(Var table, std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask) {
  require(ids.size() == mask.size(), "embedding_lookup: ids and mask differ in length");
  return embedding_bag(table, ids, mask, 1);
}

Var embedding_bag(Var table, std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask,
                  std::int64_t width) {
  Graph& g = *table.graph;
  const Tensor& T = g.value(table);
  require(width > 0 && ids.size() % static_cast<std::size_t>(width) == 0, "embedding_bag: ids not a multiple of width");
  require(ids.size() == mask.size(), "embedding_bag: ids and mask differ in length");
  const std::int64_t d = T.cols();
  const std::int64_t k = static_cast<std::int64_t>(ids.size()) / width;
  Tensor out = Tensor::matrix(k, d);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (!mask[j]) continue;
    if (ids[j] < 0 || ids[j] >= T.rows())
      throw InvalidArgument("embedding: id " + std::to_string(ids[j]) + " outside table of " +
                            std::to_string(T.rows()) + " rows");
    const float* src = T.data.data() + ids[j] * d;
    float* dst = out.data.data() + static_cast<std::int64_t>(j) / width * d;
    for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  std::vector<std::int32_t> id_copy(ids.begin(), ids.end());
  std::vector<std::uint8_t> mask_copy(mask.begin(), mask.end());
  const int it = table.id;
  const int in[] = {it};
  return g.push(std::move(out), in,
                [it, id_copy = std::move(id_copy), mask_copy = std::move(mask_copy), d, width](Graph& g, int self) {
                  const float* G = g.grad(self);
                  float* gt = g.grad(it);
                  for (std::size_t j = 0; j < id_copy.size(); ++j) {
                    if (!mask_copy[j]) continue;
                    float* dst = gt + id_copy[j] * d;
                    const float* src = G + static_cast<std::int64_t>(j) / width * d;
                    for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
                  }
                });
}

// ---------------------------------------------------------------- segments

Var segment_mean(Var x, std::span<const std::int32_t> offsets) {
  Graph& g = *x.graph;
  const Tensor& X = g.value(x);
  check_offsets(offsets, X.rows(), "segment_mean");
  const std::int64_t S = static_cast<std::int64_t>(offsets.size()) - 1, F = X.cols();
  Tensor out = Tensor::matrix(S, F);
  for (std::int64_t s = 0; s < S; ++s) {
    const auto n = offsets[s + 1] - offsets[s];
    float* o = out.data.data() + s * F;
    add_column_sums(X.data.data() + offsets[s] * F, n, F, o);
    for (std::int64_t c = 0; c < F; ++c) o[c] /= static_cast<float>(n);
  }
  std::vector<std::int32_t> off(offsets.begin(), offsets.end());
  const int ix = x.id;
  const int in[] = {ix};
  return g.push(std::move(out), in, [ix, off = std::move(off)](Graph& g, int self) {
    auto G = gmat(g, self);
    auto gx = gmat(g, ix);
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const auto n = off[s + 1] - off[s];
      gx.middleRows(off[s], n).rowwise() += G.row(static_cast<std::int64_t>(s)) / static_cast<float>(n);
    }
  });
}

namespace {

void softmax_range(const float* z, float* w, const std::uint8_t* mask, std::int64_t n) {
  float mx = -INFINITY;
  for (std::int64_t i = 0; i < n; ++i)
    if (!mask || mask[i]) mx = std::max(mx, z[i]);
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    w[i] = (!mask || mask[i]) ? std::exp(z[i] - mx) : 0.0f;
    sum += w[i];
  }
  const auto inv = static_cast<float>(1.0 / sum);
  for (std::int64_t i = 0; i < n; ++i) w[i] *= inv;
}

void softmax_range_backward(const float* w, const float* G, float* gz, std::int64_t n) {
  double dot = 0.0;
  for (std::int64_t i = 0; i < n; ++i) dot += static_cast<double>(w[i]) * G[i];
  for (std::int64_t i = 0; i < n; ++i) gz[i] += w[i] * (G[i] - static_cast<float>(dot));
}

}  // namespace

Var segment_softmax(Var logits, std::span<const std::int32_t> offsets) {
  Graph& g = *logits.graph;
  const Tensor& Z = g.value(logits);
  require(Z.cols() == 1, "segment_softmax: logits must be a column");
  check_offsets(offsets, Z.rows(), "segment_softmax");
  Tensor out = Tensor::matrix(Z.rows(), 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    softmax_range(Z.data.data() + offsets[s], out.data.data() + offsets[s], nullptr, offsets[s + 1] - offsets[s]);
  std::vector<std::int32_t> off(offsets.begin(), offsets.end());
  const int iz = logits.id;
  const int in[] = {iz};
  return g.push(std::move(out), in, [iz, off = std::move(off)](Graph& g, int self) {
    const float* w = g.value(self).data.data();
    const float* G = g.grad(self);
    float* gz = g.grad(iz);
    for (std::size_t s = 0; s + 1 < off.size(); ++s)
      softmax_range_backward(w + off[s], G + off[s], gz + off[s], off[s + 1] - off[s]);
  });
}

Var softmax(Var logits, std::span<const std::uint8_t> mask) {
  Graph& g = *logits.graph;
  const Tensor& Z = g.value(logits);
  const std::int64_t n = Z.numel();
  require(Z.rows() == 1, "softmax: logits must be a single row");
  require(mask.empty() || static_cast<std::int64_t>(mask.size()) == n, "softmax: mask length mismatch");
  require(mask.empty() || std::find(mask.begin(), mask.end(), 1) != mask.end(), "softmax: all positions masked");
  Tensor out = Tensor::matrix(1, n);
  softmax_range(Z.data.data(), out.data.data(), mask.empty() ? nullptr : mask.data(), n);
  const int iz = logits.id;
  const int in[] = {iz};
  return g.push(std::move(out), in, [iz, n](Graph& g, int self) {
    softmax_range_backward(g.value(self).data.data(), g.grad(self), g.grad(iz), n);
  });
}

Var segment_weighted_sum(Var x, Var weights, std::span<const std::int32_t> offsets) {
  same_graph(x, weights);
  Graph& g = *x.graph;
  const Tensor &X = g.value(x), &W = g.value(weights);
  require(W.cols() == 1 && W.rows() == X.rows(), "segment_weighted_sum: weights must be [N,1]");
  check_offsets(offsets, X.rows(), "segment_weighted_sum");
  const std::int64_t S = static_cast<std::int64_t>(offsets.size()) - 1, F = X.cols();
  Tensor out = Tensor::matrix(S, F);
  MapM o(out.data.data(), S, F);
  auto xm = mat(X);
  auto wm = mat(W);
  for (std::int64_t s = 0; s < S; ++s) {
    const auto n = offsets[s + 1] - offsets[s];
    o.row(s).noalias() = wm.middleRows(offsets[s], n).transpose() * xm.middleRows(offsets[s], n);
  }
  std::vector<std::int32_t> off(offsets.begin(), offsets.end());
  const int ix = x.id, iw = weights.id;
  const int in[] = {ix, iw};
  return g.push(std::move(out), in, [ix, iw, off = std::move(off)](Graph& g, int self) {
    auto G = gmat(g, self);
    const bool need_x = g.needs_grad(ix), need_w = g.needs_grad(iw);
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const auto n = off[s + 1] - off[s];
      const auto row = G.row(static_cast<std::int64_t>(s));
      if (need_x) gmat(g, ix).middleRows(off[s], n).noalias() += mat(g.value(iw)).middleRows(off[s], n) * row;
      if (need_w) gmat(g, iw).middleRows(off[s], n).noalias() += mat(g.value(ix)).middleRows(off[s], n) * row.transpose();
    }
  });
}

Var rowwise_dot(Var a, Var b) {
  same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &B = g.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "rowwise_dot: shape mismatch");
  Tensor out = Tensor::matrix(A.rows(), 1);
  const std::int64_t c = A.cols();
  for (std::int64_t r = 0; r < A.rows(); ++r)
    out.data[static_cast<std::size_t>(r)] = dotf(A.data.data() + r * c, B.data.data() + r * c, c);
  const int ia = a.id, ib = b.id;
  const int in[] = {ia, ib};
  return g.push(std::move(out), in, [ia, ib](Graph& g, int self) {
    auto G = gmat(g, self);
    if (g.needs_grad(ia)) gmat(g, ia) += G.col(0).asDiagonal() * mat(g.value(ib));
    if (g.needs_grad(ib)) gmat(g, ib) += G.col(0).asDiagonal() * mat(g.value(ia));
  });
}

Var cosine_rows(Var a, Var b, float delta) {
  same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor &A = g.value(a), &B = g.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "cosine_rows: shape mismatch");
  const std::int64_t n = A.rows();
  Tensor out = Tensor::matrix(n, 1);
  const std::int64_t c = A.cols();
  for (std::int64_t r = 0; r < n; ++r) {
    const float* x = A.data.data() + r * c;
    const float* y = B.data.data() + r * c;
    const float denom = std::max(std::sqrt(dotf(x, x, c)) * std::sqrt(dotf(y, y, c)), delta);
    out.data[static_cast<std::size_t>(r)] = dotf(x, y, c) / denom;
  }
  const int ia = a.id, ib = b.id;
  const int in[] = {ia, ib};
  return g.push(std::move(out), in, [ia, ib, delta](Graph& g, int self) {
    auto am = mat(g.value(ia)), bm = mat(g.value(ib));
    const float* G = g.grad(self);
    const float* s = g.value(self).data.data();
    const bool need_a = g.needs_grad(ia), need_b = g.needs_grad(ib);
    const std::int64_t c = am.cols();
    for (std::int64_t r = 0; r < am.rows(); ++r) {
      const float* x = am.data() + r * c;
      const float* y = bm.data() + r * c;
      const float na = std::sqrt(dotf(x, x, c)), nb = std::sqrt(dotf(y, y, c));
      const float prod = na * nb;
      if (prod > delta) {
        if (need_a) gmat(g, ia).row(r) += G[r] * (bm.row(r) / prod - s[r] * am.row(r) / (na * na));
        if (need_b) gmat(g, ib).row(r) += G[r] * (am.row(r) / prod - s[r] * bm.row(r) / (nb * nb));
      } else {
        if (need_a) gmat(g, ia).row(r) += G[r] * bm.row(r) / delta;
        if (need_b) gmat(g, ib).row(r) += G[r] * am.row(r) / delta;
      }
    }
  });
}

Var sum_all(Var a) {
  Graph& g = *a.graph;
  const Tensor& A = g.value(a);
  double s = 0.0;
  for (float v : A.data) s += v;
  const int ia = a.id;
  const int in[] = {ia};
  return g.push(Tensor::matrix(1, 1, static_cast<float>(s)), in, [ia](Graph& g, int self) {
    const float G = g.grad(self)[0];
    float* ga = g.grad(ia);
    for (std::size_t i = 0; i < g.value(ia).data.size(); ++i) ga[i] += G;
  });
}

Var mean_all(Var a) {
  const auto n = a.graph->value(a).numel();
  require(n > 0, "mean_all: empty input");
  return scale(sum_all(a), 1.0f / static_cast<float>(n));
}

Var dropout(Var x, float rate, bool train, Rng& rng) {
  require(rate >= 0.0f && rate < 1.0f, "dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0f) return x;
  Graph& g = *x.graph;
  const Tensor& X = g.value(x);
  std::vector<float> keep(X.data.size());
  const float scale_kept = 1.0f / (1.0f - rate);
  for (auto& k : keep) k = rng.uniform() < rate ? 0.0f : scale_kept;
  Tensor out = Tensor::matrix(X.rows(), X.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.data[i] = X.data[i] * keep[i];
  const int ix = x.id;
  const int in[] = {ix};
  return g.push(std::move(out), in, [ix, keep = std::move(keep)](Graph& g, int self) {
    const float* G = g.grad(self);
    float* gx = g.grad(ix);
    for (std::size_t i = 0; i < keep.size(); ++i) gx[i] += G[i] * keep[i];
  });
}

// ---------------------------------------------------------------- LSTM

Var lstm_step(Var x, Var state, Var w_ih, Var w_hh, Var bias, std::span<const std::uint8_t> mask) {
  Graph& g = *x.graph;
  const Tensor &X = g.value(x), &S = g.value(state), &Wi = g.value(w_ih), &Wh = g.value(w_hh), &Bv = g.value(bias);
  const std::int64_t B = X.rows(), d = X.cols(), H = Wh.cols();
  if (Wi.rows() != 4 * H || Wi.cols() != d || Wh.rows() != 4 * H || Bv.numel() != 4 * H || S.rows() != B ||
      S.cols() != 2 * H || (!mask.empty() && static_cast<std::int64_t>(mask.size()) != B))
    throw InvalidArgument("lstm_step: shape mismatch");

  auto sm = mat(S);
  RowMat z(B, 4 * H);
  z.noalias() = mat(X) * mat(Wi).transpose();
  z.noalias() += sm.leftCols(H) * mat(Wh).transpose();
  z.rowwise() += CMapV(Bv.data.data(), 4 * H);

  // Saved per row: activated gates i f g o, then tanh(c').
  auto act = std::make_shared<RowMat>(B, 5 * H);
  Tensor out = Tensor::matrix(B, 2 * H);
  MapM o(out.data.data(), B, 2 * H);
  for (std::int64_t r = 0; r < B; ++r) {
    if (!mask.empty() && !mask[static_cast<std::size_t>(r)]) {
      o.row(r) = sm.row(r);
      act->row(r).setZero();
      continue;
    }
    for (std::int64_t k = 0; k < H; ++k) {
      const float i = sigmoidf(z(r, k));
      const float f = sigmoidf(z(r, H + k));
      const float gg = std::tanh(z(r, 2 * H + k));
      const float og = sigmoidf(z(r, 3 * H + k));
      const float c = f * sm(r, H + k) + i * gg;
      const float tc = std::tanh(c);
      (*act)(r, k) = i;
      (*act)(r, H + k) = f;
      (*act)(r, 2 * H + k) = gg;
      (*act)(r, 3 * H + k) = og;
      (*act)(r, 4 * H + k) = tc;
      o(r, k) = og * tc;
      o(r, H + k) = c;
    }
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const int ix = x.id, is = state.id, iwi = w_ih.id, iwh = w_hh.id, ib = bias.id;
  const int in[] = {ix, is, iwi, iwh, ib};
  return g.push(std::move(out), in, [=, m = std::move(m)](Graph& g, int self) {
    auto G = gmat(g, self);
    auto sm = mat(g.value(is));
    RowMat dz = RowMat::Zero(B, 4 * H);
    const bool need_state = g.needs_grad(is);
    std::optional<MapM> gs;
    if (need_state) gs.emplace(g.grad(is), B, 2 * H);
    for (std::int64_t r = 0; r < B; ++r) {
      if (!m.empty() && !m[static_cast<std::size_t>(r)]) {
        if (need_state) gs->row(r) += G.row(r);
        continue;
      }
      for (std::int64_t k = 0; k < H; ++k) {
        const float i = (*act)(r, k), f = (*act)(r, H + k), gg = (*act)(r, 2 * H + k), og = (*act)(r, 3 * H + k),
                    tc = (*act)(r, 4 * H + k);
        const float dh = G(r, k);
        const float dc = G(r, H + k) + dh * og * (1.0f - tc * tc);
        dz(r, k) = dc * gg * i * (1.0f - i);
        dz(r, H + k) = dc * sm(r, H + k) * f * (1.0f - f);
        dz(r, 2 * H + k) = dc * i * (1.0f - gg * gg);
        dz(r, 3 * H + k) = dh * tc * og * (1.0f - og);
        if (need_state) (*gs)(r, H + k) += dc * f;
      }
    }
    if (g.needs_grad(ix)) gmat(g, ix).noalias() += dz * mat(g.value(iwi));
    if (need_state) gs->leftCols(H).noalias() += dz * mat(g.value(iwh));
    if (g.needs_grad(iwi)) gmat(g, iwi).noalias() += dz.transpose() * mat(g.value(ix));
    if (g.needs_grad(iwh)) gmat(g, iwh).noalias() += dz.transpose() * sm.leftCols(H);
    if (g.needs_grad(ib)) add_column_sums(dz.data(), B, 4 * H, g.grad(ib));
  });
}

namespace {

Var concat_rows(std::span<const Var> parts) {
  Graph& g = *parts.front().graph;
  const std::int64_t cols = g.value(parts.front()).cols();
  std::int64_t rows = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    require(g.value(p).cols() == cols, "concat_rows: column counts differ");
    rows += g.value(p).rows();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::int64_t at = 0;
  for (Var p : parts) {
    const auto& v = g.value(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + at * cols);
    at += v.rows();
  }
  return g.push(std::move(out), ids, [ids](Graph& g, int self) {
    auto G = gmat(g, self);
    std::int64_t at = 0;
    for (int id : ids) {
      const auto r = g.value(id).rows();
      if (g.needs_grad(id)) gmat(g, id) += G.middleRows(at, r);
      at += r;
    }
  });
}

}  // namespace

BiLstmOutput bilstm(Var xs, std::span<const std::uint8_t> mask, const LstmWeights& fwd, const LstmWeights& bwd) {
  Graph& g = *xs.graph;
  const std::int64_t l = g.value(xs).rows();
  const std::int64_t H = g.value(fwd.w_hh).cols();
  require(static_cast<std::int64_t>(mask.size()) == l, "bilstm: mask length mismatch");
  require(std::find(mask.begin(), mask.end(), 1) != mask.end(), "bilstm: all positions masked");

  std::vector<Var> steps;
  for (std::int32_t t = 0; t < l; ++t) {
    const std::int32_t row[] = {t};
    steps.push_back(gather_rows(xs, row));
  }
  std::vector<Var> fh(static_cast<std::size_t>(l)), bh(static_cast<std::size_t>(l));
  Var state = g.constant(Tensor::matrix(1, 2 * H));
  for (std::int64_t t = 0; t < l; ++t) {
    const std::uint8_t m[] = {mask[static_cast<std::size_t>(t)]};
    state = lstm_step(steps[static_cast<std::size_t>(t)], state, fwd.w_ih, fwd.w_hh, fwd.bias, m);
    fh[static_cast<std::size_t>(t)] = slice_cols(state, 0, H);
  }
  BiLstmOutput out;
  out.final_fwd = fh.back();
  state = g.constant(Tensor::matrix(1, 2 * H));
  for (std::int64_t t = l - 1; t >= 0; --t) {
    const std::uint8_t m[] = {mask[static_cast<std::size_t>(t)]};
    state = lstm_step(steps[static_cast<std::size_t>(t)], state, bwd.w_ih, bwd.w_hh, bwd.bias, m);
    bh[static_cast<std::size_t>(t)] = slice_cols(state, 0, H);
  }
  out.final_bwd = bh.front();
  std::vector<Var> rows;
  for (std::size_t t = 0; t < static_cast<std::size_t>(l); ++t) {
    const Var pair[] = {fh[t], bh[t]};
    rows.push_back(concat_cols(pair));
  }
  out.outputs = concat_rows(rows);
  return out;
}

Var bilstm_final(std::span<const Var> step_inputs, const std::vector<std::vector<std::uint8_t>>& step_masks,
                 const LstmWeights& fwd, const LstmWeights& bwd, std::int64_t hidden) {
  require(!step_inputs.empty() && step_inputs.size() == step_masks.size(), "bilstm_final: step count mismatch");
  Graph& g = *step_inputs.front().graph;
  const std::int64_t B = g.value(step_inputs.front()).rows();
  Var f = g.constant(Tensor::matrix(B, 2 * hidden));
  for (std::size_t t = 0; t < step_inputs.size(); ++t)
    f = lstm_step(step_inputs[t], f, fwd.w_ih, fwd.w_hh, fwd.bias, step_masks[t]);
  Var b = g.constant(Tensor::matrix(B, 2 * hidden));
  for (std::size_t t = step_inputs.size(); t-- > 0;)
    b = lstm_step(step_inputs[t], b, bwd.w_ih, bwd.w_hh, bwd.bias, step_masks[t]);
  const Var parts[] = {slice_cols(f, 0, hidden), slice_cols(b, 0, hidden)};
  return concat_cols(parts);
}

float cosine(std::span<const float> x, std::span<const float> y, float delta) {
  require(x.size() == y.size(), "cosine: length mismatch");
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<double>(x[i]) * y[i];
    nx += static_cast<double>(x[i]) * x[i];
    ny += static_cast<double>(y[i]) * y[i];
  }
  return static_cast<float>(dot / std::max(std::sqrt(nx) * std::sqrt(ny), static_cast<double>(delta)));
}

// ---------------------------------------------------------------- Adam

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->data.size(), 0.0f);
      state.v.emplace_back(p->data.size(), 0.0f);
    }
  }
  require(state.m.size() == params.size(), "adam_step: parameter list changed");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
  const auto c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (p.grad.empty()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    require(m.size() == p.data.size(), "adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const float gr = p.grad[i];
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * gr;
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * gr * gr;
      const float mhat = m[i] / c1;
      const float vhat = v[i] / c2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace pscs::nn
