#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pscs/common.hpp"

// Dense float32 tensors, a reverse-mode tape, and Adam. Only the shapes the
// path/query encoders need are supported: every graph value is a row-major
// matrix, and there is no general broadcasting.
namespace pscs::nn {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until enable_grad()

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> dims, float fill = 0.0f);
  static Tensor matrix(std::int64_t rows, std::int64_t cols, float fill = 0.0f);
  static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<float> values);

  std::int64_t numel() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  // Rank-1 tensors read as a single row.
  std::int64_t rows() const;
  std::int64_t cols() const;

  float& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  float at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }

  void enable_grad();
  void zero_grad();
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  int id = -1;
  bool valid() const { return graph != nullptr && id >= 0; }
};

// A computation tape. Nodes are appended in forward order; backward()
// replays them in reverse. Gradients of bound parameters accumulate into the
// parameter tensor's grad buffer.
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  // An untracked graph records values only: parameters bind without
  // gradients and no backward closures are kept.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Var constant(Tensor value);
  // Binds an external tensor. If it requires grad, backward() adds into its
  // grad buffer. The tensor must outlive the graph.
  Var parameter(Tensor& tensor);

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external_value ? *n.external_value : n.value;
  }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Gradient buffer of a node, allocated on first use. Only valid for nodes
  // with needs_grad.
  float* grad(int id);
  // Gradient of a node after backward(), empty if it received none.
  std::vector<float> grad_of(Var v) const;

  Var push(Tensor value, std::span<const int> inputs, Backward backward);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 node and runs the tape in reverse.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external_value = nullptr;
    std::vector<float> grad;
    float* external_grad = nullptr;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool track_ = true;
};

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b);     // [n,k] x [k,m]
Var matmul_nt(Var a, Var b);  // [n,k] x [m,k]^T
// x W^T: the affine map used for the fusion layer and projections.
inline Var linear(Var x, Var w) { return matmul_nt(x, w); }

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // row broadcast over a's rows
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::int64_t start, std::int64_t width);
Var gather_rows(Var a, std::span<const std::int32_t> rows);

// Row gather from an embedding table; rows whose mask is 0 come out as zero
// vectors and receive no gradient. Throws InvalidArgument on id >= rows.
Var embedding_lookup(Var table, std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask);
// Sum of the masked embeddings of each group of `width` consecutive ids.
Var embedding_bag(Var table, std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask,
                  std::int64_t width);

// Segment ops over rows grouped by offsets (size S+1, non-decreasing, every
// segment non-empty).
Var segment_mean(Var x, std::span<const std::int32_t> offsets);
Var segment_softmax(Var logits, std::span<const std::int32_t> offsets);  // logits [N,1]
Var segment_weighted_sum(Var x, Var weights, std::span<const std::int32_t> offsets);
Var rowwise_dot(Var a, Var b);  // [N,F] . [N,F] -> [N,1]

// Softmax over a single row, masked positions get weight 0. At least one
// position must be real.
Var softmax(Var logits, std::span<const std::uint8_t> mask);

// x.y / max(|x||y|, delta) per row pair -> [N,1]
Var cosine_rows(Var a, Var b, float delta);

Var sum_all(Var a);
Var mean_all(Var a);

// Inverted dropout: survivors scaled by 1/(1-rate). Identity when !train.
Var dropout(Var x, float rate, bool train, Rng& rng);

// Fused LSTM cell on a batch. state is [B, 2H] holding h|c; w_ih [4H, d],
// w_hh [4H, H], bias [1, 4H], gate order input, forget, cell, output. Rows
// with mask 0 carry their state through unchanged. Returns the new h|c.
Var lstm_step(Var x, Var state, Var w_ih, Var w_hh, Var bias, std::span<const std::uint8_t> mask = {});

struct LstmWeights {
  Var w_ih;
  Var w_hh;
  Var bias;
};

struct BiLstmOutput {
  Var outputs;     // [l, 2H] per-step forward|backward hidden states
  Var final_fwd;   // [1, H] forward state after the last real step
  Var final_bwd;   // [1, H] backward state after the first position
};

// Mask-aware bidirectional LSTM over one sequence xs [l, d]. Throws when the
// mask has no real position.
BiLstmOutput bilstm(Var xs, std::span<const std::uint8_t> mask, const LstmWeights& fwd, const LstmWeights& bwd);

// Batched variant: step_inputs[t] is [B, d]; step_masks[t] has B flags. Returns
// [B, 2H] = final forward h | final backward h.
Var bilstm_final(std::span<const Var> step_inputs, const std::vector<std::vector<std::uint8_t>>& step_masks,
                 const LstmWeights& fwd, const LstmWeights& bwd, std::int64_t hidden);

// Plain cosine with the same delta clamp.
float cosine(std::span<const float> x, std::span<const float> y, float delta);

// ---------------------------------------------------------------- Adam

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam update of every parameter from its grad buffer.
// Moments are created on the first call.
void adam_step(std::span<Tensor* const> params, AdamState& state);

}  // namespace pscs::nn
