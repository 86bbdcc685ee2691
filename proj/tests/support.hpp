// Oracles shared by the unit tests and the acceptance binary. Nothing here
// calls into the code it checks except to build inputs.
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pscs/ast.hpp"
#include "pscs/common.hpp"
#include "pscs/evaluate.hpp"
#include "pscs/model.hpp"
#include "pscs/numerics.hpp"
#include "pscs/paths.hpp"

namespace pscs::testing {

// ---------------------------------------------------------------- trees

// Random tree with 1..max_leaves leaves. Grown by inserting leaves,
// splitting leaves into subtrees and wrapping nodes in unary parents, so
// both wide and deep shapes show up.
inline Ast random_tree(Rng& rng, std::size_t max_leaves) {
  static const char* kLabels[] = {"A", "B", "C", "D", "E"};
  struct Proto {
    std::string label;
    std::vector<int> children;
    bool terminal;
  };
  std::vector<Proto> p;
  auto leaf = [&] {
    p.push_back({"t" + std::to_string(rng.below(6)), {}, true});
    return static_cast<int>(p.size() - 1);
  };
  auto inner = [&] {
    p.push_back({kLabels[rng.below(5)], {}, false});
    return static_cast<int>(p.size() - 1);
  };
  int root = inner();
  const int first = leaf();
  p[static_cast<std::size_t>(root)].children.push_back(first);
  const std::size_t target = 1 + rng.below(max_leaves);
  std::size_t leaves = 1;
  std::vector<int> parent(p.size(), -1);
  parent[1] = root;
  auto reparent = [&] { parent.resize(p.size(), -1); };

  auto wrap = [&](int n) {
    const int w = inner();
    reparent();
    const int up = parent[static_cast<std::size_t>(n)];
    p[static_cast<std::size_t>(w)].children = {n};
    parent[static_cast<std::size_t>(n)] = w;
    parent[static_cast<std::size_t>(w)] = up;
    if (up < 0) {
      root = w;
    } else {
      for (int& c : p[static_cast<std::size_t>(up)].children)
        if (c == n) c = w;
    }
  };

  while (leaves < target) {
    const int n = static_cast<int>(rng.below(p.size()));
    switch (rng.below(3)) {
      case 0: {  // new leaf under the nearest inner node
        int host = n;
        while (p[static_cast<std::size_t>(host)].terminal) host = parent[static_cast<std::size_t>(host)];
        const int c = leaf();
        reparent();
        auto& kids = p[static_cast<std::size_t>(host)].children;
        kids.insert(kids.begin() + static_cast<long>(rng.below(kids.size() + 1)), c);
        parent[static_cast<std::size_t>(c)] = host;
        ++leaves;
        break;
      }
      case 1:  // a leaf becomes an inner node over two leaves
        if (p[static_cast<std::size_t>(n)].terminal) {
          const int a = leaf(), b = leaf();
          reparent();
          Proto& me = p[static_cast<std::size_t>(n)];
          me.terminal = false;
          me.label = kLabels[rng.below(5)];
          me.children = {a, b};
          parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(b)] = n;
          ++leaves;
        }
        break;
      default:
        wrap(n);
    }
  }
  // deepen: unary chains push some pairs past the height limit
  for (auto extra = rng.below(14); extra > 0; --extra) wrap(static_cast<int>(rng.below(p.size())));

  // Dense ids in preorder.
  Ast ast;
  std::function<NodeId(int)> emit = [&](int i) {
    const NodeId id = static_cast<NodeId>(ast.nodes.size());
    ast.nodes.push_back({id, p[static_cast<std::size_t>(i)].label, {}, p[static_cast<std::size_t>(i)].terminal});
    for (int c : p[static_cast<std::size_t>(i)].children) {
      const NodeId cid = emit(c);
      ast.nodes[static_cast<std::size_t>(id)].children.push_back(cid);
    }
    return id;
  };
  ast.root = emit(root);
  ast.index_leaves();
  return ast;
}

// Every leaf pair, walked explicitly through parent pointers.
inline std::vector<AstPath> oracle_paths(const Ast& ast, int max_height, int max_width) {
  std::vector<NodeId> parent(ast.nodes.size(), -1);
  for (const auto& n : ast.nodes)
    for (NodeId c : n.children) parent[static_cast<std::size_t>(c)] = n.id;
  auto chain = [&](NodeId leaf) {
    std::vector<NodeId> up;  // leaf, parent, ..., root
    for (NodeId x = leaf; x >= 0; x = parent[static_cast<std::size_t>(x)]) up.push_back(x);
    return up;
  };
  auto child_index = [&](NodeId apex, NodeId child) {
    const auto& kids = ast.node(apex).children;
    for (std::size_t i = 0; i < kids.size(); ++i)
      if (kids[i] == child) return static_cast<int>(i);
    return -1;
  };

  std::vector<AstPath> out;
  const auto& leaves = ast.leaf_order;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (std::size_t j = i + 1; j < leaves.size(); ++j) {
      const auto a = chain(leaves[i]);
      const auto b = chain(leaves[j]);
      // apex: first node of a's chain that is also on b's chain
      std::size_t ai = 0, bi = 0;
      for (; ai < a.size(); ++ai) {
        const auto it = std::find(b.begin(), b.end(), a[ai]);
        if (it != b.end()) {
          bi = static_cast<std::size_t>(it - b.begin());
          break;
        }
      }
      const NodeId apex = a[ai];
      const int height = static_cast<int>(std::max(ai, bi));
      const int width = std::abs(child_index(apex, b[bi - 1]) - child_index(apex, a[ai - 1]));
      if (height > max_height || width > max_width) continue;
      AstPath path;
      path.start_terminal = ast.node(leaves[i]).label;
      path.end_terminal = ast.node(leaves[j]).label;
      for (std::size_t k = 1; k < ai; ++k) path.directed_nodes.push_back({ast.node(a[k]).label, Direction::Up});
      path.directed_nodes.push_back({ast.node(apex).label, Direction::Down});
      for (std::size_t k = bi - 1; k >= 1; --k) path.directed_nodes.push_back({ast.node(b[k]).label, Direction::Down});
      out.push_back(std::move(path));
    }
  }
  return out;
}

struct OracleRun {
  int trees = 0;
  int mismatches = 0;
  std::size_t paths = 0;
  std::size_t cut_by_height = 0;  // pairs the limits removed
  std::size_t cut_by_width = 0;
  std::string first_failure;
};

inline OracleRun run_path_oracle(int trees, std::uint64_t seed, int max_height = 8, int max_width = 3,
                                 std::size_t max_leaves = 12) {
  OracleRun run;
  Rng rng(seed);
  for (int t = 0; t < trees; ++t) {
    const Ast ast = random_tree(rng, max_leaves);
    const auto expected = oracle_paths(ast, max_height, max_width);
    const auto got = extract_paths(ast, max_height, max_width, 500, 1);
    ++run.trees;
    run.paths += expected.size();
    const std::size_t all = oracle_paths(ast, 1000, 1000).size();
    const std::size_t width_ok = oracle_paths(ast, 1000, max_width).size();
    run.cut_by_width += all - width_ok;
    run.cut_by_height += width_ok - expected.size();
    if (got != expected) {
      if (run.mismatches == 0)
        run.first_failure = "tree " + std::to_string(t) + ": expected " + std::to_string(expected.size()) +
                            " paths, got " + std::to_string(got.size());
      ++run.mismatches;
    }
  }
  return run;
}

// ---------------------------------------------------------------- gradients

// One finite-difference check: `forward` binds every tensor of `wrt` as a
// parameter and returns any matrix; the checked scalar is a fixed random
// weighting of its entries.
struct GradCase {
  std::string name;
  std::vector<nn::Tensor*> wrt;
  std::function<nn::Var(nn::Graph&)> forward;
};

struct GradResult {
  std::string name;
  double rel_error = 0.0;  // |ga - gn| / max(|ga|, |gn|) over the concatenated gradient
  double grad_norm = 0.0;
};

// step should be a power of two: inputs are snapped to a 2^-12 grid first,
// so every perturbed value is exact in float.
inline GradResult check_gradient(const GradCase& c, double step = 0x1.0p-6) {
  for (nn::Tensor* t : c.wrt) {
    t->enable_grad();
    t->zero_grad();
    for (auto& x : t->data) x = std::ldexp(std::nearbyint(std::ldexp(x, 12)), -12);
  }
  std::vector<double> weights;
  auto weight_for = [&](std::size_t n) {
    if (weights.size() != n) {
      Rng rng(99);
      weights.resize(n);
      for (auto& w : weights) w = rng.uniform(-1.0f, 1.0f);
    }
  };
  auto objective = [&]() {
    nn::Graph g(false);
    const auto& v = g.value(c.forward(g)).data;
    weight_for(v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += weights[i] * static_cast<double>(v[i]);
    return s;
  };
  objective();  // fixes the weight vector size

  {
    nn::Graph g;
    const nn::Var out = c.forward(g);
    nn::Tensor w = nn::Tensor::matrix(g.value(out).rows(), g.value(out).cols());
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = static_cast<float>(weights[i]);
    g.backward(nn::sum_all(nn::mul(out, g.constant(w))));
  }

  // norm-wise over the whole gradient, all wrt tensors concatenated
  double diff = 0.0, na = 0.0, nn_ = 0.0;
  for (nn::Tensor* t : c.wrt) {
    for (std::size_t i = 0; i < t->data.size(); ++i) {
      const float orig = t->data[i];
      auto at = [&](double offset) {
        t->data[i] = orig + static_cast<float>(offset);
        return objective();
      };
      const double f1 = at(step), f_1 = at(-step), f2 = at(2 * step), f_2 = at(-2 * step);
      t->data[i] = orig;
      // fourth-order central stencil
      const double numeric = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * step);
      const double analytic = t->grad[i];
      diff += (numeric - analytic) * (numeric - analytic);
      na += analytic * analytic;
      nn_ += numeric * numeric;
    }
  }
  GradResult r{c.name, std::sqrt(diff) / std::max(std::sqrt(std::max(na, nn_)), 1e-12), std::sqrt(na)};
  return r;
}

// Owns the tensors of a set of cases.
class GradSuite {
 public:
  nn::Tensor& random(std::int64_t rows, std::int64_t cols, float lo = -1.0f, float hi = 1.0f) {
    nn::Tensor t = nn::Tensor::matrix(rows, cols);
    for (auto& x : t.data) x = rng_.uniform(lo, hi);
    store_.push_back(std::move(t));
    return store_.back();
  }
  // Random values kept away from zero, for ops with a kink there.
  nn::Tensor& away_from_zero(std::int64_t rows, std::int64_t cols) {
    nn::Tensor& t = random(rows, cols, 0.2f, 1.0f);
    for (auto& x : t.data)
      if (rng_.below(2)) x = -x;
    return t;
  }
  PscsModel& model(PscsModel m) {
    models_.push_back(std::move(m));
    return models_.back();
  }
  template <class T>
  T& keep(T value) {
    auto p = std::make_shared<T>(std::move(value));
    keep_.push_back(p);
    return *p;
  }
  void add(std::string name, std::vector<nn::Tensor*> wrt, std::function<nn::Var(nn::Graph&)> f) {
    cases_.push_back({std::move(name), std::move(wrt), std::move(f)});
  }
  const std::vector<GradCase>& cases() const { return cases_; }

 private:
  Rng rng_{2024};
  std::deque<nn::Tensor> store_;
  std::deque<PscsModel> models_;
  std::vector<std::shared_ptr<void>> keep_;
  std::vector<GradCase> cases_;
};

// Tiny model: every tensor dimension stays at or below 8.
inline HyperParams tiny_hyper() {
  HyperParams hp;
  hp.d = 2;
  hp.hidden = 2;
  hp.q = 4;
  hp.m = 2;
  hp.l = 3;
  hp.g = 4;
  hp.dropout = 0.0f;
  hp.batch = 2;
  return hp;
}

// Two snippets with two and three paths, three-word queries.
inline CodeBatch tiny_code_batch(const HyperParams& hp) {
  std::vector<PathBag> bags(2);
  const std::int32_t terms[][2] = {{2, 3}, {4, 0}, {5, 6}, {3, 0}, {6, 2}};
  const std::int32_t seqs[][3] = {{2, 3, 4}, {5, 2, 0}, {3, 3, 0}, {4, 0, 0}, {2, 5, 3}};
  int k = 0;
  for (std::size_t b = 0; b < 2; ++b) {
    const int n = b == 0 ? 2 : 3;
    for (int j = 0; j < n; ++j, ++k) {
      PathContext c = PathContext::padding(static_cast<std::size_t>(hp.m), static_cast<std::size_t>(hp.l));
      for (int s = 0; s < hp.m; ++s) {
        c.start_ids[static_cast<std::size_t>(s)] = terms[k][s];
        c.start_mask[static_cast<std::size_t>(s)] = terms[k][s] != 0;
        c.end_ids[static_cast<std::size_t>(s)] = terms[(k + 2) % 5][s];
        c.end_mask[static_cast<std::size_t>(s)] = terms[(k + 2) % 5][s] != 0;
      }
      for (int s = 0; s < hp.l; ++s) {
        c.node_ids[static_cast<std::size_t>(s)] = seqs[k][s];
        c.node_mask[static_cast<std::size_t>(s)] = seqs[k][s] != 0;
      }
      bags[b].contexts.push_back(c);
      bags[b].path_mask.push_back(1);
    }
  }
  return CodeBatch::from_bags(bags);
}

inline QueryBatch tiny_query_batch() {
  QueryBatch q;
  const std::int32_t a[] = {2, 4, 6};
  const std::int32_t b[] = {3, 5, 5};
  q.add_ids(a);
  q.add_ids(b);
  return q;
}

// Every differentiable op plus the composed ranking loss of each model
// variant.
inline GradSuite gradient_suite() {
  using namespace nn;
  GradSuite s;

  {
    auto& a = s.random(3, 4);
    auto& b = s.random(4, 2);
    s.add("matmul", {&a, &b}, [&a, &b](Graph& g) { return matmul(g.parameter(a), g.parameter(b)); });
  }
  {
    auto& a = s.random(3, 4);
    auto& b = s.random(5, 4);
    s.add("linear", {&a, &b}, [&a, &b](Graph& g) { return linear(g.parameter(a), g.parameter(b)); });
  }
  {
    auto& a = s.random(2, 3);
    auto& b = s.random(2, 3);
    s.add("add_sub_mul", {&a, &b}, [&a, &b](Graph& g) {
      const Var x = g.parameter(a), y = g.parameter(b);
      return mul(add(x, y), sub(x, y));
    });
  }
  {
    auto& a = s.random(3, 4);
    auto& r = s.random(1, 4);
    s.add("add_row_scale_shift", {&a, &r}, [&a, &r](Graph& g) {
      return add_scalar(scale(add_row(g.parameter(a), g.parameter(r)), 1.5f), 0.3f);
    });
  }
  {
    auto& a = s.random(3, 3, -2.0f, 2.0f);
    s.add("sigmoid", {&a}, [&a](Graph& g) { return sigmoid(g.parameter(a)); });
    s.add("tanh", {&a}, [&a](Graph& g) { return nn::tanh(g.parameter(a)); });
  }
  {
    auto& a = s.away_from_zero(3, 3);
    s.add("relu", {&a}, [&a](Graph& g) { return relu(g.parameter(a)); });
  }
  {
    auto& a = s.random(3, 2);
    auto& b = s.random(3, 3);
    s.add("concat_slice", {&a, &b}, [&a, &b](Graph& g) {
      const Var parts[] = {g.parameter(a), g.parameter(b)};
      const Var c = concat_cols(parts);
      return mul(slice_cols(c, 1, 3), slice_cols(c, 2, 3));
    });
  }
  {
    auto& a = s.random(4, 3);
    s.add("gather_rows", {&a}, [&a](Graph& g) {
      const std::int32_t rows[] = {2, 0, 2, 3};
      return gather_rows(g.parameter(a), rows);
    });
  }
  {
    auto& table = s.random(6, 4);
    s.add("embedding_lookup", {&table}, [&table](Graph& g) {
      const std::int32_t ids[] = {2, 5, 2, 0, 1};
      const std::uint8_t mask[] = {1, 1, 1, 0, 1};
      return embedding_lookup(g.parameter(table), ids, mask);
    });
    s.add("embedding_bag", {&table}, [&table](Graph& g) {
      const std::int32_t ids[] = {2, 5, 0, 3, 3, 1};
      const std::uint8_t mask[] = {1, 1, 0, 1, 1, 1};
      return embedding_bag(g.parameter(table), ids, mask, 3);
    });
  }
  {
    auto& x = s.random(5, 3);
    auto& logits = s.random(5, 1, -2.0f, 2.0f);
    s.add("segment_mean", {&x}, [&x](Graph& g) {
      const std::int32_t off[] = {0, 2, 5};
      return segment_mean(g.parameter(x), off);
    });
    s.add("segment_softmax", {&logits}, [&logits](Graph& g) {
      const std::int32_t off[] = {0, 3, 5};
      return segment_softmax(g.parameter(logits), off);
    });
    s.add("segment_weighted_sum", {&x, &logits}, [&x, &logits](Graph& g) {
      const std::int32_t off[] = {0, 1, 5};
      return segment_weighted_sum(g.parameter(x), g.parameter(logits), off);
    });
  }
  {
    auto& a = s.random(3, 4);
    auto& b = s.random(3, 4);
    s.add("rowwise_dot", {&a, &b}, [&a, &b](Graph& g) { return rowwise_dot(g.parameter(a), g.parameter(b)); });
    s.add("cosine_rows", {&a, &b}, [&a, &b](Graph& g) { return cosine_rows(g.parameter(a), g.parameter(b), 1e-8f); });
  }
  {
    auto& logits = s.random(1, 6, -2.0f, 2.0f);
    s.add("softmax", {&logits}, [&logits](Graph& g) {
      const std::uint8_t mask[] = {1, 1, 0, 1, 1, 0};
      return softmax(g.parameter(logits), mask);
    });
  }
  {
    auto& a = s.random(2, 4);
    s.add("sum_mean_all", {&a}, [&a](Graph& g) {
      const Var x = g.parameter(a);
      return add(sum_all(mul(x, x)), mean_all(x));
    });
    s.add("dropout_train", {&a}, [&a](Graph& g) {
      Rng rng(5);
      return dropout(g.parameter(a), 0.5f, true, rng);
    });
  }
  {
    // H = 2: state [B, 4], w_ih [8, 3], w_hh [8, 2], bias [1, 8]
    auto& x = s.random(2, 3);
    auto& st = s.random(2, 4, -0.5f, 0.5f);
    auto& wih = s.random(8, 3, -0.6f, 0.6f);
    auto& whh = s.random(8, 2, -0.6f, 0.6f);
    auto& bias = s.random(1, 8, -0.3f, 0.3f);
    s.add("lstm_step", {&x, &st, &wih, &whh, &bias}, [&](Graph& g) {
      const std::uint8_t mask[] = {1, 0};
      return lstm_step(g.parameter(x), g.parameter(st), g.parameter(wih), g.parameter(whh), g.parameter(bias), mask);
    });
    s.add("lstm_unrolled_4", {&wih, &whh, &bias, &x}, [&](Graph& g) {
      const Var w1 = g.parameter(wih), w2 = g.parameter(whh), b = g.parameter(bias), xs = g.parameter(x);
      Var state = g.constant(Tensor::matrix(1, 4));
      for (int t = 0; t < 4; ++t) state = lstm_step(gather_rows(xs, std::vector<std::int32_t>{t % 2}), state, w1, w2, b);
      return state;
    });
    auto& wih_b = s.random(8, 3, -0.6f, 0.6f);
    auto& whh_b = s.random(8, 2, -0.6f, 0.6f);
    auto& bias_b = s.random(1, 8, -0.3f, 0.3f);
    auto& xs = s.random(4, 3);
    s.add("bilstm", {&xs, &wih, &whh, &bias, &wih_b, &whh_b, &bias_b}, [&](Graph& g) {
      const std::uint8_t mask[] = {1, 1, 1, 0};
      const LstmWeights f{g.parameter(wih), g.parameter(whh), g.parameter(bias)};
      const LstmWeights b{g.parameter(wih_b), g.parameter(whh_b), g.parameter(bias_b)};
      const BiLstmOutput o = bilstm(g.parameter(xs), mask, f, b);
      const Var finals[] = {o.final_fwd, o.final_bwd};
      const Var both = concat_cols(finals);
      return add(slice_cols(o.outputs, 0, 4), gather_rows(both, std::vector<std::int32_t>{0, 0, 0, 0}));
    });
    s.add("bilstm_final", {&xs, &wih, &whh, &bias, &wih_b, &whh_b, &bias_b}, [&](Graph& g) {
      const LstmWeights f{g.parameter(wih), g.parameter(whh), g.parameter(bias)};
      const LstmWeights b{g.parameter(wih_b), g.parameter(whh_b), g.parameter(bias_b)};
      const Var x = g.parameter(xs);
      // batch of two sequences of three steps, the second one two long
      std::vector<Var> steps;
      for (int t = 0; t < 3; ++t) steps.push_back(gather_rows(x, std::vector<std::int32_t>{t, t + 1}));
      const std::vector<std::vector<std::uint8_t>> masks = {{1, 1}, {1, 1}, {1, 0}};
      return bilstm_final(steps, masks, f, b, 2);
    });
  }
  {
    auto& e1 = s.random(7, 2, -0.5f, 0.5f);
    auto& wa = s.random(8, 8, -0.5f, 0.5f);
    auto& pv = s.random(5, 8);
    s.add("encode_terminal", {&e1}, [&e1](Graph& g) {
      const std::int32_t ids[] = {2, 3, 4, 0};
      const std::uint8_t mask[] = {1, 1, 1, 0};
      return encode_terminal(g.parameter(e1), ids, mask, 2);
    });
    s.add("attend_paths", {&pv, &wa}, [&pv, &wa](Graph& g) {
      const std::int32_t off[] = {0, 2, 5};
      return attend_paths(g.parameter(pv), off, g.parameter(wa));
    });
  }
  {
    auto& qp = s.random(3, 4);
    auto& qn = s.random(3, 4);
    auto& vc = s.random(3, 4);
    // keep every hinge term away from its kink
    s.add("ranking_loss", {&qp, &qn, &vc}, [&](Graph& g) {
      return ranking_loss(g.parameter(qp), g.parameter(qn), g.parameter(vc), 3.0f, 1e-8f);
    });
  }

  // Composed loss: 2 snippets, 2 and 3 paths, 3-word queries, negatives
  // swapped, exactly as one training batch is built. Shapes per variant keep
  // every axis at or below 8.
  struct Variant {
    const char* flags;
    std::int32_t d, hidden;
  };
  const Variant variants[] = {{"full", 3, 1},          {"tokens_only", 4, 1},        {"nodes_only", 4, 2},
                              {"no_code_attention", 3, 1}, {"no_query_attention", 3, 1}, {"no_shared_embedding", 3, 1},
                              {"no_bilstm", 3, 1}};
  for (const auto& v : variants) {
    HyperParams hp = tiny_hyper();
    hp.d = v.d;
    hp.hidden = v.hidden;
    PscsModel& model = s.model(PscsModel::create(hp, AblationConfig::parse(v.flags), 7, 7, 11));
    // Larger weights than the initializer gives, so the code and query
    // vectors sit well away from the origin where cosine bends sharply.
    for (const auto& name : model.params().names())
      for (auto& x : model.params().get(name).data) x *= name.rfind("e", 0) == 0 ? 4.0f : 2.0f;
    const CodeBatch& code = s.keep(tiny_code_batch(hp));
    const QueryBatch& queries = s.keep(tiny_query_batch());
    s.add(std::string("composed_loss/") + v.flags, model.params().tensors(), [&model, &code, &queries](Graph& g) {
      const BoundParams bound = model.bind(g);
      Rng rng(1);
      const Var v_code = model.encode_code(g, bound, code, false, rng);
      const Var v_query = model.encode_query(g, bound, queries);
      const Var v_neg = gather_rows(v_query, std::vector<std::int32_t>{1, 0});
      return ranking_loss(v_query, v_neg, v_code, 2.5f, 1e-8f);
    });
  }
  return s;
}

// ---------------------------------------------------------------- metrics

// Spreadsheet-style evaluation: one pass per quantity, in doubles.
inline double oracle_success_rate(const std::vector<Rank>& ranks, std::int64_t k) {
  if (ranks.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& r : ranks)
    if (r && *r >= 1 && *r <= k) hits += 1.0;
  return hits / static_cast<double>(ranks.size());
}

inline double oracle_mrr(const std::vector<Rank>& ranks, std::int64_t k) {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : ranks)
    if (r && *r >= 1 && *r <= k) total += 1.0 / static_cast<double>(*r);
  return total / static_cast<double>(ranks.size());
}

inline std::vector<Rank> random_ranks(Rng& rng, std::size_t max_n = 40, std::int64_t max_rank = 25) {
  std::vector<Rank> out(1 + rng.below(max_n));
  for (auto& r : out)
    if (rng.below(5) != 0) r = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(max_rank)));
  return out;
}

}  // namespace pscs::testing
