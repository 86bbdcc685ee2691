#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "../support.hpp"
#include "pscs/model.hpp"

using namespace pscs;
using namespace pscs::nn;

namespace {

std::vector<double> row_of(const Tensor& t, std::int64_t r) {
  std::vector<double> out;
  for (std::int64_t c = 0; c < t.cols(); ++c) out.push_back(t.at(r, c));
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// (W x) with W stored [out, in]
std::vector<double> mat_vec(const Tensor& w, const std::vector<double>& x) {
  std::vector<double> out(static_cast<std::size_t>(w.rows()), 0.0);
  for (std::int64_t r = 0; r < w.rows(); ++r)
    for (std::int64_t c = 0; c < w.cols(); ++c) out[static_cast<std::size_t>(r)] += w.at(r, c) * x[static_cast<std::size_t>(c)];
  return out;
}

// softmax((W e_j) . mean(e)) weighted sum of rows
std::vector<double> attention_oracle(const std::vector<std::vector<double>>& rows, const Tensor& w,
                                     std::vector<double>* weights = nullptr) {
  const std::size_t n = rows.size(), F = rows[0].size();
  std::vector<double> ctx(F, 0.0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < F; ++k) ctx[k] += r[k] / static_cast<double>(n);
  std::vector<double> logits;
  for (const auto& r : rows) logits.push_back(dot(mat_vec(w, r), ctx));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  std::vector<double> out(F, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < F; ++k) out[k] += logits[j] / z * rows[j][k];
  if (weights) {
    weights->clear();
    for (auto l : logits) weights->push_back(l / z);
  }
  return out;
}

HyperParams small_hp() {
  HyperParams hp;
  hp.d = 4;
  hp.hidden = 3;
  hp.q = 6;
  hp.m = 3;
  hp.l = 4;
  hp.g = 5;
  hp.dropout = 0.0f;
  return hp;
}

Tensor value_of(Graph& g, Var v) { return g.value(v); }

}  // namespace

TEST_CASE("hyperparameters and ablation flags") {
  HyperParams hp;
  CHECK(hp.d == 128);
  CHECK(hp.hidden == 128);
  CHECK(hp.q == 20);
  CHECK(hp.l == 12);
  CHECK(hp.g == 100);
  CHECK(hp.margin == 1.0f);
  CHECK(hp.lr == doctest::Approx(1e-4));
  CHECK(hp.batch == 64);
  CHECK(path_vector_width(hp, {}) == 2 * 128 + 2 * 128);
  hp.d = 0;
  CHECK_THROWS_AS(hp.validate(), InvalidArgument);

  const AblationConfig a = AblationConfig::parse("no_bilstm,no_query_attention");
  CHECK(a.no_bilstm);
  CHECK(a.no_query_attention);
  CHECK(AblationConfig::from_bits(a.bits()) == a);
  CHECK(AblationConfig::parse(a.to_string()) == a);
  CHECK(AblationConfig::parse("full").is_full());
  CHECK(AblationConfig::parse("").to_string() == "full");
  CHECK_THROWS_AS(AblationConfig::parse("tokens_only,nodes_only"), InvalidArgument);
  CHECK_THROWS_AS(AblationConfig::parse("bogus"), InvalidArgument);
  CHECK_THROWS_AS(AblationConfig::from_bits(1u << 20), FormatError);
}

TEST_CASE("expected tensors per variant") {
  const HyperParams hp = small_hp();
  auto names = [&](const char* v) {
    std::vector<std::string> out;
    for (const auto& [n, shape] : expected_tensors(hp, AblationConfig::parse(v), 10, 8)) out.push_back(n);
    return out;
  };
  const auto full = names("full");
  for (const char* n : {"e1", "e2", "lstm_fwd.w_ih", "lstm_bwd.w_hh", "w_a", "w_b", "w_fuse"})
    CHECK(std::find(full.begin(), full.end(), n) != full.end());
  const auto tok = names("tokens_only");
  CHECK(std::find(tok.begin(), tok.end(), "e2") == tok.end());
  const auto sep = names("no_shared_embedding");
  CHECK(std::find(sep.begin(), sep.end(), "e1_query") != sep.end());
  const auto nob = names("no_bilstm");
  CHECK(std::find(nob.begin(), nob.end(), "w_node_proj") != nob.end());
  CHECK(std::find(nob.begin(), nob.end(), "lstm_fwd.w_ih") == nob.end());
  for (const auto& [n, shape] : expected_tensors(hp, {}, 10, 8)) {
    if (n == "w_a") CHECK(shape == std::vector<std::int64_t>{14, 14});
    if (n == "w_b") CHECK(shape == std::vector<std::int64_t>{4, 4});
    if (n == "w_fuse") CHECK(shape == std::vector<std::int64_t>{4, 14});
  }
}

TEST_CASE("initialization ranges") {
  HyperParams hp = small_hp();
  const ModelParams p = init_params(hp, {}, 50, 20, 3);
  for (const char* e : {"e1", "e2"})
    for (float x : p.get(e).data) CHECK(std::abs(x) <= 0.1f);
  const Tensor& bias = p.get("lstm_fwd.bias");
  for (std::int64_t j = 0; j < 4 * hp.hidden; ++j) {
    const bool forget = j >= hp.hidden && j < 2 * hp.hidden;
    CHECK(bias.data[static_cast<std::size_t>(j)] == (forget ? 1.0f : 0.0f));
  }
  const Tensor& wa = p.get("w_a");
  const float bound = 1.0f / std::sqrt(static_cast<float>(wa.cols()));
  for (float x : wa.data) CHECK(std::abs(x) <= bound);
  CHECK(init_params(hp, {}, 50, 20, 3).get("w_a").data == wa.data);
}

TEST_CASE("encode_terminal sums real subtoken embeddings") {
  Rng rng(1);
  Tensor e1 = Tensor::matrix(6, 3);
  for (auto& x : e1.data) x = rng.uniform(-1, 1);
  Graph g;
  const Var t = g.constant(e1);
  const std::int32_t ids[] = {2, 0, 0, 2, 4, 0, 4, 2, 0, 3, 3, 3};
  const std::uint8_t mask[] = {1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0};
  const Tensor out = value_of(g, encode_terminal(t, ids, mask, 3));
  for (std::int64_t c = 0; c < 3; ++c) {
    CHECK(out.at(0, c) == e1.at(2, c));
    CHECK(out.at(1, c) == doctest::Approx(e1.at(2, c) + e1.at(4, c)));
    CHECK(out.at(1, c) == out.at(2, c));
    CHECK(out.at(3, c) == 0.0f);
  }
}

TEST_CASE("attend_paths: trivial cases and scalar oracle") {
  Rng rng(2);
  Tensor wa = Tensor::matrix(4, 4);
  for (auto& x : wa.data) x = rng.uniform(-1, 1);
  Tensor pv = Tensor::matrix(6, 4);
  for (auto& x : pv.data) x = rng.uniform(-1, 1);
  for (std::int64_t c = 0; c < 4; ++c) pv.at(2, c) = pv.at(1, c);  // rows 1, 2 identical

  Graph g;
  const std::int32_t off[] = {0, 1, 3, 6};
  const Tensor alpha = value_of(g, attend_paths(g.constant(pv), off, g.constant(wa)));
  CHECK(alpha.data[0] == doctest::Approx(1.0));
  CHECK(alpha.data[1] == doctest::Approx(0.5));
  CHECK(alpha.data[2] == doctest::Approx(0.5));
  std::vector<double> expect;
  attention_oracle({row_of(pv, 3), row_of(pv, 4), row_of(pv, 5)}, wa, &expect);
  for (int j = 0; j < 3; ++j) CHECK(alpha.data[static_cast<std::size_t>(3 + j)] == doctest::Approx(expect[static_cast<std::size_t>(j)]).epsilon(1e-5));
}

TEST_CASE("encode_query: trivial cases and scalar oracle") {
  const HyperParams hp = small_hp();
  PscsModel model = PscsModel::create(hp, {}, 12, 8, 5);
  const Tensor& e1 = model.params().get("e1");
  const Tensor& wb = model.params().get("w_b");

  QueryBatch qb;
  const std::int32_t one[] = {7};
  const std::int32_t rep3[] = {5, 5, 5};
  const std::int32_t rep1[] = {5};
  const std::int32_t four[] = {2, 9, 4, 11};
  qb.add_ids(one);
  qb.add_ids(rep3);
  qb.add_ids(rep1);
  qb.add_ids(four);
  const auto v = model.query_vectors(qb);
  const auto d = static_cast<std::size_t>(hp.d);
  for (std::size_t k = 0; k < d; ++k) {
    CHECK(v[k] == doctest::Approx(e1.at(7, static_cast<std::int64_t>(k))));
    CHECK(v[d + k] == doctest::Approx(v[2 * d + k]).epsilon(1e-6));
  }
  const auto expect = attention_oracle({row_of(e1, 2), row_of(e1, 9), row_of(e1, 4), row_of(e1, 11)}, wb);
  for (std::size_t k = 0; k < d; ++k) CHECK(v[3 * d + k] == doctest::Approx(expect[k]).epsilon(1e-5));
  CHECK_THROWS(qb.add_ids(std::span<const std::int32_t>{}));
}

TEST_CASE("encode_code: fusion over attended path vectors") {
  const CodeBatch code = testing::tiny_code_batch(testing::tiny_hyper());
  const HyperParams thp = testing::tiny_hyper();
  PscsModel model = PscsModel::create(thp, {}, 7, 7, 9);
  Graph g;
  const BoundParams bound = model.bind(g);
  Rng rng(1);
  const Tensor pv = value_of(g, model.encode_path_vectors(g, bound, code, false, rng));
  const Tensor vc = value_of(g, model.encode_code(g, bound, code, false, rng));
  CHECK(vc.rows() == 2);
  CHECK(vc.cols() == thp.d);
  const Tensor& wa = model.params().get("w_a");
  const Tensor& wf = model.params().get("w_fuse");
  for (int s = 0; s < 2; ++s) {
    std::vector<std::vector<double>> rows;
    for (auto j = code.path_offsets[static_cast<std::size_t>(s)]; j < code.path_offsets[static_cast<std::size_t>(s) + 1]; ++j)
      rows.push_back(row_of(pv, j));
    const auto expect = mat_vec(wf, attention_oracle(rows, wa));
    for (std::int64_t k = 0; k < thp.d; ++k) CHECK(vc.at(s, k) == doctest::Approx(expect[static_cast<std::size_t>(k)]).epsilon(1e-5));
  }
}

TEST_CASE("ranking loss examples") {
  Graph g;
  auto row = [&](std::vector<float> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return g.constant(Tensor::matrix(1, n, std::move(v)));
  };
  const Var code = row({1, 0});
  CHECK(g.value(ranking_loss(row({2, 0}), row({-3, 0}), code, 1.0f, 1e-8f)).data[0] == doctest::Approx(0.0));
  CHECK(g.value(ranking_loss(row({0.3f, 0.7f}), row({0.3f, 0.7f}), code, 1.0f, 1e-8f)).data[0] == doctest::Approx(1.0));
  const float pos = 0.2f, neg = 0.5f;
  const Var qp = row({pos, std::sqrt(1 - pos * pos)}), qn = row({neg, std::sqrt(1 - neg * neg)});
  CHECK(g.value(ranking_loss(qp, qn, code, 1.0f, 1e-8f)).data[0] == doctest::Approx(1.3).epsilon(1e-6));

  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    Tensor a = Tensor::matrix(3, 4), b = Tensor::matrix(3, 4), c = Tensor::matrix(3, 4);
    for (Tensor* x : {&a, &b, &c})
      for (auto& v : x->data) v = rng.uniform(-1, 1);
    const float l = g.value(ranking_loss(g.constant(a), g.constant(b), g.constant(c), 1.0f, 1e-8f)).data[0];
    CHECK(l >= 0.0f);
    CHECK(l <= 3.0f + 1e-6f);
  }
}

TEST_CASE("shared embedding reaches both encoders") {
  const HyperParams hp = testing::tiny_hyper();
  const CodeBatch code = testing::tiny_code_batch(hp);
  const QueryBatch queries = testing::tiny_query_batch();
  PscsModel model = PscsModel::create(hp, {}, 7, 7, 2);
  const auto q0 = model.query_vectors(queries);
  const auto c0 = model.code_vectors(code);
  for (auto& x : model.params().get("e1").data) x += 0.05f;
  CHECK(model.query_vectors(queries) != q0);
  CHECK(model.code_vectors(code) != c0);

  PscsModel split = PscsModel::create(hp, AblationConfig::parse("no_shared_embedding"), 7, 7, 2);
  split.params().enable_grad();
  split.params().zero_grad();
  {
    Graph g;
    const BoundParams b = split.bind(g);
    g.backward(sum_all(split.encode_query(g, b, queries)));
  }
  auto nonzero = [](const Tensor& t) {
    return std::any_of(t.grad.begin(), t.grad.end(), [](float x) { return x != 0.0f; });
  };
  CHECK(nonzero(split.params().get("e1_query")));
  CHECK_FALSE(nonzero(split.params().get("e1")));
  split.params().zero_grad();
  {
    Graph g;
    const BoundParams b = split.bind(g);
    Rng rng(1);
    g.backward(sum_all(split.encode_code(g, b, code, false, rng)));
  }
  CHECK(nonzero(split.params().get("e1")));
  CHECK_FALSE(nonzero(split.params().get("e1_query")));
}

TEST_CASE("permuting paths or query words leaves the vectors unchanged") {
  const HyperParams hp = testing::tiny_hyper();
  PscsModel model = PscsModel::create(hp, {}, 7, 7, 4);
  const CodeBatch code = testing::tiny_code_batch(hp);

  // reverse the path order of each snippet through the bag form
  std::vector<PathBag> bags(2), reversed(2);
  for (std::size_t s = 0; s < 2; ++s) {
    for (auto j = code.path_offsets[s]; j < code.path_offsets[s + 1]; ++j) {
      PathContext c = PathContext::padding(2, 3);
      const auto J = static_cast<std::size_t>(j);
      std::copy_n(code.start_ids.begin() + static_cast<long>(J * 2), 2, c.start_ids.begin());
      std::copy_n(code.start_mask.begin() + static_cast<long>(J * 2), 2, c.start_mask.begin());
      std::copy_n(code.end_ids.begin() + static_cast<long>(J * 2), 2, c.end_ids.begin());
      std::copy_n(code.end_mask.begin() + static_cast<long>(J * 2), 2, c.end_mask.begin());
      const auto q = static_cast<std::size_t>(code.path_seq[J]) * 3;
      std::copy_n(code.seq_ids.begin() + static_cast<long>(q), 3, c.node_ids.begin());
      std::copy_n(code.seq_mask.begin() + static_cast<long>(q), 3, c.node_mask.begin());
      bags[s].contexts.push_back(c);
      bags[s].path_mask.push_back(1);
    }
    reversed[s].contexts.assign(bags[s].contexts.rbegin(), bags[s].contexts.rend());
    reversed[s].path_mask = bags[s].path_mask;
  }
  const auto a = model.code_vectors(CodeBatch::from_bags(bags));
  const auto b = model.code_vectors(CodeBatch::from_bags(reversed));
  CHECK(a == model.code_vectors(code));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));

  QueryBatch q1, q2;
  const std::int32_t w1[] = {2, 4, 6, 3}, w2[] = {6, 3, 2, 4};
  q1.add_ids(w1);
  q2.add_ids(w2);
  const auto x = model.query_vectors(q1), y = model.query_vectors(q2);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-5));
}

TEST_CASE("every variant encodes into d dimensions") {
  const HyperParams hp = testing::tiny_hyper();
  const CodeBatch code = testing::tiny_code_batch(hp);
  const QueryBatch queries = testing::tiny_query_batch();
  for (const char* v : {"full", "tokens_only", "nodes_only", "no_code_attention", "no_query_attention",
                        "no_shared_embedding", "no_bilstm", "no_bilstm,no_code_attention,no_query_attention"}) {
    PscsModel model = PscsModel::create(hp, AblationConfig::parse(v), 7, 7, 1);
    CHECK(model.code_vectors(code).size() == 2u * static_cast<std::size_t>(hp.d));
    CHECK(model.query_vectors(queries).size() == 2u * static_cast<std::size_t>(hp.d));
  }
}

TEST_CASE("uniform attention under the attention ablations") {
  const HyperParams hp = testing::tiny_hyper();
  const QueryBatch queries = testing::tiny_query_batch();
  PscsModel model = PscsModel::create(hp, AblationConfig::parse("no_query_attention"), 7, 7, 1);
  const auto v = model.query_vectors(queries);
  const Tensor& e1 = model.params().get("e1");
  for (std::int64_t k = 0; k < hp.d; ++k)
    CHECK(v[static_cast<std::size_t>(k)] == doctest::Approx((e1.at(2, k) + e1.at(4, k) + e1.at(6, k)) / 3.0));

  PscsModel full = PscsModel::create(hp, {}, 7, 7, 1);
  full.override_attention(false, true);
  CHECK(full.query_vectors(queries) == v);
  CHECK_THROWS(model.override_attention(false, false));
}

TEST_CASE("dropout off makes encoding deterministic") {
  HyperParams hp = testing::tiny_hyper();
  hp.dropout = 0.25f;
  const CodeBatch code = testing::tiny_code_batch(hp);
  PscsModel model = PscsModel::create(hp, {}, 7, 7, 1);
  CHECK(model.code_vectors(code) == model.code_vectors(code));
}

TEST_CASE("checkpoint round trip is bit-identical; corruption is rejected") {
  const HyperParams hp = small_hp();
  for (const char* v : {"full", "no_bilstm,no_shared_embedding", "tokens_only"}) {
    const PscsModel model = PscsModel::create(hp, AblationConfig::parse(v), 20, 9, 8);
    std::ostringstream a;
    save_checkpoint(a, model);
    std::istringstream in(a.str());
    const PscsModel back = load_checkpoint(in);
    CHECK(back.hyper() == model.hyper());
    CHECK(back.ablation() == model.ablation());
    std::ostringstream b;
    save_checkpoint(b, back);
    CHECK(a.str() == b.str());
  }
  std::ostringstream out;
  save_checkpoint(out, PscsModel::create(hp, {}, 20, 9, 8));
  const std::string bytes = out.str();
  CHECK(bytes.substr(0, 4) == "PSCS");

  auto load_error = [](std::string data) -> std::string {
    std::istringstream in(data);
    try {
      load_checkpoint(in);
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  };
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK(load_error(bad).find("bad magic") != std::string::npos);
  bad = bytes;
  bad[4] = 9;
  CHECK(load_error(bad).find("unsupported version 9") != std::string::npos);
  CHECK(load_error(bytes.substr(0, bytes.size() - 3)).find("truncated") != std::string::npos);
  CHECK_FALSE(load_error(bytes + "x").empty());
}
