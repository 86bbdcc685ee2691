#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "../support.hpp"
#include "pscs/numerics.hpp"

using namespace pscs;
using namespace pscs::nn;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Gate equations written out one scalar at a time.
void scalar_lstm(const Tensor& x, std::vector<double>& h, std::vector<double>& c, const Tensor& w_ih,
                 const Tensor& w_hh, const Tensor& b) {
  const std::size_t H = h.size();
  std::vector<double> pre(4 * H);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    double s = b.data[r];
    for (std::int64_t k = 0; k < x.cols(); ++k) s += w_ih.at(static_cast<std::int64_t>(r), k) * x.data[static_cast<std::size_t>(k)];
    for (std::size_t k = 0; k < H; ++k) s += w_hh.at(static_cast<std::int64_t>(r), static_cast<std::int64_t>(k)) * h[k];
    pre[r] = s;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double i = sig(pre[j]), f = sig(pre[H + j]), g = std::tanh(pre[2 * H + j]), o = sig(pre[3 * H + j]);
    c[j] = f * c[j] + i * g;
    h[j] = o * std::tanh(c[j]);
  }
}

Tensor rand_matrix(Rng& rng, std::int64_t r, std::int64_t c, float s = 1.0f) {
  Tensor t = Tensor::matrix(r, c);
  for (auto& x : t.data) x = rng.uniform(-s, s);
  return t;
}

}  // namespace

TEST_CASE("embedding lookup gathers rows and zeroes masked ones") {
  Tensor table = Tensor::matrix(4, 4);
  for (int r = 0; r < 4; ++r) table.at(r, r) = 1.0f;
  Graph g;
  const std::int32_t ids[] = {2, 3, 0};
  const std::uint8_t mask[] = {1, 1, 0};
  const Tensor& out = g.value(embedding_lookup(g.constant(table), ids, mask));
  CHECK(out.data == std::vector<float>{0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0});
  const std::int32_t bad[] = {4};
  const std::uint8_t on[] = {1};
  CHECK_THROWS_AS(embedding_lookup(g.constant(table), bad, on), InvalidArgument);
}

TEST_CASE("embedding gradient counts ids") {
  Tensor table = Tensor::matrix(5, 2, 0.5f);
  table.enable_grad();
  Graph g;
  const std::int32_t ids[] = {1, 3, 1, 4, 1};
  const std::uint8_t mask[] = {1, 1, 1, 1, 0};
  g.backward(sum_all(embedding_lookup(g.parameter(table), ids, mask)));
  CHECK(table.grad == std::vector<float>{0, 0, 2, 2, 0, 0, 1, 1, 1, 1});
}

TEST_CASE("lstm_step: zeros give zero state, random case matches the scalar oracle") {
  {
    Graph g;
    const Var out = lstm_step(g.constant(Tensor::matrix(1, 3)), g.constant(Tensor::matrix(1, 6)),
                              g.constant(Tensor::matrix(12, 3)), g.constant(Tensor::matrix(12, 3)),
                              g.constant(Tensor::matrix(1, 12)));
    for (float v : g.value(out).data) CHECK(v == 0.0f);
  }
  Rng rng(4);
  const std::int64_t H = 3, d = 3;
  const Tensor w_ih = rand_matrix(rng, 4 * H, d), w_hh = rand_matrix(rng, 4 * H, H), b = rand_matrix(rng, 1, 4 * H);
  std::vector<double> h(H, 0.0), c(H, 0.0);
  Graph g;
  Var state = g.constant(Tensor::matrix(1, 2 * H));
  for (int t = 0; t < 4; ++t) {
    const Tensor x = rand_matrix(rng, 1, d);
    scalar_lstm(x, h, c, w_ih, w_hh, b);
    state = lstm_step(g.constant(x), state, g.constant(w_ih), g.constant(w_hh), g.constant(b));
  }
  const Tensor& s = g.value(state);
  for (std::int64_t j = 0; j < H; ++j) {
    CHECK(s.at(0, j) == doctest::Approx(h[static_cast<std::size_t>(j)]).epsilon(1e-5));
    CHECK(s.at(0, H + j) == doctest::Approx(c[static_cast<std::size_t>(j)]).epsilon(1e-5));
  }
}

TEST_CASE("bilstm is mask aware and matches two scalar passes") {
  Rng rng(8);
  const std::int64_t H = 2, d = 3;
  const Tensor fi = rand_matrix(rng, 4 * H, d), fh = rand_matrix(rng, 4 * H, H), fb = rand_matrix(rng, 1, 4 * H);
  const Tensor bi = rand_matrix(rng, 4 * H, d), bh = rand_matrix(rng, 4 * H, H), bb = rand_matrix(rng, 1, 4 * H);
  const Tensor xs = rand_matrix(rng, 4, d);
  const std::uint8_t mask[] = {1, 1, 1, 0};
  Graph g;
  const LstmWeights f{g.constant(fi), g.constant(fh), g.constant(fb)};
  const LstmWeights b{g.constant(bi), g.constant(bh), g.constant(bb)};
  const BiLstmOutput o = bilstm(g.constant(xs), mask, f, b);

  auto row = [&](int r) { return Tensor::matrix(1, d, std::vector<float>(xs.data.begin() + r * d, xs.data.begin() + (r + 1) * d)); };
  std::vector<double> h(H, 0.0), c(H, 0.0);
  for (int t = 0; t < 3; ++t) scalar_lstm(row(t), h, c, fi, fh, fb);
  std::vector<double> hb(H, 0.0), cb(H, 0.0);
  for (int t = 2; t >= 0; --t) scalar_lstm(row(t), hb, cb, bi, bh, bb);
  for (std::int64_t j = 0; j < H; ++j) {
    CHECK(g.value(o.final_fwd).at(0, j) == doctest::Approx(h[static_cast<std::size_t>(j)]).epsilon(1e-5));
    CHECK(g.value(o.final_bwd).at(0, j) == doctest::Approx(hb[static_cast<std::size_t>(j)]).epsilon(1e-5));
  }

  const std::uint8_t none[] = {0, 0, 0, 0};
  CHECK_THROWS(bilstm(g.constant(xs), none, f, b));
}

TEST_CASE("softmax") {
  Graph g;
  const std::uint8_t all[] = {1, 1, 1, 1};
  for (float v : g.value(softmax(g.constant(Tensor::matrix(1, 4, 0.7f)), all)).data) CHECK(v == doctest::Approx(0.25));
  const std::uint8_t two[] = {1, 1};
  const auto& w = g.value(softmax(g.constant(Tensor::matrix(1, 2, std::vector<float>{1000.0f, -1000.0f})), two)).data;
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(w[0]));

  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Tensor logits = rand_matrix(rng, 1, 6, 5.0f);
    std::vector<std::uint8_t> mask(6);
    for (auto& m : mask) m = rng.below(3) != 0;
    mask[rng.below(6)] = 1;
    const auto a = g.value(softmax(g.constant(logits), mask)).data;
    for (auto& x : logits.data) x += 3.0f;
    const auto b = g.value(softmax(g.constant(logits), mask)).data;
    double sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      sum += a[i];
      if (!mask[i]) CHECK(a[i] == 0.0f);
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("cosine and its delta clamp") {
  const std::vector<float> x = {1, 2, 3}, neg = {-1, -2, -3}, zero = {0, 0, 0};
  CHECK(cosine(x, x, 1e-8f) == doctest::Approx(1.0));
  CHECK(cosine(x, neg, 1e-8f) == doctest::Approx(-1.0));
  CHECK(cosine(zero, x, 1e-8f) == 0.0f);
  Graph g;
  const Var a = g.constant(Tensor::matrix(2, 3, std::vector<float>{1, 2, 3, 0, 0, 0}));
  const Var b = g.constant(Tensor::matrix(2, 3, std::vector<float>{2, 4, 6, 1, 1, 1}));
  const auto& c = g.value(cosine_rows(a, b, 1e-8f)).data;
  CHECK(c[0] == doctest::Approx(1.0));
  CHECK(c[1] == 0.0f);
}

TEST_CASE("dropout scales survivors and is identity at eval") {
  Graph g;
  Rng rng(3);
  const Tensor ones = Tensor::matrix(100, 100, 1.0f);
  const auto& train = g.value(dropout(g.constant(ones), 0.25f, true, rng)).data;
  std::size_t zeros = 0;
  for (float v : train) {
    if (v == 0.0f) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.75));
  }
  CHECK(zeros > 2300);
  CHECK(zeros < 2700);
  CHECK(g.value(dropout(g.constant(ones), 0.25f, false, rng)).data == ones.data);
}

TEST_CASE("gradients accumulate additively") {
  Tensor w = Tensor::matrix(1, 2, std::vector<float>{1, 2});
  w.enable_grad();
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(sum_all(scale(g.parameter(w), 3.0f)));
  }
  CHECK(w.grad == std::vector<float>{6, 6});
}

TEST_CASE("adam hand values") {
  Tensor p = Tensor::matrix(1, 3, std::vector<float>{1.0f, -2.0f, 0.5f});
  p.enable_grad();
  Tensor* params[] = {&p};
  AdamState st;
  st.lr = 1e-3f;
  adam_step(params, st);  // zero gradient
  CHECK(p.data == std::vector<float>{1.0f, -2.0f, 0.5f});

  Tensor q = Tensor::matrix(1, 1, 1.0f);
  q.enable_grad();
  q.grad[0] = 1.0f;
  Tensor* qs[] = {&q};
  AdamState s2;
  s2.lr = 1e-3f;
  adam_step(qs, s2);
  // m_hat = 1, v_hat = 1: step = lr / (1 + eps)
  CHECK(q.data[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-7));
  CHECK(s2.step == 1);

  // second step with gradient 0.5, against the formulas in double
  q.grad[0] = 0.5f;
  adam_step(qs, s2);
  const double m = 0.9 * (0.1 * 1.0) + 0.1 * 0.5;
  const double v = 0.999 * (0.001 * 1.0) + 0.001 * 0.25;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(q.data[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8) - 1e-3 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam minimizes a quadratic bowl") {
  Tensor x = Tensor::matrix(1, 4, std::vector<float>{3.0f, -2.0f, 1.0f, 0.5f});
  const Tensor centre = Tensor::matrix(1, 4, std::vector<float>{1.0f, 1.0f, -1.0f, 0.0f});
  x.enable_grad();
  AdamState st;
  st.lr = 0.05f;
  Tensor* params[] = {&x};
  double loss = 1.0;
  int steps = 0;
  for (; steps < 2000 && loss >= 1e-6; ++steps) {
    x.zero_grad();
    Graph g;
    const Var d = sub(g.parameter(x), g.constant(centre));
    const Var l = sum_all(mul(d, d));
    loss = g.value(l).data[0];
    g.backward(l);
    adam_step(params, st);
  }
  CHECK(loss < 1e-6);
  CHECK(steps <= 2000);
}

TEST_CASE("every op passes the finite-difference check") {
  const testing::GradSuite suite = testing::gradient_suite();
  for (const auto& c : suite.cases()) {
    const auto r = testing::check_gradient(c);
    INFO(c.name << " rel error " << r.rel_error << " |grad| " << r.grad_norm);
    CHECK(r.rel_error < 1e-4);
    CHECK(r.grad_norm > 0.0);
    for (nn::Tensor* t : c.wrt)
      for (auto s : t->shape) CHECK(s <= 8);
  }
}

TEST_CASE("forward and backward are bit-identical across runs") {
  auto run = [] {
    testing::GradSuite suite = testing::gradient_suite();
    std::vector<float> all;
    for (const auto& c : suite.cases()) {
      for (nn::Tensor* t : c.wrt) {
        t->enable_grad();
        t->zero_grad();
      }
      Graph g;
      const Var out = c.forward(g);
      all.insert(all.end(), g.value(out).data.begin(), g.value(out).data.end());
      g.backward(sum_all(out));
      for (nn::Tensor* t : c.wrt) all.insert(all.end(), t->grad.begin(), t->grad.end());
    }
    return all;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}
