#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_util.hpp"

using namespace eeglrp;
using testutil::max_fd_rel_error;
using testutil::rand_tensor;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  Tensor r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Var a = leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = leaf(Tensor({2, 1}, {3, 4}));
  Var c = matmul(a, b);
  CHECK(c->value()[0] == 3.0);
  CHECK(c->value()[1] == 4.0);

  Var d = matmul(leaf(Tensor({1, 2}, {1, 2})), leaf(Tensor({2, 1}, {3, 4})));
  CHECK(d->value()[0] == 11.0);

  CHECK_THROWS_AS(matmul(leaf(Tensor({2, 3})), leaf(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("matmul matches naive triple loop on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + rng.uniform_int(8), k = 1 + rng.uniform_int(8), n = 1 + rng.uniform_int(8);
    Tensor a = rand_tensor(rng, {m, k}), b = rand_tensor(rng, {k, n});
    Var c = matmul(leaf(a), leaf(b));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
        CHECK(std::abs(c->value().at(i, j) - acc) <= 1e-12);
      }
  }
  // larger instance per the stated bound
  Tensor a = rand_tensor(rng, {64, 64}), b = rand_tensor(rng, {64, 64});
  Var c = matmul(leaf(a), leaf(b));
  double worst = 0.0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      double acc = 0.0;
      for (int p = 0; p < 64; ++p) acc += a.at(i, p) * b.at(p, j);
      worst = std::max(worst, std::abs(c->value().at(i, j) - acc));
    }
  CHECK(worst <= 1e-12 * 64);
}

TEST_CASE("conv1d identity kernel, hand case, sliding-window oracle") {
  {
    Var y = conv1d(leaf(Tensor({1, 4}, {1, 2, 3, 4})), leaf(Tensor({1, 1, 1}, {1})), Var{}, 1);
    for (int i = 0; i < 4; ++i) CHECK(y->value()[i] == doctest::Approx(i + 1.0));
  }
  {
    Var y = conv1d(leaf(Tensor({1, 4}, {1, 2, 3, 4})), leaf(Tensor({1, 1, 2}, {1, 1})), Var{}, 1);
    CHECK(y->value().numel() == 3);
    CHECK(y->value()[0] == 3.0);
    CHECK(y->value()[1] == 5.0);
    CHECK(y->value()[2] == 7.0);
  }
  CHECK_THROWS_AS(conv1d(leaf(Tensor({1, 3})), leaf(Tensor({1, 1, 5})), Var{}, 1), ShapeError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int cin = 1 + rng.uniform_int(3), cout = 1 + rng.uniform_int(3);
    const int t = 6 + rng.uniform_int(10), k = 1 + rng.uniform_int(4);
    const int stride = 1 + rng.uniform_int(2);
    Tensor x = rand_tensor(rng, {cin, t}), w = rand_tensor(rng, {cout, cin, k});
    Tensor b = rand_tensor(rng, {cout});
    Var y = conv1d(leaf(x), leaf(w), leaf(b), stride);
    const int to = (t - k) / stride + 1;
    REQUIRE(y->value().dim(1) == to);
    for (int o = 0; o < cout; ++o)
      for (int tt = 0; tt < to; ++tt) {
        double acc = b[o];
        for (int c = 0; c < cin; ++c)
          for (int j = 0; j < k; ++j) acc += x.at(c, tt * stride + j) * w.at(o, c, j);
        CHECK(std::abs(y->value().at(o, tt) - acc) <= 1e-12);
      }
  }
}

TEST_CASE("layer_norm statistics and trivial cases") {
  Var g1 = leaf(Tensor({3}, {1, 1, 1}));
  Var b0 = leaf(Tensor({3}, {0, 0, 0}));
  Var y = layer_norm(leaf(Tensor({1, 3}, {1, 1, 1})), g1, b0);
  for (int i = 0; i < 3; ++i) CHECK(y->value()[i] == doctest::Approx(0.0));

  Var y2 = layer_norm(leaf(Tensor({1, 2}, {-1, 1})), leaf(Tensor({2}, {1, 1})),
                      leaf(Tensor({2}, {0, 0})));
  CHECK(y2->value()[0] == doctest::Approx(-1.0));
  CHECK(y2->value()[1] == doctest::Approx(1.0));

  Rng rng(3);
  Tensor x = rand_tensor(rng, {4, 16}, 2.0);
  Var y3 = layer_norm(leaf(x), leaf(Tensor::full({16}, 1.0)), leaf(Tensor({16})));
  for (int r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 16; ++j) m += y3->value().at(r, j);
    m /= 16;
    for (int j = 0; j < 16; ++j)
      v += (y3->value().at(r, j) - m) * (y3->value().at(r, j) - m);
    v /= 16;
    CHECK(std::abs(m) <= 1e-9);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax probability vector, symmetry, stabilization") {
  Var s = softmax(leaf(Tensor({2}, {0, 0})));
  CHECK(s->value()[0] == doctest::Approx(0.5));
  CHECK(s->value()[1] == doctest::Approx(0.5));

  Var big = softmax(leaf(Tensor({2}, {1000, 0})));
  CHECK(std::abs(big->value()[0] - 1.0) <= 1e-12);
  CHECK(std::abs(big->value()[1]) <= 1e-12);

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rand_tensor(rng, {3, 9}, 1e4 * rng.uniform());
    Var y = softmax(leaf(x));
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int j = 0; j < 9; ++j) {
        CHECK(y->value().at(r, j) >= 0.0);
        sum += y->value().at(r, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("gelu values") {
  CHECK(gelu(leaf(Tensor({1}, {0.0})))->value()[0] == 0.0);
  CHECK(gelu(leaf(Tensor({1}, {20.0})))->value()[0] == doctest::Approx(20.0));
  // erf form at x = 1: 0.5 * (1 + erf(1/sqrt 2)) = 0.841344746...
  CHECK(gelu(leaf(Tensor({1}, {1.0})))->value()[0] == doctest::Approx(0.8413447460685429).epsilon(1e-6));
}

TEST_CASE("gradient mode matches finite differences for every op") {
  Rng rng(23);
  auto run = [&](const char* name, const std::function<Var(std::vector<Var>&)>& build,
                 std::vector<Tensor> inputs, std::vector<int> out_shape) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> randomized;
      for (auto& t : inputs) randomized.push_back(rand_tensor(rng, t.shape(), 0.8));
      Tensor r = rand_tensor(rng, out_shape);
      const double err = max_fd_rel_error(build, randomized, r);
      INFO(name << " trial " << trial);
      CHECK(err <= 1e-5);
    }
  };

  run("matmul2", [](std::vector<Var>& v) { return matmul(v[0], v[1]); },
      {Tensor({3, 4}), Tensor({4, 2})}, {3, 2});
  run("matmul3", [](std::vector<Var>& v) { return matmul(v[0], v[1]); },
      {Tensor({2, 3, 4}), Tensor({2, 4, 2})}, {2, 3, 2});
  run("linear", [](std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
      {Tensor({3, 4}), Tensor({2, 4}), Tensor({2})}, {3, 2});
  run("conv1d", [](std::vector<Var>& v) { return conv1d(v[0], v[1], v[2], 2); },
      {Tensor({2, 9}), Tensor({3, 2, 3}), Tensor({3})}, {3, 4});
  run("layer_norm", [](std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); },
      {Tensor({3, 6}), Tensor({6}), Tensor({6})}, {3, 6});
  run("softmax", [](std::vector<Var>& v) { return softmax(v[0]); }, {Tensor({2, 5})}, {2, 5});
  run("gelu", [](std::vector<Var>& v) { return gelu(v[0]); }, {Tensor({7})}, {7});
  run("add", [](std::vector<Var>& v) { return add(v[0], v[1]); },
      {Tensor({3, 3}), Tensor({3, 3})}, {3, 3});
  run("add_rows", [](std::vector<Var>& v) { return add_rows(v[0], v[1]); },
      {Tensor({3, 4}), Tensor({4})}, {3, 4});
  run("scale", [](std::vector<Var>& v) { return scale(v[0], -1.7); }, {Tensor({5})}, {5});
  run("mean_axis0", [](std::vector<Var>& v) { return mean_axis0(v[0]); }, {Tensor({4, 5})}, {5});
  run("slice+concat", [](std::vector<Var>& v) {
        return concat_rows({slice_rows(v[0], 1, 3), slice_rows(v[0], 0, 1)});
      },
      {Tensor({4, 3})}, {3, 3});
  run("permute3", [](std::vector<Var>& v) { return permute3(v[0], 1, 0, 2); },
      {Tensor({2, 3, 4})}, {3, 2, 4});
  run("transpose2", [](std::vector<Var>& v) { return transpose2(v[0]); }, {Tensor({3, 4})}, {4, 3});
  run("broadcast_rows", [](std::vector<Var>& v) { return broadcast_rows(v[0], 4); },
      {Tensor({5})}, {4, 5});
  run("embed_rows", [](std::vector<Var>& v) { return embed_rows(v[0], {2, 0, 2, 1}); },
      {Tensor({3, 4})}, {4, 4});
  run("reshape", [](std::vector<Var>& v) { return reshape(v[0], {6}); }, {Tensor({2, 3})}, {6});
  run("mul_mask", [](std::vector<Var>& v) {
        Tensor m({2, 3}, {1, 0, 2, 0.5, 0, 1});
        return mul_mask(v[0], m);
      },
      {Tensor({2, 3})}, {2, 3});

  // composite attention-style block
  run("attention_block", [](std::vector<Var>& v) {
        Var q = permute3(reshape(linear(v[0], v[1], Var{}), {4, 2, 3}), 1, 0, 2);
        Var k = permute3(reshape(linear(v[0], v[2], Var{}), {4, 2, 3}), 1, 0, 2);
        Var w = permute3(reshape(linear(v[0], v[3], Var{}), {4, 2, 3}), 1, 0, 2);
        Var probs = softmax(scale(matmul(q, permute3(k, 0, 2, 1)), 1.0 / std::sqrt(3.0)));
        return reshape(permute3(matmul(probs, w), 1, 0, 2), {4, 6});
      },
      {Tensor({4, 6}), Tensor({6, 6}), Tensor({6, 6}), Tensor({6, 6})}, {4, 6});

  // loss nodes
  Rng lr(99);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = rand_tensor(lr, {6});
    Tensor q({6}), w({6});
    for (int i = 0; i < 6; ++i) {
      q[i] = lr.uniform();
      w[i] = 0.5 + lr.uniform();
    }
    const double err = max_fd_rel_error(
        [&](std::vector<Var>& v) { return sigmoid_ce_loss(v[0], q, w); }, {z}, Tensor({1}, {1.0}));
    CHECK(err <= 1e-5);
    Tensor target = rand_tensor(lr, {6}), mask({6});
    for (int i = 0; i < 6; ++i) mask[i] = lr.uniform() < 0.5 ? 1.0 : 0.0;
    mask[0] = 1.0;
    const double err2 = max_fd_rel_error(
        [&](std::vector<Var>& v) { return mse_loss(v[0], target, mask); }, {z}, Tensor({1}, {1.0}));
    CHECK(err2 <= 1e-5);
  }
}

TEST_CASE("backward trivial identities") {
  // f(x) = x with seed 1
  Tensor x({3}, {1, 2, 3});
  Var v = leaf(x, true);
  Var y = reshape(v, {3});
  Adjoints adj = backward(y, Tensor({3}, {1, 1, 1}), ReverseMode::Gradient);
  for (int i = 0; i < 3; ++i) CHECK((*adj.find(v.get()))[i] == 1.0);

  // linear chain gradient equals the weights
  Tensor w({1, 3}, {0.5, -2.0, 3.0});
  Var xv = leaf(Tensor({1, 3}, {1, 1, 1}), true);
  Var out = linear(xv, leaf(w), Var{});
  Adjoints a2 = backward(out, Tensor({1, 1}, {1.0}), ReverseMode::Gradient);
  for (int i = 0; i < 3; ++i) CHECK((*a2.find(xv.get())).at(0, i) == doctest::Approx(w[i]));
}

TEST_CASE("backward is linear in the seed in both modes") {
  Rng rng(31);
  Tensor x = rand_tensor(rng, {2, 5});
  Tensor w = rand_tensor(rng, {3, 5});
  Tensor b = rand_tensor(rng, {3});
  for (ReverseMode mode : {ReverseMode::Gradient, ReverseMode::Relevance}) {
    Var xv = leaf(x, true);
    Var y = gelu(linear(xv, leaf(w), leaf(b)));
    Tensor seed = rand_tensor(rng, {2, 3});
    Tensor seed2(seed.shape());
    for (int64_t i = 0; i < seed.numel(); ++i) seed2[i] = 2.0 * seed[i];
    Adjoints a1 = backward(y, seed, mode);
    Adjoints a2 = backward(y, seed2, mode);
    const Tensor& g1 = *a1.find(xv.get());
    const Tensor& g2 = *a2.find(xv.get());
    // doubling is exact in binary floating point
    for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g2[i] == 2.0 * g1[i]);
  }
}

TEST_CASE("backward before forward raises a state error") {
  CHECK_THROWS_AS(backward(Var{}, Tensor({1}, {1.0}), ReverseMode::Gradient), StateError);
  Var x = leaf(Tensor({2}, {1, 2}), true);
  CHECK_THROWS_AS(backward(x, Tensor({3}), ReverseMode::Gradient), ShapeError);
}

TEST_CASE("relevance on a bias-free linear layer reproduces x*w decomposition") {
  Tensor x({1, 2}, {2.0, 1.0});
  Tensor w({1, 2}, {1.0, -1.0});
  Var xv = leaf(x, true);
  Var y = linear(xv, leaf(w), Var{});
  RuleConfig rc;
  rc.epsilon = 1e-12;
  Adjoints adj = backward(y, Tensor({1, 1}, {1.0}), ReverseMode::Relevance, rc);
  const Tensor& r = *adj.find(xv.get());
  CHECK(r.at(0, 0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(r.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("non-finite forward values raise") {
  Tensor x({1, 2}, {1e308, 1e308});
  CHECK_THROWS_AS(linear(leaf(x), leaf(Tensor({1, 2}, {1e308, 1e308})), Var{}), StateError);
  CHECK_THROWS_AS(softmax(leaf(Tensor({2}, {std::nan(""), 0.0}))), InputError);
}
