#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/grad_check.hpp"
#include "fedsim/ops.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

Tensor random_tensor(const Shape& s, uint64_t seed, bool rg = false) {
  Rng rng(seed);
  return Tensor::randn(s, rng, 1.0, rg);
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d identity 1x1 kernel reproduces the input") {
  // Kernel is the identity over channels.
  std::vector<double> w(3 * 3, 0.0);
  w[0 * 3 + 0] = w[1 * 3 + 1] = w[2 * 3 + 2] = 1.0;
  Tensor weight = Tensor::from_values(Shape{3, 3, 1, 1}, w);
  Tensor x = random_tensor(Shape{2, 3, 5, 5}, 7);
  Tensor y = ops::conv2d(x, weight, {}, 1, 0);
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("conv2d of ones counts window elements") {
  Tensor x = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full(Shape{1, 1, 2, 2}, 1.0);
  Tensor y = ops::conv2d(x, w, {}, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.values()) CHECK(v == 4.0);
}

TEST_CASE("conv2d matches six-loop oracle") {
  Tensor x = random_tensor(Shape{1, 2, 5, 5}, 11);
  Tensor w = random_tensor(Shape{3, 2, 3, 3}, 13);
  Rng rng(17);
  Tensor b = Tensor::randn(Shape{3}, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor y = ops::conv2d(x, w, b, stride, pad);
      auto ref = oracles::conv2d_loops(x.values(), 1, 2, 5, 5, w.values(), 3,
                                       3, 3, b.values(), stride, pad);
      CHECK(max_abs_diff(y.values(), ref) < 1e-12);
    }
  }
}

TEST_CASE("conv2d larger inputs match the oracle") {
  Tensor x = random_tensor(Shape{4, 8, 16, 16}, 23);
  Tensor w = random_tensor(Shape{6, 8, 3, 3}, 29);
  Tensor y = ops::conv2d(x, w, {}, 1, 1);
  auto ref = oracles::conv2d_loops(x.values(), 4, 8, 16, 16, w.values(), 6, 3,
                                   3, {}, 1, 1);
  CHECK(max_abs_diff(y.values(), ref) < 1e-12);

  // Stride-2 downsampling with an even kernel keeps the extents integral.
  Tensor w2 = random_tensor(Shape{6, 8, 2, 2}, 31);
  Tensor y2 = ops::conv2d(x, w2, {}, 2, 0);
  auto ref2 = oracles::conv2d_loops(x.values(), 4, 8, 16, 16, w2.values(), 6,
                                    2, 2, {}, 2, 0);
  CHECK(y2.shape() == Shape{4, 6, 8, 8});
  CHECK(max_abs_diff(y2.values(), ref2) < 1e-12);
}

TEST_CASE("conv2d rejects bad shapes and bad geometry") {
  Tensor x = random_tensor(Shape{1, 2, 5, 5}, 1);
  Tensor w = random_tensor(Shape{3, 4, 3, 3}, 2);
  CHECK_THROWS_AS(ops::conv2d(x, w, {}, 1, 0), ShapeError);
  Tensor w2 = random_tensor(Shape{3, 2, 3, 3}, 3);
  // (5 - 3) % 2 == 0 is fine; (5 + 2 - 3) % 2 == 0 fine; stride 3 is not.
  CHECK_THROWS_AS(ops::conv2d(x, w2, {}, 3, 0), ConfigError);
}

TEST_CASE("linear identity and constant rows") {
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  Tensor w = Tensor::from_values(Shape{3, 3}, eye);
  Tensor x = random_tensor(Shape{4, 3}, 5);
  Tensor y = ops::linear(x, w, {});
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);

  Tensor wz = Tensor::zeros(Shape{2, 3});
  Tensor b = Tensor::from_values(Shape{2}, {1.5, -2.0});
  Tensor y2 = ops::linear(x, wz, b);
  for (int64_t r = 0; r < 4; ++r) {
    CHECK(y2.values()[r * 2 + 0] == 1.5);
    CHECK(y2.values()[r * 2 + 1] == -2.0);
  }
}

TEST_CASE("linear matches triple-loop oracle") {
  Tensor x = random_tensor(Shape{4, 3}, 31);
  Tensor w = random_tensor(Shape{2, 3}, 37);
  Tensor y = ops::linear(x, w, {});
  auto ref = oracles::linear_loops(x.values(), 4, 3, w.values(), 2, {});
  CHECK(max_abs_diff(y.values(), ref) < 1e-12);
}

TEST_CASE("activations") {
  Tensor x = Tensor::from_values(Shape{3}, {-1.0, 0.0, 2.0});
  Tensor r = ops::relu(x);
  CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  // Central differences on sigmoid at random points.
  Tensor p = random_tensor(Shape{8}, 41);
  const double err = grad_check(
      [](const Tensor& t) { return ops::reduce_sum_all(ops::sigmoid(t)); }, p);
  CHECK(err < 1e-6);
}

TEST_CASE("global_avg_pool trivials and oracle") {
  Tensor c = Tensor::full(Shape{2, 3, 4, 4}, 2.5);
  Tensor z = ops::global_avg_pool(c);
  for (double v : z.values()) CHECK(v == 2.5);

  Tensor one = random_tensor(Shape{2, 3, 1, 1}, 43);
  Tensor z1 = ops::global_avg_pool(one);
  CHECK(max_abs_diff(z1.values(), one.values()) == 0.0);

  Tensor x = random_tensor(Shape{3, 5, 7, 6}, 47);
  Tensor zx = ops::global_avg_pool(x);
  auto ref = oracles::gap_loops(x.values(), 3, 5, 7, 6);
  CHECK(max_abs_diff(zx.values(), ref) < 1e-14);
}

TEST_CASE("cross entropy saturates to zero on a confident correct answer") {
  Tensor logits = Tensor::from_values(Shape{2, 3},
                                      {30.0, -30.0, -30.0,
                                       -30.0, 30.0, -30.0});
  Tensor targets = Tensor::from_values(Shape{2}, {0.0, 1.0});
  CHECK(ops::cross_entropy(logits, targets).item() < 1e-10);
}

TEST_CASE("focal loss with focusing 0 equals cross entropy") {
  Tensor logits = random_tensor(Shape{5, 4}, 53);
  Tensor targets = Tensor::from_values(Shape{5}, {0.0, 3.0, 1.0, 2.0, 2.0});
  const double ce = ops::cross_entropy(logits, targets).item();
  const double fl = ops::focal_loss(logits, targets, 0.0).item();
  CHECK(std::abs(ce - fl) < 1e-12);
}

TEST_CASE("loss gradients match finite differences") {
  Tensor targets = Tensor::from_values(Shape{4}, {1.0, 0.0, 2.0, 1.0});
  Tensor weights = Tensor::from_values(Shape{3}, {0.5, 1.0, 2.0});
  Tensor p = random_tensor(Shape{4, 3}, 59);

  const double e1 = grad_check(
      [&](const Tensor& t) { return ops::cross_entropy(t, targets, weights); },
      p);
  CHECK(e1 < 1e-5);

  const double e2 = grad_check(
      [&](const Tensor& t) {
        return ops::focal_loss(t, targets, 2.0, weights);
      },
      p);
  CHECK(e2 < 1e-5);

  Tensor bt = Tensor::from_values(
      Shape{4, 3}, {1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0});
  const double e3 = grad_check(
      [&](const Tensor& t) { return ops::bce_with_logits(t, bt, weights); },
      p);
  CHECK(e3 < 1e-5);
}

TEST_CASE("loss rejects out-of-range targets") {
  Tensor logits = random_tensor(Shape{2, 3}, 61);
  Tensor bad = Tensor::from_values(Shape{2}, {0.0, 3.0});
  CHECK_THROWS_AS(ops::cross_entropy(logits, bad), NumericError);
}

TEST_CASE("backward populates leaf gradients") {
  Tensor x = Tensor::from_values(Shape{4}, {1, 2, 3, 4}, true);

  SUBCASE("sum of leaf gives all ones") {
    Tape tape;
    TapeScope scope(tape);
    backward(ops::reduce_sum_all(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }

  SUBCASE("zero scaling gives all zeros") {
    Tape tape;
    TapeScope scope(tape);
    backward(ops::reduce_sum_all(ops::mul_scalar(x, 0.0)));
    for (double g : x.grad()) CHECK(g == 0.0);
  }

  SUBCASE("shared subexpression accumulates") {
    Tape tape;
    TapeScope scope(tape);
    backward(ops::reduce_sum_all(ops::add(x, x)));
    for (double g : x.grad()) CHECK(g == 2.0);
  }
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::from_values(Shape{4}, {1, 2, 3, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = ops::mul(x, x);
  CHECK_THROWS_AS(backward(y), ShapeError);  // non-scalar root
  Tensor s = ops::reduce_sum_all(y);
  backward(s);
  CHECK_THROWS_AS(backward(s), Error);  // tape already consumed
}

TEST_CASE("backward through a composite conv graph matches finite differences") {
  Rng rng(67);
  Tensor x = Tensor::randn(Shape{2, 2, 6, 6}, rng);
  Tensor w = Tensor::randn(Shape{3, 2, 3, 3}, rng, 0.5);
  Tensor b = Tensor::randn(Shape{3}, rng, 0.1);
  Tensor fcw = Tensor::randn(Shape{2, 3}, rng, 0.5);
  Tensor targets = Tensor::from_values(Shape{2}, {0.0, 1.0});

  auto net = [&](const Tensor& weight) {
    Tensor h = ops::conv2d(x, weight, b, 1, 1);
    h = ops::relu(h);
    Tensor z = ops::global_avg_pool(h);
    Tensor logits = ops::linear(z, fcw, {});
    return ops::cross_entropy(logits, targets);
  };
  CHECK(grad_check(net, w) < 1e-4);

  auto net_input = [&](const Tensor& in) {
    Tensor h = ops::conv2d(in, w, b, 1, 1);
    h = ops::relu(h);
    Tensor z = ops::global_avg_pool(h);
    Tensor logits = ops::linear(z, fcw, {});
    return ops::cross_entropy(logits, targets);
  };
  CHECK(grad_check(net_input, x) < 1e-4);
}

TEST_CASE("grad_check on exact quadratics and piecewise-linear functions") {
  Tensor p = Tensor::from_values(Shape{2}, {1.0, 2.0});
  const double e1 = grad_check(
      [](const Tensor& t) { return ops::reduce_sum_all(ops::square(t)); }, p);
  CHECK(e1 < 1e-8);

  // Points bounded away from the relu kink.
  Tensor q = Tensor::from_values(Shape{4}, {1.0, -2.0, 0.5, -0.25});
  const double e2 = grad_check(
      [](const Tensor& t) { return ops::reduce_sum_all(ops::relu(t)); }, q);
  CHECK(e2 < 1e-8);
}

TEST_CASE("reductions and broadcast gradients") {
  Tensor p = random_tensor(Shape{2, 3, 2, 2}, 71);
  const double e1 = grad_check(
      [](const Tensor& t) {
        Tensor m = ops::reduce_mean(t, {0, 2, 3});
        return ops::reduce_sum_all(ops::square(m));
      },
      p);
  CHECK(e1 < 1e-6);

  Tensor small = random_tensor(Shape{1, 3, 1, 1}, 73);
  const double e2 = grad_check(
      [&](const Tensor& t) {
        Tensor b = ops::broadcast_to(t, Shape{2, 3, 2, 2});
        return ops::reduce_sum_all(ops::mul(b, p));
      },
      small);
  CHECK(e2 < 1e-6);
}

TEST_CASE("channel and spatial max route gradients to the argmax") {
  Tensor p = random_tensor(Shape{2, 3, 2, 2}, 79);
  const double e1 = grad_check(
      [](const Tensor& t) { return ops::reduce_sum_all(ops::channel_max(t)); },
      p);
  CHECK(e1 < 1e-6);
  const double e2 = grad_check(
      [](const Tensor& t) { return ops::reduce_sum_all(ops::spatial_max(t)); },
      p);
  CHECK(e2 < 1e-6);
}

TEST_CASE("conv1d_same matches loop oracle and rejects even kernels") {
  Tensor z = random_tensor(Shape{3, 8}, 83);
  Tensor k = random_tensor(Shape{3}, 89);
  Tensor y = ops::conv1d_same(z, k);
  auto ref = oracles::conv1d_loops(z.values(), 3, 8, k.values());
  CHECK(max_abs_diff(y.values(), ref) < 1e-13);

  Tensor k2 = random_tensor(Shape{4}, 97);
  CHECK_THROWS_AS(ops::conv1d_same(z, k2), ConfigError);
}

TEST_CASE("ops are deterministic") {
  Tensor x = random_tensor(Shape{2, 3, 4, 4}, 101);
  Tensor w = random_tensor(Shape{4, 3, 3, 3}, 103);
  Tensor y1 = ops::conv2d(x, w, {}, 1, 1);
  Tensor y2 = ops::conv2d(x, w, {}, 1, 1);
  CHECK(y1.values() == y2.values());
}

TEST_CASE("gradients of every core op pass finite differences at random points") {
  Rng rng(107);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor p = Tensor::randn(Shape{3, 4}, rng);
    const double e = grad_check(
        [](const Tensor& t) {
          Tensor a = ops::mul_scalar(ops::add_scalar(t, 0.3), 1.7);
          Tensor b = ops::sigmoid(a);
          Tensor c = ops::mul(b, b);
          Tensor d = ops::exp(ops::mul_scalar(c, 0.5));
          Tensor e2 = ops::log(ops::add_scalar(ops::square(d), 1.0));
          return ops::reduce_sum_all(e2);
        },
        p);
    CHECK(e < 1e-4);
  }
}
