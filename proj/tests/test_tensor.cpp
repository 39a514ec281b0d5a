#include "lfp/tensor.hpp"
#include "lfp/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace lfp;

namespace {

ArrayXd make(std::initializer_list<double> vals) {
  ArrayXd a(static_cast<Index>(vals.size()));
  Index i = 0;
  for (double v : vals) a[i++] = v;
  return a;
}

ArrayXd random_array(Rng& rng, Index n, double scale = 1.0) {
  ArrayXd a(n);
  for (Index i = 0; i < n; ++i) a[i] = scale * rng.gaussian();
  return a;
}

// Keeps coordinates away from the relu / max_const kink at `c`.
ArrayXd random_away_from(Rng& rng, Index n, double c, double margin = 5e-3) {
  ArrayXd a(n);
  for (Index i = 0; i < n; ++i) {
    double v;
    do {
      v = rng.gaussian();
    } while (std::abs(v - c) < margin);
    a[i] = v;
  }
  return a;
}

ArrayXd make_weights(Rng& rng, Index n) {
  ArrayXd w(n);
  for (Index i = 0; i < n; ++i) w[i] = rng.uniform(-1.0, 1.0);
  return w;
}

// Scalarizes `v` with a fixed weighting so every coordinate of the gradient
// is exercised. The weights must be frozen by the caller: grad_check
// re-invokes the builder, which must describe the same function every time.
Var weighted(Tape& t, Var v, const ArrayXd& w) {
  return sum_all(mul(reshape(v, Shape{v.numel()}), t.constant(Shape{v.numel()}, w)));
}

}  // namespace

TEST_CASE("matmul identity returns operand") {
  Rng rng(7);
  Tape t;
  ArrayXd id = make({1, 0, 0, 0, 1, 0, 0, 0, 1});
  ArrayXd a = random_array(rng, 9);
  Var m = matmul(t.constant(Shape{3, 3}, id), t.input(Shape{3, 3}, a, false));
  for (Index i = 0; i < 9; ++i) CHECK(m.value()[i] == a[i]);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  Var s = softmax(t.input(Shape{2}, make({0.0, 0.0}), false));
  CHECK(s.value()[0] == doctest::Approx(0.5));
  CHECK(s.value()[1] == doctest::Approx(0.5));
}

TEST_CASE("log of exp recovers input") {
  Tape t;
  Var y = log(exp(t.input(Shape{1}, make({2.0}), false)));
  CHECK(std::abs(y.value()[0] - 2.0) < 1e-12);
}

TEST_CASE("constant function has zero gradient") {
  Tape t;
  Var x = t.input(Shape{3}, make({1.0, 2.0, 3.0}), true);
  Var c = t.constant(Shape{}, make({5.0}));
  t.backward(sum_all(c));
  for (Index i = 0; i < 3; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("gradient of x*x at 3 is 6") {
  Tape t;
  Var x = t.input(Shape{1}, make({3.0}), true);
  t.backward(sum_all(mul(x, x)));
  CHECK(std::abs(x.grad()[0] - 6.0) < 1e-9);
}

TEST_CASE("addition passes unit gradients to both operands") {
  Tape t;
  Var x = t.input(Shape{1}, make({1.5}), true);
  Var y = t.input(Shape{1}, make({-2.0}), true);
  t.backward(sum_all(add(x, y)));
  CHECK(x.grad()[0] == 1.0);
  CHECK(y.grad()[0] == 1.0);
}

TEST_CASE("fan-out accumulates: d(x+x)/dx = 2") {
  Tape t;
  Var x = t.input(Shape{1}, make({0.7}), true);
  t.backward(sum_all(add(x, x)));
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("evaluate is bit-identical across repeated calls") {
  Rng rng(11);
  ArrayXd a = random_array(rng, 12);
  ArrayXd b = random_array(rng, 12);
  auto run = [&]() {
    Tape t;
    Var x = t.input(Shape{3, 4}, a, false);
    Var y = t.input(Shape{4, 3}, b, false);
    return ArrayXd(softmax(matmul(x, y)).value());
  };
  ArrayXd first = run();
  ArrayXd second = run();
  for (Index i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("shape mismatches name the primitive and both shapes") {
  Tape t;
  Var a = t.input(Shape{2, 3}, ArrayXd::Zero(6), false);
  Var b = t.input(Shape{2, 3}, ArrayXd::Zero(6), false);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, t.input(Shape{3, 2}, ArrayXd::Zero(6), false)),
                       doctest::Contains("[2, 3]"), std::invalid_argument);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Tape t;
  Var x = t.input(Shape{2}, make({1.0, 2.0}), true);
  Var y = add(x, x);
  CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
}

TEST_CASE("non-finite intermediates fail with the primitive name") {
  Tape t;
  Var x = t.input(Shape{1}, make({-1.0}), false);
  CHECK_THROWS_WITH_AS(log(x), doctest::Contains("log"), std::runtime_error);
  Var big = t.input(Shape{1}, make({1e300}), false);
  CHECK_THROWS_WITH_AS(mul(big, big), doctest::Contains("mul"), std::runtime_error);
}

TEST_CASE("grad_check: x^2 at 3") {
  auto f = [](Tape&, const std::vector<Var>& in) { return sum_all(mul(in[0], in[0])); };
  double err = grad_check(f, {{Shape{1}, make({3.0})}}, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check: sum of softmax is constant") {
  Rng rng(3);
  auto f = [](Tape&, const std::vector<Var>& in) { return sum_all(softmax(in[0])); };
  double err = grad_check(f, {{Shape{5}, random_array(rng, 5)}}, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check over every primitive at random points") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(100 + static_cast<std::uint64_t>(trial));
    Rng wrng(200 + static_cast<std::uint64_t>(trial));

    auto check = [&](const GraphBuilder& f, std::vector<TensorData> point) {
      CAPTURE(trial);
      CHECK(grad_check(f, std::move(point), 1e-5) < 1e-6);
    };

    // matmul, all transpose combinations
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        Shape sa = ta ? Shape{4, 2} : Shape{2, 4};
        Shape sb = tb ? Shape{3, 4} : Shape{4, 3};
        ArrayXd w = make_weights(wrng, 6);
        check(
            [w, ta, tb](Tape& t, const std::vector<Var>& in) {
              return weighted(t, matmul(in[0], in[1], ta != 0, tb != 0), w);
            },
            {{sa, random_array(rng, 8)}, {sb, random_array(rng, 12)}});
      }
    }
    // elementwise binary
    for (auto op : {&add, &sub, &mul}) {
      ArrayXd w = make_weights(wrng, 6);
      check([w, op](Tape& t, const std::vector<Var>& in) {
        return weighted(t, (*op)(in[0], in[1]), w);
      }, {{Shape{2, 3}, random_array(rng, 6)}, {Shape{2, 3}, random_array(rng, 6)}});
    }
    // unary
    {
      ArrayXd w = make_weights(wrng, 5);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, exp(in[0]), w);
      }, {{Shape{5}, random_array(rng, 5)}});
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, log(in[0]), w);
      }, {{Shape{5}, ArrayXd(random_array(rng, 5).abs() + 0.5)}});
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, neg(in[0]), w);
      }, {{Shape{5}, random_array(rng, 5)}});
    }
    {
      ArrayXd w = make_weights(wrng, 6);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, relu(in[0]), w);
      }, {{Shape{6}, random_away_from(rng, 6, 0.0)}});
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, max_const(in[0], 0.3), w);
      }, {{Shape{6}, random_away_from(rng, 6, 0.3)}});
    }
    // softmax over last axis
    {
      ArrayXd w = make_weights(wrng, 8);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, softmax(in[0]), w);
      }, {{Shape{2, 4}, random_array(rng, 8)}});
    }
    // reductions
    {
      ArrayXd w = make_weights(wrng, 4);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, sum(in[0], {1}), w);
      }, {{Shape{2, 3, 2}, random_array(rng, 12)}});
      ArrayXd w2 = make_weights(wrng, 3);
      check([w2](Tape& t, const std::vector<Var>& in) {
        return weighted(t, mean(in[0], {0, 2}), w2);
      }, {{Shape{2, 3, 2}, random_array(rng, 12)}});
    }
    // concat over last axis
    {
      ArrayXd w = make_weights(wrng, 10);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, concat({in[0], in[1]}), w);
      }, {{Shape{2, 2}, random_array(rng, 4)}, {Shape{2, 3}, random_array(rng, 6)}});
    }
    // reshape and broadcast
    {
      ArrayXd w = make_weights(wrng, 12);
      check([w](Tape& t, const std::vector<Var>& in) {
        return weighted(t, reshape(in[0], Shape{3, 4}), w);
      }, {{Shape{2, 6}, random_array(rng, 12)}});
      ArrayXd w24 = make_weights(wrng, 24);
      check([w24](Tape& t, const std::vector<Var>& in) {
        return weighted(t, broadcast(in[0], Shape{2, 4, 3}), w24);
      }, {{Shape{1, 3}, random_array(rng, 3)}});
      check([w24](Tape& t, const std::vector<Var>& in) {
        return weighted(t, broadcast(in[0], Shape{2, 4, 3}), w24);
      }, {{Shape{4, 1}, random_array(rng, 4)}});
    }
  }
}

TEST_CASE("grad_check validates its arguments") {
  auto f = [](Tape&, const std::vector<Var>& in) { return in[0]; };
  CHECK_THROWS_AS(grad_check(f, {{Shape{2}, make({1.0, 2.0})}}, 1e-5),
                  std::invalid_argument);  // non-scalar
  auto g = [](Tape&, const std::vector<Var>& in) { return sum_all(in[0]); };
  CHECK_THROWS_AS(grad_check(g, {{Shape{2}, make({1.0, 2.0})}}, 1e-2),
                  std::invalid_argument);  // h out of range
}

TEST_CASE("sum is permutation-stable bit for bit") {
  Rng rng(17);
  ArrayXd vals = random_array(rng, 64);
  Tape t;
  double base = sum_all(t.input(Shape{64}, vals, false)).value()[0];
  // a few deterministic shuffles
  for (int s = 0; s < 5; ++s) {
    ArrayXd shuffled = vals;
    Rng perm(300 + static_cast<std::uint64_t>(s));
    for (Index i = 63; i > 0; --i) {
      Index j = static_cast<Index>(perm.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(shuffled[i], shuffled[j]);
    }
    Tape t2;
    double got = sum_all(t2.input(Shape{64}, shuffled, false)).value()[0];
    CHECK(got == base);
  }
}

TEST_CASE("sigmoid matches the logistic function and its gradient") {
  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    double v = rng.uniform(-6.0, 6.0);
    Tape t;
    Var y = sigmoid(t.input(Shape{1}, make({v}), false));
    CHECK(y.value()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-v))).epsilon(1e-12));
  }
  auto f = [](Tape&, const std::vector<Var>& in) { return sum_all(sigmoid(in[0])); };
  CHECK(grad_check(f, {{Shape{4}, make({-2.0, -0.3, 0.4, 3.0})}}, 1e-5) < 1e-8);
}

TEST_CASE("l2_normalize produces unit rows and keeps zero rows zero") {
  Rng rng(29);
  Tape t;
  ArrayXd v = random_array(rng, 12);
  v.segment(8, 4).setZero();  // one zero row
  Var y = l2_normalize_last(t.input(Shape{3, 4}, v, false));
  for (Index r = 0; r < 2; ++r) {
    double n2 = y.value().segment(r * 4, 4).square().sum();
    CHECK(std::abs(std::sqrt(n2) - 1.0) < 1e-6);
  }
  for (Index j = 0; j < 4; ++j) CHECK(y.value()[8 + j] == 0.0);

  auto f = [](Tape&, const std::vector<Var>& in) {
    return sum_all(l2_normalize_last(in[0]));
  };
  CHECK(grad_check(f, {{Shape{2, 3}, make({0.3, -1.2, 0.7, 2.0, 0.1, -0.4})}}, 1e-5) <
        1e-6);
}

TEST_CASE("entropy_last matches -sum p log p") {
  Tape t;
  ArrayXd z = make({0.2, -1.0, 0.9, 0.0, 0.0, 0.0});
  Var h = entropy_last(t.input(Shape{2, 3}, z, false));
  // direct evaluation
  for (Index r = 0; r < 2; ++r) {
    ArrayXd row = z.segment(r * 3, 3);
    ArrayXd p = (row - row.maxCoeff()).exp();
    p /= p.sum();
    double want = -(p * p.log()).sum();
    CHECK(h.value()[r] == doctest::Approx(want).epsilon(1e-12));
  }
  auto f = [](Tape&, const std::vector<Var>& in) { return sum_all(entropy_last(in[0])); };
  CHECK(grad_check(f, {{Shape{2, 3}, z}}, 1e-5) < 1e-6);
}

TEST_CASE("clamp bounds values and zeroes gradients outside") {
  Tape t;
  Var x = t.input(Shape{3}, make({-5.0, 0.5, 5.0}), true);
  Var y = clamp(x, 0.0, 1.0);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.5);
  CHECK(y.value()[2] == 1.0);
  t.backward(sum_all(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}
