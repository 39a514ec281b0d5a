#include "lfp/losses.hpp"
#include "lfp/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <stdexcept>

using namespace lfp;

namespace {

Eigen::MatrixXd one_hot(std::initializer_list<int> labels, int classes) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  Eigen::Index r = 0;
  for (int l : labels) m(r++, l) = 1.0;
  return m;
}

Var probs1(Tape& t, std::initializer_list<double> vals) {
  ArrayXd a(static_cast<Index>(vals.size()));
  Index i = 0;
  for (double v : vals) a[i++] = v;
  return t.input(Shape{a.size(), 1}, a, false);
}

}  // namespace

TEST_CASE("classification loss is zero on confident correct predictions") {
  Tape t;
  ArrayXd p(4);
  p << 1, 0, 0, 0;
  Var probs = t.input(Shape{1, 4}, p, false);
  CHECK(classification_loss(probs, one_hot({0}, 4)).value()[0] == 0.0);
}

TEST_CASE("classification loss of uniform predictions is ln C") {
  Tape t;
  Var probs = t.input(Shape{1, 4}, ArrayXd::Constant(4, 0.25), false);
  CHECK(classification_loss(probs, one_hot({2}, 4)).value()[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("half-confidence costs ln 2") {
  Tape t;
  ArrayXd p(4);
  p << 0.5, 0.3, 0.1, 0.1;
  Var probs = t.input(Shape{1, 4}, p, false);
  CHECK(classification_loss(probs, one_hot({0}, 4)).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("labels must be exactly one-hot") {
  Tape t;
  Var probs = t.input(Shape{1, 3}, ArrayXd::Constant(3, 1.0 / 3), false);
  Eigen::MatrixXd none = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(classification_loss(probs, none), std::invalid_argument);
  Eigen::MatrixXd two = Eigen::MatrixXd::Zero(1, 3);
  two(0, 0) = two(0, 1) = 1.0;
  CHECK_THROWS_AS(classification_loss(probs, two), std::invalid_argument);
  Eigen::MatrixXd frac = Eigen::MatrixXd::Zero(1, 3);
  frac(0, 0) = 0.5;
  CHECK_THROWS_AS(classification_loss(probs, frac), std::invalid_argument);
}

TEST_CASE("holistic discriminator loss values") {
  Tape t;
  CHECK(holistic_d_loss(probs1(t, {0.5, 0.5}), probs1(t, {0.5})).value()[0] ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(holistic_d_loss(probs1(t, {1.0 - 1e-7}), probs1(t, {1e-7})).value()[0] ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(holistic_d_loss(probs1(t, {0.8}), probs1(t, {0.3})).value()[0] ==
        doctest::Approx(-std::log(0.8) - std::log(0.7)).epsilon(1e-12));
  CHECK((-std::log(0.8) - std::log(0.7)) == doctest::Approx(0.5798).epsilon(1e-4));
}

TEST_CASE("holistic generator loss values") {
  Tape t;
  CHECK(holistic_g_loss(probs1(t, {0.5})).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(holistic_g_loss(probs1(t, {1.0 - 1e-7})).value()[0] ==
        doctest::Approx(0.0).epsilon(1e-6));
  double v = holistic_g_loss(probs1(t, {1e-12})).value()[0];
  CHECK(v == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));  // clamp keeps it finite
  CHECK(std::isfinite(v));
}

TEST_CASE("local losses mirror the holistic formulas per position") {
  Tape t;
  CHECK(local_d_loss(probs1(t, {0.5, 0.5, 0.5}), probs1(t, {0.5, 0.5})).value()[0] ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(local_d_loss(probs1(t, {0.8}), probs1(t, {0.3})).value()[0] ==
        doctest::Approx(0.5798).epsilon(1e-4));
  CHECK(local_g_loss(probs1(t, {0.5, 0.5})).value()[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(local_g_loss(probs1(t, {1.0 - 1e-7})).value()[0] ==
        doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("losses reject empty batches") {
  Tape t;
  Var ok = probs1(t, {0.5});
  Var bad = t.input(Shape{1, 2}, ArrayXd::Constant(2, 0.5), false);
  CHECK_THROWS_AS(holistic_d_loss(ok, bad), std::invalid_argument);
  CHECK_THROWS_AS(holistic_g_loss(bad), std::invalid_argument);
}

TEST_CASE("total generator loss composes the weighted sum") {
  Tape t;
  LossWeights w{0.2, 0.1, 0.1};
  Var one = t.scalar(1.0);
  Var total = total_g_loss(one, one, one, one, w);
  CHECK(total.value()[0] == doctest::Approx(1.4).epsilon(1e-12));

  LossWeights zero{0.0, 0.0, 0.0};
  Var lc = t.scalar(0.37);
  CHECK(total_g_loss(lc, one, one, one, zero).value()[0] ==
        doctest::Approx(0.37).epsilon(1e-12));

  // H-only configuration drops the local term entirely
  LossWeights h_only{0.2, 0.0, 0.1};
  Var no_local;
  CHECK(total_g_loss(lc, one, no_local, one, h_only).value()[0] ==
        doctest::Approx(0.37 + 0.2 + 0.1).epsilon(1e-12));
}

TEST_CASE("recomposition identity holds for the report") {
  LossReport r;
  r.l_c = 0.7;
  r.l_gh = 0.3;
  r.l_gl = 0.2;
  r.l_s = 0.1;
  LossWeights w{0.2, 0.1, 0.1};
  r.l_total = recompose_total(r, w);
  CHECK(std::abs(r.l_total - (0.7 + 0.2 * 0.3 + 0.1 * 0.2 + 0.1 * 0.1)) < 1e-15);
}

TEST_CASE("all losses are nonnegative on random clamped inputs") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    ArrayXd ps(3), pt(2);
    for (int i = 0; i < 3; ++i) ps[i] = rng.uniform(0.01, 0.99);
    for (int i = 0; i < 2; ++i) pt[i] = rng.uniform(0.01, 0.99);
    Var s = t.input(Shape{3, 1}, ps, false);
    Var g = t.input(Shape{2, 1}, pt, false);
    CHECK(holistic_d_loss(s, g).value()[0] >= 0.0);
    CHECK(holistic_g_loss(g).value()[0] >= 0.0);
    ArrayXd probs(4);
    double z = 0;
    for (int i = 0; i < 4; ++i) {
      probs[i] = rng.uniform(0.05, 1.0);
      z += probs[i];
    }
    probs /= z;
    Var pv = t.input(Shape{1, 4}, probs, false);
    CHECK(classification_loss(pv, one_hot({1}, 4)).value()[0] >= 0.0);
  }
}

TEST_CASE("grid search confirms the discriminator loss minimizer") {
  // one sample per domain, free-form outputs on a grid
  double best = std::numeric_limits<double>::infinity();
  double best_s = 0, best_t = 0;
  for (double ds = 0.01; ds <= 0.991; ds += 0.01) {
    for (double dt = 0.01; dt <= 0.991; dt += 0.01) {
      Tape t;
      double v = holistic_d_loss(probs1(t, {ds}), probs1(t, {dt})).value()[0];
      if (v < best) {
        best = v;
        best_s = ds;
        best_t = dt;
      }
    }
  }
  CHECK(best_s == doctest::Approx(0.99));
  CHECK(best_t == doctest::Approx(0.01));
}
