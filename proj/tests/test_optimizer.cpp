#include "lfp/optimizer.hpp"

#include "doctest.h"

#include <cmath>
#include <stdexcept>

using namespace lfp;

TEST_CASE("zero gradients leave fresh parameters unchanged") {
  ArrayXd v = ArrayXd::Constant(3, 2.0);
  ArrayXd g = ArrayXd::Zero(3);
  ArrayXd m1 = ArrayXd::Zero(3), m2 = ArrayXd::Zero(3);
  adam_update(v, g, m1, m2, 1, {0.01, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 3; ++i) {
    CHECK(v[i] == 2.0);
    CHECK(m1[i] == 0.0);
    CHECK(m2[i] == 0.0);
  }
  // preloaded moments decay toward zero under zero gradients
  m1.setConstant(1.0);
  adam_update(v, g, m1, m2, 2, {0.01, 0.9, 0.999, 1e-8});
  CHECK(m1[0] == doctest::Approx(0.9));
}

TEST_CASE("one step from zero moments matches the closed form") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, g0 = 0.37;
  ArrayXd v = ArrayXd::Zero(1);
  ArrayXd g = ArrayXd::Constant(1, g0);
  ArrayXd m1 = ArrayXd::Zero(1), m2 = ArrayXd::Zero(1);
  adam_update(v, g, m1, m2, 1, {lr, b1, b2, eps});
  // bias correction makes m_hat = g and v_hat = g^2 on the first step
  const double want = -lr * g0 / (std::abs(g0) + eps);
  CHECK(v[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::abs(v[0] + lr) < 1e-6);  // ~ -lr * sign(g)
}

TEST_CASE("constant gradients settle near a step of lr per update") {
  const double lr = 0.01;
  ArrayXd v = ArrayXd::Zero(1);
  ArrayXd g = ArrayXd::Constant(1, 0.3);
  ArrayXd m1 = ArrayXd::Zero(1), m2 = ArrayXd::Zero(1);
  double prev = 0.0;
  double delta = 0.0;
  for (int t = 1; t <= 500; ++t) {
    adam_update(v, g, m1, m2, t, {lr, 0.9, 0.999, 1e-8});
    delta = v[0] - prev;
    prev = v[0];
  }
  CHECK(std::abs(std::abs(delta) - lr) < 0.01 * lr);
}

TEST_CASE("non-finite gradients abort the step") {
  ArrayXd v = ArrayXd::Zero(2);
  ArrayXd g(2);
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  ArrayXd m1 = ArrayXd::Zero(2), m2 = ArrayXd::Zero(2);
  ArrayXd v_before = v;
  CHECK_THROWS_AS(adam_update(v, g, m1, m2, 1, {}), std::runtime_error);
  CHECK(v[0] == v_before[0]);
}
