#pragma once

#include "lfp/tensor.hpp"

#include <cstdint>

namespace lfp {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam step. `t` is the 1-based update count for the
/// parameter group. Throws on non-finite gradients so a training step can
/// abort before corrupting parameters.
void adam_update(ArrayXd& value, const ArrayXd& grad, ArrayXd& m1, ArrayXd& m2,
                 std::int64_t t, const AdamConfig& cfg);

}  // namespace lfp
