#include "lfp/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace lfp {

void adam_update(ArrayXd& value, const ArrayXd& grad, ArrayXd& m1, ArrayXd& m2,
                 std::int64_t t, const AdamConfig& cfg) {
  if (grad.size() != value.size() || m1.size() != value.size() ||
      m2.size() != value.size()) {
    throw std::invalid_argument("adam_update: size mismatch");
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("adam_update: non-finite gradient, aborting step");
  }
  if (t < 1) throw std::invalid_argument("adam_update: step count must be >= 1");
  m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
  m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad * grad;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  value -= cfg.lr * (m1 / c1) / ((m2 / c2).sqrt() + cfg.eps);
  if (!value.allFinite()) {
    throw std::runtime_error("adam_update: parameters became non-finite");
  }
}

}  // namespace lfp
