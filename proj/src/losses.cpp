#include "lfp/losses.hpp"

#include <stdexcept>

namespace lfp {

namespace {

void check_probs(Var v, const char* who) {
  if (v.shape().rank() != 2 || v.shape()[1] != 1) {
    throw std::invalid_argument(std::string(who) + ": expected (n,1) probabilities, got " +
                                v.shape().str());
  }
  if (v.shape()[0] < 1) {
    throw std::invalid_argument(std::string(who) + ": empty batch");
  }
}

}  // namespace

double recompose_total(const LossReport& r, const LossWeights& w) {
  return r.l_c + w.lambda_h * r.l_gh + w.lambda_l * r.l_gl + w.lambda_s * r.l_s;
}

Var classification_loss(Var probs, const Eigen::MatrixXd& labels) {
  const Shape& s = probs.shape();
  if (s.rank() != 2) {
    throw std::invalid_argument("classification_loss: expected (B,C), got " + s.str());
  }
  if (labels.rows() != s[0] || labels.cols() != s[1]) {
    throw std::invalid_argument("classification_loss: labels are " +
                                std::to_string(labels.rows()) + "x" +
                                std::to_string(labels.cols()) + ", probabilities " +
                                s.str());
  }
  ArrayXd y(labels.size());
  for (Eigen::Index r = 0; r < labels.rows(); ++r) {
    int hot = 0;
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      double v = labels(r, c);
      if (v != 0.0 && v != 1.0) {
        throw std::invalid_argument("classification_loss: labels must be one-hot");
      }
      hot += v == 1.0 ? 1 : 0;
      y[r * labels.cols() + c] = v;
    }
    if (hot != 1) {
      throw std::invalid_argument("classification_loss: row " + std::to_string(r) +
                                  " has " + std::to_string(hot) + " hot entries");
    }
  }
  Tape& t = *probs.tape;
  Var logged = log(max_const(probs, kLossEps));
  Var picked = sum(mul(logged, t.constant(s, y)), {1});  // (B)
  return neg(mean_all(picked));
}

Var holistic_d_loss(Var d_source, Var d_target) {
  check_probs(d_source, "holistic_d_loss");
  check_probs(d_target, "holistic_d_loss");
  Var src = clamp(d_source, kDiscEps, 1.0 - kDiscEps);
  Var tgt = clamp(d_target, kDiscEps, 1.0 - kDiscEps);
  Var source_term = neg(mean_all(log(src)));
  Var target_term = neg(mean_all(log(sub_from_scalar(1.0, tgt))));
  return add(source_term, target_term);
}

Var holistic_g_loss(Var d_target) {
  check_probs(d_target, "holistic_g_loss");
  Var tgt = clamp(d_target, kDiscEps, 1.0 - kDiscEps);
  return neg(mean_all(log(tgt)));
}

Var local_d_loss(Var d_source_positions, Var d_target_positions) {
  check_probs(d_source_positions, "local_d_loss");
  check_probs(d_target_positions, "local_d_loss");
  return holistic_d_loss(d_source_positions, d_target_positions);
}

Var local_g_loss(Var d_target_positions) {
  check_probs(d_target_positions, "local_g_loss");
  return holistic_g_loss(d_target_positions);
}

Var total_g_loss(Var l_c, Var l_gh, Var l_gl, Var l_s, const LossWeights& w) {
  if (!l_c.valid()) throw std::invalid_argument("total_g_loss: missing classification term");
  Var total = l_c;
  if (l_gh.valid()) total = add(total, mul_scalar(l_gh, w.lambda_h));
  if (l_gl.valid()) total = add(total, mul_scalar(l_gl, w.lambda_l));
  if (l_s.valid()) total = add(total, mul_scalar(l_s, w.lambda_s));
  return total;
}

}  // namespace lfp
