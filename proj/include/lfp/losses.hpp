#pragma once

#include "lfp/tensor.hpp"

#include <Eigen/Core>

namespace lfp {

struct LossWeights {
  double lambda_h = 0.2;
  double lambda_l = 0.1;
  double lambda_s = 0.1;
};

/// Scalar loss values for one step. Components that a phase does not
/// compute are reported as 0, which keeps the recomposition identity
/// l_total = l_c + lambda_h*l_gh + lambda_l*l_gl + lambda_s*l_s valid in
/// every phase.
struct LossReport {
  double l_c = 0, l_dh = 0, l_gh = 0, l_dl = 0, l_gl = 0, l_s = 0, l_total = 0;
};

double recompose_total(const LossReport& r, const LossWeights& w);

/// Probabilities are clamped to [kLossEps, 1] before logs; discriminator
/// outputs to [kDiscEps, 1 - kDiscEps].
inline constexpr double kLossEps = 1e-12;
inline constexpr double kDiscEps = 1e-7;

/// Mean cross-entropy of probabilities (B,C) against one-hot labels (B,C).
/// Rows of `labels` must contain exactly one 1.
Var classification_loss(Var probs, const Eigen::MatrixXd& labels);

/// -mean log D(source) - mean log(1 - D(target)); both inputs (n,1).
Var holistic_d_loss(Var d_source, Var d_target);

/// -mean log D(target).
Var holistic_g_loss(Var d_target);

/// Position-level analog of the holistic discriminator loss. Inputs hold
/// every position of the batch; with equal position counts per sample the
/// flat mean equals the nested per-sample mean.
Var local_d_loss(Var d_source_positions, Var d_target_positions);

Var local_g_loss(Var d_target_positions);

/// l_c + lambda_h*l_gh + lambda_l*l_gl + lambda_s*l_s. Invalid component
/// handles contribute nothing (used by the K = 0 configuration).
Var total_g_loss(Var l_c, Var l_gh, Var l_gl, Var l_s, const LossWeights& w);

}  // namespace lfp
