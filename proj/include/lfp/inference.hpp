#pragma once

#include "lfp/networks.hpp"
#include "lfp/synthdata.hpp"

#include <Eigen/Core>

namespace lfp {

/// Deterministic full-dataset forward pass (dropout off), chunked to bound
/// memory. The chunk size is fixed so results never depend on call context.
struct DomainEval {
  Eigen::MatrixXd codes;       // n x code_dim
  Eigen::MatrixXd probs;       // n x classes
  Eigen::ArrayXi assignments;  // n * cells hard assignments (empty when K == 0)
  ArrayXd d_h;                 // n discriminator outputs
  ArrayXd d_l;                 // n * cells (empty when K == 0)
  double mean_entropy = 0.0;   // assignment entropy at alpha_s
  Eigen::MatrixXd features;    // (n * cells) x d local features
  Eigen::MatrixXd residuals;   // (n * cells) x d (empty when K == 0)
};

inline constexpr Index kInferenceChunk = 64;

DomainEval run_inference(Model& model, const DomainDataset& ds);

/// Fraction of correct argmax predictions against the dataset labels.
double accuracy(const Eigen::MatrixXd& probs, const std::vector<std::int32_t>& labels);

/// Accuracy of the holistic discriminator at threshold 0.5 where source
/// samples count as positives.
double discriminator_accuracy(const ArrayXd& d_source, const ArrayXd& d_target);

}  // namespace lfp
