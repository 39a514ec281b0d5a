#pragma once

#include "lfp/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace lfp {

/// Bank of local feature patterns: K cluster centers in feature space plus
/// the decay constants of the soft-assignment and the sparsity hinge.
/// k == 0 disables the bank entirely (holistic code falls back to the
/// normalized mean feature and the local alignment terms vanish).
struct PatternBank {
  int k = 0;
  Eigen::MatrixXd centers;  // K x d
  double alpha = 5000.0;    // aggregation decay
  double alpha_s = 0.005;   // sparsity decay, << alpha
  double entropy_margin = 0.02;
};

enum class VladNorm { kNone, kGlobal, kIntraGlobal };

VladNorm vlad_norm_from_string(const std::string& s);
std::string to_string(VladNorm n);

struct KMeansResult {
  Eigen::MatrixXd centers;              // k x d
  std::vector<double> inertia_history;  // after each assignment pass
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding on a seeded stream.
/// Ties assign to the smallest center index; empty clusters are re-seeded
/// to the point farthest from its assigned center.
KMeansResult kmeans_init(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                         int max_iters = 100, double tol = 1e-6);

/// Squared Euclidean distances of every feature row to every center:
/// features (..., d) x centers (K, d) -> (..., K).
Var pairwise_sqdist(Var features, Var centers);

/// Soft-assignment similarities softmax(-decay * d^2) over the K axis.
Var soft_assign(Var features, Var centers, double decay);

/// Aggregated residuals V[b,k,:] = sum_p S[b,p,k] (F[b,p,:] - c_k).
/// features (B,P,d), similarities (B,P,K) -> (B,K,d).
Var vlad_encode_raw(Var features, Var similarities, Var centers);

/// Stacks (B,K,d) into (B, K*d) with the configured normalization
/// (holistic index = k*d + j).
Var vlad_holistic(Var raw, VladNorm norm);

/// Mean over batch and positions of max(H_ij, margin) where H is the
/// entropy of the soft assignment at decay alpha_s.
Var sparsity_loss(Var features, Var centers, double alpha_s, double margin);

/// Mean assignment entropy at the given decay (no hinge); used as a metric.
Var mean_assignment_entropy(Var features, Var centers, double decay);

/// Argmax over the trailing K axis of materialized similarities; ties break
/// to the smallest index. `similarities` is the flat row-major array, `k`
/// the size of the last axis.
Eigen::ArrayXi hard_assign(const ArrayXd& similarities, Index k);

/// One-hot rows (n x k) for constant graph inputs.
Eigen::MatrixXd one_hot_rows(const Eigen::ArrayXi& idx, int k);

/// Per-position residuals F - c[a] for flat features (n, d) under a fixed
/// (non-differentiable) assignment. Differentiable w.r.t. features and
/// centers.
Var residuals(Var features_flat, Var centers, const Eigen::ArrayXi& assign);

}  // namespace lfp
