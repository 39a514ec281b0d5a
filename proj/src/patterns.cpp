#include "lfp/patterns.hpp"

#include "lfp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lfp {

VladNorm vlad_norm_from_string(const std::string& s) {
  if (s == "none") return VladNorm::kNone;
  if (s == "global") return VladNorm::kGlobal;
  if (s == "intra_global") return VladNorm::kIntraGlobal;
  throw std::invalid_argument("unknown vlad_norm '" + s +
                              "' (expected none|global|intra_global)");
}

std::string to_string(VladNorm n) {
  switch (n) {
    case VladNorm::kNone: return "none";
    case VladNorm::kGlobal: return "global";
    case VladNorm::kIntraGlobal: return "intra_global";
  }
  return "?";
}

namespace {

Eigen::VectorXd row_sqnorms(const Eigen::MatrixXd& m) {
  return m.rowwise().squaredNorm();
}

// Index of the nearest center; ties to the smallest index.
int nearest_center(const Eigen::MatrixXd& centers, const Eigen::VectorXd& point,
                   double* dist_out) {
  int best = 0;
  double best_d = (centers.row(0).transpose() - point).squaredNorm();
  for (int c = 1; c < centers.rows(); ++c) {
    double d = (centers.row(c).transpose() - point).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist_out != nullptr) *dist_out = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans_init(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                         int max_iters, double tol) {
  const int n = static_cast<int>(points.rows());
  const int d = static_cast<int>(points.cols());
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (n < k) {
    throw std::invalid_argument("kmeans: need at least k=" + std::to_string(k) +
                                " points, got " + std::to_string(n));
  }
  if (!points.allFinite()) throw std::invalid_argument("kmeans: non-finite input");

  Rng rng = Rng::fork(seed, 0x6b6d6561UL);  // "kmea"

  // k-means++ seeding.
  Eigen::MatrixXd centers(k, d);
  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());
  int first = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  centers.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double dd = (points.row(i) - centers.row(c - 1)).squaredNorm();
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], dd);
      total += d2[static_cast<std::size_t>(i)];
    }
    int pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = c % n;  // all points coincide with chosen centers
    }
    centers.row(c) = points.row(pick);
  }

  KMeansResult result;
  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment pass.
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      double dist = 0.0;
      assign[static_cast<std::size_t>(i)] =
          nearest_center(centers, points.row(i).transpose(), &dist);
      inertia += dist;
    }
    result.inertia_history.push_back(inertia);
    result.iterations = iter + 1;

    // Update pass: per-cluster mean in point-index order.
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      next.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        // Re-seed an empty cluster at the point farthest from its center.
        int far_idx = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double dd =
              (points.row(i) - centers.row(assign[static_cast<std::size_t>(i)]))
                  .squaredNorm();
          if (dd > far_d) {
            far_d = dd;
            far_idx = i;
          }
        }
        next.row(c) = points.row(far_idx);
      }
    }

    double movement = (next - centers).rowwise().norm().maxCoeff();
    centers = next;
    if (movement < tol) break;
  }
  result.centers = centers;
  return result;
}

Var pairwise_sqdist(Var features, Var centers) {
  const Shape& fs = features.shape();
  const Shape& cs = centers.shape();
  if (cs.rank() != 2) {
    throw std::invalid_argument("pairwise_sqdist: centers must be (K, d), got " +
                                cs.str());
  }
  if (fs.rank() < 1 || fs.last_dim() != cs[1]) {
    throw std::invalid_argument("pairwise_sqdist: feature dim " +
                                std::to_string(fs.last_dim()) +
                                " does not match center dim " + std::to_string(cs[1]));
  }
  const Index d = cs[1];
  const Index k = cs[0];
  const Index n = features.numel() / d;

  Var f2d = reshape(features, Shape{n, d});
  // ||f||^2 - 2 f.c + ||c||^2, assembled with explicit broadcasts.
  Var f_sq = sum(mul(f2d, f2d), {1});                       // (n)
  Var c_sq = sum(mul(centers, centers), {1});               // (K)
  Var cross = matmul(f2d, centers, false, true);            // (n, K)
  Var fb = broadcast(reshape(f_sq, Shape{n, 1}), Shape{n, k});
  Var cb = broadcast(reshape(c_sq, Shape{1, k}), Shape{n, k});
  Var d2 = sub(add(fb, cb), mul_scalar(cross, 2.0));
  // Squared distances are mathematically nonnegative; rounding of the
  // expanded form can dip a hair below zero, which the hinge clips.
  d2 = max_const(d2, 0.0);

  std::vector<Index> out_dims(fs.dims().begin(), fs.dims().end() - 1);
  out_dims.push_back(k);
  return reshape(d2, Shape(out_dims));
}

Var soft_assign(Var features, Var centers, double decay) {
  Var d2 = pairwise_sqdist(features, centers);
  return softmax(mul_scalar(d2, -decay));
}

Var vlad_encode_raw(Var features, Var similarities, Var centers) {
  const Shape& fs = features.shape();
  const Shape& ss = similarities.shape();
  const Shape& cs = centers.shape();
  if (fs.rank() != 3 || ss.rank() != 3) {
    throw std::invalid_argument("vlad_encode: features must be (B,P,d) and "
                                "similarities (B,P,K), got " +
                                fs.str() + " and " + ss.str());
  }
  if (fs[0] != ss[0] || fs[1] != ss[1] || cs.rank() != 2 || cs[0] != ss[2] ||
      cs[1] != fs[2]) {
    throw std::invalid_argument("vlad_encode: inconsistent shapes " + fs.str() + ", " +
                                ss.str() + ", " + cs.str());
  }
  const Index b = fs[0];
  const Index p = fs[1];
  const Index d = fs[2];
  const Index k = ss[2];

  // sum_p S[b,p,k] F[b,p,j] via a broadcast product, then the center term
  // sum_p S[b,p,k] * c[k,j].
  Var sb = broadcast(reshape(similarities, Shape{b, p, k, 1}), Shape{b, p, k, d});
  Var fb = broadcast(reshape(features, Shape{b, p, 1, d}), Shape{b, p, k, d});
  Var accum = sum(mul(sb, fb), {1});  // (B,K,d)

  Var s_tot = sum(similarities, {1});  // (B,K)
  Var s_b = broadcast(reshape(s_tot, Shape{b, k, 1}), Shape{b, k, d});
  Var c_b = broadcast(reshape(centers, Shape{1, k, d}), Shape{b, k, d});
  return sub(accum, mul(s_b, c_b));
}

Var vlad_holistic(Var raw, VladNorm norm) {
  const Shape& s = raw.shape();
  if (s.rank() != 3) {
    throw std::invalid_argument("vlad_holistic: raw code must be (B,K,d), got " +
                                s.str());
  }
  const Index b = s[0];
  const Index kd = s[1] * s[2];
  Var v = raw;
  if (norm == VladNorm::kIntraGlobal) v = l2_normalize_last(v);  // per pattern column
  Var flat = reshape(v, Shape{b, kd});
  if (norm != VladNorm::kNone) flat = l2_normalize_last(flat);
  return flat;
}

Var sparsity_loss(Var features, Var centers, double alpha_s, double margin) {
  Var d2 = pairwise_sqdist(features, centers);
  Var entropy = entropy_last(mul_scalar(d2, -alpha_s));
  return mean_all(max_const(entropy, margin));
}

Var mean_assignment_entropy(Var features, Var centers, double decay) {
  Var d2 = pairwise_sqdist(features, centers);
  return mean_all(entropy_last(mul_scalar(d2, -decay)));
}

Eigen::ArrayXi hard_assign(const ArrayXd& similarities, Index k) {
  if (k < 1 || similarities.size() % k != 0) {
    throw std::invalid_argument("hard_assign: array size " +
                                std::to_string(similarities.size()) +
                                " is not a multiple of k=" + std::to_string(k));
  }
  const Index rows = similarities.size() / k;
  Eigen::ArrayXi out(rows);
  for (Index r = 0; r < rows; ++r) {
    int best = 0;
    double best_v = similarities[r * k];
    for (Index j = 1; j < k; ++j) {
      double v = similarities[r * k + j];
      if (v > best_v) {  // strict: ties keep the smallest index
        best_v = v;
        best = static_cast<int>(j);
      }
    }
    out[r] = best;
  }
  return out;
}

Eigen::MatrixXd one_hot_rows(const Eigen::ArrayXi& idx, int k) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(idx.size(), k);
  for (Eigen::Index i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= k) {
      throw std::invalid_argument("one_hot_rows: index " + std::to_string(idx[i]) +
                                  " out of range [0, " + std::to_string(k) + ")");
    }
    m(i, idx[i]) = 1.0;
  }
  return m;
}

Var residuals(Var features_flat, Var centers, const Eigen::ArrayXi& assign) {
  const Shape& fs = features_flat.shape();
  const Shape& cs = centers.shape();
  if (fs.rank() != 2 || cs.rank() != 2 || fs[1] != cs[1]) {
    throw std::invalid_argument("residuals: expected features (n,d) and centers (K,d), "
                                "got " + fs.str() + " and " + cs.str());
  }
  if (assign.size() != fs[0]) {
    throw std::invalid_argument("residuals: assignment count " +
                                std::to_string(assign.size()) +
                                " does not match feature rows " + std::to_string(fs[0]));
  }
  Eigen::MatrixXd oh = one_hot_rows(assign, static_cast<int>(cs[0]));
  // Row-major constant: Eigen matrices are column-major, so copy explicitly.
  ArrayXd oh_rm(oh.size());
  for (Eigen::Index r = 0; r < oh.rows(); ++r) {
    for (Eigen::Index c = 0; c < oh.cols(); ++c) {
      oh_rm[r * oh.cols() + c] = oh(r, c);
    }
  }
  Var gather = matmul(
      features_flat.tape->constant(Shape{fs[0], cs[0]}, std::move(oh_rm), "assignment"),
      centers);
  return sub(features_flat, gather);
}

}  // namespace lfp
