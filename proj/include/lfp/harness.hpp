#pragma once

#include "lfp/config.hpp"
#include "lfp/inference.hpp"
#include "lfp/trainer.hpp"

#include <Eigen/Core>

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace lfp {

struct EvalReport {
  double source_accuracy = 0.0;
  double target_accuracy = 0.0;
  /// Row k: fraction of pattern-k hard assignments coming from source and
  /// from target; rows of non-empty patterns sum to 1.
  Eigen::MatrixXd per_pattern_balance;  // K x 2
  /// Assignment entropy at alpha_s over all positions of both domains.
  double mean_assignment_entropy = 0.0;
  double discriminator_accuracy_h = 0.0;
  double discriminator_accuracy_l = 0.0;
};

EvalReport evaluate(Model& model, const DomainDataset& source,
                    const DomainDataset& target);

/// Deterministic JSON rendering with fixed key order.
std::string eval_report_json(const EvalReport& report);

// --- experiment suites --------------------------------------------------------

struct RunOutcome {
  bool ok = false;
  std::string error;
  EvalReport report;
  double dh_acc_phase3_start = 0.0;
  double dh_acc_phase3_end = 0.0;
  double source_in_domain_accuracy = 0.0;  // same as report.source_accuracy
};

/// Generate-train-evaluate for one config; `subset_keep` > 0 restricts the
/// target domain to its first `subset_keep` classes before training and
/// evaluation. Never throws: failures land in `error`.
RunOutcome run_single(const Config& cfg, int subset_keep = 0);

/// Memoizes run_single outcomes across suites (keyed by canonical config
/// and subset), so shared configurations train once.
class RunCache {
 public:
  RunOutcome get(const Config& cfg, int subset_keep);

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<RunOutcome>> done_;
};

struct SuiteRow {
  std::string suite;
  std::string config;  // source_only | h | h_plus_l | k<N>
  std::uint64_t seed = 0;
  int patterns = 0;
  std::string status;  // "ok" or the failure message
  EvalReport report;
  double dh_acc_phase3_start = 0.0;
  double dh_acc_phase3_end = 0.0;
};

inline constexpr int kSuiteSeeds = 5;

/// suites: baselines (source_only/h/h_plus_l x 5 seeds), pattern_sweep
/// (K in {0,8,16,32,64}, h_plus_l x 5 seeds), negative_transfer (the
/// baselines grid with the last two target classes removed). Rows always
/// cover the full grid; failed runs carry their error in `status`.
std::vector<SuiteRow> run_suite(const std::string& suite, const Config& base,
                                int jobs = 1, RunCache* cache = nullptr);

void write_suite_csv(const std::vector<SuiteRow>& rows, const std::string& path);

/// Baseline/sweep variants of a base config.
Config suite_variant(const Config& base, const std::string& name, std::uint64_t seed);

// --- embeddings -----------------------------------------------------------------

struct Pca2 {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // d x 2, eigenvalue-descending, sign-fixed
  Eigen::MatrixXd projected;   // n x 2
  double eigenvalue0 = 0.0, eigenvalue1 = 0.0;
  double total_variance = 0.0;
};

/// Top-2 PCA via covariance eigendecomposition; requires >= 2 rows. The
/// sign of each component makes its largest-magnitude loading positive.
Pca2 pca2(const Eigen::MatrixXd& rows);

/// kind "holistic": one row per sample (pc1,pc2,domain,label).
/// kind "local": one row per grid position (pc1,pc2,domain,pattern,label).
void export_embeddings(Model& model, const DomainDataset& source,
                       const DomainDataset& target, const std::string& kind,
                       const std::string& out_path);

// --- gradient verification -------------------------------------------------------

struct GradCheckOutcome {
  double max_rel_err = 0.0;
  int checks = 0;
};

/// Central-difference verification of every loss pathway (soft assignment,
/// VLAD with normalization, sparsity hinge, both adversarial pairs, the
/// classification loss, and the full joint objective) at `points` random
/// non-degenerate points each.
GradCheckOutcome gradcheck_suite(std::uint64_t seed, int points = 20);

}  // namespace lfp
