#pragma once

#include "lfp/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace lfp {

/// Synthetic domain-shift task over patch grids. Every sample is an M x N
/// grid of patch vectors; each cell draws a ground-truth prototype from its
/// class mixture and adds isotropic Gaussian noise. Target samples pass
/// through the patch-space affine map x -> scale * Q x + t, with Q an
/// orthogonal rotation built from Givens planes.
struct TaskSpec {
  std::uint64_t seed = 1;
  int classes = 4;
  int prototypes = 6;
  int rows = 6;
  int cols = 6;
  int patch_dim = 8;
  double noise_sigma = 0.3;
  double shift_scale = 1.2;
  double shift_rotation_deg = 35.0;
  double shift_translation = 0.6;
  int n_source = 240;
  int n_target = 240;
  /// Per-class distribution over prototypes (C x P simplex rows); empty
  /// selects default_class_mixtures(classes, prototypes).
  Eigen::MatrixXd class_mixtures;

  int cells() const { return rows * cols; }
};

struct DomainDataset {
  bool is_target = false;
  int n = 0, rows = 0, cols = 0, patch_dim = 0, classes = 0;
  ArrayXd samples;                   // n * rows * cols * patch_dim, row-major
  std::vector<std::int32_t> labels;  // source: training labels; target: held out

  Index sample_stride() const {
    return static_cast<Index>(rows) * cols * patch_dim;
  }
};

struct Task {
  DomainDataset source;
  DomainDataset target;
  Eigen::MatrixXd prototypes;  // P x patch_dim
  Eigen::MatrixXd shift_q;     // orthogonal
  Eigen::VectorXd shift_t;
  // Ground-truth prototype index per cell, in sample-major order.
  std::vector<std::int32_t> source_cell_protos;
  std::vector<std::int32_t> target_cell_protos;
};

/// Rotationally distinct rows: class c concentrates mass on prototypes
/// c, c+1, c+2 (mod P) with the remainder spread uniformly.
Eigen::MatrixXd default_class_mixtures(int classes, int prototypes);

Task generate_task(const TaskSpec& spec);

/// Keeps target samples whose held-out label is < keep.
DomainDataset subset_target_classes(const DomainDataset& target, int keep);

void save_dataset(const DomainDataset& ds, const std::string& path);
DomainDataset load_dataset(const std::string& path);

}  // namespace lfp
