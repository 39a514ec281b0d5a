#pragma once

#include "lfp/patterns.hpp"
#include "lfp/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace lfp {

/// Named parameter array with its Adam moments.
struct Param {
  std::string name;
  Shape shape;
  ArrayXd value;
  ArrayXd m1, m2;

  Param() = default;
  Param(std::string n, Shape s)
      : name(std::move(n)),
        shape(std::move(s)),
        value(ArrayXd::Zero(shape.numel())),
        m1(ArrayXd::Zero(shape.numel())),
        m2(ArrayXd::Zero(shape.numel())) {}
};

struct ModelConfig {
  int patch_dim = 8;
  std::vector<int> extractor_hidden = {32};
  int feature_dim = 16;
  int classes = 4;
  int patterns = 32;  // K; 0 bypasses the bank
  double alpha = 5000.0;
  double alpha_s = 0.005;
  double entropy_margin = 0.02;
  VladNorm vlad_norm = VladNorm::kIntraGlobal;
  std::vector<int> disc_h_hidden = {64, 128};
  std::vector<int> disc_l_hidden = {64, 128};

  int code_dim() const { return patterns == 0 ? feature_dim : patterns * feature_dim; }
  int extractor_depth() const { return static_cast<int>(extractor_hidden.size()) + 1; }
};

/// All learnable state. Parameters are stored per component in a canonical
/// order (layer weights then biases, bottom-up); `all_params` fixes the
/// global enumeration used by checkpoints and the optimizer.
struct Model {
  ModelConfig cfg;
  std::vector<Param> extractor;   // w0, b0, w1, b1, ...
  std::vector<Param> bank;        // "bank.centers" (K x d), absent when K == 0
  std::vector<Param> classifier;  // w, b
  std::vector<Param> disc_h;      // w0, b0, w1, b1, w2, b2
  std::vector<Param> disc_l;

  std::vector<Param*> all_params();
  std::vector<const Param*> all_params() const;

  Eigen::MatrixXd centers() const;  // K x d
  void set_centers(const Eigen::MatrixXd& c);
};

/// Weights uniform in +-sqrt(6/(fan_in+fan_out)) on per-parameter
/// substreams; biases and bank centers zero (centers come from k-means).
Model build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Which parts of a bound model receive gradients.
struct BindSpec {
  int extractor_top_layers = 0;  // number of topmost trainable layers
  bool bank = false;
  bool classifier = false;
  bool disc_h = false;
  bool disc_l = false;

  static BindSpec none() { return {}; }
};

/// Graph handles for one training/eval step.
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  std::vector<Var> extractor;
  Var centers;  // invalid when K == 0
  std::vector<Var> classifier;
  std::vector<Var> disc_h;
  std::vector<Var> disc_l;
  std::vector<std::pair<Param*, Var>> trainable;  // gradient readout registry
};

BoundModel bind_model(Tape& tape, Model& model, const BindSpec& spec);

/// Shared per-patch MLP: patches (B,P,patch_dim) -> features (B,P,d).
Var extract_features(Tape& tape, const BoundModel& bound, Var patches);

/// Holistic code of a feature map (B,P,d) -> (B, code_dim): VLAD over the
/// bank, or the normalized mean feature when the bank is disabled.
struct CodeBits {
  Var similarities;  // (B,P,K) at decay alpha; invalid when K == 0
  Var code;          // (B, code_dim)
};
CodeBits holistic_code(Tape& tape, const BoundModel& bound, Var features);

/// Class probabilities; dropout_mask is an optional constant (B, code_dim)
/// of {0, 1/keep} entries, applied before the linear layer.
Var classify(Tape& tape, const BoundModel& bound, Var code, Var dropout_mask = {});

/// Inverted-scaling dropout mask values for a (rows, cols) tensor.
ArrayXd dropout_mask_values(Index rows, Index cols, double rate, std::uint64_t seed,
                            std::uint64_t stream);

Var discriminate_holistic(Tape& tape, const BoundModel& bound, Var code);

/// Residuals (n, d) conditioned on one-hot pattern identity (n, K).
Var discriminate_local(Tape& tape, const BoundModel& bound, Var residual, Var pattern_one_hot);

}  // namespace lfp
