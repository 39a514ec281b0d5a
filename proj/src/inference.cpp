#include "lfp/inference.hpp"

#include <stdexcept>

namespace lfp {

DomainEval run_inference(Model& model, const DomainDataset& ds) {
  const ModelConfig& cfg = model.cfg;
  if (ds.patch_dim != cfg.patch_dim) {
    throw std::invalid_argument("run_inference: dataset patch_dim " +
                                std::to_string(ds.patch_dim) + " != model patch_dim " +
                                std::to_string(cfg.patch_dim));
  }
  const Index n = ds.n;
  const Index cells = static_cast<Index>(ds.rows) * ds.cols;
  const int k = cfg.patterns;
  const int d = cfg.feature_dim;

  DomainEval ev;
  ev.codes.resize(n, cfg.code_dim());
  ev.probs.resize(n, cfg.classes);
  ev.d_h.resize(n);
  ev.features.resize(n * cells, d);
  if (k > 0) {
    ev.assignments.resize(n * cells);
    ev.d_l.resize(n * cells);
    ev.residuals.resize(n * cells, d);
  }

  double entropy_total = 0.0;
  for (Index start = 0; start < n; start += kInferenceChunk) {
    const Index b = std::min<Index>(kInferenceChunk, n - start);
    Tape tape;
    BoundModel bound = bind_model(tape, model, BindSpec::none());
    Var patches = tape.constant(
        Shape{b, cells, cfg.patch_dim},
        ds.samples.segment(start * ds.sample_stride(), b * ds.sample_stride()));
    Var features = extract_features(tape, bound, patches);
    CodeBits bits = holistic_code(tape, bound, features);
    Var probs = classify(tape, bound, bits.code);
    Var dh = discriminate_holistic(tape, bound, bits.code);

    for (Index i = 0; i < b; ++i) {
      for (Index j = 0; j < cfg.code_dim(); ++j) {
        ev.codes(start + i, j) = bits.code.value()[i * cfg.code_dim() + j];
      }
      for (Index c = 0; c < cfg.classes; ++c) {
        ev.probs(start + i, c) = probs.value()[i * cfg.classes + c];
      }
      ev.d_h[start + i] = dh.value()[i];
    }
    for (Index r = 0; r < b * cells; ++r) {
      for (Index j = 0; j < d; ++j) {
        ev.features(start * cells + r, j) = features.value()[r * d + j];
      }
    }

    if (k > 0) {
      Eigen::ArrayXi assign = hard_assign(bits.similarities.value(), k);
      Var feat_flat = reshape(features, Shape{b * cells, d});
      Var res = residuals(feat_flat, bound.centers, assign);
      Eigen::MatrixXd oh = one_hot_rows(assign, k);
      ArrayXd ohf(oh.size());
      for (Eigen::Index r = 0; r < oh.rows(); ++r) {
        for (int c = 0; c < k; ++c) ohf[r * k + c] = oh(r, c);
      }
      Var dl = discriminate_local(tape, bound, res,
                                  tape.constant(Shape{b * cells, k}, ohf));
      for (Index r = 0; r < b * cells; ++r) {
        ev.assignments[start * cells + r] = assign[r];
        ev.d_l[start * cells + r] = dl.value()[r];
        for (Index j = 0; j < d; ++j) {
          ev.residuals(start * cells + r, j) = res.value()[r * d + j];
        }
      }
      double chunk_mean =
          mean_assignment_entropy(features, bound.centers, cfg.alpha_s).value()[0];
      entropy_total += chunk_mean * static_cast<double>(b * cells);
    }
  }
  if (k > 0) ev.mean_entropy = entropy_total / static_cast<double>(n * cells);
  return ev;
}

double accuracy(const Eigen::MatrixXd& probs, const std::vector<std::int32_t>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw std::invalid_argument("accuracy: row/label count mismatch");
  }
  if (labels.empty()) return 0.0;
  int correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    correct += best == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double discriminator_accuracy(const ArrayXd& d_source, const ArrayXd& d_target) {
  const Index total = d_source.size() + d_target.size();
  if (total == 0) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < d_source.size(); ++i) correct += d_source[i] > 0.5 ? 1 : 0;
  for (Index i = 0; i < d_target.size(); ++i) correct += d_target[i] <= 0.5 ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace lfp
