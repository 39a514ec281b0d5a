#include "lfp/networks.hpp"

#include "lfp/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace lfp {

namespace {

void push_linear(std::vector<Param>& dst, const std::string& prefix, int layer, int in,
                 int out) {
  dst.emplace_back(prefix + ".w" + std::to_string(layer), Shape{in, out});
  dst.emplace_back(prefix + ".b" + std::to_string(layer), Shape{out});
}

std::vector<int> mlp_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims;
  dims.push_back(in);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(out);
  return dims;
}

void build_mlp(std::vector<Param>& dst, const std::string& prefix,
               const std::vector<int>& dims) {
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    push_linear(dst, prefix, static_cast<int>(l), dims[l], dims[l + 1]);
  }
}

// Linear layers with relu between them; the final layer stays linear.
Var mlp_forward(Tape& tape, const std::vector<Var>& wb, Var x) {
  const std::size_t layers = wb.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    Var w = wb[2 * l];
    Var b = wb[2 * l + 1];
    Var z = matmul(x, w);
    z = add(z, broadcast(reshape(b, Shape{1, b.numel()}), z.shape()));
    x = (l + 1 < layers) ? relu(z) : z;
  }
  return x;
}

std::vector<Var> bind_set(Tape& tape, std::vector<Param>& params, bool trainable,
                          BoundModel& bound) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (Param& p : params) {
    Var v = tape.input(p.shape, p.value, trainable, p.name);
    if (trainable) bound.trainable.emplace_back(&p, v);
    vars.push_back(v);
  }
  return vars;
}

}  // namespace

std::vector<Param*> Model::all_params() {
  std::vector<Param*> out;
  for (auto* set : {&extractor, &bank, &classifier, &disc_h, &disc_l}) {
    for (Param& p : *set) out.push_back(&p);
  }
  return out;
}

std::vector<const Param*> Model::all_params() const {
  std::vector<const Param*> out;
  for (auto* set : {&extractor, &bank, &classifier, &disc_h, &disc_l}) {
    for (const Param& p : *set) out.push_back(&p);
  }
  return out;
}

Eigen::MatrixXd Model::centers() const {
  const int k = cfg.patterns;
  const int d = cfg.feature_dim;
  Eigen::MatrixXd c(k, d);
  for (int r = 0; r < k; ++r) {
    for (int j = 0; j < d; ++j) c(r, j) = bank[0].value[r * d + j];
  }
  return c;
}

void Model::set_centers(const Eigen::MatrixXd& c) {
  const int k = cfg.patterns;
  const int d = cfg.feature_dim;
  if (c.rows() != k || c.cols() != d) {
    throw std::invalid_argument("set_centers: expected " + std::to_string(k) + "x" +
                                std::to_string(d));
  }
  for (int r = 0; r < k; ++r) {
    for (int j = 0; j < d; ++j) bank[0].value[r * d + j] = c(r, j);
  }
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.patch_dim < 1 || cfg.feature_dim < 1 || cfg.classes < 2 || cfg.patterns < 0) {
    throw std::invalid_argument("build_model: invalid dimensions");
  }
  Model m;
  m.cfg = cfg;
  build_mlp(m.extractor, "extractor",
            mlp_dims(cfg.patch_dim, cfg.extractor_hidden, cfg.feature_dim));
  if (cfg.patterns > 0) {
    m.bank.emplace_back("bank.centers", Shape{cfg.patterns, cfg.feature_dim});
  }
  build_mlp(m.classifier, "classifier", {cfg.code_dim(), cfg.classes});
  build_mlp(m.disc_h, "disc_h", mlp_dims(cfg.code_dim(), cfg.disc_h_hidden, 1));
  build_mlp(m.disc_l, "disc_l",
            mlp_dims(cfg.feature_dim + cfg.patterns, cfg.disc_l_hidden, 1));

  // Glorot-uniform weights; biases and centers stay zero.
  auto params = m.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.shape.rank() != 2 || p.name == "bank.centers") continue;
    Rng rng = Rng::fork(seed, 0x776569676874ULL + i);  // "weight" + index
    const double a =
        std::sqrt(6.0 / static_cast<double>(p.shape[0] + p.shape[1]));
    for (Index j = 0; j < p.value.size(); ++j) p.value[j] = rng.uniform(-a, a);
  }
  return m;
}

BoundModel bind_model(Tape& tape, Model& model, const BindSpec& spec) {
  BoundModel bound;
  bound.cfg = &model.cfg;

  const int depth = model.cfg.extractor_depth();
  int top = spec.extractor_top_layers;
  if (top < 0 || top > depth) top = depth;
  bound.extractor.reserve(model.extractor.size());
  for (std::size_t i = 0; i < model.extractor.size(); ++i) {
    const int layer = static_cast<int>(i) / 2;
    const bool trainable = layer >= depth - top;
    Param& p = model.extractor[i];
    Var v = tape.input(p.shape, p.value, trainable, p.name);
    if (trainable) bound.trainable.emplace_back(&p, v);
    bound.extractor.push_back(v);
  }
  if (!model.bank.empty()) {
    Param& p = model.bank[0];
    bound.centers = tape.input(p.shape, p.value, spec.bank, p.name);
    if (spec.bank) bound.trainable.emplace_back(&p, bound.centers);
  }
  bound.classifier = bind_set(tape, model.classifier, spec.classifier, bound);
  bound.disc_h = bind_set(tape, model.disc_h, spec.disc_h, bound);
  bound.disc_l = bind_set(tape, model.disc_l, spec.disc_l, bound);
  return bound;
}

Var extract_features(Tape& tape, const BoundModel& bound, Var patches) {
  const Shape& s = patches.shape();
  if (s.rank() != 3 || s[2] != bound.cfg->patch_dim) {
    throw std::invalid_argument("extract_features: expected (B,P," +
                                std::to_string(bound.cfg->patch_dim) + "), got " +
                                s.str());
  }
  Var flat = reshape(patches, Shape{s[0] * s[1], s[2]});
  Var out = mlp_forward(tape, bound.extractor, flat);
  return reshape(out, Shape{s[0], s[1], bound.cfg->feature_dim});
}

CodeBits holistic_code(Tape& tape, const BoundModel& bound, Var features) {
  const ModelConfig& cfg = *bound.cfg;
  CodeBits bits;
  if (cfg.patterns == 0) {
    // Bank disabled: the holistic vector is the normalized mean feature.
    Var mean_feat = mean(features, {1});  // (B, d)
    bits.code = l2_normalize_last(mean_feat);
    return bits;
  }
  bits.similarities = soft_assign(features, bound.centers, cfg.alpha);
  Var raw = vlad_encode_raw(features, bits.similarities, bound.centers);
  bits.code = vlad_holistic(raw, cfg.vlad_norm);
  return bits;
}

Var classify(Tape& tape, const BoundModel& bound, Var code, Var dropout_mask) {
  Var x = code;
  if (dropout_mask.valid()) x = mul(x, dropout_mask);
  Var logits = mlp_forward(tape, bound.classifier, x);
  return softmax(logits);
}

ArrayXd dropout_mask_values(Index rows, Index cols, double rate, std::uint64_t seed,
                            std::uint64_t stream) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1), got " +
                                std::to_string(rate));
  }
  ArrayXd mask(rows * cols);
  if (rate == 0.0) {
    mask.setOnes();
    return mask;
  }
  Rng rng = Rng::fork(seed, stream);
  const double keep = 1.0 - rate;
  for (Index i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
  return mask;
}

Var discriminate_holistic(Tape& tape, const BoundModel& bound, Var code) {
  if (code.shape().rank() != 2 || code.shape()[1] != bound.cfg->code_dim()) {
    throw std::invalid_argument("discriminate_holistic: expected (n," +
                                std::to_string(bound.cfg->code_dim()) + "), got " +
                                code.shape().str());
  }
  return sigmoid(mlp_forward(tape, bound.disc_h, code));
}

Var discriminate_local(Tape& tape, const BoundModel& bound, Var residual,
                       Var pattern_one_hot) {
  const Shape& rs = residual.shape();
  const Shape& os = pattern_one_hot.shape();
  if (rs.rank() != 2 || os.rank() != 2 || rs[0] != os[0] ||
      rs[1] != bound.cfg->feature_dim || os[1] != bound.cfg->patterns) {
    throw std::invalid_argument("discriminate_local: expected residual (n," +
                                std::to_string(bound.cfg->feature_dim) +
                                ") and one-hot (n," +
                                std::to_string(bound.cfg->patterns) + "), got " +
                                rs.str() + " and " + os.str());
  }
  Var x = concat({residual, pattern_one_hot});
  return sigmoid(mlp_forward(tape, bound.disc_l, x));
}

}  // namespace lfp
