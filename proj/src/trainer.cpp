#include "lfp/trainer.hpp"

#include "lfp/inference.hpp"
#include "lfp/io.hpp"
#include "lfp/optimizer.hpp"
#include "lfp/patterns.hpp"
#include "lfp/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace lfp {

namespace {

// Batch-stream tags: stream = (phase*16 + kind) << 32 | step.
enum BatchKind : std::uint64_t {
  kSourceBatch = 1,
  kTargetBatch = 2,
  kSourceBatchG = 3,
  kTargetBatchG = 4,
  kDropout = 5,
  kWarmupSource = 6,
  kWarmupTarget = 7,
};

std::uint64_t stream_id(int phase, BatchKind kind, std::int64_t step) {
  return ((static_cast<std::uint64_t>(phase) * 16 + kind) << 32) |
         static_cast<std::uint64_t>(step);
}

std::vector<int> sample_indices(std::uint64_t seed, std::uint64_t stream, int n,
                                int count) {
  Rng rng = Rng::fork(seed, stream);
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    idx[static_cast<std::size_t>(i)] =
        static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  }
  return idx;
}

ArrayXd gather_batch(const DomainDataset& ds, const std::vector<int>& idx) {
  const Index stride = ds.sample_stride();
  ArrayXd out(static_cast<Index>(idx.size()) * stride);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.segment(static_cast<Index>(i) * stride, stride) =
        ds.samples.segment(static_cast<Index>(idx[i]) * stride, stride);
  }
  return out;
}

Eigen::MatrixXd batch_labels(const DomainDataset& ds, const std::vector<int>& idx) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()),
                                            ds.classes);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    y(static_cast<Eigen::Index>(i), ds.labels[static_cast<std::size_t>(idx[i])]) = 1.0;
  }
  return y;
}

struct DomainForward {
  Var features;  // (B,P,d)
  CodeBits code;
  Var probs;
  Var d_h;
  Var d_l;
};

struct ForwardOpts {
  bool classify = false;
  Var dropout_mask;  // optional
  bool disc_h = false;
  bool disc_l = false;
};

double g_extract=0, g_code=0, g_cls=0, g_dh=0, g_dl=0;
DomainForward forward_domain(Tape& tape, BoundModel& bound, const ArrayXd& patches,
                             Index b, Index cells, const ForwardOpts& opts) {
  using Clk = std::chrono::steady_clock;
  auto q0 = Clk::now();
  const ModelConfig& cfg = *bound.cfg;
  DomainForward fw;
  Var input = tape.constant(Shape{b, cells, cfg.patch_dim}, patches);
  fw.features = extract_features(tape, bound, input);
  auto q1 = Clk::now(); g_extract += std::chrono::duration<double,std::milli>(q1-q0).count();
  fw.code = holistic_code(tape, bound, fw.features);
  auto q2 = Clk::now(); g_code += std::chrono::duration<double,std::milli>(q2-q1).count();
  if (opts.classify) {
    fw.probs = classify(tape, bound, fw.code.code, opts.dropout_mask);
  }
  auto q3 = Clk::now(); g_cls += std::chrono::duration<double,std::milli>(q3-q2).count();
  if (opts.disc_h) {
    fw.d_h = discriminate_holistic(tape, bound, fw.code.code);
  }
  auto q4 = Clk::now(); g_dh += std::chrono::duration<double,std::milli>(q4-q3).count();
  if (opts.disc_l && cfg.patterns > 0) {
    Eigen::ArrayXi assign = hard_assign(fw.code.similarities.value(), cfg.patterns);
    Var flat = reshape(fw.features, Shape{b * cells, cfg.feature_dim});
    Var res = residuals(flat, bound.centers, assign);
    Eigen::MatrixXd oh = one_hot_rows(assign, cfg.patterns);
    ArrayXd ohf(oh.size());
    for (Eigen::Index r = 0; r < oh.rows(); ++r) {
      for (int c = 0; c < cfg.patterns; ++c) ohf[r * cfg.patterns + c] = oh(r, c);
    }
    fw.d_l = discriminate_local(tape, bound, res,
                                tape.constant(Shape{b * cells, cfg.patterns}, ohf));
  }
  auto q5 = Clk::now(); g_dl += std::chrono::duration<double,std::milli>(q5-q4).count();
  return fw;
}

void apply_adam(BoundModel& bound, std::int64_t t, const AdamConfig& cfg) {
  for (auto& [param, var] : bound.trainable) {
    adam_update(param->value, var.grad(), param->m1, param->m2, t, cfg);
  }
}

double batch_disc_accuracy(Var d_src, Var d_tgt) {
  if (!d_src.valid() || !d_tgt.valid()) return 0.0;
  Index correct = 0;
  for (Index i = 0; i < d_src.numel(); ++i) correct += d_src.value()[i] > 0.5 ? 1 : 0;
  for (Index i = 0; i < d_tgt.numel(); ++i) correct += d_tgt.value()[i] <= 0.5 ? 1 : 0;
  return static_cast<double>(correct) /
         static_cast<double>(d_src.numel() + d_tgt.numel());
}

double full_dh_accuracy(Model& model, const DomainDataset& source,
                        const DomainDataset& target) {
  DomainEval es = run_inference(model, source);
  DomainEval et = run_inference(model, target);
  return discriminator_accuracy(es.d_h, et.d_h);
}

// One discriminator update round; returns the batch losses/accuracies.
struct DStepOut {
  double l_dh = 0.0, l_dl = 0.0;
  double dh_acc = 0.0, dl_acc = 0.0;
};

DStepOut discriminator_step(Model& model, Counters& counters, const TrainConfig& cfg,
                            const DomainDataset& source, const DomainDataset& target,
                            BatchKind src_kind, BatchKind tgt_kind, std::int64_t step) {
  const Index cells = static_cast<Index>(source.rows) * source.cols;
  auto src_idx = sample_indices(cfg.seed, stream_id(3, src_kind, step), source.n,
                                cfg.batch_source);
  auto tgt_idx = sample_indices(cfg.seed, stream_id(3, tgt_kind, step), target.n,
                                cfg.batch_target);

  const bool train_dh = cfg.weights.lambda_h > 0.0;
  const bool train_dl = cfg.weights.lambda_l > 0.0 && model.cfg.patterns > 0;
  DStepOut out;
  if (!train_dh && !train_dl) return out;

  Tape tape;
  BindSpec spec;
  spec.disc_h = train_dh;
  spec.disc_l = train_dl;
  BoundModel bound = bind_model(tape, model, spec);

  ForwardOpts opts;
  opts.disc_h = train_dh;
  opts.disc_l = train_dl;
  DomainForward fs = forward_domain(tape, bound, gather_batch(source, src_idx),
                                    cfg.batch_source, cells, opts);
  DomainForward ft = forward_domain(tape, bound, gather_batch(target, tgt_idx),
                                    cfg.batch_target, cells, opts);

  Var loss;
  if (train_dh) {
    Var l_dh = holistic_d_loss(fs.d_h, ft.d_h);
    out.l_dh = l_dh.value()[0];
    out.dh_acc = batch_disc_accuracy(fs.d_h, ft.d_h);
    loss = l_dh;
  }
  if (train_dl) {
    Var l_dl = local_d_loss(fs.d_l, ft.d_l);
    out.l_dl = l_dl.value()[0];
    out.dl_acc = batch_disc_accuracy(fs.d_l, ft.d_l);
    loss = loss.valid() ? add(loss, l_dl) : l_dl;
  }
  tape.backward(loss);

  // The two discriminators own disjoint parameters, so one joint backward
  // pass yields exactly the per-loss gradients.
  AdamConfig adam{cfg.lr_phase23, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  if (train_dh) counters.t_dh++;
  if (train_dl) counters.t_dl++;
  for (auto& [param, var] : bound.trainable) {
    const bool is_dh = param->name.rfind("disc_h", 0) == 0;
    adam_update(param->value, var.grad(), param->m1, param->m2,
                is_dh ? counters.t_dh : counters.t_dl, adam);
  }
  return out;
}

}  // namespace

TrainLog::TrainLog(std::ostream* os) : os_(os) {
  if (os_ != nullptr) {
    (*os_) << "step,phase,l_c,l_dh,l_gh,l_dl,l_gl,l_s,l_total,dh_batch_acc,dl_batch_acc\n";
  }
}

void TrainLog::row(std::int64_t step, int phase, const LossReport& r, double dh_acc,
                   double dl_acc) {
  if (os_ == nullptr) return;
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<long long>(step), phase, r.l_c, r.l_dh, r.l_gh, r.l_dl,
                r.l_gl, r.l_s, r.l_total, dh_acc, dl_acc);
  (*os_) << buf;
}

void phase1_classifier(Model& model, Counters& counters, const TrainConfig& cfg,
                       const DomainDataset& source, TrainLog& log) {
  const Index cells = static_cast<Index>(source.rows) * source.cols;

  // Initialize the pattern bank from k-means over extractor outputs on the
  // pooled source features; the bank then stays frozen for this phase.
  if (model.cfg.patterns > 0) {
    DomainEval ev = run_inference(model, source);
    if (ev.features.rows() < model.cfg.patterns) {
      throw std::invalid_argument("phase1: " + std::to_string(ev.features.rows()) +
                                  " pooled local features cannot seed " +
                                  std::to_string(model.cfg.patterns) + " patterns");
    }
    KMeansResult km = kmeans_init(ev.features, model.cfg.patterns, cfg.seed,
                                  cfg.kmeans_max_iters, cfg.kmeans_tol);
    model.set_centers(km.centers);
  }

  AdamConfig adam{cfg.lr_phase1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  for (int step = 0; step < cfg.steps_phase1; ++step) {
    auto idx = sample_indices(cfg.seed, stream_id(1, kSourceBatch, step), source.n,
                              cfg.batch_source);
    Tape tape;
    BindSpec spec;
    spec.classifier = true;
    BoundModel bound = bind_model(tape, model, spec);

    ForwardOpts opts;
    opts.classify = true;
    ArrayXd mask = dropout_mask_values(cfg.batch_source, model.cfg.code_dim(),
                                       cfg.dropout, cfg.seed,
                                       stream_id(1, kDropout, step));
    opts.dropout_mask =
        tape.constant(Shape{cfg.batch_source, model.cfg.code_dim()}, mask);
    DomainForward fw = forward_domain(tape, bound, gather_batch(source, idx),
                                      cfg.batch_source, cells, opts);
    Var l_c = classification_loss(fw.probs, batch_labels(source, idx));
    tape.backward(l_c);
    counters.t_classifier++;
    apply_adam(bound, counters.t_classifier, adam);

    LossReport r;
    r.l_c = l_c.value()[0];
    r.l_total = recompose_total(r, cfg.weights);
    log.row(counters.log_step++, 1, r, 0.0, 0.0);
  }
  counters.phases_done = std::max(counters.phases_done, 1);
}

void phase2_finetune(Model& model, Counters& counters, const TrainConfig& cfg,
                     const DomainDataset& source, TrainLog& log) {
  const Index cells = static_cast<Index>(source.rows) * source.cols;
  AdamConfig adam{cfg.lr_phase23, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  for (int step = 0; step < cfg.steps_phase2; ++step) {
    auto idx = sample_indices(cfg.seed, stream_id(2, kSourceBatch, step), source.n,
                              cfg.batch_source);
    Tape tape;
    BindSpec spec;
    spec.classifier = true;
    spec.bank = model.cfg.patterns > 0;
    spec.extractor_top_layers = cfg.top_trainable_layers;
    BoundModel bound = bind_model(tape, model, spec);

    ForwardOpts opts;
    opts.classify = true;
    ArrayXd mask = dropout_mask_values(cfg.batch_source, model.cfg.code_dim(),
                                       cfg.dropout, cfg.seed,
                                       stream_id(2, kDropout, step));
    opts.dropout_mask =
        tape.constant(Shape{cfg.batch_source, model.cfg.code_dim()}, mask);
    DomainForward fw = forward_domain(tape, bound, gather_batch(source, idx),
                                      cfg.batch_source, cells, opts);
    Var l_c = classification_loss(fw.probs, batch_labels(source, idx));
    Var l_s;
    if (model.cfg.patterns > 0 && cfg.weights.lambda_s > 0.0) {
      l_s = sparsity_loss(fw.features, bound.centers, model.cfg.alpha_s,
                          model.cfg.entropy_margin);
    }
    Var total = total_g_loss(l_c, Var{}, Var{}, l_s, cfg.weights);
    tape.backward(total);
    counters.t_gen++;
    apply_adam(bound, counters.t_gen, adam);

    LossReport r;
    r.l_c = l_c.value()[0];
    r.l_s = l_s.valid() ? l_s.value()[0] : 0.0;
    r.l_total = recompose_total(r, cfg.weights);
    log.row(counters.log_step++, 2, r, 0.0, 0.0);
  }
  counters.phases_done = std::max(counters.phases_done, 2);
}

Phase3Stats phase3_adapt(Model& model, Counters& counters, const TrainConfig& cfg,
                         const DomainDataset& source, const DomainDataset& target,
                         TrainLog& log) {
  const Index cells = static_cast<Index>(source.rows) * source.cols;
  Phase3Stats stats;
  if (cfg.steps_phase3 <= 0) return stats;

  for (int w = 0; w < cfg.d_warmup_steps; ++w) {
    discriminator_step(model, counters, cfg, source, target, kWarmupSource,
                       kWarmupTarget, w);
  }
  stats.dh_acc_start = full_dh_accuracy(model, source, target);

  AdamConfig adam{cfg.lr_phase23, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  DStepOut dstep;
  double t_d = 0, t_fwd = 0, t_loss = 0, t_bwd = 0, t_adam = 0;
  using Clk = std::chrono::steady_clock;
  for (int step = 0; step < cfg.steps_phase3; ++step) {
    auto c0 = Clk::now();
    for (int j = 0; j < cfg.d_steps_per_g_step; ++j) {
      dstep = discriminator_step(model, counters, cfg, source, target, kSourceBatch,
                                 kTargetBatch,
                                 static_cast<std::int64_t>(step) * cfg.d_steps_per_g_step + j);
    }
    auto c1 = Clk::now();
    t_d += std::chrono::duration<double,std::milli>(c1-c0).count();

    auto src_idx = sample_indices(cfg.seed, stream_id(3, kSourceBatchG, step), source.n,
                                  cfg.batch_source);
    auto tgt_idx = sample_indices(cfg.seed, stream_id(3, kTargetBatchG, step), target.n,
                                  cfg.batch_target);
    Tape tape;
    BindSpec spec;
    spec.classifier = true;
    spec.bank = model.cfg.patterns > 0;
    spec.extractor_top_layers = cfg.top_trainable_layers;
    BoundModel bound = bind_model(tape, model, spec);

    ForwardOpts src_opts;
    src_opts.classify = true;
    ArrayXd mask = dropout_mask_values(cfg.batch_source, model.cfg.code_dim(),
                                       cfg.dropout, cfg.seed,
                                       stream_id(3, kDropout, step));
    src_opts.dropout_mask =
        tape.constant(Shape{cfg.batch_source, model.cfg.code_dim()}, mask);
    DomainForward fs = forward_domain(tape, bound, gather_batch(source, src_idx),
                                      cfg.batch_source, cells, src_opts);

    ForwardOpts tgt_opts;
    tgt_opts.disc_h = cfg.weights.lambda_h > 0.0;
    tgt_opts.disc_l = cfg.weights.lambda_l > 0.0;
    DomainForward ft = forward_domain(tape, bound, gather_batch(target, tgt_idx),
                                      cfg.batch_target, cells, tgt_opts);
    auto c2 = Clk::now();
    t_fwd += std::chrono::duration<double,std::milli>(c2-c1).count();

    Var l_c = classification_loss(fs.probs, batch_labels(source, src_idx));
    Var l_gh, l_gl, l_s;
    if (ft.d_h.valid()) l_gh = holistic_g_loss(ft.d_h);
    if (ft.d_l.valid()) l_gl = local_g_loss(ft.d_l);
    if (model.cfg.patterns > 0 && cfg.weights.lambda_s > 0.0) {
      l_s = sparsity_loss(fs.features, bound.centers, model.cfg.alpha_s,
                          model.cfg.entropy_margin);
    }
    Var total = total_g_loss(l_c, l_gh, l_gl, l_s, cfg.weights);
    auto c3 = Clk::now();
    t_loss += std::chrono::duration<double,std::milli>(c3-c2).count();
    tape.backward(total);
    auto c4 = Clk::now();
    t_bwd += std::chrono::duration<double,std::milli>(c4-c3).count();
    counters.t_gen++;
    apply_adam(bound, counters.t_gen, adam);
    auto c5 = Clk::now();
    t_adam += std::chrono::duration<double,std::milli>(c5-c4).count();

    stats.last.l_c = l_c.value()[0];
    stats.last.l_dh = dstep.l_dh;
    stats.last.l_dl = dstep.l_dl;
    stats.last.l_gh = l_gh.valid() ? l_gh.value()[0] : 0.0;
    stats.last.l_gl = l_gl.valid() ? l_gl.value()[0] : 0.0;
    stats.last.l_s = l_s.valid() ? l_s.value()[0] : 0.0;
    stats.last.l_total = recompose_total(stats.last, cfg.weights);
    log.row(counters.log_step++, 3, stats.last, dstep.dh_acc, dstep.dl_acc);
  }
  std::fprintf(stderr, "[phase3] d=%.1f fwd=%.1f loss=%.1f bwd=%.1f adam=%.1f ms total\n",
               t_d, t_fwd, t_loss, t_bwd, t_adam);
  std::fprintf(stderr, "[fwd] extract=%.1f code=%.1f cls=%.1f dh=%.1f dl=%.1f\n",
               g_extract, g_code, g_cls, g_dh, g_dl);
  stats.dh_acc_end = full_dh_accuracy(model, source, target);
  counters.phases_done = 3;
  return stats;
}

TrainResult train_full(const ModelConfig& mcfg, const TrainConfig& cfg,
                       const DomainDataset& source, const DomainDataset& target,
                       const std::string& log_path) {
  ModelConfig mc = mcfg;
  mc.patch_dim = source.patch_dim;
  mc.classes = source.classes;

  TrainResult result;
  result.model = build_model(mc, cfg.seed);
  if (cfg.steps_phase1 == 0 && cfg.steps_phase2 == 0 && cfg.steps_phase3 == 0) {
    return result;  // untouched initialization
  }

  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw std::runtime_error("cannot open log '" + log_path + "'");
  }
  TrainLog log(log_path.empty() ? nullptr : &log_file);

  phase1_classifier(result.model, result.counters, cfg, source, log);
  phase2_finetune(result.model, result.counters, cfg, source, log);
  Phase3Stats stats =
      phase3_adapt(result.model, result.counters, cfg, source, target, log);
  result.dh_acc_phase3_start = stats.dh_acc_start;
  result.dh_acc_phase3_end = stats.dh_acc_end;
  result.final_losses = stats.last;
  return result;
}

// --- checkpoint io ------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'L', 'F', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void write_dims(std::ostream& os, const std::vector<int>& dims) {
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) io::write_pod<std::int32_t>(os, d);
}

std::vector<int> read_dims(std::istream& is, const char* what) {
  const auto n = io::read_pod<std::uint32_t>(is, what);
  std::vector<int> dims(n);
  for (auto& d : dims) d = io::read_pod<std::int32_t>(is, what);
  return dims;
}

void write_array(std::ostream& os, const ArrayXd& a) {
  io::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(a.size()));
  io::write_bytes(os, a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
}

ArrayXd read_array(std::istream& is, const char* what) {
  const auto n = io::read_pod<std::uint64_t>(is, what);
  ArrayXd a(static_cast<Index>(n));
  io::read_bytes(is, a.data(), sizeof(double) * n, what);
  return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const Counters& counters, const std::string& config_json,
                     std::uint64_t seed) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  io::write_bytes(f, kCkptMagic, sizeof(kCkptMagic));
  io::write_pod<std::uint32_t>(f, kCkptVersion);
  io::write_pod<std::uint64_t>(f, seed);
  io::write_pod<std::uint64_t>(f, io::fnv1a64(config_json.data(), config_json.size()));
  io::write_string(f, config_json);

  const ModelConfig& c = model.cfg;
  io::write_pod<std::int32_t>(f, c.patch_dim);
  write_dims(f, c.extractor_hidden);
  io::write_pod<std::int32_t>(f, c.feature_dim);
  io::write_pod<std::int32_t>(f, c.classes);
  io::write_pod<std::int32_t>(f, c.patterns);
  io::write_pod<double>(f, c.alpha);
  io::write_pod<double>(f, c.alpha_s);
  io::write_pod<double>(f, c.entropy_margin);
  io::write_pod<std::uint8_t>(f, static_cast<std::uint8_t>(c.vlad_norm));
  write_dims(f, c.disc_h_hidden);
  write_dims(f, c.disc_l_hidden);

  auto params = model.all_params();
  io::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    io::write_string(f, p->name);
    write_array(f, p->value);
    write_array(f, p->m1);
    write_array(f, p->m2);
  }
  io::write_pod<std::int64_t>(f, counters.t_classifier);
  io::write_pod<std::int64_t>(f, counters.t_gen);
  io::write_pod<std::int64_t>(f, counters.t_dh);
  io::write_pod<std::int64_t>(f, counters.t_dl);
  io::write_pod<std::int64_t>(f, counters.log_step);
  io::write_pod<std::int32_t>(f, counters.phases_done);
  if (!f) throw std::runtime_error("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[8];
  io::read_bytes(f, magic, sizeof(magic), "checkpoint magic");
  if (std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
  }
  const auto version = io::read_pod<std::uint32_t>(f, "checkpoint version");
  if (version != kCkptVersion) {
    throw std::runtime_error("checkpoint version mismatch: expected " +
                             std::to_string(kCkptVersion) + ", found " +
                             std::to_string(version));
  }
  Checkpoint ck;
  ck.seed = io::read_pod<std::uint64_t>(f, "seed");
  const auto stored_hash = io::read_pod<std::uint64_t>(f, "config hash");
  ck.config_json = io::read_string(f, "config json");
  if (io::fnv1a64(ck.config_json.data(), ck.config_json.size()) != stored_hash) {
    throw std::runtime_error("checkpoint config hash mismatch (corrupt file?)");
  }

  ModelConfig c;
  c.patch_dim = io::read_pod<std::int32_t>(f, "patch_dim");
  c.extractor_hidden = read_dims(f, "extractor dims");
  c.feature_dim = io::read_pod<std::int32_t>(f, "feature_dim");
  c.classes = io::read_pod<std::int32_t>(f, "classes");
  c.patterns = io::read_pod<std::int32_t>(f, "patterns");
  c.alpha = io::read_pod<double>(f, "alpha");
  c.alpha_s = io::read_pod<double>(f, "alpha_s");
  c.entropy_margin = io::read_pod<double>(f, "entropy_margin");
  c.vlad_norm = static_cast<VladNorm>(io::read_pod<std::uint8_t>(f, "vlad_norm"));
  c.disc_h_hidden = read_dims(f, "disc_h dims");
  c.disc_l_hidden = read_dims(f, "disc_l dims");

  ck.model = build_model(c, 0);
  auto params = ck.model.all_params();
  const auto count = io::read_pod<std::uint32_t>(f, "parameter count");
  if (count != params.size()) {
    throw std::runtime_error("checkpoint parameter count mismatch: expected " +
                             std::to_string(params.size()) + ", found " +
                             std::to_string(count));
  }
  for (Param* p : params) {
    const std::string name = io::read_string(f, "parameter name");
    if (name != p->name) {
      throw std::runtime_error("checkpoint parameter order mismatch: expected '" +
                               p->name + "', found '" + name + "'");
    }
    p->value = read_array(f, name.c_str());
    p->m1 = read_array(f, name.c_str());
    p->m2 = read_array(f, name.c_str());
    if (p->value.size() != p->shape.numel()) {
      throw std::runtime_error("checkpoint parameter '" + name + "' has wrong size");
    }
  }
  ck.counters.t_classifier = io::read_pod<std::int64_t>(f, "t_classifier");
  ck.counters.t_gen = io::read_pod<std::int64_t>(f, "t_gen");
  ck.counters.t_dh = io::read_pod<std::int64_t>(f, "t_dh");
  ck.counters.t_dl = io::read_pod<std::int64_t>(f, "t_dl");
  ck.counters.log_step = io::read_pod<std::int64_t>(f, "log_step");
  ck.counters.phases_done = io::read_pod<std::int32_t>(f, "phases_done");
  return ck;
}

}  // namespace lfp
