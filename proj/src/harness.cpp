#include "lfp/harness.hpp"

#include "lfp/io.hpp"
#include "lfp/losses.hpp"
#include "lfp/patterns.hpp"
#include "lfp/rng.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace lfp {

namespace {

using ordered_json = nlohmann::ordered_json;

}  // namespace

EvalReport evaluate(Model& model, const DomainDataset& source,
                    const DomainDataset& target) {
  DomainEval es = run_inference(model, source);
  DomainEval et = run_inference(model, target);

  EvalReport r;
  r.source_accuracy = accuracy(es.probs, source.labels);
  r.target_accuracy = accuracy(et.probs, target.labels);
  r.discriminator_accuracy_h = discriminator_accuracy(es.d_h, et.d_h);

  const int k = model.cfg.patterns;
  r.per_pattern_balance = Eigen::MatrixXd::Zero(k, 2);
  if (k > 0) {
    Eigen::VectorXd src_counts = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd tgt_counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < es.assignments.size(); ++i) src_counts[es.assignments[i]] += 1;
    for (Eigen::Index i = 0; i < et.assignments.size(); ++i) tgt_counts[et.assignments[i]] += 1;
    for (int p = 0; p < k; ++p) {
      const double total = src_counts[p] + tgt_counts[p];
      if (total > 0) {
        r.per_pattern_balance(p, 0) = src_counts[p] / total;
        r.per_pattern_balance(p, 1) = tgt_counts[p] / total;
      }
    }
    const double n_src = static_cast<double>(es.assignments.size());
    const double n_tgt = static_cast<double>(et.assignments.size());
    r.mean_assignment_entropy =
        (es.mean_entropy * n_src + et.mean_entropy * n_tgt) / (n_src + n_tgt);

    Index correct = 0;
    for (Index i = 0; i < es.d_l.size(); ++i) correct += es.d_l[i] > 0.5 ? 1 : 0;
    for (Index i = 0; i < et.d_l.size(); ++i) correct += et.d_l[i] <= 0.5 ? 1 : 0;
    r.discriminator_accuracy_l =
        static_cast<double>(correct) / static_cast<double>(es.d_l.size() + et.d_l.size());
  }
  return r;
}

std::string eval_report_json(const EvalReport& r) {
  ordered_json j;
  j["source_accuracy"] = r.source_accuracy;
  j["target_accuracy"] = r.target_accuracy;
  j["mean_assignment_entropy"] = r.mean_assignment_entropy;
  j["discriminator_accuracy_h"] = r.discriminator_accuracy_h;
  j["discriminator_accuracy_l"] = r.discriminator_accuracy_l;
  ordered_json balance = ordered_json::array();
  for (Eigen::Index p = 0; p < r.per_pattern_balance.rows(); ++p) {
    balance.push_back({r.per_pattern_balance(p, 0), r.per_pattern_balance(p, 1)});
  }
  j["per_pattern_balance"] = balance;
  return j.dump();
}

RunOutcome run_single(const Config& cfg, int subset_keep) {
  RunOutcome out;
  try {
    Task task = generate_task(cfg.task);
    DomainDataset target = subset_keep > 0
                               ? subset_target_classes(task.target, subset_keep)
                               : std::move(task.target);
    TrainResult tr = train_full(cfg.final_model(), cfg.train, task.source, target);
    out.report = evaluate(tr.model, task.source, target);
    out.dh_acc_phase3_start = tr.dh_acc_phase3_start;
    out.dh_acc_phase3_end = tr.dh_acc_phase3_end;
    out.source_in_domain_accuracy = out.report.source_accuracy;
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

RunOutcome RunCache::get(const Config& cfg, int subset_keep) {
  const std::string key = canonical_json(cfg) + "#" + std::to_string(subset_keep);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = done_.find(key);
    if (it != done_.end()) return *it->second;
  }
  auto outcome = std::make_shared<RunOutcome>(run_single(cfg, subset_keep));
  std::lock_guard<std::mutex> lock(mu_);
  done_[key] = outcome;
  return *outcome;
}

Config suite_variant(const Config& base, const std::string& name, std::uint64_t seed) {
  Config cfg = base;
  apply_seed(cfg, seed);
  if (name == "source_only") {
    cfg.train.steps_phase3 = 0;
  } else if (name == "h") {
    cfg.train.weights.lambda_l = 0.0;
  } else if (name == "h_plus_l") {
    // base weights
  } else if (name.rfind("k", 0) == 0) {
    cfg.model.patterns = std::stoi(name.substr(1));
  } else {
    throw std::invalid_argument("unknown suite variant '" + name + "'");
  }
  return cfg;
}

std::vector<SuiteRow> run_suite(const std::string& suite, const Config& base, int jobs,
                                RunCache* cache) {
  struct Planned {
    std::string config;
    std::uint64_t seed;
    Config cfg;
    int subset_keep;
  };
  std::vector<Planned> plan;
  const std::uint64_t seed0 = base.train.seed;

  if (suite == "baselines" || suite == "negative_transfer") {
    const int keep = suite == "baselines" ? 0 : base.task.classes - 2;
    if (suite == "negative_transfer" && keep < 1) {
      throw std::invalid_argument("negative_transfer needs at least 3 classes");
    }
    for (const char* name : {"source_only", "h", "h_plus_l"}) {
      for (int s = 0; s < kSuiteSeeds; ++s) {
        plan.push_back({name, seed0 + static_cast<std::uint64_t>(s),
                        suite_variant(base, name, seed0 + static_cast<std::uint64_t>(s)),
                        keep});
      }
    }
  } else if (suite == "pattern_sweep") {
    for (int k : {0, 8, 16, 32, 64}) {
      const std::string name = "k" + std::to_string(k);
      for (int s = 0; s < kSuiteSeeds; ++s) {
        plan.push_back({name, seed0 + static_cast<std::uint64_t>(s),
                        suite_variant(base, name, seed0 + static_cast<std::uint64_t>(s)),
                        0});
      }
    }
  } else {
    throw std::invalid_argument(
        "unknown suite '" + suite +
        "' (valid: baselines, pattern_sweep, negative_transfer)");
  }

  std::vector<SuiteRow> rows(plan.size());
  std::atomic<std::size_t> next{0};
  RunCache local_cache;
  RunCache* effective = cache != nullptr ? cache : &local_cache;

  auto worker = [&]() {
    configure_fp_environment();
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plan.size()) return;
      const Planned& p = plan[i];
      RunOutcome out = effective->get(p.cfg, p.subset_keep);
      SuiteRow& row = rows[i];
      row.suite = suite;
      row.config = p.config;
      row.seed = p.seed;
      row.patterns = p.cfg.model.patterns;
      row.status = out.ok ? "ok" : "failed: " + out.error;
      row.report = out.report;
      row.dh_acc_phase3_start = out.dh_acc_phase3_start;
      row.dh_acc_phase3_end = out.dh_acc_phase3_end;
    }
  };

  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

void write_suite_csv(const std::vector<SuiteRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << "suite,config,seed,patterns,status,source_accuracy,target_accuracy,"
       "mean_assignment_entropy,discriminator_accuracy_h,discriminator_accuracy_l,"
       "dh_acc_phase3_start,dh_acc_phase3_end\n";
  for (const SuiteRow& r : rows) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s,%s,%llu,%d,\"%s\",%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  r.suite.c_str(), r.config.c_str(),
                  static_cast<unsigned long long>(r.seed), r.patterns, r.status.c_str(),
                  r.report.source_accuracy, r.report.target_accuracy,
                  r.report.mean_assignment_entropy, r.report.discriminator_accuracy_h,
                  r.report.discriminator_accuracy_l, r.dh_acc_phase3_start,
                  r.dh_acc_phase3_end);
    f << buf;
  }
  if (!f) throw std::runtime_error("failed writing suite csv to '" + path + "'");
}

Pca2 pca2(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) {
    throw std::invalid_argument("pca2: need at least 2 rows, got " +
                                std::to_string(rows.rows()));
  }
  if (rows.cols() < 2) {
    throw std::invalid_argument("pca2: need at least 2 columns, got " +
                                std::to_string(rows.cols()));
  }
  Pca2 out;
  out.mean = rows.colwise().mean();
  Eigen::MatrixXd centered = rows.rowwise() - out.mean.transpose();
  Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("pca2: eigendecomposition failed");
  }
  const Eigen::Index d = cov.rows();
  out.total_variance = solver.eigenvalues().sum();
  out.eigenvalue0 = solver.eigenvalues()[d - 1];
  out.eigenvalue1 = solver.eigenvalues()[d - 2];
  out.components.resize(d, 2);
  out.components.col(0) = solver.eigenvectors().col(d - 1);
  out.components.col(1) = solver.eigenvectors().col(d - 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::Index imax = 0;
    out.components.col(c).cwiseAbs().maxCoeff(&imax);
    if (out.components(imax, c) < 0) out.components.col(c) *= -1.0;
  }
  out.projected = centered * out.components;
  return out;
}

void export_embeddings(Model& model, const DomainDataset& source,
                       const DomainDataset& target, const std::string& kind,
                       const std::string& out_path) {
  DomainEval es = run_inference(model, source);
  DomainEval et = run_inference(model, target);
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot open '" + out_path + "' for writing");

  if (kind == "holistic") {
    Eigen::MatrixXd all(es.codes.rows() + et.codes.rows(), es.codes.cols());
    all << es.codes, et.codes;
    Pca2 p = pca2(all);
    f << "pc1,pc2,domain,label\n";
    for (Eigen::Index i = 0; i < all.rows(); ++i) {
      const bool is_src = i < es.codes.rows();
      const int label = is_src ? source.labels[static_cast<std::size_t>(i)]
                               : target.labels[static_cast<std::size_t>(i - es.codes.rows())];
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%s,%d\n", p.projected(i, 0),
                    p.projected(i, 1), is_src ? "source" : "target", label);
      f << buf;
    }
  } else if (kind == "local") {
    if (model.cfg.patterns == 0) {
      throw std::invalid_argument("local embeddings need patterns > 0");
    }
    Eigen::MatrixXd all(es.residuals.rows() + et.residuals.rows(), es.residuals.cols());
    all << es.residuals, et.residuals;
    Pca2 p = pca2(all);
    const Index cells = static_cast<Index>(source.rows) * source.cols;
    f << "pc1,pc2,domain,pattern,label\n";
    for (Eigen::Index i = 0; i < all.rows(); ++i) {
      const bool is_src = i < es.residuals.rows();
      const Eigen::Index local = is_src ? i : i - es.residuals.rows();
      const int pattern = is_src ? es.assignments[local] : et.assignments[local];
      const Eigen::Index sample = local / cells;
      const int label =
          is_src ? source.labels[static_cast<std::size_t>(sample)]
                 : target.labels[static_cast<std::size_t>(sample)];
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%s,%d,%d\n", p.projected(i, 0),
                    p.projected(i, 1), is_src ? "source" : "target", pattern, label);
      f << buf;
    }
  } else {
    throw std::invalid_argument("unknown embedding kind '" + kind +
                                "' (expected holistic|local)");
  }
  if (!f) throw std::runtime_error("failed writing embeddings to '" + out_path + "'");
}

// --- gradcheck suite -------------------------------------------------------------

namespace {

ArrayXd randn(Rng& rng, Index n, double scale = 1.0) {
  ArrayXd a(n);
  for (Index i = 0; i < n; ++i) a[i] = scale * rng.gaussian();
  return a;
}

// true when no relu / hinge input sits within `margin` of its kink
bool non_degenerate(Tape& tape, double margin = 1e-3) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const Node& n = tape.node(static_cast<int>(i));
    if (n.op == Op::kRelu || n.op == Op::kMaxConst) {
      const Node& parent = tape.node(n.parents[0]);
      const double c = n.op == Op::kRelu ? 0.0 : n.cval;
      if ((parent.value - c).abs().minCoeff() < margin) return false;
    }
  }
  return true;
}

struct GcDims {
  static constexpr Index b = 2, p = 4, patch = 3, hidden = 5, d = 4, k = 3, c = 3;
  static constexpr Index code = k * d;
};

// input layout for the full composite:
// 0 extractor.w0 (patch,hidden)   1 extractor.b0 (hidden)
// 2 extractor.w1 (hidden,d)       3 extractor.b1 (d)
// 4 centers (k,d)
// 5 classifier.w (code,c)         6 classifier.b (c)
// 7..12 disc_h w0,b0,w1,b1,w2,b2  (code->4->5->1)
// 13..18 disc_l w0,b0,w1,b1,w2,b2 ((d+k)->4->5->1)
// 19 source patches (b,p,patch)   20 target patches (b,p,patch)
std::vector<TensorData> composite_point(Rng& rng) {
  using D = GcDims;
  std::vector<TensorData> pt;
  auto push = [&](Shape s, double scale) {
    const Index n = s.numel();
    pt.push_back({std::move(s), randn(rng, n, scale)});
  };
  push(Shape{D::patch, D::hidden}, 0.7);
  push(Shape{D::hidden}, 0.3);
  push(Shape{D::hidden, D::d}, 0.7);
  push(Shape{D::d}, 0.3);
  push(Shape{D::k, D::d}, 0.8);
  push(Shape{D::code, D::c}, 0.6);
  push(Shape{D::c}, 0.3);
  push(Shape{D::code, 4}, 0.6);
  push(Shape{4}, 0.3);
  push(Shape{4, 5}, 0.6);
  push(Shape{5}, 0.3);
  push(Shape{5, 1}, 0.6);
  push(Shape{1}, 0.3);
  push(Shape{D::d + D::k, 4}, 0.6);
  push(Shape{4}, 0.3);
  push(Shape{4, 5}, 0.6);
  push(Shape{5}, 0.3);
  push(Shape{5, 1}, 0.6);
  push(Shape{1}, 0.3);
  push(Shape{D::b, D::p, D::patch}, 1.0);
  push(Shape{D::b, D::p, D::patch}, 1.0);
  return pt;
}

Var gc_mlp(const std::vector<Var>& in, std::size_t first, int layers, Var x) {
  for (int l = 0; l < layers; ++l) {
    Var w = in[first + 2 * static_cast<std::size_t>(l)];
    Var b = in[first + 2 * static_cast<std::size_t>(l) + 1];
    Var z = matmul(x, w);
    z = add(z, broadcast(reshape(b, Shape{1, b.numel()}), z.shape()));
    x = l + 1 < layers ? relu(z) : z;
  }
  return x;
}

struct CompositeVars {
  Var code_src, code_tgt;
  Var feats_src, feats_tgt;
  Var centers;
};

CompositeVars gc_forward(Tape& t, const std::vector<Var>& in) {
  using D = GcDims;
  CompositeVars v;
  v.centers = in[4];
  auto encode = [&](Var patches) {
    Var flat = reshape(patches, Shape{D::b * D::p, D::patch});
    Var feats = reshape(gc_mlp(in, 0, 2, flat), Shape{D::b, D::p, D::d});
    Var sim = soft_assign(feats, v.centers, 1.1);
    Var raw = vlad_encode_raw(feats, sim, v.centers);
    return std::pair<Var, Var>(feats, vlad_holistic(raw, VladNorm::kIntraGlobal));
  };
  auto [fs, cs] = encode(in[19]);
  auto [ft, ct] = encode(in[20]);
  v.feats_src = fs;
  v.code_src = cs;
  v.feats_tgt = ft;
  v.code_tgt = ct;
  return v;
}

Eigen::MatrixXd gc_labels() {
  using D = GcDims;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(D::b, D::c);
  for (Index i = 0; i < D::b; ++i) y(i, i % D::c) = 1.0;
  return y;
}

ArrayXd gc_onehot(Index rows, int k) {
  ArrayXd oh = ArrayXd::Zero(rows * k);
  for (Index r = 0; r < rows; ++r) oh[r * k + (r % k)] = 1.0;
  return oh;
}

}  // namespace

GradCheckOutcome gradcheck_suite(std::uint64_t seed, int points) {
  using D = GcDims;
  GradCheckOutcome out;
  const LossWeights weights{0.2, 0.1, 0.1};

  struct Check {
    const char* name;
    GraphBuilder fn;
  };

  std::vector<Check> checks;
  checks.push_back({"eq1_soft_assign", [](Tape&, const std::vector<Var>& in) {
    Var flat = reshape(in[19], Shape{D::b * D::p, D::patch});
    Var f = reshape(gc_mlp(in, 0, 2, flat), Shape{D::b, D::p, D::d});
    return sum_all(soft_assign(f, in[4], 1.1));
  }});
  checks.push_back({"eq2_vlad", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    return sum_all(mul(v.code_src, v.code_src));
  }});
  checks.push_back({"eq3_sparsity", [](Tape&, const std::vector<Var>& in) {
    Var flat = reshape(in[19], Shape{D::b * D::p, D::patch});
    Var f = reshape(gc_mlp(in, 0, 2, flat), Shape{D::b, D::p, D::d});
    return sparsity_loss(f, in[4], 0.05, 0.02);
  }});
  checks.push_back({"eq4_holistic_d", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    Var ds = sigmoid(gc_mlp(in, 7, 3, v.code_src));
    Var dt = sigmoid(gc_mlp(in, 7, 3, v.code_tgt));
    return holistic_d_loss(ds, dt);
  }});
  checks.push_back({"eq5_holistic_g", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    return holistic_g_loss(sigmoid(gc_mlp(in, 7, 3, v.code_tgt)));
  }});
  checks.push_back({"eq6_local_d", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    Var oh = t.constant(Shape{D::b * D::p, D::k}, gc_onehot(D::b * D::p, D::k));
    auto branch = [&](Var feats) {
      Var flat = reshape(feats, Shape{D::b * D::p, D::d});
      Eigen::ArrayXi assign(D::b * D::p);
      for (Index i = 0; i < assign.size(); ++i) assign[i] = static_cast<int>(i % D::k);
      Var res = residuals(flat, v.centers, assign);
      return sigmoid(gc_mlp(in, 13, 3, concat({res, oh})));
    };
    return local_d_loss(branch(v.feats_src), branch(v.feats_tgt));
  }});
  checks.push_back({"eq7_local_g", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    Var oh = t.constant(Shape{D::b * D::p, D::k}, gc_onehot(D::b * D::p, D::k));
    Var flat = reshape(v.feats_tgt, Shape{D::b * D::p, D::d});
    Eigen::ArrayXi assign(D::b * D::p);
    for (Index i = 0; i < assign.size(); ++i) assign[i] = static_cast<int>(i % D::k);
    Var res = residuals(flat, v.centers, assign);
    return local_g_loss(sigmoid(gc_mlp(in, 13, 3, concat({res, oh}))));
  }});
  checks.push_back({"eq8_classification", [](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    Var probs = softmax(gc_mlp(in, 5, 1, v.code_src));
    return classification_loss(probs, gc_labels());
  }});
  checks.push_back({"eq9_joint", [weights](Tape& t, const std::vector<Var>& in) {
    CompositeVars v = gc_forward(t, in);
    Var probs = softmax(gc_mlp(in, 5, 1, v.code_src));
    Var l_c = classification_loss(probs, gc_labels());
    Var l_gh = holistic_g_loss(sigmoid(gc_mlp(in, 7, 3, v.code_tgt)));
    Var oh = t.constant(Shape{D::b * D::p, D::k}, gc_onehot(D::b * D::p, D::k));
    Var flat = reshape(v.feats_tgt, Shape{D::b * D::p, D::d});
    Eigen::ArrayXi assign(D::b * D::p);
    for (Index i = 0; i < assign.size(); ++i) assign[i] = static_cast<int>(i % D::k);
    Var res = residuals(flat, v.centers, assign);
    Var l_gl = local_g_loss(sigmoid(gc_mlp(in, 13, 3, concat({res, oh}))));
    Var l_s = sparsity_loss(v.feats_src, v.centers, 0.05, 0.02);
    return total_g_loss(l_c, l_gh, l_gl, l_s, weights);
  }});

  for (int point = 0; point < points; ++point) {
    // resample until no relu/hinge input is near its kink in the composite
    std::vector<TensorData> pt;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Rng rng = Rng::fork(seed, (static_cast<std::uint64_t>(point) << 16) |
                                    static_cast<std::uint64_t>(attempt));
      pt = composite_point(rng);
      Tape probe;
      std::vector<Var> vars;
      for (const TensorData& td : pt) vars.push_back(probe.input(td.shape, td.values, false));
      bool ok = true;
      for (const Check& c : checks) {
        Tape t2;
        std::vector<Var> v2;
        for (const TensorData& td : pt) v2.push_back(t2.input(td.shape, td.values, false));
        c.fn(t2, v2);
        if (!non_degenerate(t2)) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    for (const Check& c : checks) {
      const double err = grad_check(c.fn, pt, 1e-5);
      out.max_rel_err = std::max(out.max_rel_err, err);
      out.checks++;
    }
  }
  return out;
}

}  // namespace lfp
