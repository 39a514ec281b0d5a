#include "lfp/synthdata.hpp"

#include "lfp/io.hpp"
#include "lfp/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lfp {

namespace {

constexpr char kMagic[8] = {'L', 'F', 'P', 'D', 'S', 'E', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

// Substream tags; sample streams are (tag << 32) | sample_index.
constexpr std::uint64_t kProtoStream = 0x70726f746fULL;  // "proto"
constexpr std::uint64_t kSourceTag = 2;
constexpr std::uint64_t kTargetTag = 3;

void validate(const TaskSpec& spec, const Eigen::MatrixXd& mix) {
  if (spec.classes < 2) throw std::invalid_argument("task: classes must be >= 2");
  if (spec.prototypes < 2) throw std::invalid_argument("task: prototypes must be >= 2");
  if (spec.rows < 1 || spec.cols < 1 || spec.patch_dim < 1) {
    throw std::invalid_argument("task: grid and patch dimensions must be positive");
  }
  if (spec.noise_sigma < 0) throw std::invalid_argument("task: noise_sigma must be >= 0");
  if (spec.shift_scale <= 0) throw std::invalid_argument("task: shift_scale must be > 0");
  if (spec.n_source < 1 || spec.n_target < 1) {
    throw std::invalid_argument("task: need at least one sample per domain");
  }
  if (mix.rows() != spec.classes || mix.cols() != spec.prototypes) {
    throw std::invalid_argument("task: class_mixtures must be classes x prototypes");
  }
  for (int c = 0; c < spec.classes; ++c) {
    double s = mix.row(c).sum();
    if (std::abs(s - 1.0) > 1e-9 || mix.row(c).minCoeff() < 0) {
      throw std::invalid_argument("task: class_mixtures row " + std::to_string(c) +
                                  " is not on the simplex (sum " + std::to_string(s) + ")");
    }
    for (int c2 = 0; c2 < c; ++c2) {
      if ((mix.row(c) - mix.row(c2)).cwiseAbs().maxCoeff() < 1e-12) {
        throw std::invalid_argument("task: class mixtures " + std::to_string(c2) +
                                    " and " + std::to_string(c) +
                                    " are identical; classes would be indistinguishable");
      }
    }
  }
}

Eigen::MatrixXd rotation_matrix(int dim, double degrees) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(dim, dim);
  const double theta = degrees * M_PI / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  for (int p = 0; p + 1 < dim; p += 2) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Identity(dim, dim);
    g(p, p) = c;
    g(p, p + 1) = -s;
    g(p + 1, p) = s;
    g(p + 1, p + 1) = c;
    q = g * q;
  }
  return q;
}

int draw_prototype(const Eigen::MatrixXd& mix, int label, double u) {
  double acc = 0.0;
  const int p = static_cast<int>(mix.cols());
  for (int j = 0; j < p; ++j) {
    acc += mix(label, j);
    if (u < acc) return j;
  }
  return p - 1;
}

}  // namespace

Eigen::MatrixXd default_class_mixtures(int classes, int prototypes) {
  const double masses[3] = {0.35, 0.25, 0.15};
  Eigen::MatrixXd mix(classes, prototypes);
  for (int c = 0; c < classes; ++c) {
    for (int p = 0; p < prototypes; ++p) mix(c, p) = 0.25 / prototypes;
    for (int j = 0; j < 3; ++j) mix(c, (c + j) % prototypes) += masses[j];
  }
  return mix;
}

Task generate_task(const TaskSpec& spec) {
  Eigen::MatrixXd mix = spec.class_mixtures.size() > 0
                            ? spec.class_mixtures
                            : default_class_mixtures(spec.classes, spec.prototypes);
  validate(spec, mix);

  Task task;
  task.prototypes.resize(spec.prototypes, spec.patch_dim);
  {
    Rng rng = Rng::fork(spec.seed, kProtoStream);
    for (int p = 0; p < spec.prototypes; ++p) {
      for (int j = 0; j < spec.patch_dim; ++j) task.prototypes(p, j) = rng.gaussian();
    }
  }
  task.shift_q = rotation_matrix(spec.patch_dim, spec.shift_rotation_deg);
  task.shift_t.resize(spec.patch_dim);
  for (int j = 0; j < spec.patch_dim; ++j) task.shift_t[j] = (j % 2 == 0) ? 1.0 : -1.0;
  task.shift_t *= spec.shift_translation / task.shift_t.norm();

  auto fill_domain = [&](DomainDataset& ds, bool is_target, int n, std::uint64_t tag,
                         std::vector<std::int32_t>& cell_protos) {
    ds.is_target = is_target;
    ds.n = n;
    ds.rows = spec.rows;
    ds.cols = spec.cols;
    ds.patch_dim = spec.patch_dim;
    ds.classes = spec.classes;
    ds.samples.resize(static_cast<Index>(n) * spec.cells() * spec.patch_dim);
    ds.labels.resize(static_cast<std::size_t>(n));
    cell_protos.resize(static_cast<std::size_t>(n) * spec.cells());
    Eigen::VectorXd patch(spec.patch_dim);
    for (int i = 0; i < n; ++i) {
      const int label = i % spec.classes;
      ds.labels[static_cast<std::size_t>(i)] = label;
      Rng rng = Rng::fork(spec.seed, (tag << 32) | static_cast<std::uint64_t>(i));
      for (int cell = 0; cell < spec.cells(); ++cell) {
        const int proto = draw_prototype(mix, label, rng.uniform());
        cell_protos[static_cast<std::size_t>(i) * spec.cells() + cell] = proto;
        for (int j = 0; j < spec.patch_dim; ++j) {
          patch[j] = task.prototypes(proto, j) + spec.noise_sigma * rng.gaussian();
        }
        if (is_target) {
          patch = spec.shift_scale * (task.shift_q * patch) + task.shift_t;
        }
        const Index base =
            (static_cast<Index>(i) * spec.cells() + cell) * spec.patch_dim;
        for (int j = 0; j < spec.patch_dim; ++j) ds.samples[base + j] = patch[j];
      }
    }
  };

  fill_domain(task.source, false, spec.n_source, kSourceTag, task.source_cell_protos);
  fill_domain(task.target, true, spec.n_target, kTargetTag, task.target_cell_protos);
  return task;
}

DomainDataset subset_target_classes(const DomainDataset& target, int keep) {
  if (keep < 1) throw std::invalid_argument("subset_target_classes: keep must be >= 1");
  if (keep > target.classes) {
    throw std::invalid_argument("subset_target_classes: keep " + std::to_string(keep) +
                                " exceeds class count " + std::to_string(target.classes));
  }
  DomainDataset out;
  out.is_target = target.is_target;
  out.rows = target.rows;
  out.cols = target.cols;
  out.patch_dim = target.patch_dim;
  out.classes = target.classes;
  const Index stride = target.sample_stride();
  for (int i = 0; i < target.n; ++i) {
    if (target.labels[static_cast<std::size_t>(i)] < keep) {
      out.labels.push_back(target.labels[static_cast<std::size_t>(i)]);
      out.n++;
    }
  }
  out.samples.resize(static_cast<Index>(out.n) * stride);
  Index w = 0;
  for (int i = 0; i < target.n; ++i) {
    if (target.labels[static_cast<std::size_t>(i)] < keep) {
      out.samples.segment(w * stride, stride) =
          target.samples.segment(static_cast<Index>(i) * stride, stride);
      ++w;
    }
  }
  return out;
}

void save_dataset(const DomainDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  io::write_bytes(f, kMagic, sizeof(kMagic));
  io::write_pod<std::uint32_t>(f, kVersion);
  io::write_pod<std::uint8_t>(f, ds.is_target ? 1 : 0);
  io::write_pod<std::uint8_t>(f, ds.labels.empty() ? 0 : 1);
  io::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ds.classes));
  io::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ds.rows));
  io::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ds.cols));
  io::write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(ds.patch_dim));
  io::write_pod<std::uint64_t>(f, static_cast<std::uint64_t>(ds.n));
  io::write_bytes(f, ds.samples.data(), sizeof(double) * static_cast<std::size_t>(ds.samples.size()));
  if (!ds.labels.empty()) {
    io::write_bytes(f, ds.labels.data(), sizeof(std::int32_t) * ds.labels.size());
  }
  if (!f) throw std::runtime_error("failed writing dataset to '" + path + "'");
}

DomainDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset '" + path + "'");
  char magic[8];
  io::read_bytes(f, magic, sizeof(magic), "dataset magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("'" + path + "' is not a dataset file (bad magic)");
  }
  const auto version = io::read_pod<std::uint32_t>(f, "dataset version");
  if (version != kVersion) {
    throw std::runtime_error("dataset version mismatch: expected " +
                             std::to_string(kVersion) + ", found " +
                             std::to_string(version));
  }
  DomainDataset ds;
  ds.is_target = io::read_pod<std::uint8_t>(f, "domain tag") != 0;
  const bool has_labels = io::read_pod<std::uint8_t>(f, "label flag") != 0;
  ds.classes = static_cast<int>(io::read_pod<std::uint32_t>(f, "classes"));
  ds.rows = static_cast<int>(io::read_pod<std::uint32_t>(f, "rows"));
  ds.cols = static_cast<int>(io::read_pod<std::uint32_t>(f, "cols"));
  ds.patch_dim = static_cast<int>(io::read_pod<std::uint32_t>(f, "patch_dim"));
  ds.n = static_cast<int>(io::read_pod<std::uint64_t>(f, "sample count"));
  const Index total = static_cast<Index>(ds.n) * ds.sample_stride();
  ds.samples.resize(total);
  io::read_bytes(f, ds.samples.data(), sizeof(double) * static_cast<std::size_t>(total),
                 "sample payload");
  if (has_labels) {
    ds.labels.resize(static_cast<std::size_t>(ds.n));
    io::read_bytes(f, ds.labels.data(), sizeof(std::int32_t) * ds.labels.size(),
                   "labels block");
  }
  return ds;
}

}  // namespace lfp
