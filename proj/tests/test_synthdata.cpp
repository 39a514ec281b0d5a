#include "lfp/synthdata.hpp"

#include "lfp/io.hpp"

#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace lfp;

namespace {

TaskSpec tiny_spec() {
  TaskSpec s;
  s.seed = 5;
  s.classes = 3;
  s.prototypes = 4;
  s.rows = 2;
  s.cols = 3;
  s.patch_dim = 5;
  s.noise_sigma = 0.1;
  s.n_source = 30;
  s.n_target = 24;
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generation is a pure function of the spec") {
  TaskSpec s = tiny_spec();
  Task a = generate_task(s);
  Task b = generate_task(s);
  REQUIRE(a.source.samples.size() == b.source.samples.size());
  for (Index i = 0; i < a.source.samples.size(); ++i) {
    CHECK(a.source.samples[i] == b.source.samples[i]);
  }
  for (Index i = 0; i < a.target.samples.size(); ++i) {
    CHECK(a.target.samples[i] == b.target.samples[i]);
  }
}

TEST_CASE("the shift matrix is orthogonal") {
  Task t = generate_task(tiny_spec());
  Eigen::MatrixXd qtq = t.shift_q.transpose() * t.shift_q;
  CHECK((qtq - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sigma 0 with identity shift draws straight from the prototype set") {
  TaskSpec s = tiny_spec();
  s.noise_sigma = 0.0;
  s.shift_scale = 1.0;
  s.shift_rotation_deg = 0.0;
  s.shift_translation = 0.0;
  Task t = generate_task(s);
  for (const DomainDataset* ds : {&t.source, &t.target}) {
    for (int i = 0; i < ds->n; ++i) {
      for (int cell = 0; cell < s.cells(); ++cell) {
        const Index base = (static_cast<Index>(i) * s.cells() + cell) * s.patch_dim;
        bool matches_some = false;
        for (int p = 0; p < s.prototypes && !matches_some; ++p) {
          bool eq = true;
          for (int j = 0; j < s.patch_dim; ++j) {
            if (ds->samples[base + j] != t.prototypes(p, j)) {
              eq = false;
              break;
            }
          }
          matches_some = eq;
        }
        CHECK(matches_some);
      }
    }
  }
}

TEST_CASE("identity mixtures make every cell its class prototype") {
  TaskSpec s = tiny_spec();
  s.classes = 4;
  s.prototypes = 4;
  s.noise_sigma = 0.0;
  s.class_mixtures = Eigen::MatrixXd::Identity(4, 4);
  Task t = generate_task(s);
  int correct = 0, total = 0;
  for (int i = 0; i < t.source.n; ++i) {
    const int label = t.source.labels[static_cast<std::size_t>(i)];
    for (int cell = 0; cell < s.cells(); ++cell) {
      const Index base = (static_cast<Index>(i) * s.cells() + cell) * s.patch_dim;
      // nearest prototype
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int p = 0; p < s.prototypes; ++p) {
        double d = 0;
        for (int j = 0; j < s.patch_dim; ++j) {
          double diff = t.source.samples[base + j] - t.prototypes(p, j);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = p;
        }
      }
      correct += best == label ? 1 : 0;
      ++total;
    }
  }
  CHECK(correct == total);
}

TEST_CASE("degenerate mixtures are rejected with a diagnostic") {
  TaskSpec s = tiny_spec();
  s.class_mixtures = Eigen::MatrixXd::Constant(3, 4, 0.25);
  CHECK_THROWS_WITH_AS(generate_task(s), doctest::Contains("identical"),
                       std::invalid_argument);
}

TEST_CASE("labels are balanced to within one sample per class") {
  TaskSpec s = tiny_spec();
  s.classes = 4;
  s.n_source = 400;  // n >= 100 * C
  Task t = generate_task(s);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < t.source.n; ++i) counts[static_cast<std::size_t>(t.source.labels[static_cast<std::size_t>(i)])]++;
  for (int c = 0; c < 4; ++c) {
    CHECK(std::abs(counts[static_cast<std::size_t>(c)] - 100) <= 10);  // +-10%
  }
}

TEST_CASE("inverse shift recovers prototype assignments at least as well") {
  TaskSpec s = tiny_spec();
  s.noise_sigma = 0.1;
  s.n_target = 40;
  Task t = generate_task(s);

  auto assignment_accuracy = [&](bool invert) {
    int correct = 0, total = 0;
    Eigen::VectorXd patch(s.patch_dim);
    for (int i = 0; i < t.target.n; ++i) {
      for (int cell = 0; cell < s.cells(); ++cell) {
        const Index base = (static_cast<Index>(i) * s.cells() + cell) * s.patch_dim;
        for (int j = 0; j < s.patch_dim; ++j) patch[j] = t.target.samples[base + j];
        if (invert) {
          patch = t.shift_q.transpose() * ((patch - t.shift_t) / s.shift_scale);
        }
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int p = 0; p < s.prototypes; ++p) {
          double d = (patch.transpose() - t.prototypes.row(p)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = p;
          }
        }
        const int truth =
            t.target_cell_protos[static_cast<std::size_t>(i) * s.cells() + cell];
        correct += best == truth ? 1 : 0;
        ++total;
      }
    }
    return static_cast<double>(correct) / total;
  };

  double with_inverse = assignment_accuracy(true);
  double without = assignment_accuracy(false);
  CHECK(with_inverse >= without);
  CHECK(with_inverse > 0.95);  // sigma 0.1 is near-noiseless
}

TEST_CASE("subset_target_classes filters by held-out label") {
  TaskSpec s = tiny_spec();
  s.classes = 4;
  s.n_target = 40;
  Task t = generate_task(s);

  DomainDataset all = subset_target_classes(t.target, 4);
  CHECK(all.n == t.target.n);
  for (Index i = 0; i < all.samples.size(); ++i) {
    CHECK(all.samples[i] == t.target.samples[i]);
  }

  DomainDataset two = subset_target_classes(t.target, 2);
  CHECK(two.n == 20);  // balanced labels: exactly keep/C of the samples
  for (int i = 0; i < two.n; ++i) CHECK(two.labels[static_cast<std::size_t>(i)] < 2);

  DomainDataset one = subset_target_classes(t.target, 1);
  for (int i = 0; i < one.n; ++i) CHECK(one.labels[static_cast<std::size_t>(i)] == 0);

  CHECK_THROWS_AS(subset_target_classes(t.target, 0), std::invalid_argument);
  CHECK_THROWS_AS(subset_target_classes(t.target, 9), std::invalid_argument);
}

TEST_CASE("datasets round-trip bit-exactly through files") {
  TaskSpec s = tiny_spec();
  Task t = generate_task(s);
  const std::string path = temp_path("lfp_ds_roundtrip.bin");
  save_dataset(t.target, path);
  DomainDataset back = load_dataset(path);
  CHECK(back.is_target == t.target.is_target);
  CHECK(back.n == t.target.n);
  CHECK(back.rows == t.target.rows);
  CHECK(back.cols == t.target.cols);
  CHECK(back.patch_dim == t.target.patch_dim);
  CHECK(back.classes == t.target.classes);
  REQUIRE(back.samples.size() == t.target.samples.size());
  for (Index i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i] == t.target.samples[i]);
  }
  REQUIRE(back.labels.size() == t.target.labels.size());
  for (std::size_t i = 0; i < back.labels.size(); ++i) {
    CHECK(back.labels[i] == t.target.labels[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("truncated and corrupt files fail loudly") {
  TaskSpec s = tiny_spec();
  Task t = generate_task(s);
  const std::string path = temp_path("lfp_ds_trunc.bin");
  save_dataset(t.source, path);

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("unexpected end of file"),
                       std::runtime_error);

  std::ofstream f(path, std::ios::binary);
  f << "NOTADATA and then some filler bytes";
  f.close();
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("magic"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("different seeds give different file checksums") {
  TaskSpec s = tiny_spec();
  const std::string p1 = temp_path("lfp_ds_seed1.bin");
  const std::string p2 = temp_path("lfp_ds_seed2.bin");
  save_dataset(generate_task(s).source, p1);
  s.seed = 6;
  save_dataset(generate_task(s).source, p2);
  CHECK(io::file_checksum(p1) != io::file_checksum(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
