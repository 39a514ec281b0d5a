#pragma once

#include "lfp/losses.hpp"
#include "lfp/networks.hpp"
#include "lfp/synthdata.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace lfp {

struct TrainConfig {
  LossWeights weights;
  double lr_phase1 = 0.01;
  double lr_phase23 = 1e-4;
  int steps_phase1 = 200;
  int steps_phase2 = 200;
  int steps_phase3 = 1000;
  int batch_source = 32;
  int batch_target = 32;
  int d_steps_per_g_step = 1;
  /// Discriminator-only updates run at the start of phase 3 so the
  /// confusion trace starts from an informative discriminator.
  int d_warmup_steps = 50;
  double dropout = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Topmost extractor layers that receive gradients in phases 2-3;
  /// -1 trains the whole stack.
  int top_trainable_layers = -1;
  int kmeans_max_iters = 100;
  double kmeans_tol = 1e-6;
  std::uint64_t seed = 1;
};

/// Per-group Adam step counts; serialized with checkpoints.
struct Counters {
  std::int64_t t_classifier = 0;
  std::int64_t t_gen = 0;
  std::int64_t t_dh = 0;
  std::int64_t t_dl = 0;
  std::int64_t log_step = 0;
  int phases_done = 0;

  bool operator==(const Counters&) const = default;
};

/// Streams one CSV row per optimization step.
class TrainLog {
 public:
  explicit TrainLog(std::ostream* os);
  void row(std::int64_t step, int phase, const LossReport& r, double dh_acc,
           double dl_acc);

 private:
  std::ostream* os_;
};

struct Phase3Stats {
  double dh_acc_start = 0.0;
  double dh_acc_end = 0.0;
  LossReport last;
};

void phase1_classifier(Model& model, Counters& counters, const TrainConfig& cfg,
                       const DomainDataset& source, TrainLog& log);
void phase2_finetune(Model& model, Counters& counters, const TrainConfig& cfg,
                     const DomainDataset& source, TrainLog& log);
Phase3Stats phase3_adapt(Model& model, Counters& counters, const TrainConfig& cfg,
                         const DomainDataset& source, const DomainDataset& target,
                         TrainLog& log);

struct TrainResult {
  Model model;
  Counters counters;
  double dh_acc_phase3_start = 0.0;
  double dh_acc_phase3_end = 0.0;
  LossReport final_losses;
};

/// Runs phases 1 -> 2 -> 3; deterministic given config + seed. `log_path`
/// empty suppresses the CSV log. A config with zero steps in every phase
/// returns the freshly initialized model untouched.
TrainResult train_full(const ModelConfig& mcfg, const TrainConfig& cfg,
                       const DomainDataset& source, const DomainDataset& target,
                       const std::string& log_path = {});

// --- checkpointing ----------------------------------------------------------

struct Checkpoint {
  Model model;
  Counters counters;
  std::string config_json;
  std::uint64_t seed = 0;
};

/// Single-file binary checkpoint: little-endian, length-prefixed sections
/// per parameter set, bit-exact round trip.
void save_checkpoint(const std::string& path, const Model& model,
                     const Counters& counters, const std::string& config_json,
                     std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lfp
