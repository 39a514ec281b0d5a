#pragma once

#include "lfp/networks.hpp"
#include "lfp/synthdata.hpp"
#include "lfp/trainer.hpp"

#include <cstdint>
#include <string>

namespace lfp {

/// Whole-artifact configuration: the synthetic task, the model sizes, and
/// the training schedule. JSON documents mirror this struct; unknown keys
/// are rejected and every field has the desk-scale default.
struct Config {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;

  /// Model config with patch_dim/classes filled in from the task.
  ModelConfig final_model() const {
    ModelConfig m = model;
    m.patch_dim = task.patch_dim;
    m.classes = task.classes;
    return m;
  }
};

Config default_config();

/// Parses and validates a JSON document; throws std::invalid_argument
/// naming the offending key.
Config parse_config(const std::string& text);
Config load_config_file(const std::string& path);

/// Fixed-order JSON rendering; equal configs produce identical strings.
std::string canonical_json(const Config& cfg);
std::uint64_t config_hash(const Config& cfg);

/// CLI --seed override: sets both the task seed and the training seed.
void apply_seed(Config& cfg, std::uint64_t seed);

}  // namespace lfp
