#include "lfp/config.hpp"

#include "lfp/io.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lfp {

namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

void reject_unknown(const json& obj, const std::string& section,
                    const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.contains(it.key())) {
      bad("unknown key '" + (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
  }
}

template <typename T>
void get_to(const json& obj, const std::string& section, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    bad("invalid value for '" + section + "." + key + "': " + e.what());
  }
}

void parse_task(const json& obj, TaskSpec& t) {
  reject_unknown(obj, "task",
                 {"seed", "classes", "prototypes", "rows", "cols", "patch_dim",
                  "noise_sigma", "shift_scale", "shift_rotation_deg",
                  "shift_translation", "n_source", "n_target", "class_mixtures"});
  get_to(obj, "task", "seed", t.seed);
  get_to(obj, "task", "classes", t.classes);
  get_to(obj, "task", "prototypes", t.prototypes);
  get_to(obj, "task", "rows", t.rows);
  get_to(obj, "task", "cols", t.cols);
  get_to(obj, "task", "patch_dim", t.patch_dim);
  get_to(obj, "task", "noise_sigma", t.noise_sigma);
  get_to(obj, "task", "shift_scale", t.shift_scale);
  get_to(obj, "task", "shift_rotation_deg", t.shift_rotation_deg);
  get_to(obj, "task", "shift_translation", t.shift_translation);
  get_to(obj, "task", "n_source", t.n_source);
  get_to(obj, "task", "n_target", t.n_target);
  if (obj.contains("class_mixtures")) {
    const json& m = obj.at("class_mixtures");
    if (m.is_string()) {
      if (m.get<std::string>() != "default") {
        bad("task.class_mixtures must be \"default\" or a matrix");
      }
      t.class_mixtures.resize(0, 0);
    } else if (m.is_array()) {
      const auto rows = m.size();
      if (rows == 0) bad("task.class_mixtures must not be empty");
      const auto cols = m.at(0).size();
      t.class_mixtures.resize(static_cast<Eigen::Index>(rows),
                              static_cast<Eigen::Index>(cols));
      for (std::size_t r = 0; r < rows; ++r) {
        if (m.at(r).size() != cols) bad("task.class_mixtures rows differ in length");
        for (std::size_t c = 0; c < cols; ++c) {
          t.class_mixtures(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
              m.at(r).at(c).get<double>();
        }
      }
    } else {
      bad("task.class_mixtures must be \"default\" or a matrix");
    }
  }
}

void parse_model(const json& obj, ModelConfig& m) {
  reject_unknown(obj, "model",
                 {"extractor_hidden", "feature_dim", "patterns", "alpha", "alpha_s",
                  "entropy_margin", "vlad_norm", "disc_h_hidden", "disc_l_hidden"});
  get_to(obj, "model", "extractor_hidden", m.extractor_hidden);
  get_to(obj, "model", "feature_dim", m.feature_dim);
  get_to(obj, "model", "patterns", m.patterns);
  get_to(obj, "model", "alpha", m.alpha);
  get_to(obj, "model", "alpha_s", m.alpha_s);
  get_to(obj, "model", "entropy_margin", m.entropy_margin);
  if (obj.contains("vlad_norm")) {
    m.vlad_norm = vlad_norm_from_string(obj.at("vlad_norm").get<std::string>());
  }
  get_to(obj, "model", "disc_h_hidden", m.disc_h_hidden);
  get_to(obj, "model", "disc_l_hidden", m.disc_l_hidden);
}

void parse_train(const json& obj, TrainConfig& t) {
  reject_unknown(obj, "train",
                 {"lambda_h", "lambda_l", "lambda_s", "lr_phase1", "lr_phase23",
                  "steps_phase1", "steps_phase2", "steps_phase3", "batch_source",
                  "batch_target", "d_steps_per_g_step", "d_warmup_steps", "dropout",
                  "adam_beta1", "adam_beta2", "adam_eps", "top_trainable_layers",
                  "kmeans_max_iters", "kmeans_tol", "seed"});
  get_to(obj, "train", "lambda_h", t.weights.lambda_h);
  get_to(obj, "train", "lambda_l", t.weights.lambda_l);
  get_to(obj, "train", "lambda_s", t.weights.lambda_s);
  get_to(obj, "train", "lr_phase1", t.lr_phase1);
  get_to(obj, "train", "lr_phase23", t.lr_phase23);
  get_to(obj, "train", "steps_phase1", t.steps_phase1);
  get_to(obj, "train", "steps_phase2", t.steps_phase2);
  get_to(obj, "train", "steps_phase3", t.steps_phase3);
  get_to(obj, "train", "batch_source", t.batch_source);
  get_to(obj, "train", "batch_target", t.batch_target);
  get_to(obj, "train", "d_steps_per_g_step", t.d_steps_per_g_step);
  get_to(obj, "train", "d_warmup_steps", t.d_warmup_steps);
  get_to(obj, "train", "dropout", t.dropout);
  get_to(obj, "train", "adam_beta1", t.adam_beta1);
  get_to(obj, "train", "adam_beta2", t.adam_beta2);
  get_to(obj, "train", "adam_eps", t.adam_eps);
  get_to(obj, "train", "top_trainable_layers", t.top_trainable_layers);
  get_to(obj, "train", "kmeans_max_iters", t.kmeans_max_iters);
  get_to(obj, "train", "kmeans_tol", t.kmeans_tol);
  get_to(obj, "train", "seed", t.seed);
}

void check(bool ok, const std::string& msg) {
  if (!ok) bad(msg);
}

void validate(const Config& c) {
  check(c.task.classes >= 2, "task.classes must be >= 2");
  check(c.task.prototypes >= 2, "task.prototypes must be >= 2");
  check(c.task.rows >= 1 && c.task.cols >= 1, "task grid must be at least 1x1");
  check(c.task.patch_dim >= 1, "task.patch_dim must be >= 1");
  check(c.task.noise_sigma >= 0, "task.noise_sigma must be >= 0");
  check(c.task.shift_scale > 0, "task.shift_scale must be > 0");
  check(c.task.n_source >= 1 && c.task.n_target >= 1,
        "task sample counts must be >= 1");
  check(c.model.feature_dim >= 1, "model.feature_dim must be >= 1");
  check(c.model.patterns >= 0, "model.patterns must be >= 0");
  check(c.model.alpha > c.model.alpha_s && c.model.alpha_s > 0,
        "model decays must satisfy alpha > alpha_s > 0");
  check(c.model.entropy_margin >= 0, "model.entropy_margin must be >= 0");
  for (int h : c.model.extractor_hidden) check(h >= 1, "model.extractor_hidden entries must be >= 1");
  for (int h : c.model.disc_h_hidden) check(h >= 1, "model.disc_h_hidden entries must be >= 1");
  for (int h : c.model.disc_l_hidden) check(h >= 1, "model.disc_l_hidden entries must be >= 1");
  const TrainConfig& t = c.train;
  check(t.weights.lambda_h >= 0 && t.weights.lambda_l >= 0 && t.weights.lambda_s >= 0,
        "train lambdas must be >= 0");
  check(t.lr_phase1 > 0 && t.lr_phase23 > 0, "train learning rates must be > 0");
  check(t.steps_phase1 >= 0 && t.steps_phase2 >= 0 && t.steps_phase3 >= 0,
        "train step counts must be >= 0");
  check(t.batch_source >= 1 && t.batch_target >= 1, "train batch sizes must be >= 1");
  check(t.d_steps_per_g_step >= 1, "train.d_steps_per_g_step must be >= 1");
  check(t.d_warmup_steps >= 0, "train.d_warmup_steps must be >= 0");
  check(t.dropout >= 0 && t.dropout < 1, "train.dropout must lie in [0, 1)");
  check(t.adam_beta1 > 0 && t.adam_beta1 < 1 && t.adam_beta2 > 0 && t.adam_beta2 < 1,
        "train adam betas must lie in (0, 1)");
  check(t.adam_eps > 0, "train.adam_eps must be > 0");
  check(t.kmeans_max_iters >= 1, "train.kmeans_max_iters must be >= 1");
  check(t.kmeans_tol > 0, "train.kmeans_tol must be > 0");
}

}  // namespace

Config default_config() { return Config{}; }

Config parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) bad("document must be a JSON object");
  reject_unknown(doc, "", {"task", "model", "train"});
  Config cfg;
  if (doc.contains("task")) parse_task(doc.at("task"), cfg.task);
  if (doc.contains("model")) parse_model(doc.at("model"), cfg.model);
  if (doc.contains("train")) parse_train(doc.at("train"), cfg.train);
  validate(cfg);
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_json(const Config& cfg) {
  json doc;
  json task;
  task["seed"] = cfg.task.seed;
  task["classes"] = cfg.task.classes;
  task["prototypes"] = cfg.task.prototypes;
  task["rows"] = cfg.task.rows;
  task["cols"] = cfg.task.cols;
  task["patch_dim"] = cfg.task.patch_dim;
  task["noise_sigma"] = cfg.task.noise_sigma;
  task["shift_scale"] = cfg.task.shift_scale;
  task["shift_rotation_deg"] = cfg.task.shift_rotation_deg;
  task["shift_translation"] = cfg.task.shift_translation;
  task["n_source"] = cfg.task.n_source;
  task["n_target"] = cfg.task.n_target;
  if (cfg.task.class_mixtures.size() == 0) {
    task["class_mixtures"] = "default";
  } else {
    json rows = json::array();
    for (Eigen::Index r = 0; r < cfg.task.class_mixtures.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < cfg.task.class_mixtures.cols(); ++c) {
        row.push_back(cfg.task.class_mixtures(r, c));
      }
      rows.push_back(row);
    }
    task["class_mixtures"] = rows;
  }
  doc["task"] = task;

  json model;
  model["extractor_hidden"] = cfg.model.extractor_hidden;
  model["feature_dim"] = cfg.model.feature_dim;
  model["patterns"] = cfg.model.patterns;
  model["alpha"] = cfg.model.alpha;
  model["alpha_s"] = cfg.model.alpha_s;
  model["entropy_margin"] = cfg.model.entropy_margin;
  model["vlad_norm"] = to_string(cfg.model.vlad_norm);
  model["disc_h_hidden"] = cfg.model.disc_h_hidden;
  model["disc_l_hidden"] = cfg.model.disc_l_hidden;
  doc["model"] = model;

  json train;
  train["lambda_h"] = cfg.train.weights.lambda_h;
  train["lambda_l"] = cfg.train.weights.lambda_l;
  train["lambda_s"] = cfg.train.weights.lambda_s;
  train["lr_phase1"] = cfg.train.lr_phase1;
  train["lr_phase23"] = cfg.train.lr_phase23;
  train["steps_phase1"] = cfg.train.steps_phase1;
  train["steps_phase2"] = cfg.train.steps_phase2;
  train["steps_phase3"] = cfg.train.steps_phase3;
  train["batch_source"] = cfg.train.batch_source;
  train["batch_target"] = cfg.train.batch_target;
  train["d_steps_per_g_step"] = cfg.train.d_steps_per_g_step;
  train["d_warmup_steps"] = cfg.train.d_warmup_steps;
  train["dropout"] = cfg.train.dropout;
  train["adam_beta1"] = cfg.train.adam_beta1;
  train["adam_beta2"] = cfg.train.adam_beta2;
  train["adam_eps"] = cfg.train.adam_eps;
  train["top_trainable_layers"] = cfg.train.top_trainable_layers;
  train["kmeans_max_iters"] = cfg.train.kmeans_max_iters;
  train["kmeans_tol"] = cfg.train.kmeans_tol;
  train["seed"] = cfg.train.seed;
  doc["train"] = train;
  return doc.dump();
}

std::uint64_t config_hash(const Config& cfg) {
  const std::string s = canonical_json(cfg);
  return io::fnv1a64(s.data(), s.size());
}

void apply_seed(Config& cfg, std::uint64_t seed) {
  cfg.task.seed = seed;
  cfg.train.seed = seed;
}

}  // namespace lfp
