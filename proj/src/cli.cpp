#include "lfp/cli.hpp"

#include "lfp/config.hpp"
#include "lfp/harness.hpp"
#include "lfp/io.hpp"
#include "lfp/synthdata.hpp"
#include "lfp/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>

namespace lfp {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct CommonFlags {
  std::string config_path;
  std::int64_t seed = -1;  // -1: keep config seeds

  Config load() const {
    Config cfg = config_path.empty() ? default_config() : load_config_file(config_path);
    if (seed >= 0) apply_seed(cfg, static_cast<std::uint64_t>(seed));
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file (defaults apply)");
  cmd->add_option("--seed", flags.seed, "override the task and training seeds");
}

int cmd_gen_data(const CommonFlags& flags, const std::string& out_dir,
                 std::ostream& out) {
  Config cfg = flags.load();
  fs::create_directories(out_dir);
  Task task = generate_task(cfg.task);
  const std::string src_path = (fs::path(out_dir) / "source.bin").string();
  const std::string tgt_path = (fs::path(out_dir) / "target.bin").string();
  save_dataset(task.source, src_path);
  save_dataset(task.target, tgt_path);
  ordered_json j;
  j["source"] = src_path;
  j["target"] = tgt_path;
  j["n_source"] = task.source.n;
  j["n_target"] = task.target.n;
  j["checksum_source"] = io::checksum_hex(io::file_checksum(src_path));
  j["checksum_target"] = io::checksum_hex(io::file_checksum(tgt_path));
  out << j.dump() << "\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& data_dir,
              const std::string& out_dir, std::ostream& out) {
  Config cfg = flags.load();
  DomainDataset source = load_dataset((fs::path(data_dir) / "source.bin").string());
  DomainDataset target = load_dataset((fs::path(data_dir) / "target.bin").string());
  fs::create_directories(out_dir);
  const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();

  TrainResult result = train_full(cfg.final_model(), cfg.train, source, target, log_path);
  save_checkpoint(ckpt_path, result.model, result.counters, canonical_json(cfg),
                  cfg.train.seed);
  ordered_json j;
  j["checkpoint"] = ckpt_path;
  j["log"] = log_path;
  j["checksum"] = io::checksum_hex(io::file_checksum(ckpt_path));
  j["dh_acc_phase3_start"] = result.dh_acc_phase3_start;
  j["dh_acc_phase3_end"] = result.dh_acc_phase3_end;
  j["final_l_total"] = result.final_losses.l_total;
  out << j.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  DomainDataset source = load_dataset((fs::path(data_dir) / "source.bin").string());
  DomainDataset target = load_dataset((fs::path(data_dir) / "target.bin").string());
  EvalReport report = evaluate(ck.model, source, target);
  out << eval_report_json(report) << "\n";
  return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& suite,
              const std::string& out_dir, int jobs, std::ostream& out) {
  Config cfg = flags.load();
  fs::create_directories(out_dir);
  std::vector<SuiteRow> rows = run_suite(suite, cfg, jobs);
  const std::string csv_path = (fs::path(out_dir) / ("suite_" + suite + ".csv")).string();
  write_suite_csv(rows, csv_path);
  int failed = 0;
  for (const SuiteRow& r : rows) failed += r.status == "ok" ? 0 : 1;
  ordered_json j;
  j["csv"] = csv_path;
  j["rows"] = rows.size();
  j["failed"] = failed;
  out << j.dump() << "\n";
  return failed == 0 ? 0 : 1;
}

int cmd_gradcheck(const CommonFlags& flags, std::ostream& out) {
  Config cfg = flags.load();
  GradCheckOutcome gc = gradcheck_suite(cfg.train.seed, 20);
  ordered_json j;
  j["max_rel_err"] = gc.max_rel_err;
  j["checks"] = gc.checks;
  out << j.dump() << "\n";
  return gc.max_rel_err < 1e-5 ? 0 : 1;
}

int cmd_export(const std::string& ckpt_path, const std::string& data_dir,
               const std::string& kind, const std::string& out_path, std::ostream& out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  DomainDataset source = load_dataset((fs::path(data_dir) / "source.bin").string());
  DomainDataset target = load_dataset((fs::path(data_dir) / "target.bin").string());
  if (const auto parent = fs::path(out_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  export_embeddings(ck.model, source, target, kind, out_path);
  ordered_json j;
  j["csv"] = out_path;
  j["kind"] = kind;
  out << j.dump() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"local feature pattern domain alignment"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, sweep_flags, grad_flags;
  std::string gen_out, train_data, train_out, eval_ckpt, eval_data;
  std::string sweep_suite, sweep_out;
  int sweep_jobs = 1;
  std::string export_ckpt, export_data, export_kind = "holistic", export_out;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic domain pair");
  add_common(gen, gen_flags);
  gen->add_option("--out", gen_out, "output directory")->required();

  CLI::App* train = app.add_subcommand("train", "run the three-phase training");
  add_common(train, train_flags);
  train->add_option("--data", train_data, "directory holding source.bin/target.bin")
      ->required();
  train->add_option("--out", train_out, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "directory holding source.bin/target.bin")
      ->required();

  CLI::App* sweep = app.add_subcommand("sweep", "run an experiment suite");
  add_common(sweep, sweep_flags);
  sweep->add_option("--suite", sweep_suite,
                    "baselines | pattern_sweep | negative_transfer")
      ->required();
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--jobs", sweep_jobs, "parallel runs (default 1)");

  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference audit of all losses");
  add_common(grad, grad_flags);

  CLI::App* exp = app.add_subcommand("export-embed", "PCA embedding export");
  exp->add_option("--checkpoint", export_ckpt, "checkpoint file")->required();
  exp->add_option("--data", export_data, "directory holding source.bin/target.bin")
      ->required();
  exp->add_option("--kind", export_kind, "holistic | local");
  exp->add_option("--out", export_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_flags, gen_out, out);
    if (train->parsed()) return cmd_train(train_flags, train_data, train_out, out);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, out);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, sweep_suite, sweep_out, sweep_jobs, out);
    if (grad->parsed()) return cmd_gradcheck(grad_flags, out);
    if (exp->parsed()) return cmd_export(export_ckpt, export_data, export_kind, export_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace lfp
