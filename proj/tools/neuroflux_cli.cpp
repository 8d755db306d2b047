// Command-line front end. All real work happens behind the C interface in
// neuroflux.h; this file only parses arguments, merges flag overrides into
// the config JSON, and turns status codes into process exit codes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "neuroflux.h"

namespace {

using nlohmann::json;

struct Common {
  std::string config;
  std::string out;
  std::string mode;
  uint64_t budget = 0;
  int batch_limit = 0;
  double rho = 0.0;
  int epochs = 0;
  double lr = 0.0;
  double momentum = 0.0;
  uint64_t seed = 0;
  double tolerance = 0.0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "run config JSON file")->required();
  cmd->add_option("--out", c.out, "override output_dir");
  cmd->add_option("--mode", c.mode,
                  "override mode (neuroflux | classic_ll | bp)");
  cmd->add_option("--budget", c.budget, "override budget_bytes");
  cmd->add_option("--batch-limit", c.batch_limit, "override batch_limit");
  cmd->add_option("--rho", c.rho, "override grouping_threshold");
  cmd->add_option("--epochs", c.epochs, "override epochs");
  cmd->add_option("--lr", c.lr, "override learning_rate");
  cmd->add_option("--momentum", c.momentum, "override momentum");
  cmd->add_option("--seed", c.seed, "override seed");
  cmd->add_option("--tolerance", c.tolerance, "override exit_tolerance");
}

// Opens the run from the config file with any flag overrides applied.
// Returns NF_OK and fills *run, or prints the failure and returns its code.
int open_run(const CLI::App* cmd, const Common& c, nf_run** run) {
  std::ifstream in(c.config, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "error: cannot open %s\n", c.config.c_str());
    return NF_ERR_INPUT;
  }
  std::ostringstream ss;
  ss << in.rdbuf();

  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s is not valid JSON: %s\n", c.config.c_str(),
                 e.what());
    return NF_ERR_INPUT;
  }
  if (cmd->count("--out")) j["output_dir"] = c.out;
  if (cmd->count("--mode")) j["mode"] = c.mode;
  if (cmd->count("--budget")) j["budget_bytes"] = c.budget;
  if (cmd->count("--batch-limit")) j["batch_limit"] = c.batch_limit;
  if (cmd->count("--rho")) j["grouping_threshold"] = c.rho;
  if (cmd->count("--epochs")) j["epochs"] = c.epochs;
  if (cmd->count("--lr")) j["learning_rate"] = c.lr;
  if (cmd->count("--momentum")) j["momentum"] = c.momentum;
  if (cmd->count("--seed")) j["seed"] = c.seed;
  if (cmd->count("--tolerance")) j["exit_tolerance"] = c.tolerance;

  const int rc = nf_run_open_text(j.dump().c_str(), run);
  if (rc != NF_OK) std::fprintf(stderr, "error: %s\n", nf_last_error());
  return rc;
}

int finish(nf_run* run, int rc, const std::vector<const char*>& artifacts) {
  if (rc != NF_OK) {
    std::fprintf(stderr, "error: %s\n", nf_last_error());
  } else {
    for (const char* name : artifacts) {
      std::printf("wrote %s/%s\n", nf_run_output_dir(run), name);
    }
  }
  nf_run_close(run);
  return rc;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memory-budgeted convolutional training with per-layer "
               "local objectives"};
  app.require_subcommand(1);

  Common c;
  std::string profile_file, plan_file, checkpoint_file, exits_file;
  int exit_layer = -1;
  std::vector<std::string> run_dirs;
  std::string table_file = "report.txt";
  std::string csv_file = "report.csv";

  CLI::App* profile = app.add_subcommand(
      "profile", "fit per-layer memory models -> profile.json");
  add_common(profile, c);

  CLI::App* partition = app.add_subcommand(
      "partition", "group layers into blocks under the budget -> plan.json");
  add_common(partition, c);
  partition->add_option("--profile", profile_file,
                        "profile to read (default: the run's own)");

  CLI::App* train = app.add_subcommand(
      "train", "train in the configured mode -> checkpoint.nfcm, metrics.json");
  add_common(train, c);
  train->add_option("--plan", plan_file,
                    "preset block plan (neuroflux mode only)");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "score every exit and choose one -> exits.json");
  add_common(evaluate, c);
  evaluate->add_option("--checkpoint", checkpoint_file,
                       "checkpoint to score (default: the run's own)");

  CLI::App* exp = app.add_subcommand(
      "export", "truncate the checkpoint at an exit -> compact.nfcm");
  add_common(exp, c);
  exp->add_option("--checkpoint", checkpoint_file,
                  "checkpoint to truncate (default: the run's own)");
  exp->add_option("--exits", exits_file,
                  "exit report to read (default: the run's own)");
  exp->add_option("--exit", exit_layer,
                  "exit layer (default: the one recorded by evaluate)");

  CLI::App* report = app.add_subcommand(
      "report", "compare finished run directories -> report.txt, report.csv");
  report->add_option("dirs", run_dirs, "run directories to compare")
      ->required()
      ->expected(-1);
  report->add_option("--table", table_file, "table output path");
  report->add_option("--csv", csv_file, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return NF_ERR_INPUT;
  }

  if (report->parsed()) {
    std::vector<const char*> dirs;
    dirs.reserve(run_dirs.size());
    for (const std::string& d : run_dirs) dirs.push_back(d.c_str());
    const int rc = nf_report(dirs.data(), dirs.size(), table_file.c_str(),
                             csv_file.c_str());
    if (rc != NF_OK) {
      std::fprintf(stderr, "error: %s\n", nf_last_error());
      return rc;
    }
    std::ifstream in(table_file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::fputs(ss.str().c_str(), stdout);
    return NF_OK;
  }

  nf_run* run = nullptr;
  if (profile->parsed()) {
    int rc = open_run(profile, c, &run);
    if (rc != NF_OK) return rc;
    return finish(run, nf_run_profile(run), {NF_ARTIFACT_PROFILE});
  }
  if (partition->parsed()) {
    int rc = open_run(partition, c, &run);
    if (rc != NF_OK) return rc;
    return finish(run, nf_run_partition(run, opt(profile_file)),
                  {NF_ARTIFACT_PLAN});
  }
  if (train->parsed()) {
    int rc = open_run(train, c, &run);
    if (rc != NF_OK) return rc;
    return finish(run, nf_run_train(run, opt(plan_file)),
                  {NF_ARTIFACT_CHECKPOINT, NF_ARTIFACT_METRICS});
  }
  if (evaluate->parsed()) {
    int rc = open_run(evaluate, c, &run);
    if (rc != NF_OK) return rc;
    return finish(run, nf_run_evaluate(run, opt(checkpoint_file)),
                  {NF_ARTIFACT_EXITS});
  }
  if (exp->parsed()) {
    int rc = open_run(exp, c, &run);
    if (rc != NF_OK) return rc;
    return finish(run,
                  nf_run_export(run, opt(checkpoint_file), opt(exits_file),
                                exit_layer),
                  {NF_ARTIFACT_COMPACT});
  }
  return NF_ERR_INPUT;  // unreachable: require_subcommand(1)
}
