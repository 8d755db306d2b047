#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch.hpp"
#include "dataset.hpp"
#include "trainer.hpp"

namespace neuroflux {

// Stable artifact names inside a run's output directory. Every command
// resolves its default inputs and outputs against these, so finished runs
// always look the same on disk. include/neuroflux.h mirrors them for C
// callers.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kProfileFile = "profile.json";
inline constexpr const char* kPlanFile = "plan.json";
inline constexpr const char* kCheckpointFile = "checkpoint.nfcm";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kExitsFile = "exits.json";
inline constexpr const char* kCompactFile = "compact.nfcm";
inline constexpr const char* kCacheDir = "cache";

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "cifar10"
  // cifar10: binary batch files, concatenated; limit > 0 keeps the first
  // `limit` records. Labels fold modulo the network's class count when the
  // files carry more classes than the network predicts.
  std::vector<std::string> paths;
  int limit = 0;
  // synthetic: separable Gaussian blobs shaped like the network input.
  int classes = 8;
  int per_class = 1250;
  uint64_t seed = 7;
};

/**
 * One experiment, fully resolved: network, data source, training mode and
 * hyperparameters, and where artifacts land. run_config_to_json writes every
 * field back out (defaults included), so the echo a command drops next to
 * its outputs describes the run completely.
 */
struct RunConfig {
  NetworkSpec network;
  DatasetConfig dataset;
  double val_fraction = 0.1;
  std::string mode = "neuroflux";  // "neuroflux" | "classic_ll" | "bp"
  TrainConfig train;
  double exit_tolerance = 0.0;
  std::string output_dir = "nf_out";
};

// Parses and validates a config. The "network" field is either a builtin
// name ("vgg8", "resnet_toy", "vgg_toy6"; class count from "num_classes")
// or an inline structured spec. Rejects unknown modes, empty budgets, and
// out-of-range fractions with input_error.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

// Loads the configured dataset and applies the validation split. CIFAR
// label folding happens here.
SplitResult build_run_dataset(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Pipeline commands. Each ensures the output directory, drops the resolved
// config echo, writes its artifacts under the stable names, and returns the
// primary artifact's path. Empty path arguments resolve to the stable names
// in cfg.output_dir. Commands are deterministic: identical inputs produce
// byte-identical outputs (timings never enter the files).
// ---------------------------------------------------------------------------

// Per-layer (or whole-network, in bp mode) memory models -> profile.json.
std::string cmd_profile(const RunConfig& cfg);

// Profile file -> block plan under the config's budget -> plan.json.
std::string cmd_partition(const RunConfig& cfg, const std::string& profile_file);

struct TrainArtifacts {
  std::string checkpoint_file;
  std::string metrics_file;
};

// Trains in the configured mode. A non-empty plan_file (neuroflux mode only)
// is used as-is instead of profiling and partitioning first. Also writes
// profile.json and plan.json so the run directory stands alone.
TrainArtifacts cmd_train(const RunConfig& cfg, const std::string& plan_file);

// Scores every exit of the checkpoint on the validation split (the training
// set when the split is empty) and picks the earliest exit within
// cfg.exit_tolerance of the best -> exits.json.
std::string cmd_evaluate(const RunConfig& cfg,
                         const std::string& checkpoint_file);

// Truncates the checkpoint at the chosen exit (exit_layer >= 0 overrides the
// one recorded in exits_file) -> compact.nfcm.
std::string cmd_export(const RunConfig& cfg, const std::string& checkpoint_file,
                       const std::string& exits_file, int exit_layer);

// Comparison across finished run directories: fixed-schema CSV plus an
// aligned text table with step-count and forward-cost comparisons between
// neuroflux and classic_ll runs. Returns the table text; table_file and
// csv_file may be empty to skip writing one of them.
std::string cmd_report(const std::vector<std::string>& run_dirs,
                       const std::string& table_file,
                       const std::string& csv_file);

}  // namespace neuroflux
