#include "run.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "errors.hpp"
#include "exit_selector.hpp"
#include "json.hpp"
#include "model_io.hpp"
#include "partitioner.hpp"
#include "profiler.hpp"
#include "rng.hpp"
#include "spec_json.hpp"

namespace neuroflux {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw input_error("cannot write " + path);
  out << text;
  if (!out) throw input_error("short write to " + path);
}

std::string artifact(const RunConfig& cfg, const char* name) {
  return (fs::path(cfg.output_dir) / name).string();
}

// Drops the fully resolved config next to the command's outputs, so a run
// directory always says exactly how it was produced.
void echo_config(const RunConfig& cfg) {
  write_file_text(artifact(cfg, kConfigFile), run_config_to_json(cfg));
}

ProfileMode mode_of(const std::string& mode) {
  if (mode == "neuroflux") return ProfileMode::adaptive;
  if (mode == "classic_ll") return ProfileMode::classic;
  if (mode == "bp") return ProfileMode::backprop;
  throw input_error("unknown mode " + mode +
                    " (expected neuroflux, classic_ll, or bp)");
}

json dataset_to_json(const DatasetConfig& d) {
  json j;
  j["kind"] = d.kind;
  j["paths"] = d.paths;
  j["limit"] = d.limit;
  j["classes"] = d.classes;
  j["per_class"] = d.per_class;
  j["seed"] = d.seed;
  return j;
}

DatasetConfig dataset_from_json(const json& j) {
  DatasetConfig d;
  d.kind = j.value("kind", d.kind);
  if (j.contains("paths")) d.paths = j.at("paths").get<std::vector<std::string>>();
  d.limit = j.value("limit", d.limit);
  d.classes = j.value("classes", d.classes);
  d.per_class = j.value("per_class", d.per_class);
  d.seed = j.value("seed", d.seed);
  return d;
}

void check_config(const RunConfig& cfg) {
  validate(cfg.network);
  mode_of(cfg.mode);
  if (cfg.train.budget_bytes == 0)
    throw input_error("budget_bytes must be positive");
  if (cfg.train.epochs < 1) throw input_error("epochs must be at least 1");
  if (!std::isfinite(cfg.train.lr) || cfg.train.lr <= 0.0f)
    throw input_error("learning_rate must be positive and finite");
  if (!std::isfinite(cfg.train.momentum) || cfg.train.momentum < 0.0f ||
      cfg.train.momentum >= 1.0f)
    throw input_error("momentum must be in [0, 1)");
  if (cfg.train.batch_limit < 1)
    throw input_error("batch_limit must be at least 1");
  if (!std::isfinite(cfg.train.rho) || cfg.train.rho < 0.0 ||
      cfg.train.rho >= 1.0)
    throw input_error("grouping_threshold must be in [0, 1)");
  if (cfg.train.probe_batches.empty())
    throw input_error("probe_batches must not be empty");
  for (int b : cfg.train.probe_batches)
    if (b < 1) throw input_error("probe batches must be positive");
  if (cfg.train.cache_chunk_samples < 1)
    throw input_error("cache_chunk_samples must be at least 1");
  if (cfg.train.drift_probe_samples < 0)
    throw input_error("drift_probe_samples must be non-negative");
  if (!std::isfinite(cfg.val_fraction) || cfg.val_fraction < 0.0 ||
      cfg.val_fraction >= 1.0)
    throw input_error("val_fraction must be in [0, 1)");
  if (!std::isfinite(cfg.exit_tolerance) || cfg.exit_tolerance < 0.0)
    throw input_error("exit_tolerance must be non-negative and finite");
  if (cfg.output_dir.empty()) throw input_error("output_dir must not be empty");

  const DatasetConfig& d = cfg.dataset;
  if (d.kind == "synthetic") {
    if (d.classes < 2)
      throw input_error("synthetic dataset needs at least 2 classes");
    if (d.per_class < 1)
      throw input_error("synthetic dataset needs at least 1 sample per class");
    if (d.classes != cfg.network.num_classes)
      throw input_error("synthetic dataset has " + std::to_string(d.classes) +
                        " classes but the network predicts " +
                        std::to_string(cfg.network.num_classes));
  } else if (d.kind == "cifar10") {
    if (d.paths.empty())
      throw input_error("cifar10 dataset needs at least one batch file");
    if (d.limit < 0) throw input_error("dataset limit must be non-negative");
  } else {
    throw input_error("unknown dataset kind " + d.kind +
                      " (expected synthetic or cifar10)");
  }
}

int64_t tensor_params(const std::vector<const Tensor*>& ts) {
  int64_t n = 0;
  for (const Tensor* t : ts) n += t->numel();
  return n;
}

int64_t checkpoint_params(const ModelParams& m) {
  int64_t n = 0;
  for (const UnitParams& u : m.units) n += tensor_params(u.tensors());
  for (const AuxParams& a : m.aux) n += tensor_params(a.tensors());
  n += tensor_params(m.head.tensors());
  return n;
}

int64_t compact_params(const CompactModel& m) {
  int64_t n = 0;
  for (const UnitParams& u : m.units) n += tensor_params(u.tensors());
  n += tensor_params(m.classifier.tensors());
  return n;
}

uint64_t dir_bytes(const std::string& dir) {
  uint64_t total = 0;
  if (!fs::exists(dir)) return 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) total += e.file_size();
  }
  return total;
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    if (j.value("schema_version", 1) != 1)
      throw input_error("unsupported config schema_version");

    if (!j.contains("network")) throw input_error("config needs a network");
    const json& jn = j.at("network");
    if (jn.is_string()) {
      cfg.network =
          network_by_name(jn.get<std::string>(), j.value("num_classes", 10));
    } else {
      cfg.network = detail::spec_from_json(jn);
    }

    if (j.contains("dataset")) cfg.dataset = dataset_from_json(j.at("dataset"));
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    cfg.mode = j.value("mode", cfg.mode);

    if (!j.contains("budget_bytes"))
      throw input_error("config needs budget_bytes");
    cfg.train.budget_bytes = j.at("budget_bytes").get<uint64_t>();
    cfg.train.batch_limit = j.value("batch_limit", cfg.train.batch_limit);
    cfg.train.rho = j.value("grouping_threshold", cfg.train.rho);
    cfg.train.epochs = j.value("epochs", cfg.train.epochs);
    cfg.train.lr = j.value("learning_rate", cfg.train.lr);
    cfg.train.momentum = j.value("momentum", cfg.train.momentum);
    cfg.train.seed = j.value("seed", cfg.train.seed);
    if (j.contains("probe_batches"))
      cfg.train.probe_batches = j.at("probe_batches").get<std::vector<int>>();
    cfg.train.cache_dir = j.value("cache_dir", cfg.train.cache_dir);
    cfg.train.cache_chunk_samples =
        j.value("cache_chunk_samples", cfg.train.cache_chunk_samples);
    cfg.train.shuffle_cache_chunks =
        j.value("shuffle_cache_chunks", cfg.train.shuffle_cache_chunks);
    cfg.train.drift_probe_samples =
        j.value("drift_probe_samples", cfg.train.drift_probe_samples);
    cfg.exit_tolerance = j.value("exit_tolerance", cfg.exit_tolerance);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
  } catch (const json::exception& e) {
    throw input_error(std::string("bad run config: ") + e.what());
  }

  if (cfg.train.cache_dir.empty() && !cfg.output_dir.empty()) {
    cfg.train.cache_dir = (fs::path(cfg.output_dir) / kCacheDir).string();
  }
  check_config(cfg);
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["network"] = detail::spec_to_json(cfg.network);
  j["dataset"] = dataset_to_json(cfg.dataset);
  j["val_fraction"] = cfg.val_fraction;
  j["mode"] = cfg.mode;
  j["budget_bytes"] = cfg.train.budget_bytes;
  j["batch_limit"] = cfg.train.batch_limit;
  j["grouping_threshold"] = cfg.train.rho;
  j["epochs"] = cfg.train.epochs;
  j["learning_rate"] = cfg.train.lr;
  j["momentum"] = cfg.train.momentum;
  j["seed"] = cfg.train.seed;
  j["probe_batches"] = cfg.train.probe_batches;
  j["cache_dir"] = cfg.train.cache_dir;
  j["cache_chunk_samples"] = cfg.train.cache_chunk_samples;
  j["shuffle_cache_chunks"] = cfg.train.shuffle_cache_chunks;
  j["drift_probe_samples"] = cfg.train.drift_probe_samples;
  j["exit_tolerance"] = cfg.exit_tolerance;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

SplitResult build_run_dataset(const RunConfig& cfg) {
  LabeledDataset full;
  if (cfg.dataset.kind == "cifar10") {
    for (const std::string& p : cfg.dataset.paths) {
      if (!fs::exists(p))
        throw input_error("dataset file " + p + " does not exist");
    }
    full = load_cifar10(cfg.dataset.paths, cfg.dataset.limit);
    if (full.class_count > cfg.network.num_classes) {
      // Fold labels so a stock 10-class file drives a narrower network.
      for (int32_t& l : full.labels) l %= cfg.network.num_classes;
      full.class_count = cfg.network.num_classes;
    }
    const Shape3 s = full.sample_shape();
    const Shape3 in = cfg.network.input;
    if (s.c != in.c || s.h != in.h || s.w != in.w)
      throw input_error("dataset samples do not match the network input shape");
  } else {
    full = synth_dataset(cfg.dataset.classes, cfg.dataset.per_class,
                         cfg.network.input, cfg.dataset.seed);
  }
  if (cfg.val_fraction > 0.0) {
    return split_dataset(full, cfg.val_fraction, mix_seed(cfg.train.seed, 7));
  }
  SplitResult out;
  out.train = std::move(full);
  return out;
}

std::string cmd_profile(const RunConfig& cfg) {
  echo_config(cfg);
  const ProfileReport rep = profile_network(
      cfg.network, mode_of(cfg.mode), cfg.train.probe_batches, cfg.train.seed);
  const std::string out = artifact(cfg, kProfileFile);
  write_file_text(out, profile_to_json(rep));
  return out;
}

std::string cmd_partition(const RunConfig& cfg, const std::string& profile_file) {
  echo_config(cfg);
  const std::string src =
      profile_file.empty() ? artifact(cfg, kProfileFile) : profile_file;
  const ProfileReport rep = profile_from_json(read_file_text(src));
  if (rep.network != cfg.network.name) {
    throw input_error("profile describes network " + rep.network +
                      " but the config names " + cfg.network.name);
  }
  PlannerConfig pc;
  pc.budget_bytes = cfg.train.budget_bytes;
  pc.batch_limit = cfg.train.batch_limit;
  pc.rho = cfg.train.rho;
  const PartitionPlan plan = partition_from_profile(rep, pc);
  const std::string out = artifact(cfg, kPlanFile);
  write_file_text(out, plan_to_json(plan));
  return out;
}

namespace {

json metrics_to_json(const RunConfig& cfg, const TrainResult& r,
                     const LabeledDataset& train) {
  json m;
  m["schema_version"] = 1;
  m["mode"] = cfg.mode;
  m["network"] = cfg.network.name;
  m["epochs"] = cfg.train.epochs;
  m["seed"] = cfg.train.seed;
  m["budget_bytes"] = cfg.train.budget_bytes;
  m["batch_limit"] = cfg.train.batch_limit;
  m["grouping_threshold"] = cfg.train.rho;

  m["blocks"] = json::array();
  int64_t total_steps = 0;
  uint64_t max_peak = 0;
  for (const BlockMetrics& b : r.metrics.blocks) {
    json jb;
    jb["first_layer"] = b.first_layer;
    jb["last_layer"] = b.last_layer;
    jb["batch"] = b.batch;
    jb["epochs"] = b.epochs;
    jb["sgd_steps"] = b.sgd_steps;
    jb["peak_bytes"] = b.peak_bytes;
    m["blocks"].push_back(std::move(jb));
    total_steps += b.sgd_steps;
    max_peak = std::max(max_peak, b.peak_bytes);
  }
  m["totals"]["sgd_steps"] = total_steps;
  m["totals"]["forward_unit_evaluations"] = r.metrics.forward_unit_evaluations;
  m["totals"]["eval_unit_evaluations"] = r.metrics.eval_unit_evaluations;
  m["totals"]["probe_unit_evaluations"] = r.metrics.probe_unit_evaluations;
  m["max_peak_bytes"] = max_peak;
  m["budget_respected"] = max_peak <= cfg.train.budget_bytes;

  m["val_accuracy"] = r.metrics.val_accuracy;
  m["drift"] = r.metrics.drift;

  // Deepest classifier that was actually scored; null when no validation ran.
  m["final_accuracy"] = nullptr;
  m["final_accuracy_layer"] = nullptr;
  for (int i = static_cast<int>(r.metrics.val_accuracy.size()) - 1; i >= 0;
       --i) {
    const auto& hist = r.metrics.val_accuracy[static_cast<size_t>(i)];
    if (!hist.empty()) {
      m["final_accuracy"] = hist.back();
      m["final_accuracy_layer"] = i;
      break;
    }
  }

  if (cfg.mode == "neuroflux" && fs::exists(cfg.train.cache_dir)) {
    const uint64_t cache = dir_bytes(cfg.train.cache_dir);
    const uint64_t data =
        train.images.bytes() + train.labels.size() * sizeof(int32_t);
    m["cache"]["bytes"] = cache;
    m["cache"]["dataset_bytes"] = data;
    m["cache"]["ratio"] =
        data == 0 ? 0.0 : static_cast<double>(cache) / static_cast<double>(data);
  } else {
    m["cache"] = nullptr;
  }
  return m;
}

}  // namespace

TrainArtifacts cmd_train(const RunConfig& cfg, const std::string& plan_file) {
  echo_config(cfg);
  const SplitResult split = build_run_dataset(cfg);

  TrainResult r;
  if (cfg.mode == "neuroflux") {
    // The cache directory is scratch owned by this run; stale chunks from a
    // differently shaped previous run must not survive into the metrics.
    fs::remove_all(cfg.train.cache_dir);
    if (!plan_file.empty()) {
      const PartitionPlan plan = plan_from_json(read_file_text(plan_file));
      r = train_neuroflux(cfg.network, split.train, split.val, cfg.train, plan);
    } else {
      r = train_neuroflux(cfg.network, split.train, split.val, cfg.train);
    }
  } else {
    if (!plan_file.empty())
      throw input_error("plan files apply to neuroflux mode only");
    if (cfg.mode == "classic_ll") {
      r = train_classic_ll(cfg.network, split.train, split.val, cfg.train);
    } else {
      r = train_backprop(cfg.network, split.train, split.val, cfg.train);
    }
  }

  if (!r.profile.layers.empty()) {
    write_file_text(artifact(cfg, kProfileFile), profile_to_json(r.profile));
  }
  write_file_text(artifact(cfg, kPlanFile), plan_to_json(r.plan));

  TrainArtifacts out;
  out.checkpoint_file = artifact(cfg, kCheckpointFile);
  save_checkpoint(r.model, out.checkpoint_file);
  out.metrics_file = artifact(cfg, kMetricsFile);
  write_file_text(out.metrics_file,
                  metrics_to_json(cfg, r, split.train).dump(2) + "\n");
  return out;
}

std::string cmd_evaluate(const RunConfig& cfg,
                         const std::string& checkpoint_file) {
  echo_config(cfg);
  const std::string src =
      checkpoint_file.empty() ? artifact(cfg, kCheckpointFile) : checkpoint_file;
  ModelParams model = load_checkpoint(src);

  const SplitResult split = build_run_dataset(cfg);
  const LabeledDataset& eval = split.val.size() > 0 ? split.val : split.train;
  const Shape3 s = eval.sample_shape();
  const Shape3 in = model.net.input;
  if (s.c != in.c || s.h != in.h || s.w != in.w)
    throw input_error("checkpoint " + src +
                      " expects a different input shape than the dataset");

  const int batch = std::min(256, eval.size());
  const ExitReport rep = evaluate_exits(model, eval, batch);
  const int idx = choose_exit(rep.accuracy, cfg.exit_tolerance);

  json j;
  j["schema_version"] = 1;
  j["layers"] = rep.layers;
  j["accuracy"] = rep.accuracy;
  j["chosen_exit"] = rep.layers[static_cast<size_t>(idx)];
  j["tolerance"] = cfg.exit_tolerance;
  j["unit_evaluations"] = rep.unit_evaluations;
  j["samples"] = eval.size();
  j["split"] = split.val.size() > 0 ? "val" : "train";
  const std::string out = artifact(cfg, kExitsFile);
  write_file_text(out, j.dump(2) + "\n");
  return out;
}

std::string cmd_export(const RunConfig& cfg, const std::string& checkpoint_file,
                       const std::string& exits_file, int exit_layer) {
  echo_config(cfg);
  const std::string src =
      checkpoint_file.empty() ? artifact(cfg, kCheckpointFile) : checkpoint_file;

  int exit = exit_layer;
  if (exit < 0) {
    const std::string ex =
        exits_file.empty() ? artifact(cfg, kExitsFile) : exits_file;
    if (!fs::exists(ex)) {
      throw input_error("no exit chosen; run evaluate first or pass an exit "
                        "layer explicitly");
    }
    try {
      exit = json::parse(read_file_text(ex)).at("chosen_exit").get<int>();
    } catch (const json::exception& e) {
      throw input_error(ex + " is not an exit report: " + e.what());
    }
  }

  const ModelParams model = load_checkpoint(src);
  const std::string out = artifact(cfg, kCompactFile);
  save_compact(model, exit, out);
  return out;
}

namespace {

struct ReportRow {
  std::string name;
  std::string mode;
  std::string network;
  int epochs = 0;
  int64_t sgd_steps = 0;
  int64_t forward_evals = 0;
  int64_t eval_evals = 0;
  uint64_t max_peak = 0;
  uint64_t budget = 0;
  bool has_accuracy = false;
  double accuracy = 0.0;
  int64_t params = -1;
  int64_t compact = -1;
};

std::string run_name(const std::string& dir) {
  const fs::path p = fs::path(dir).lexically_normal();
  std::string name = p.filename().string();
  if (name.empty() || name == ".") name = p.parent_path().filename().string();
  return name.empty() ? dir : name;
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

ReportRow read_run(const std::string& dir) {
  const fs::path d(dir);
  const std::string metrics_path = (d / kMetricsFile).string();
  if (!fs::exists(metrics_path))
    throw input_error("no " + std::string(kMetricsFile) + " in " + dir +
                      "; train there first");
  ReportRow row;
  row.name = run_name(dir);
  try {
    const json m = json::parse(read_file_text(metrics_path));
    row.mode = m.at("mode").get<std::string>();
    row.network = m.at("network").get<std::string>();
    row.epochs = m.at("epochs").get<int>();
    row.sgd_steps = m.at("totals").at("sgd_steps").get<int64_t>();
    row.forward_evals =
        m.at("totals").at("forward_unit_evaluations").get<int64_t>();
    row.eval_evals = m.at("totals").at("eval_unit_evaluations").get<int64_t>();
    row.max_peak = m.at("max_peak_bytes").get<uint64_t>();
    row.budget = m.at("budget_bytes").get<uint64_t>();
    if (m.contains("final_accuracy") && m.at("final_accuracy").is_number()) {
      row.has_accuracy = true;
      row.accuracy = m.at("final_accuracy").get<double>();
    }
  } catch (const json::exception& e) {
    throw input_error(metrics_path + " is malformed: " + e.what());
  }
  const std::string ckpt = (d / kCheckpointFile).string();
  if (fs::exists(ckpt)) row.params = checkpoint_params(load_checkpoint(ckpt));
  const std::string compact = (d / kCompactFile).string();
  if (fs::exists(compact)) row.compact = compact_params(load_compact(compact));
  return row;
}

}  // namespace

std::string cmd_report(const std::vector<std::string>& run_dirs,
                       const std::string& table_file,
                       const std::string& csv_file) {
  if (run_dirs.empty()) throw input_error("report needs at least one run dir");
  std::vector<ReportRow> rows;
  rows.reserve(run_dirs.size());
  for (const std::string& dir : run_dirs) rows.push_back(read_run(dir));

  const std::vector<std::string> header = {
      "run", "mode", "network", "epochs", "sgd_steps",
      "forward_unit_evaluations", "eval_unit_evaluations", "max_peak_bytes",
      "budget_bytes", "final_accuracy", "parameters", "compact_parameters",
      "compression_factor"};

  auto cells_of = [](const ReportRow& r) {
    std::vector<std::string> c;
    c.push_back(r.name);
    c.push_back(r.mode);
    c.push_back(r.network);
    c.push_back(std::to_string(r.epochs));
    c.push_back(std::to_string(r.sgd_steps));
    c.push_back(std::to_string(r.forward_evals));
    c.push_back(std::to_string(r.eval_evals));
    c.push_back(std::to_string(r.max_peak));
    c.push_back(std::to_string(r.budget));
    c.push_back(r.has_accuracy ? fixed(r.accuracy, 6) : std::string());
    c.push_back(r.params >= 0 ? std::to_string(r.params) : std::string());
    c.push_back(r.compact >= 0 ? std::to_string(r.compact) : std::string());
    c.push_back(r.params > 0 && r.compact > 0
                    ? fixed(static_cast<double>(r.params) /
                                static_cast<double>(r.compact),
                            3)
                    : std::string());
    return c;
  };

  // CSV first: fixed schema, one row per run directory.
  std::ostringstream csv;
  for (size_t i = 0; i < header.size(); ++i)
    csv << (i ? "," : "") << header[i];
  csv << "\n";
  for (const ReportRow& r : rows) {
    const auto cells = cells_of(r);
    for (size_t i = 0; i < cells.size(); ++i) csv << (i ? "," : "") << cells[i];
    csv << "\n";
  }

  // Aligned text table over the same cells.
  std::vector<size_t> width(header.size());
  for (size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  std::vector<std::vector<std::string>> table;
  for (const ReportRow& r : rows) {
    table.push_back(cells_of(r));
    for (size_t i = 0; i < header.size(); ++i)
      width[i] = std::max(width[i], table.back()[i].size());
  }
  std::ostringstream text;
  auto emit_row = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) text << "  ";
      text << cells[i] << std::string(width[i] - cells[i].size(), ' ');
    }
    text << "\n";
  };
  emit_row(header);
  for (const auto& cells : table) emit_row(cells);

  // Cost comparisons between budget-partitioned and layerwise runs on the
  // same network.
  for (const ReportRow& nf : rows) {
    if (nf.mode != "neuroflux") continue;
    for (const ReportRow& cl : rows) {
      if (cl.mode != "classic_ll" || cl.network != nf.network) continue;
      text << "\n";
      text << "sgd steps: neuroflux " << nf.name << " = " << nf.sgd_steps
           << ", classic_ll " << cl.name << " = " << cl.sgd_steps << " (ratio "
           << fixed(cl.sgd_steps == 0
                        ? 0.0
                        : static_cast<double>(nf.sgd_steps) /
                              static_cast<double>(cl.sgd_steps),
                    3)
           << ")\n";
      text << "forward unit evaluations: neuroflux " << nf.name << " = "
           << nf.forward_evals << ", classic_ll " << cl.name << " = "
           << cl.forward_evals << " (ratio "
           << fixed(cl.forward_evals == 0
                        ? 0.0
                        : static_cast<double>(nf.forward_evals) /
                              static_cast<double>(cl.forward_evals),
                    3)
           << ")\n";
    }
  }

  if (!table_file.empty()) write_file_text(table_file, text.str());
  if (!csv_file.empty()) write_file_text(csv_file, csv.str());
  return text.str();
}

}  // namespace neuroflux
