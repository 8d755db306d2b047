#include "neuroflux.h"

#include <exception>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "run.hpp"

struct nf_run {
  neuroflux::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return NF_OK;
  } catch (const neuroflux::error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NF_ERR_INPUT;
  }
}

std::string arg_or_empty(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

extern "C" {

const char* nf_version(void) { return "0.1.0"; }

const char* nf_last_error(void) { return g_last_error.c_str(); }

int nf_run_open_text(const char* config_json, nf_run** out) {
  return guarded([&] {
    if (!config_json || !out)
      throw neuroflux::input_error("config text and out pointer are required");
    *out = nullptr;
    auto run = std::make_unique<nf_run>();
    run->cfg = neuroflux::run_config_from_json(config_json);
    *out = run.release();
  });
}

int nf_run_open(const char* config_path, nf_run** out) {
  return guarded([&] {
    if (!config_path || !out)
      throw neuroflux::input_error("config path and out pointer are required");
    *out = nullptr;
    std::ifstream in(config_path, std::ios::binary);
    if (!in)
      throw neuroflux::input_error("cannot open " + std::string(config_path));
    std::ostringstream ss;
    ss << in.rdbuf();
    auto run = std::make_unique<nf_run>();
    run->cfg = neuroflux::run_config_from_json(ss.str());
    *out = run.release();
  });
}

void nf_run_close(nf_run* run) { delete run; }

const char* nf_run_output_dir(const nf_run* run) {
  return run ? run->cfg.output_dir.c_str() : "";
}

int nf_run_profile(nf_run* run) {
  return guarded([&] {
    if (!run) throw neuroflux::input_error("run handle is null");
    neuroflux::cmd_profile(run->cfg);
  });
}

int nf_run_partition(nf_run* run, const char* profile_path) {
  return guarded([&] {
    if (!run) throw neuroflux::input_error("run handle is null");
    neuroflux::cmd_partition(run->cfg, arg_or_empty(profile_path));
  });
}

int nf_run_train(nf_run* run, const char* plan_path) {
  return guarded([&] {
    if (!run) throw neuroflux::input_error("run handle is null");
    neuroflux::cmd_train(run->cfg, arg_or_empty(plan_path));
  });
}

int nf_run_evaluate(nf_run* run, const char* checkpoint_path) {
  return guarded([&] {
    if (!run) throw neuroflux::input_error("run handle is null");
    neuroflux::cmd_evaluate(run->cfg, arg_or_empty(checkpoint_path));
  });
}

int nf_run_export(nf_run* run, const char* checkpoint_path,
                  const char* exits_path, int exit_layer) {
  return guarded([&] {
    if (!run) throw neuroflux::input_error("run handle is null");
    neuroflux::cmd_export(run->cfg, arg_or_empty(checkpoint_path),
                          arg_or_empty(exits_path), exit_layer);
  });
}

int nf_report(const char* const* run_dirs, size_t count,
              const char* table_path, const char* csv_path) {
  return guarded([&] {
    if (!run_dirs && count > 0)
      throw neuroflux::input_error("run_dirs is null");
    std::vector<std::string> dirs;
    dirs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (!run_dirs[i]) throw neuroflux::input_error("run_dirs entry is null");
      dirs.emplace_back(run_dirs[i]);
    }
    neuroflux::cmd_report(dirs, arg_or_empty(table_path),
                          arg_or_empty(csv_path));
  });
}

}  // extern "C"
