#include "partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "errors.hpp"
#include "json.hpp"

namespace neuroflux {

namespace {

constexpr int kPlanSchemaVersion = 1;

bool integer_valued(double v) {
  return std::isfinite(v) && v == std::floor(v) && v >= 0.0 &&
         v <= 9.007199254740992e15;  // 2^53, exact in double
}

// Smallest budget that fits one sample: slope + intercept, rounded up.
uint64_t batch_one_bytes(const LinearModel& m) {
  return static_cast<uint64_t>(std::ceil(m.slope + m.intercept));
}

void check_model(const LinearModel& m, int layer) {
  if (!std::isfinite(m.slope) || !std::isfinite(m.intercept) || m.slope <= 0.0 ||
      m.intercept < 0.0) {
    throw input_error("partition: layer " + std::to_string(layer) +
                      " has a malformed memory model (slope " +
                      std::to_string(m.slope) + ", intercept " +
                      std::to_string(m.intercept) + ")");
  }
}

}  // namespace

int max_feasible_batch(const LinearModel& m, uint64_t budget_bytes) {
  if (!std::isfinite(m.slope) || !std::isfinite(m.intercept) || m.slope <= 0.0 ||
      m.intercept < 0.0) {
    throw input_error("max_feasible_batch: malformed memory model");
  }
  if (static_cast<double>(budget_bytes) < m.intercept) return 0;
  constexpr int kMax = std::numeric_limits<int>::max();
  if (integer_valued(m.slope) && integer_valued(m.intercept)) {
    const uint64_t slope = static_cast<uint64_t>(m.slope);
    const uint64_t intercept = static_cast<uint64_t>(m.intercept);
    if (budget_bytes < intercept) return 0;
    const uint64_t t = (budget_bytes - intercept) / slope;
    return t > static_cast<uint64_t>(kMax) ? kMax : static_cast<int>(t);
  }
  const double t =
      std::floor((static_cast<double>(budget_bytes) - m.intercept) / m.slope);
  if (t <= 0.0) return 0;
  return t > static_cast<double>(kMax) ? kMax : static_cast<int>(t);
}

PartitionPlan partition(const std::vector<LinearModel>& models,
                        const PlannerConfig& cfg) {
  if (models.empty()) throw input_error("partition: no layer models");
  if (cfg.budget_bytes == 0) {
    throw input_error("partition: budget must be positive");
  }
  if (cfg.batch_limit < 1) {
    throw input_error("partition: batch limit must be at least 1");
  }
  if (!std::isfinite(cfg.rho) || cfg.rho < 0.0) {
    throw input_error("partition: rho must be finite and nonnegative");
  }

  PartitionPlan plan;
  plan.budget_bytes = cfg.budget_bytes;
  plan.batch_limit = cfg.batch_limit;
  plan.rho = cfg.rho;
  plan.per_layer_batch.reserve(models.size());

  uint64_t workable = 0;  // smallest budget at which every layer fits batch 1
  int first_infeasible = -1;
  for (size_t l = 0; l < models.size(); ++l) {
    check_model(models[l], static_cast<int>(l));
    workable = std::max(workable, batch_one_bytes(models[l]));
    const int t = max_feasible_batch(models[l], cfg.budget_bytes);
    if (t < 1 && first_infeasible < 0) first_infeasible = static_cast<int>(l);
    plan.per_layer_batch.push_back(std::min(t, cfg.batch_limit));
  }
  if (first_infeasible >= 0) {
    throw planning_error(
        "budget " + std::to_string(cfg.budget_bytes) +
        " bytes is below the single-sample footprint of layer " +
        std::to_string(first_infeasible) + " (" +
        std::to_string(batch_one_bytes(models[first_infeasible])) +
        " bytes); smallest workable budget is " + std::to_string(workable) +
        " bytes");
  }

  BlockPlan open{0, 0, plan.per_layer_batch[0]};
  int prev = plan.per_layer_batch[0];
  for (size_t l = 1; l < plan.per_layer_batch.size(); ++l) {
    const int b = plan.per_layer_batch[l];
    if (std::abs(b - prev) <= cfg.rho * prev) {
      open.last_layer = static_cast<int>(l);
      open.batch = std::min(open.batch, b);
    } else {
      plan.blocks.push_back(open);
      open = BlockPlan{static_cast<int>(l), static_cast<int>(l), b};
    }
    prev = b;
  }
  plan.blocks.push_back(open);
  validate_plan(plan, static_cast<int>(models.size()));
  return plan;
}

PartitionPlan partition_from_profile(const ProfileReport& report,
                                     const PlannerConfig& cfg) {
  if (report.mode == ProfileMode::backprop) {
    throw input_error(
        "partition: a whole-network profile has no per-layer models; profile "
        "in adaptive or classic mode");
  }
  if (report.layers.empty()) throw input_error("partition: empty profile");
  std::vector<LinearModel> models(report.layers.size());
  std::vector<bool> seen(report.layers.size(), false);
  for (const LayerProfile& lp : report.layers) {
    if (lp.layer < 0 || lp.layer >= static_cast<int>(models.size()) ||
        seen[lp.layer]) {
      throw input_error(
          "partition: profile must carry each layer exactly once, got layer " +
          std::to_string(lp.layer) + " in a " +
          std::to_string(report.layers.size()) + "-entry report");
    }
    seen[lp.layer] = true;
    models[lp.layer] = lp.model;
  }
  return partition(models, cfg);
}

void validate_plan(const PartitionPlan& plan, int num_layers) {
  if (num_layers < 1) throw input_error("validate_plan: no layers");
  if (static_cast<int>(plan.per_layer_batch.size()) != num_layers) {
    throw input_error("validate_plan: plan covers " +
                      std::to_string(plan.per_layer_batch.size()) +
                      " layers, network has " + std::to_string(num_layers));
  }
  if (plan.blocks.empty()) throw input_error("validate_plan: no blocks");
  int next = 0;
  for (size_t i = 0; i < plan.blocks.size(); ++i) {
    const BlockPlan& blk = plan.blocks[i];
    if (blk.first_layer != next || blk.last_layer < blk.first_layer) {
      throw input_error("validate_plan: block " + std::to_string(i) +
                        " spans layers " + std::to_string(blk.first_layer) +
                        ".." + std::to_string(blk.last_layer) +
                        ", expected to start at layer " + std::to_string(next));
    }
    if (blk.last_layer >= num_layers) {
      throw input_error("validate_plan: block " + std::to_string(i) +
                        " runs past the last layer");
    }
    int want = std::numeric_limits<int>::max();
    for (int l = blk.first_layer; l <= blk.last_layer; ++l) {
      const int b = plan.per_layer_batch[l];
      if (b < 1 || b > plan.batch_limit) {
        throw input_error("validate_plan: layer " + std::to_string(l) +
                          " batch " + std::to_string(b) +
                          " outside [1, " + std::to_string(plan.batch_limit) +
                          "]");
      }
      want = std::min(want, b);
    }
    if (blk.batch != want) {
      throw input_error("validate_plan: block " + std::to_string(i) +
                        " batch " + std::to_string(blk.batch) +
                        " is not the minimum of its layers (" +
                        std::to_string(want) + ")");
    }
    next = blk.last_layer + 1;
  }
  if (next != num_layers) {
    throw input_error("validate_plan: blocks cover layers 0.." +
                      std::to_string(next - 1) + " of " +
                      std::to_string(num_layers));
  }
}

std::string plan_to_json(const PartitionPlan& plan) {
  nlohmann::json j;
  j["schema_version"] = kPlanSchemaVersion;
  j["budget_bytes"] = plan.budget_bytes;
  j["batch_limit"] = plan.batch_limit;
  j["rho"] = plan.rho;
  j["per_layer_batch"] = plan.per_layer_batch;
  j["blocks"] = nlohmann::json::array();
  for (const BlockPlan& blk : plan.blocks) {
    j["blocks"].push_back({{"first_layer", blk.first_layer},
                           {"last_layer", blk.last_layer},
                           {"batch", blk.batch}});
  }
  return j.dump(2);
}

PartitionPlan plan_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("plan_from_json: not valid JSON: ") +
                      e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kPlanSchemaVersion) {
      throw input_error("plan_from_json: unsupported schema version " +
                        j.at("schema_version").dump());
    }
    PartitionPlan plan;
    plan.budget_bytes = j.at("budget_bytes").get<uint64_t>();
    plan.batch_limit = j.at("batch_limit").get<int>();
    plan.rho = j.at("rho").get<double>();
    plan.per_layer_batch = j.at("per_layer_batch").get<std::vector<int>>();
    for (const nlohmann::json& jb : j.at("blocks")) {
      BlockPlan blk;
      blk.first_layer = jb.at("first_layer").get<int>();
      blk.last_layer = jb.at("last_layer").get<int>();
      blk.batch = jb.at("batch").get<int>();
      plan.blocks.push_back(blk);
    }
    validate_plan(plan, static_cast<int>(plan.per_layer_batch.size()));
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("plan_from_json: malformed plan: ") +
                      e.what());
  }
}

}  // namespace neuroflux
