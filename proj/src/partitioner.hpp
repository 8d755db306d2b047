#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "profiler.hpp"

namespace neuroflux {

struct PlannerConfig {
  uint64_t budget_bytes = 0;
  int batch_limit = 512;
  double rho = 0.40;  // relative neighbor tolerance for grouping
};

struct BlockPlan {
  int first_layer = 0;  // inclusive
  int last_layer = 0;   // inclusive
  int batch = 0;        // min feasible batch across the block's layers
};

struct PartitionPlan {
  std::vector<int> per_layer_batch;  // min(max feasible, batch_limit)
  std::vector<BlockPlan> blocks;
  uint64_t budget_bytes = 0;
  int batch_limit = 0;
  double rho = 0.0;
};

/**
 * Largest batch whose modeled peak fits the budget:
 * floor((budget - intercept) / slope). Returns 0 when even one sample does
 * not fit. Integer-valued models (the usual case, see fit_linear) are
 * evaluated in integer arithmetic so boundaries are exact.
 */
int max_feasible_batch(const LinearModel& m, uint64_t budget_bytes);

/**
 * Groups consecutive layers into training blocks. Walking layers in order,
 * layer i+1 joins the open block when |b_{i+1} - b_i| <= rho * b_i against
 * the most recently appended layer, and the block batch is the running
 * minimum; otherwise the block closes and a new one starts at i+1. Throws
 * planning_error naming the first layer whose batch-1 footprint exceeds the
 * budget, along with the smallest workable budget.
 */
PartitionPlan partition(const std::vector<LinearModel>& models,
                        const PlannerConfig& cfg);

// Pulls per-layer models out of an adaptive or classic profile (backprop
// profiles have no per-layer models and are rejected).
PartitionPlan partition_from_profile(const ProfileReport& report,
                                     const PlannerConfig& cfg);

// Structural integrity: contiguous full coverage, batches within limit,
// block batch equal to the min of its members.
void validate_plan(const PartitionPlan& plan, int num_layers);

std::string plan_to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const std::string& text);

}  // namespace neuroflux
