#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch.hpp"
#include "dataset.hpp"
#include "partitioner.hpp"
#include "profiler.hpp"
#include "tensor.hpp"

namespace neuroflux {

// ---------------------------------------------------------------------------
// Step primitives. The memory profiler measures these exact functions, so any
// allocation added here shows up in both the profile and the training run.
// ---------------------------------------------------------------------------

struct LocalStepResult {
  float loss = 0.0f;
  Tensor output;  // forwarded activation for the next layer, pre-update
};

/**
 * One local training step of a single unit: forward through the unit,
 * classifier prediction on its output, cross-entropy, gradients for this
 * unit and its classifier only, in-place SGD with momentum. The input is
 * consumed (moved into the backward context). Throws numeric_error naming
 * layer_index on a non-finite loss or gradient.
 */
LocalStepResult local_step(UnitParams& unit, AuxParams& cls, Tensor input,
                           const std::vector<int32_t>& labels,
                           std::vector<Tensor>& unit_vel,
                           std::vector<Tensor>& cls_vel, float lr,
                           float momentum, int layer_index);

/**
 * One end-to-end backprop step: forward through every unit retaining all
 * activation contexts, terminal-head loss, backward through the whole chain,
 * SGD on every unit and the head. Auxiliary classifiers are untouched.
 */
float bp_step(ModelParams& model, std::vector<std::vector<Tensor>>& unit_vel,
              std::vector<Tensor>& head_vel, Tensor input,
              const std::vector<int32_t>& labels, float lr, float momentum);

// Residency control: charge or release parameters plus their velocities
// against a meter, so only the active unit occupies budgeted memory.
void register_resident(const std::vector<Tensor*>& params,
                       std::vector<Tensor>& vel, MemoryMeter& meter);
void release_resident(const std::vector<Tensor*>& params,
                      std::vector<Tensor>& vel);

// ---------------------------------------------------------------------------
// Training runs.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 2;  // per block; per layer for the layerwise baseline
  float lr = 0.01f;
  float momentum = 0.9f;
  uint64_t seed = 1;

  // Planner inputs.
  uint64_t budget_bytes = 0;
  int batch_limit = 512;
  double rho = 0.40;
  std::vector<int> probe_batches = {1, 2, 4, 8};

  // Activation cache between blocks (budget-partitioned runs only).
  std::string cache_dir;
  int cache_chunk_samples = 512;
  bool shuffle_cache_chunks = false;

  // Activation stability probe; 0 disables it.
  int drift_probe_samples = 256;
};

struct BlockMetrics {
  int first_layer = 0;
  int last_layer = 0;
  int batch = 0;
  int epochs = 0;
  int64_t sgd_steps = 0;    // local or backprop steps taken in this block
  uint64_t peak_bytes = 0;  // metered high-water mark over the whole block
};

/**
 * Unit evaluations count samples pushed through one backbone layer, split by
 * purpose: training-pass forwards (including frozen-prefix recomputation and
 * the cache-writing pass), validation scoring, and drift probing.
 */
struct TrainRunMetrics {
  std::vector<BlockMetrics> blocks;
  int64_t forward_unit_evaluations = 0;
  int64_t eval_unit_evaluations = 0;
  int64_t probe_unit_evaluations = 0;
  std::vector<std::vector<double>> val_accuracy;  // [layer][epoch]
  std::vector<std::vector<double>> drift;         // [layer][epoch transition]
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams model;
  ProfileReport profile;
  PartitionPlan plan;
  TrainRunMetrics metrics;
};

/**
 * The budget-partitioned local-learning run: profile per layer, partition
 * into blocks, then train blocks in order at their own batch sizes. Blocks
 * after the first read their inputs from the previous block's activation
 * cache; each block (except the last) writes its output activations in
 * original dataset order after its final epoch. Peak metered bytes never
 * exceed the profiled peak of the worst layer in the running block.
 */
TrainResult train_neuroflux(const NetworkSpec& net, const LabeledDataset& train,
                            const LabeledDataset& val, const TrainConfig& cfg);

// Same, but under a caller-supplied plan (validated structurally) instead of
// profiling and partitioning first. The result's profile is empty; honoring
// the budget is the plan author's responsibility.
TrainResult train_neuroflux(const NetworkSpec& net, const LabeledDataset& train,
                            const LabeledDataset& val, const TrainConfig& cfg,
                            const PartitionPlan& plan);

/**
 * Layerwise baseline: fixed-width classifiers, one layer at a time, every
 * layer at the network-wide minimum feasible batch, and no activation cache,
 * so every batch recomputes the frozen prefix.
 */
TrainResult train_classic_ll(const NetworkSpec& net, const LabeledDataset& train,
                             const LabeledDataset& val, const TrainConfig& cfg);

// End-to-end backprop baseline at the largest feasible whole-network batch.
TrainResult train_backprop(const NetworkSpec& net, const LabeledDataset& train,
                           const LabeledDataset& val, const TrainConfig& cfg);

/**
 * Accuracy of the classifiers at `taps` (ascending layer indices) in one
 * streaming pass over `data`: each batch walks the backbone once and scores
 * every tapped classifier on the way. Walked parameters are charged against
 * `meter` one layer at a time; `eval_evals`, when non-null, accumulates one
 * unit evaluation per sample per walked layer.
 */
std::vector<double> evaluate_classifiers(ModelParams& model,
                                         const std::vector<int>& taps,
                                         const LabeledDataset& data, int batch,
                                         MemoryMeter& meter,
                                         int64_t* eval_evals);

/**
 * Distribution distance between two same-shaped activation sets: per-channel
 * 64-bin histograms over the channel's joint value range, L1 between the
 * normalized histograms, averaged over channels. 0 for identical sets, 2 for
 * sets with disjoint support.
 */
double histogram_drift(const Tensor& a, const Tensor& b);

}  // namespace neuroflux
