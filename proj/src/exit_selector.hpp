#pragma once

#include <cstdint>
#include <vector>

#include "arch.hpp"
#include "dataset.hpp"
#include "model_io.hpp"
#include "tensor.hpp"

namespace neuroflux {

struct ExitReport {
  std::vector<int> layers;          // layer index behind each entry below
  std::vector<double> accuracy;     // classifier at each layer's output
  int64_t unit_evaluations = 0;     // backbone forwards spent scoring
  uint64_t peak_bytes = 0;          // metered peak of the scoring pass
};

// Scores every layer's classifier on `data` in one streaming pass: each
// batch walks the backbone once and every classifier reads its tap on the
// way, so the cost is one backbone traversal regardless of exit count.
// Models without per-layer classifiers get a single entry for the terminal
// head.
ExitReport evaluate_exits(ModelParams& model, const LabeledDataset& data,
                          int batch);

/**
 * Earliest layer whose accuracy is within `tolerance` of the best one.
 * Deeper layers often buy no accuracy; this picks the cheapest network that
 * gives up at most `tolerance` against the maximum.
 */
int choose_exit(const std::vector<double>& accuracy, double tolerance);

// Median samples/second of compact_forward on `input` over `reps` timed
// repetitions. Wall-clock, so only the magnitude is meaningful.
double inference_throughput(const CompactModel& model, const Tensor& input,
                            int reps);

}  // namespace neuroflux
