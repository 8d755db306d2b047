#include "exit_selector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "trainer.hpp"

namespace neuroflux {

ExitReport evaluate_exits(ModelParams& model, const LabeledDataset& data,
                          int batch) {
  const int last = static_cast<int>(model.units.size()) - 1;
  ExitReport rep;
  if (model.aux.empty()) {
    rep.layers = {last};  // head only; no intermediate taps exist
  } else {
    rep.layers.resize(model.units.size());
    std::iota(rep.layers.begin(), rep.layers.end(), 0);
  }

  MemoryMeter meter;
  {
    meter_guard guard(meter);
    rep.accuracy = evaluate_classifiers(model, rep.layers, data, batch, meter,
                                        &rep.unit_evaluations);
  }
  rep.peak_bytes = meter.peak_bytes();
  return rep;
}

int choose_exit(const std::vector<double>& accuracy, double tolerance) {
  if (accuracy.empty()) throw input_error("no exit accuracies given");
  if (!std::isfinite(tolerance) || tolerance < 0.0)
    throw input_error("tolerance must be non-negative and finite");
  double best = -std::numeric_limits<double>::infinity();
  for (double a : accuracy) {
    if (!std::isfinite(a))
      throw input_error("exit accuracies must be finite");
    best = std::max(best, a);
  }
  const double threshold = best - tolerance;
  for (size_t i = 0; i < accuracy.size(); ++i) {
    if (accuracy[i] >= threshold) return static_cast<int>(i);
  }
  return static_cast<int>(accuracy.size()) - 1;  // unreachable: best qualifies
}

double inference_throughput(const CompactModel& model, const Tensor& input,
                            int reps) {
  if (reps < 1) throw input_error("reps must be at least 1");
  std::vector<double> rates;
  rates.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor logits = compact_forward(model, input);
    const double dt =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    rates.push_back(input.dim(0) / std::max(dt, 1e-9));
  }
  std::sort(rates.begin(), rates.end());
  return rates[rates.size() / 2];
}

}  // namespace neuroflux
