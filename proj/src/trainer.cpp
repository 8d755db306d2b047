#include "trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>

#include "cache.hpp"
#include "errors.hpp"
#include "ops.hpp"
#include "rng.hpp"

namespace neuroflux {

namespace {

bool all_finite(const Tensor& t) {
  const float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

void require_finite_grads(const std::vector<Tensor>& grads,
                          const std::string& where) {
  for (const auto& g : grads) {
    if (!all_finite(g)) {
      throw numeric_error(where + ": non-finite gradient");
    }
  }
}

void apply_sgd(const std::vector<Tensor*>& params,
               const std::vector<Tensor>& grads, std::vector<Tensor>& vel,
               float lr, float momentum) {
  for (size_t i = 0; i < params.size(); ++i) {
    sgd_step(*params[i], grads[i], vel[i], lr, momentum);
  }
}

Tensor make_scratch(int64_t elems) {
  if (elems > std::numeric_limits<int>::max()) {
    throw input_error("step scratch exceeds addressable size");
  }
  return Tensor({static_cast<int>(elems)});
}

}  // namespace

LocalStepResult local_step(UnitParams& unit, AuxParams& cls, Tensor input,
                           const std::vector<int32_t>& labels,
                           std::vector<Tensor>& unit_vel,
                           std::vector<Tensor>& cls_vel, float lr,
                           float momentum, int layer_index) {
  const std::string where = "layer " + std::to_string(layer_index);

  // Constant-size storage up front: workspace plus every parameter-gradient
  // buffer lives for the whole step, so the footprint's fixed part is the
  // same at each instant and the peak is affine in the batch.
  const Shape3 in{input.dim(1), input.dim(2), input.dim(3)};
  Tensor scratch = make_scratch(step_scratch_elems(unit.spec, cls.spec, in));
  std::vector<Tensor> ugrads = zeros_matching(unit.tensors());
  std::vector<Tensor> cgrads = zeros_matching(cls.tensors());

  UnitCtx ctx;
  Tensor out = unit_forward(unit, std::move(input), &ctx, &scratch);

  AuxCtx actx;
  Tensor logits = aux_forward(cls, out, &actx, &scratch);
  SoftmaxLoss sl = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(sl.loss)) {
    throw numeric_error(where + ": non-finite loss");
  }

  Tensor g_out = aux_backward_acc(cls, actx, out, sl.grad, cgrads, &scratch);
  unit_backward_acc(unit, ctx, g_out, /*need_grad_input=*/false, ugrads,
                    &scratch);

  require_finite_grads(cgrads, where);
  require_finite_grads(ugrads, where);

  apply_sgd(unit.tensors(), ugrads, unit_vel, lr, momentum);
  apply_sgd(cls.tensors(), cgrads, cls_vel, lr, momentum);

  return {sl.loss, std::move(out)};
}

float bp_step(ModelParams& model, std::vector<std::vector<Tensor>>& unit_vel,
              std::vector<Tensor>& head_vel, Tensor input,
              const std::vector<int32_t>& labels, float lr, float momentum) {
  const int n = static_cast<int>(model.units.size());

  Tensor scratch = make_scratch(bp_scratch_elems(model.net));
  std::vector<std::vector<Tensor>> ugrads;
  ugrads.reserve(model.units.size());
  for (auto& u : model.units) ugrads.push_back(zeros_matching(u.tensors()));
  std::vector<Tensor> hgrads = zeros_matching(model.head.tensors());

  std::vector<UnitCtx> ctxs(static_cast<size_t>(n));
  Tensor x = std::move(input);
  for (int i = 0; i < n; ++i) {
    x = unit_forward(model.units[static_cast<size_t>(i)], std::move(x),
                     &ctxs[static_cast<size_t>(i)], &scratch);
  }

  AuxCtx hctx;
  Tensor logits = aux_forward(model.head, x, &hctx, &scratch);
  SoftmaxLoss sl = softmax_cross_entropy(logits, labels);
  if (!std::isfinite(sl.loss)) {
    throw numeric_error("backprop head: non-finite loss");
  }

  Tensor g = aux_backward_acc(model.head, hctx, x, sl.grad, hgrads, &scratch);
  require_finite_grads(hgrads, "backprop head");
  apply_sgd(model.head.tensors(), hgrads, head_vel, lr, momentum);

  for (int i = n - 1; i >= 0; --i) {
    auto& unit = model.units[static_cast<size_t>(i)];
    auto& grads = ugrads[static_cast<size_t>(i)];
    g = unit_backward_acc(unit, ctxs[static_cast<size_t>(i)], g,
                          /*need_grad_input=*/i > 0, grads, &scratch);
    require_finite_grads(grads, "layer " + std::to_string(i));
    apply_sgd(unit.tensors(), grads, unit_vel[static_cast<size_t>(i)], lr,
              momentum);
    ctxs[static_cast<size_t>(i)] = UnitCtx{};  // free as the sweep passes
  }
  return sl.loss;
}

void register_resident(const std::vector<Tensor*>& params,
                       std::vector<Tensor>& vel, MemoryMeter& meter) {
  for (Tensor* p : params) p->register_with(meter);
  for (Tensor& v : vel) v.register_with(meter);
}

void release_resident(const std::vector<Tensor*>& params,
                      std::vector<Tensor>& vel) {
  for (Tensor* p : params) p->release_meter();
  for (Tensor& v : vel) v.release_meter();
}

// ---------------------------------------------------------------------------
// Orchestration.
// ---------------------------------------------------------------------------

namespace {

// Forward-only passes (evaluation, drift probes, cache writing) charge the
// walked layer's parameters but not its momentum buffers, so at every
// instant they stay strictly below that layer's profiled step footprint at
// the same batch size.
void register_params(const std::vector<Tensor*>& params, MemoryMeter& meter) {
  for (Tensor* p : params) p->register_with(meter);
}

void release_params(const std::vector<Tensor*>& params) {
  for (Tensor* p : params) p->release_meter();
}

int64_t count_correct(const Tensor& logits, const std::vector<int32_t>& labels) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  int64_t correct = 0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int c = 1; c < k; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return correct;
}

// Core of histogram_drift on raw sample-major [N, C, plane] buffers. Plain
// host arrays keep probe bookkeeping out of the memory meter.
double histogram_drift_raw(const float* a, int na, const float* b, int nb,
                           int channels, int64_t plane) {
  constexpr int kBins = 64;
  double total = 0.0;
  for (int c = 0; c < channels; ++c) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    auto scan = [&](const float* p, int n) {
      for (int i = 0; i < n; ++i) {
        const float* ch = p + (static_cast<int64_t>(i) * channels + c) * plane;
        for (int64_t k = 0; k < plane; ++k) {
          lo = std::min(lo, ch[k]);
          hi = std::max(hi, ch[k]);
        }
      }
    };
    scan(a, na);
    scan(b, nb);
    // A collapsed joint range means both sets hold one identical constant;
    // their distributions match exactly.
    if (!(hi > lo)) continue;
    double ha[kBins] = {};
    double hb[kBins] = {};
    auto fill = [&](const float* p, int n, double* hist) {
      for (int i = 0; i < n; ++i) {
        const float* ch = p + (static_cast<int64_t>(i) * channels + c) * plane;
        for (int64_t k = 0; k < plane; ++k) {
          double t = (static_cast<double>(ch[k]) - lo) * kBins / (hi - lo);
          int idx = std::min(kBins - 1, static_cast<int>(t));
          hist[idx] += 1.0;
        }
      }
    };
    fill(a, na, ha);
    fill(b, nb, hb);
    const double wa = static_cast<double>(na) * static_cast<double>(plane);
    const double wb = static_cast<double>(nb) * static_cast<double>(plane);
    for (int k = 0; k < kBins; ++k) {
      total += std::abs(ha[k] / wa - hb[k] / wb);
    }
  }
  return total / channels;
}

// First `count` samples, copied while no meter is active so the probe set
// never charges the training budget.
LabeledDataset probe_subset(const LabeledDataset& data, int count) {
  const int n = std::min(count, data.size());
  const Shape3 s = data.sample_shape();
  Tensor images({n, s.c, s.h, s.w});
  std::copy_n(data.images.data(), images.numel(), images.data());
  LabeledDataset out;
  out.images = std::move(images);
  out.labels.assign(data.labels.begin(), data.labels.begin() + n);
  out.class_count = data.class_count;
  return out;
}

}  // namespace

std::vector<double> evaluate_classifiers(ModelParams& model,
                                         const std::vector<int>& taps,
                                         const LabeledDataset& data, int batch,
                                         MemoryMeter& meter,
                                         int64_t* eval_evals) {
  if (taps.empty()) throw input_error("no classifier taps given");
  for (size_t t = 0; t < taps.size(); ++t) {
    const int layers = static_cast<int>(model.units.size());
    if (taps[t] < 0 || taps[t] >= layers)
      throw input_error("tap " + std::to_string(taps[t]) +
                        " is outside the network");
    if (t > 0 && taps[t] <= taps[t - 1])
      throw input_error("classifier taps must be strictly ascending");
  }
  if (data.size() < 1) throw input_error("evaluation set is empty");
  if (batch < 1) throw input_error("batch size must be at least 1");
  std::vector<int64_t> correct(taps.size(), 0);
  const int last = taps.back();
  BatchIterator it(data, batch, 0, 0, false);
  Tensor x;
  std::vector<int32_t> y;
  while (it.next(&x, &y)) {
    const int n = x.dim(0);
    Tensor h = std::move(x);
    size_t t = 0;
    for (int j = 0; j <= last; ++j) {
      auto& unit = model.units[static_cast<size_t>(j)];
      register_params(unit.tensors(), meter);
      h = unit_forward(unit, std::move(h), nullptr);
      release_params(unit.tensors());
      *eval_evals += n;
      if (t < taps.size() && taps[t] == j) {
        AuxParams& cls = model.classifier_at(j);
        register_params(cls.tensors(), meter);
        Tensor logits = aux_forward(cls, h, nullptr);
        correct[t] += count_correct(logits, y);
        release_params(cls.tensors());
        ++t;
      }
    }
    h = Tensor();
  }
  std::vector<double> acc;
  acc.reserve(taps.size());
  for (int64_t c : correct) {
    acc.push_back(static_cast<double>(c) / data.size());
  }
  return acc;
}

namespace {

// Forwards the probe set through the frozen prefix and snapshots the input
// of every layer in [first, last] into plain host buffers (sample-major,
// batches visit the probe in original order so epochs line up).
std::vector<std::vector<float>> capture_block_inputs(
    ModelParams& model, int first, int last, const LabeledDataset& probe,
    int batch, MemoryMeter& meter, int64_t* probe_evals) {
  std::vector<std::vector<float>> caps(static_cast<size_t>(last - first + 1));
  BatchIterator it(probe, batch, 0, 0, false);
  Tensor x;
  std::vector<int32_t> y;
  while (it.next(&x, &y)) {
    const int n = x.dim(0);
    Tensor h = std::move(x);
    for (int j = 0; j <= last; ++j) {
      if (j >= first) {
        auto& dst = caps[static_cast<size_t>(j - first)];
        dst.insert(dst.end(), h.data(), h.data() + h.numel());
      }
      if (j == last) break;
      auto& unit = model.units[static_cast<size_t>(j)];
      register_params(unit.tensors(), meter);
      h = unit_forward(unit, std::move(h), nullptr);
      release_params(unit.tensors());
      *probe_evals += n;
    }
    h = Tensor();
  }
  return caps;
}

void check_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw input_error("epochs must be at least 1");
  if (!std::isfinite(cfg.lr) || cfg.lr <= 0.0f)
    throw input_error("learning rate must be positive and finite");
  if (!std::isfinite(cfg.momentum) || cfg.momentum < 0.0f ||
      cfg.momentum >= 1.0f)
    throw input_error("momentum must lie in [0, 1)");
  if (cfg.budget_bytes == 0)
    throw input_error("budget_bytes must be positive");
  if (cfg.cache_chunk_samples < 1)
    throw input_error("cache_chunk_samples must be at least 1");
  if (cfg.drift_probe_samples < 0)
    throw input_error("drift_probe_samples must be non-negative");
}

void check_dataset(const LabeledDataset& data, const NetworkSpec& net,
                   const char* which) {
  const Shape3 s = data.sample_shape();
  if (s.c != net.input.c || s.h != net.input.h || s.w != net.input.w)
    throw input_error(std::string(which) +
                      " sample shape does not match the network input");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

double histogram_drift(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw input_error("histogram_drift expects rank-4 activation sets");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw input_error("histogram_drift expects matching sample shapes");
  if (a.dim(0) < 1 || b.dim(0) < 1)
    throw input_error("histogram_drift expects non-empty activation sets");
  return histogram_drift_raw(a.data(), a.dim(0), b.data(), b.dim(0), a.dim(1),
                             static_cast<int64_t>(a.dim(2)) * a.dim(3));
}

namespace {

TrainResult run_neuroflux(const NetworkSpec& net, const LabeledDataset& train,
                          const LabeledDataset& val, const TrainConfig& cfg,
                          const PartitionPlan* preset) {
  validate(net);
  check_train_config(cfg);
  if (train.size() < 1) throw input_error("training set is empty");
  check_dataset(train, net, "training set");
  if (val.size() > 0) check_dataset(val, net, "validation set");

  const auto t0 = std::chrono::steady_clock::now();
  const int layers = static_cast<int>(net.layers.size());

  TrainResult out;
  if (preset) {
    validate_plan(*preset, layers);
    out.plan = *preset;
  } else {
    out.profile = profile_network(net, ProfileMode::adaptive,
                                  cfg.probe_batches, cfg.seed);
    out.plan = partition_from_profile(
        out.profile, {cfg.budget_bytes, cfg.batch_limit, cfg.rho});
  }
  if (out.plan.blocks.size() > 1 && cfg.cache_dir.empty())
    throw input_error("cache_dir is required when the plan has several blocks");

  out.model = init_parameters(net, AuxMode::adaptive, mix_seed(cfg.seed, 1));
  std::vector<std::vector<Tensor>> unit_vel(static_cast<size_t>(layers));
  std::vector<std::vector<Tensor>> cls_vel(static_cast<size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    unit_vel[static_cast<size_t>(i)] =
        zeros_matching(out.model.units[static_cast<size_t>(i)].tensors());
    cls_vel[static_cast<size_t>(i)] =
        zeros_matching(out.model.classifier_at(i).tensors());
  }

  out.metrics.val_accuracy.assign(static_cast<size_t>(layers), {});
  out.metrics.drift.assign(static_cast<size_t>(layers), {});
  LabeledDataset probe;
  if (cfg.drift_probe_samples > 0)
    probe = probe_subset(train, cfg.drift_probe_samples);

  int min_batch_so_far = std::numeric_limits<int>::max();
  for (size_t bi = 0; bi < out.plan.blocks.size(); ++bi) {
    const BlockPlan& blk = out.plan.blocks[bi];
    const bool last_block = bi + 1 == out.plan.blocks.size();
    // Evaluation and probe passes re-forward from the raw input, so they
    // must fit every block certified so far, not just the current one.
    min_batch_so_far = std::min(min_batch_so_far, blk.batch);
    const int eval_batch = min_batch_so_far;

    std::optional<CacheReader> reader;
    if (bi > 0) {
      reader.emplace(cfg.cache_dir + "/block" + std::to_string(bi - 1));
      if (reader->size() != train.size())
        throw cache_error("cached activation count does not match the "
                          "training set");
    }

    MemoryMeter meter;
    int64_t steps = 0;
    std::vector<std::vector<float>> prev_caps;
    {
      meter_guard guard(meter);
      for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::optional<BatchIterator> raw;
        std::optional<CacheReader::BatchStream> cached;
        if (bi == 0) {
          raw.emplace(train, blk.batch, mix_seed(cfg.seed, 2), epoch, true);
        } else {
          cached.emplace(reader->stream(blk.batch, cfg.shuffle_cache_chunks,
                                        mix_seed(cfg.seed, 3), epoch));
        }
        Tensor x;
        std::vector<int32_t> y;
        while (raw ? raw->next(&x, &y) : cached->next(&x, &y)) {
          const int n = x.dim(0);
          Tensor h = std::move(x);
          for (int j = blk.first_layer; j <= blk.last_layer; ++j) {
            auto& unit = out.model.units[static_cast<size_t>(j)];
            AuxParams& cls = out.model.classifier_at(j);
            register_resident(unit.tensors(), unit_vel[static_cast<size_t>(j)],
                              meter);
            register_resident(cls.tensors(), cls_vel[static_cast<size_t>(j)],
                              meter);
            LocalStepResult r = local_step(
                unit, cls, std::move(h), y, unit_vel[static_cast<size_t>(j)],
                cls_vel[static_cast<size_t>(j)], cfg.lr, cfg.momentum, j);
            release_resident(unit.tensors(), unit_vel[static_cast<size_t>(j)]);
            release_resident(cls.tensors(), cls_vel[static_cast<size_t>(j)]);
            h = std::move(r.output);
            out.metrics.forward_unit_evaluations += n;
            ++steps;
          }
          h = Tensor();
        }

        if (val.size() > 0) {
          std::vector<int> taps;
          for (int j = blk.first_layer; j <= blk.last_layer; ++j)
            taps.push_back(j);
          std::vector<double> accs =
              evaluate_classifiers(out.model, taps, val, eval_batch, meter,
                                  &out.metrics.eval_unit_evaluations);
          for (size_t t = 0; t < taps.size(); ++t)
            out.metrics.val_accuracy[static_cast<size_t>(taps[t])].push_back(
                accs[t]);
        }

        if (probe.size() > 0) {
          std::vector<std::vector<float>> caps = capture_block_inputs(
              out.model, blk.first_layer, blk.last_layer, probe, eval_batch,
              meter, &out.metrics.probe_unit_evaluations);
          if (!prev_caps.empty()) {
            for (int j = blk.first_layer; j <= blk.last_layer; ++j) {
              const Shape3 s = activation_shape(net, j - 1);
              const size_t slot = static_cast<size_t>(j - blk.first_layer);
              out.metrics.drift[static_cast<size_t>(j)].push_back(
                  histogram_drift_raw(prev_caps[slot].data(), probe.size(),
                                      caps[slot].data(), probe.size(), s.c,
                                      static_cast<int64_t>(s.h) * s.w));
            }
          }
          prev_caps = std::move(caps);
        }
      }

      if (!last_block) {
        const std::string dir = cfg.cache_dir + "/block" + std::to_string(bi);
        std::filesystem::remove_all(dir);
        CacheWriter writer(dir, activation_shape(net, blk.last_layer),
                           cfg.cache_chunk_samples);
        // One forward pass in original dataset order, so the next block sees
        // a deterministic stream regardless of this block's shuffling.
        std::optional<BatchIterator> raw;
        std::optional<CacheReader::BatchStream> cached;
        if (bi == 0) {
          raw.emplace(train, blk.batch, 0, 0, false);
        } else {
          cached.emplace(reader->stream(blk.batch));
        }
        Tensor x;
        std::vector<int32_t> y;
        while (raw ? raw->next(&x, &y) : cached->next(&x, &y)) {
          const int n = x.dim(0);
          Tensor h = std::move(x);
          for (int j = blk.first_layer; j <= blk.last_layer; ++j) {
            auto& unit = out.model.units[static_cast<size_t>(j)];
            register_params(unit.tensors(), meter);
            h = unit_forward(unit, std::move(h), nullptr);
            release_params(unit.tensors());
            out.metrics.forward_unit_evaluations += n;
          }
          writer.append(h, y);
          h = Tensor();
        }
        writer.finish();
      }
    }
    out.metrics.blocks.push_back({blk.first_layer, blk.last_layer, blk.batch,
                                  cfg.epochs, steps, meter.peak_bytes()});
  }

  out.metrics.wall_seconds = seconds_since(t0);
  return out;
}

}  // namespace

TrainResult train_neuroflux(const NetworkSpec& net, const LabeledDataset& train,
                            const LabeledDataset& val, const TrainConfig& cfg) {
  return run_neuroflux(net, train, val, cfg, nullptr);
}

TrainResult train_neuroflux(const NetworkSpec& net, const LabeledDataset& train,
                            const LabeledDataset& val, const TrainConfig& cfg,
                            const PartitionPlan& plan) {
  return run_neuroflux(net, train, val, cfg, &plan);
}

TrainResult train_classic_ll(const NetworkSpec& net,
                             const LabeledDataset& train,
                             const LabeledDataset& val,
                             const TrainConfig& cfg) {
  validate(net);
  check_train_config(cfg);
  if (train.size() < 1) throw input_error("training set is empty");
  check_dataset(train, net, "training set");
  if (val.size() > 0) check_dataset(val, net, "validation set");

  const auto t0 = std::chrono::steady_clock::now();
  const int layers = static_cast<int>(net.layers.size());

  TrainResult out;
  out.profile =
      profile_network(net, ProfileMode::classic, cfg.probe_batches, cfg.seed);
  // Feasibility check only; the schedule below trains every layer on its own
  // at the worst layer's batch, because each step recomputes the whole
  // frozen prefix and every walked layer must fit the budget.
  PartitionPlan feasible = partition_from_profile(
      out.profile, {cfg.budget_bytes, cfg.batch_limit, cfg.rho});
  const int b = *std::min_element(feasible.per_layer_batch.begin(),
                                  feasible.per_layer_batch.end());
  out.plan.per_layer_batch.assign(static_cast<size_t>(layers), b);
  for (int i = 0; i < layers; ++i) out.plan.blocks.push_back({i, i, b});
  out.plan.budget_bytes = cfg.budget_bytes;
  out.plan.batch_limit = cfg.batch_limit;
  out.plan.rho = cfg.rho;

  out.model = init_parameters(net, AuxMode::classic, mix_seed(cfg.seed, 1));
  std::vector<std::vector<Tensor>> unit_vel(static_cast<size_t>(layers));
  std::vector<std::vector<Tensor>> cls_vel(static_cast<size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    unit_vel[static_cast<size_t>(i)] =
        zeros_matching(out.model.units[static_cast<size_t>(i)].tensors());
    cls_vel[static_cast<size_t>(i)] =
        zeros_matching(out.model.classifier_at(i).tensors());
  }
  out.metrics.val_accuracy.assign(static_cast<size_t>(layers), {});
  out.metrics.drift.assign(static_cast<size_t>(layers), {});

  for (int i = 0; i < layers; ++i) {
    MemoryMeter meter;
    int64_t steps = 0;
    {
      meter_guard guard(meter);
      for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchIterator it(train, b, mix_seed(cfg.seed, 40000 + i), epoch, true);
        Tensor x;
        std::vector<int32_t> y;
        while (it.next(&x, &y)) {
          const int n = x.dim(0);
          Tensor h = std::move(x);
          for (int j = 0; j < i; ++j) {
            auto& unit = out.model.units[static_cast<size_t>(j)];
            register_params(unit.tensors(), meter);
            h = unit_forward(unit, std::move(h), nullptr);
            release_params(unit.tensors());
            out.metrics.forward_unit_evaluations += n;
          }
          auto& unit = out.model.units[static_cast<size_t>(i)];
          AuxParams& cls = out.model.classifier_at(i);
          register_resident(unit.tensors(), unit_vel[static_cast<size_t>(i)],
                            meter);
          register_resident(cls.tensors(), cls_vel[static_cast<size_t>(i)],
                            meter);
          local_step(unit, cls, std::move(h), y,
                     unit_vel[static_cast<size_t>(i)],
                     cls_vel[static_cast<size_t>(i)], cfg.lr, cfg.momentum, i);
          release_resident(unit.tensors(), unit_vel[static_cast<size_t>(i)]);
          release_resident(cls.tensors(), cls_vel[static_cast<size_t>(i)]);
          out.metrics.forward_unit_evaluations += n;
          ++steps;
        }

        if (val.size() > 0) {
          std::vector<double> accs =
              evaluate_classifiers(out.model, {i}, val, b, meter,
                                  &out.metrics.eval_unit_evaluations);
          out.metrics.val_accuracy[static_cast<size_t>(i)].push_back(accs[0]);
        }
      }
    }
    out.metrics.blocks.push_back(
        {i, i, b, cfg.epochs, steps, meter.peak_bytes()});
  }

  out.metrics.wall_seconds = seconds_since(t0);
  return out;
}

TrainResult train_backprop(const NetworkSpec& net, const LabeledDataset& train,
                           const LabeledDataset& val, const TrainConfig& cfg) {
  validate(net);
  check_train_config(cfg);
  if (train.size() < 1) throw input_error("training set is empty");
  check_dataset(train, net, "training set");
  if (val.size() > 0) check_dataset(val, net, "validation set");

  const auto t0 = std::chrono::steady_clock::now();
  const int layers = static_cast<int>(net.layers.size());

  TrainResult out;
  out.profile =
      profile_network(net, ProfileMode::backprop, cfg.probe_batches, cfg.seed);
  const LinearModel& lm = out.profile.layers.front().model;
  const int b = std::min(max_feasible_batch(lm, cfg.budget_bytes),
                         cfg.batch_limit);
  if (b < 1) {
    const uint64_t one =
        static_cast<uint64_t>(std::ceil(lm.slope + lm.intercept));
    throw planning_error("budget " + std::to_string(cfg.budget_bytes) +
                         " bytes is below the whole-network single-sample "
                         "footprint (" +
                         std::to_string(one) + " bytes)");
  }
  out.plan.per_layer_batch.assign(static_cast<size_t>(layers), b);
  out.plan.blocks.push_back({0, layers - 1, b});
  out.plan.budget_bytes = cfg.budget_bytes;
  out.plan.batch_limit = cfg.batch_limit;
  out.plan.rho = cfg.rho;

  out.model = init_parameters(net, AuxMode::adaptive, mix_seed(cfg.seed, 1),
                              /*include_aux=*/false);
  std::vector<std::vector<Tensor>> unit_vel(static_cast<size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    unit_vel[static_cast<size_t>(i)] =
        zeros_matching(out.model.units[static_cast<size_t>(i)].tensors());
  }
  std::vector<Tensor> head_vel = zeros_matching(out.model.head.tensors());
  out.metrics.val_accuracy.assign(static_cast<size_t>(layers), {});
  out.metrics.drift.assign(static_cast<size_t>(layers), {});

  MemoryMeter meter;
  int64_t steps = 0;
  {
    meter_guard guard(meter);
    // Backprop keeps the whole network resident for the entire run.
    for (int i = 0; i < layers; ++i) {
      register_resident(out.model.units[static_cast<size_t>(i)].tensors(),
                        unit_vel[static_cast<size_t>(i)], meter);
    }
    register_resident(out.model.head.tensors(), head_vel, meter);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      BatchIterator it(train, b, mix_seed(cfg.seed, 2), epoch, true);
      Tensor x;
      std::vector<int32_t> y;
      while (it.next(&x, &y)) {
        const int n = x.dim(0);
        bp_step(out.model, unit_vel, head_vel, std::move(x), y, cfg.lr,
                cfg.momentum);
        out.metrics.forward_unit_evaluations +=
            static_cast<int64_t>(n) * layers;
        ++steps;
      }

      if (val.size() > 0) {
        int64_t correct = 0;
        BatchIterator ev(val, b, 0, 0, false);
        Tensor vx;
        std::vector<int32_t> vy;
        while (ev.next(&vx, &vy)) {
          const int n = vx.dim(0);
          Tensor h = std::move(vx);
          for (int j = 0; j < layers; ++j) {
            h = unit_forward(out.model.units[static_cast<size_t>(j)],
                             std::move(h), nullptr);
            out.metrics.eval_unit_evaluations += n;
          }
          Tensor logits = aux_forward(out.model.head, h, nullptr);
          correct += count_correct(logits, vy);
          h = Tensor();
        }
        out.metrics.val_accuracy[static_cast<size_t>(layers - 1)].push_back(
            static_cast<double>(correct) / val.size());
      }
    }

    for (int i = 0; i < layers; ++i) {
      release_resident(out.model.units[static_cast<size_t>(i)].tensors(),
                       unit_vel[static_cast<size_t>(i)]);
    }
    release_resident(out.model.head.tensors(), head_vel);
  }
  out.metrics.blocks.push_back(
      {0, layers - 1, b, cfg.epochs, steps, meter.peak_bytes()});

  out.metrics.wall_seconds = seconds_since(t0);
  return out;
}

}  // namespace neuroflux
