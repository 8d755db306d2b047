#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "arch.hpp"

namespace neuroflux {

// Affine memory model: peak bytes for a step at batch b is slope*b+intercept.
struct LinearModel {
  double slope = 0.0;      // bytes per sample
  double intercept = 0.0;  // fixed bytes
  double r2 = 0.0;
  bool intercept_clamped = false;  // a negative fit was clamped to zero
};

/**
 * Least-squares line through (batch, peak_bytes) points. Needs at least two
 * distinct batch values. Points that are exactly collinear with an integer
 * per-sample coefficient produce the exact integer model with r2 == 1.0, so
 * downstream feasibility arithmetic is free of rounding.
 */
LinearModel fit_linear(const std::vector<std::pair<int, uint64_t>>& points);

enum class ProfileMode { adaptive, classic, backprop };

struct LayerProfile {
  int layer = -1;  // -1: whole-network model (backprop mode)
  LinearModel model;
  std::vector<std::pair<int, uint64_t>> samples;  // (batch, measured peak)
};

struct ProfileReport {
  std::string network;
  ProfileMode mode = ProfileMode::adaptive;
  std::vector<int> probe_batches;
  uint64_t seed = 0;
  std::vector<LayerProfile> layers;
};

/**
 * Peak resident bytes of one local training step of unit `index` at the
 * given batch: cloned parameters, momentum buffers, a synthetic input batch,
 * and everything the step itself allocates, measured on a fresh meter. This
 * runs the same local_step the trainer runs, so the number is the training
 * footprint, not an estimate of it.
 */
uint64_t measure_layer_step(const NetworkSpec& net, AuxMode mode, int index,
                            int batch, uint64_t seed);

// Same, for one whole-network backprop step with every activation retained.
uint64_t measure_bp_step(const NetworkSpec& net, int batch, uint64_t seed);

// One model per layer (adaptive/classic), or a single whole-network model
// (backprop). probe_batches needs at least two distinct positive values.
ProfileReport profile_network(const NetworkSpec& net, ProfileMode mode,
                              const std::vector<int>& probe_batches,
                              uint64_t seed);

std::string profile_mode_name(ProfileMode mode);
ProfileMode profile_mode_from_name(const std::string& name);

std::string profile_to_json(const ProfileReport& report);
ProfileReport profile_from_json(const std::string& text);

}  // namespace neuroflux
