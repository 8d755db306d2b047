#pragma once

#include <string>
#include <vector>

#include "arch.hpp"
#include "tensor.hpp"

namespace neuroflux {

/**
 * Binary model container: magic "NFCM", version, a JSON metadata block
 * (network structure, classifier specs, flavor), then named f32 tensor
 * records in a fixed walk order, closed by a CRC-32 over the whole stream.
 * Two flavors share the format: full training checkpoints with every
 * auxiliary, and compact inference models truncated at one exit layer.
 */

void save_checkpoint(const ModelParams& model, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

// Backbone prefix plus the one classifier that serves the chosen exit.
struct CompactModel {
  NetworkSpec net;  // layers 0..exit_layer of the source network
  AuxMode mode = AuxMode::adaptive;
  int exit_layer = 0;  // index in the source network
  std::vector<UnitParams> units;
  AuxParams classifier;
};

void save_compact(const ModelParams& model, int exit_layer,
                  const std::string& path);
CompactModel load_compact(const std::string& path);

// Logits for a batch [n, c, h, w] matching the model's input shape.
Tensor compact_forward(const CompactModel& model, const Tensor& x);

}  // namespace neuroflux
