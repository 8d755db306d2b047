#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arch.hpp"
#include "tensor.hpp"

namespace neuroflux {

// In-memory dataset. Images live in host storage and are deliberately not
// meter-registered; batches materialized for training are.
struct LabeledDataset {
  Tensor images;  // [M, C, H, W]
  std::vector<int32_t> labels;
  int class_count = 0;

  int size() const { return labels.empty() ? 0 : static_cast<int>(labels.size()); }
  Shape3 sample_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
};

inline constexpr float cifar10_mean[3] = {0.4914f, 0.4822f, 0.4465f};
inline constexpr float cifar10_std[3] = {0.2470f, 0.2435f, 0.2616f};

// Binary batch files: 3073-byte records, one label byte then three 1024-byte
// channel planes. Files concatenate in the order given; limit > 0 keeps only
// the first `limit` records of the concatenation.
LabeledDataset load_cifar10(const std::vector<std::string>& paths,
                            int limit = 0);

// Gaussian blobs around per-class mean directions, margin wide enough that a
// linear probe clears 90% by construction. Labels interleave so prefixes
// stay balanced.
LabeledDataset synth_dataset(int classes, int per_class, Shape3 shape,
                             uint64_t seed);

struct SplitResult {
  LabeledDataset train;
  LabeledDataset val;
};

// Deterministic stratified split; both sides preserve original sample order.
SplitResult split_dataset(const LabeledDataset& data, double val_fraction,
                          uint64_t seed);

/**
 * Walks the dataset in batches of batch_size (final batch smaller). With
 * shuffle on, the visit order is a permutation derived from (seed, epoch)
 * only. Batch tensors register with whatever meter is active at next().
 */
class BatchIterator {
public:
  BatchIterator(const LabeledDataset& data, int batch_size, uint64_t seed,
                int epoch, bool shuffle);

  bool next(Tensor* x, std::vector<int32_t>* y);
  int batch_count() const;
  void reset();

private:
  const LabeledDataset& data_;
  int batch_size_;
  std::vector<int32_t> order_;
  size_t cursor_ = 0;
};

}  // namespace neuroflux
