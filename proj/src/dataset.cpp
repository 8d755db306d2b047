#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace neuroflux {

namespace {

constexpr int kCifarRecordBytes = 3073;  // 1 label byte + 3 * 32 * 32
constexpr int kCifarPlane = 1024;

}  // namespace

LabeledDataset load_cifar10(const std::vector<std::string>& paths, int limit) {
  if (paths.empty()) throw input_error("load_cifar10: no input files");

  std::vector<uint8_t> raw;
  std::vector<size_t> file_record_base;  // for error messages
  std::vector<std::string> file_of_record;

  size_t total_records = 0;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw input_error("load_cifar10: cannot open " + path);
    const auto bytes = static_cast<size_t>(in.tellg());
    if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
      throw input_error("load_cifar10: " + path + " has " +
                        std::to_string(bytes) +
                        " bytes, not a multiple of 3073-byte records");
    }
    const size_t n = bytes / kCifarRecordBytes;
    in.seekg(0);
    const size_t off = raw.size();
    raw.resize(off + bytes);
    in.read(reinterpret_cast<char*>(raw.data() + off),
            static_cast<std::streamsize>(bytes));
    if (!in) throw input_error("load_cifar10: short read on " + path);
    for (size_t r = 0; r < n; ++r) {
      file_record_base.push_back(r);
      file_of_record.push_back(path);
    }
    total_records += n;
  }

  size_t keep = total_records;
  if (limit > 0) keep = std::min<size_t>(keep, static_cast<size_t>(limit));

  LabeledDataset out;
  out.class_count = 10;
  out.images = Tensor({static_cast<int>(keep), 3, 32, 32});
  out.labels.resize(keep);

  for (size_t r = 0; r < keep; ++r) {
    const uint8_t* rec = raw.data() + r * kCifarRecordBytes;
    const int label = rec[0];
    if (label > 9) {
      throw input_error("load_cifar10: record " +
                        std::to_string(file_record_base[r]) + " of " +
                        file_of_record[r] + " has label byte " +
                        std::to_string(label) + ", expected 0..9");
    }
    out.labels[r] = label;
    float* dst = out.images.data() + r * 3 * kCifarPlane;
    for (int c = 0; c < 3; ++c) {
      const uint8_t* plane = rec + 1 + c * kCifarPlane;
      const float mean = cifar10_mean[c];
      const float inv_std = 1.0f / cifar10_std[c];
      for (int i = 0; i < kCifarPlane; ++i) {
        dst[c * kCifarPlane + i] = (plane[i] * (1.0f / 255.0f) - mean) * inv_std;
      }
    }
  }
  return out;
}

LabeledDataset synth_dataset(int classes, int per_class, Shape3 shape,
                             uint64_t seed) {
  if (classes < 2) throw input_error("synth_dataset: need at least 2 classes");
  if (per_class < 1) throw input_error("synth_dataset: per_class must be positive");
  if (shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw input_error("synth_dataset: degenerate sample shape");
  }

  const int dim = shape.c * shape.h * shape.w;
  const int total = classes * per_class;

  // Class means: random low-frequency patterns, constant over channel x
  // half-height x half-width cells, scaled so inter-class distance dwarfs
  // the unit noise (margin 4 puts pairwise means ~5.7 sigma apart). The
  // coarse cells matter: spatial averaging (pooling) keeps a blocky signal
  // intact, where a per-pixel random pattern would cancel to nothing, so
  // these blobs are learnable by pooled conv features and not only by a
  // flat linear readout.
  constexpr float kMargin = 4.0f;
  const int bh = shape.h > 1 ? 2 : 1;
  const int bw = shape.w > 1 ? 2 : 1;
  std::vector<std::vector<float>> means(static_cast<size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    rng g(mix_seed(seed, 7000 + static_cast<uint64_t>(c)));
    std::vector<float> cells(static_cast<size_t>(shape.c * bh * bw));
    for (auto& v : cells) v = g.gaussian();
    auto& mu = means[static_cast<size_t>(c)];
    mu.resize(static_cast<size_t>(dim));
    double norm2 = 0.0;
    for (int ch = 0; ch < shape.c; ++ch) {
      for (int y = 0; y < shape.h; ++y) {
        for (int x = 0; x < shape.w; ++x) {
          const int cell = (ch * bh + std::min(y * 2 / shape.h, bh - 1)) * bw +
                           std::min(x * 2 / shape.w, bw - 1);
          const float v = cells[static_cast<size_t>(cell)];
          mu[(static_cast<size_t>(ch) * shape.h + y) * shape.w + x] = v;
          norm2 += static_cast<double>(v) * v;
        }
      }
    }
    const float scale = kMargin / static_cast<float>(std::sqrt(std::max(norm2, 1e-12)));
    for (auto& v : mu) v *= scale;
  }

  LabeledDataset out;
  out.class_count = classes;
  out.images = Tensor({total, shape.c, shape.h, shape.w});
  out.labels.resize(static_cast<size_t>(total));

  rng noise(mix_seed(seed, 7777));
  for (int i = 0; i < total; ++i) {
    const int label = i % classes;
    out.labels[static_cast<size_t>(i)] = label;
    const auto& mu = means[static_cast<size_t>(label)];
    float* dst = out.images.data() + static_cast<size_t>(i) * dim;
    for (int d = 0; d < dim; ++d) dst[d] = mu[static_cast<size_t>(d)] + noise.gaussian();
  }
  return out;
}

namespace {

LabeledDataset take_rows(const LabeledDataset& data,
                         const std::vector<int32_t>& rows) {
  LabeledDataset out;
  out.class_count = data.class_count;
  const Shape3 s = data.sample_shape();
  const size_t dim = static_cast<size_t>(s.c) * s.h * s.w;
  out.images = Tensor({static_cast<int>(rows.size()), s.c, s.h, s.w});
  out.labels.resize(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<size_t>(rows[i]);
    out.labels[i] = data.labels[r];
    std::copy_n(data.images.data() + r * dim, dim, out.images.data() + i * dim);
  }
  return out;
}

}  // namespace

SplitResult split_dataset(const LabeledDataset& data, double val_fraction,
                          uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw input_error("split_dataset: val_fraction must be in [0, 1)");
  }
  std::vector<std::vector<int32_t>> by_class(
      static_cast<size_t>(data.class_count));
  for (int i = 0; i < data.size(); ++i) {
    by_class[static_cast<size_t>(data.labels[static_cast<size_t>(i)])]
        .push_back(i);
  }

  std::vector<int32_t> val_rows;
  std::vector<char> is_val(static_cast<size_t>(data.size()), 0);
  for (int c = 0; c < data.class_count; ++c) {
    auto pool = by_class[static_cast<size_t>(c)];
    rng g(mix_seed(seed, 3000 + static_cast<uint64_t>(c)));
    g.shuffle(pool);
    const auto take = static_cast<size_t>(
        std::floor(val_fraction * static_cast<double>(pool.size()) + 1e-9));
    for (size_t i = 0; i < take; ++i) is_val[static_cast<size_t>(pool[i])] = 1;
  }

  std::vector<int32_t> train_rows;
  for (int i = 0; i < data.size(); ++i) {
    (is_val[static_cast<size_t>(i)] ? val_rows : train_rows).push_back(i);
  }

  SplitResult out;
  out.train = take_rows(data, train_rows);
  out.val = take_rows(data, val_rows);
  return out;
}

BatchIterator::BatchIterator(const LabeledDataset& data, int batch_size,
                             uint64_t seed, int epoch, bool shuffle)
    : data_(data), batch_size_(batch_size) {
  if (batch_size < 1) throw input_error("BatchIterator: batch_size must be positive");
  order_.resize(static_cast<size_t>(data.size()));
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle) {
    rng g(mix_seed(seed, 5000 + static_cast<uint64_t>(epoch)));
    g.shuffle(order_);
  }
}

int BatchIterator::batch_count() const {
  const int m = static_cast<int>(order_.size());
  return (m + batch_size_ - 1) / batch_size_;
}

void BatchIterator::reset() { cursor_ = 0; }

bool BatchIterator::next(Tensor* x, std::vector<int32_t>* y) {
  if (cursor_ >= order_.size()) return false;
  const size_t take = std::min<size_t>(static_cast<size_t>(batch_size_),
                                       order_.size() - cursor_);
  const Shape3 s = data_.sample_shape();
  const size_t dim = static_cast<size_t>(s.c) * s.h * s.w;
  // Release the caller's previous batch before allocating the next one so
  // only one batch is ever live (and metered) at a time.
  *x = Tensor();
  *x = Tensor({static_cast<int>(take), s.c, s.h, s.w});
  y->resize(take);
  for (size_t i = 0; i < take; ++i) {
    const auto r = static_cast<size_t>(order_[cursor_ + i]);
    (*y)[i] = data_.labels[r];
    std::copy_n(data_.images.data() + r * dim, dim, x->data() + i * dim);
  }
  cursor_ += take;
  return true;
}

}  // namespace neuroflux
