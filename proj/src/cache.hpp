#pragma once

#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "arch.hpp"
#include "tensor.hpp"

namespace neuroflux {

struct ChunkInfo {
  std::string file;  // relative to the cache directory
  int samples = 0;
  uint64_t byte_size = 0;
  uint32_t crc32 = 0;  // over the entire chunk file, header included
};

struct CacheManifest {
  Shape3 sample_shape;
  int64_t total_samples = 0;
  std::vector<ChunkInfo> chunks;
  std::string label_file;
  uint32_t label_crc32 = 0;
};

std::string manifest_to_json(const CacheManifest& m);
CacheManifest manifest_from_json(const std::string& text);

/**
 * Streams activation batches to disk as fixed-size chunks. Each chunk file
 * is a 32-byte header (magic "NFAC", version, dtype code, rank, four dims,
 * all little-endian u32) followed by the raw sample-major f32 payload.
 * Labels go to one side file of little-endian i32. Staging happens in plain
 * host buffers; nothing here counts against a memory meter.
 */
class CacheWriter {
public:
  CacheWriter(std::string dir, Shape3 sample_shape, int chunk_samples);

  // Batch is [n, c, h, w] with one label per sample; samples land in the
  // cache in exactly the order they are appended.
  void append(const Tensor& batch, const std::vector<int32_t>& labels);

  // Flushes the trailing partial chunk, writes labels and manifest.json.
  CacheManifest finish();

private:
  void flush_chunk(int samples);

  std::string dir_;
  Shape3 shape_;
  int chunk_samples_;
  int64_t sample_elems_;
  std::vector<float> staged_;
  std::vector<int32_t> labels_;
  std::vector<ChunkInfo> chunks_;
  bool finished_ = false;
};

/**
 * Reads a cache directory back as batches of any size; batches cross chunk
 * boundaries so ceil(total / batch) batches always come out. While one chunk
 * is being consumed the next is fetched on a worker thread. Corrupt chunks
 * (bad magic, version, shape, size, or checksum) throw cache_error naming
 * the file. Batch tensors are allocated under the active memory meter; the
 * chunk staging buffers are host I/O and are not.
 */
class CacheReader {
public:
  explicit CacheReader(const std::string& dir);

  const CacheManifest& manifest() const { return manifest_; }
  int64_t size() const { return manifest_.total_samples; }
  Shape3 sample_shape() const { return manifest_.sample_shape; }
  const std::vector<int32_t>& labels() const { return labels_; }

  class BatchStream {
  public:
    // False once every sample has been emitted.
    bool next(Tensor* x, std::vector<int32_t>* y);
    int batch_count() const;

  private:
    friend class CacheReader;
    BatchStream(const CacheReader* reader, int batch,
                std::vector<int> chunk_order);
    std::vector<float> take_chunk(int order_pos);

    const CacheReader* reader_ = nullptr;
    int batch_ = 0;
    std::vector<int> order_;
    int order_pos_ = -1;          // chunk currently being consumed
    int64_t chunk_offset_ = 0;    // samples consumed from it
    int64_t emitted_ = 0;
    std::vector<float> current_;
    std::future<std::vector<float>> ahead_;
  };

  // Chunk visit order is stored order, or a per-epoch permutation when
  // shuffle_chunks is set; samples inside a chunk always keep their order.
  // The reader must outlive the stream.
  BatchStream stream(int batch, bool shuffle_chunks = false,
                     uint64_t seed = 0, int epoch = 0) const;

private:
  friend class BatchStream;
  std::vector<float> load_chunk(int index) const;

  std::string dir_;
  CacheManifest manifest_;
  std::vector<int32_t> labels_;
  std::vector<int64_t> chunk_start_;  // global offset of each stored chunk
};

}  // namespace neuroflux
