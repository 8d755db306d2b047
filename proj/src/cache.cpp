#include "cache.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <utility>

#include "errors.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace neuroflux {

namespace {

constexpr int kManifestSchemaVersion = 1;
constexpr char kMagic[4] = {'N', 'F', 'A', 'C'};
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kDtypeF32 = 1;
constexpr size_t kHeaderBytes = 32;

void put_u32(std::vector<char>& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const char* p) {
  const auto b = [p](int i) {
    return static_cast<uint32_t>(static_cast<unsigned char>(p[i]));
  };
  return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

uint32_t buffer_crc(const char* data, size_t len) {
  uLong crc = crc32_z(0L, Z_NULL, 0);
  crc = crc32_z(crc, reinterpret_cast<const Bytef*>(data), len);
  return static_cast<uint32_t>(crc);
}

void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cache_error("cache: cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw cache_error("cache: short write to " + path);
}

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw cache_error("cache: cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<char> bytes(static_cast<size_t>(size));
  in.read(bytes.data(), size);
  if (!in) throw cache_error("cache: short read from " + path);
  return bytes;
}

int64_t shape_elems(const Shape3& s) {
  return static_cast<int64_t>(s.c) * s.h * s.w;
}

}  // namespace

std::string manifest_to_json(const CacheManifest& m) {
  nlohmann::json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["dtype"] = "f32";
  j["sample_shape"] = {{"c", m.sample_shape.c},
                       {"h", m.sample_shape.h},
                       {"w", m.sample_shape.w}};
  j["total_samples"] = m.total_samples;
  j["label_file"] = m.label_file;
  j["label_crc32"] = m.label_crc32;
  j["chunks"] = nlohmann::json::array();
  for (const ChunkInfo& c : m.chunks) {
    j["chunks"].push_back({{"file", c.file},
                           {"samples", c.samples},
                           {"byte_size", c.byte_size},
                           {"crc32", c.crc32}});
  }
  return j.dump(2);
}

CacheManifest manifest_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw cache_error(std::string("cache manifest is not valid JSON: ") +
                      e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kManifestSchemaVersion) {
      throw cache_error("cache manifest has unsupported schema version " +
                        j.at("schema_version").dump());
    }
    if (j.at("dtype").get<std::string>() != "f32") {
      throw cache_error("cache manifest has unsupported dtype " +
                        j.at("dtype").dump());
    }
    CacheManifest m;
    m.sample_shape.c = j.at("sample_shape").at("c").get<int>();
    m.sample_shape.h = j.at("sample_shape").at("h").get<int>();
    m.sample_shape.w = j.at("sample_shape").at("w").get<int>();
    m.total_samples = j.at("total_samples").get<int64_t>();
    m.label_file = j.at("label_file").get<std::string>();
    m.label_crc32 = j.at("label_crc32").get<uint32_t>();
    for (const nlohmann::json& jc : j.at("chunks")) {
      ChunkInfo c;
      c.file = jc.at("file").get<std::string>();
      c.samples = jc.at("samples").get<int>();
      c.byte_size = jc.at("byte_size").get<uint64_t>();
      c.crc32 = jc.at("crc32").get<uint32_t>();
      m.chunks.push_back(std::move(c));
    }
    int64_t sum = 0;
    for (const ChunkInfo& c : m.chunks) {
      if (c.samples < 1) {
        throw cache_error("cache manifest lists chunk " + c.file +
                          " with no samples");
      }
      sum += c.samples;
    }
    if (sum != m.total_samples) {
      throw cache_error("cache manifest chunk samples sum to " +
                        std::to_string(sum) + ", expected " +
                        std::to_string(m.total_samples));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw cache_error(std::string("cache manifest is malformed: ") + e.what());
  }
}

CacheWriter::CacheWriter(std::string dir, Shape3 sample_shape,
                         int chunk_samples)
    : dir_(std::move(dir)),
      shape_(sample_shape),
      chunk_samples_(chunk_samples),
      sample_elems_(shape_elems(sample_shape)) {
  if (sample_shape.c < 1 || sample_shape.h < 1 || sample_shape.w < 1) {
    throw input_error("cache writer: sample shape must be positive");
  }
  if (chunk_samples < 1) {
    throw input_error("cache writer: chunk size must be at least 1 sample");
  }
  std::filesystem::create_directories(dir_);
}

void CacheWriter::append(const Tensor& batch,
                         const std::vector<int32_t>& labels) {
  if (finished_) throw input_error("cache writer: append after finish");
  if (batch.rank() != 4 || batch.dim(1) != shape_.c ||
      batch.dim(2) != shape_.h || batch.dim(3) != shape_.w) {
    throw input_error("cache writer: batch shape does not match the cache");
  }
  const int n = batch.dim(0);
  if (n < 1) throw input_error("cache writer: empty batch");
  if (static_cast<int>(labels.size()) != n) {
    throw input_error("cache writer: " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(n) + " samples");
  }
  staged_.insert(staged_.end(), batch.data(), batch.data() + batch.numel());
  labels_.insert(labels_.end(), labels.begin(), labels.end());
  while (static_cast<int64_t>(staged_.size()) >=
         static_cast<int64_t>(chunk_samples_) * sample_elems_) {
    flush_chunk(chunk_samples_);
  }
}

void CacheWriter::flush_chunk(int samples) {
  const size_t payload_floats =
      static_cast<size_t>(samples) * static_cast<size_t>(sample_elems_);
  std::vector<char> bytes;
  bytes.reserve(kHeaderBytes + payload_floats * 4);
  bytes.insert(bytes.end(), kMagic, kMagic + 4);
  put_u32(bytes, kFormatVersion);
  put_u32(bytes, kDtypeF32);
  put_u32(bytes, 4);  // rank
  put_u32(bytes, static_cast<uint32_t>(samples));
  put_u32(bytes, static_cast<uint32_t>(shape_.c));
  put_u32(bytes, static_cast<uint32_t>(shape_.h));
  put_u32(bytes, static_cast<uint32_t>(shape_.w));
  const size_t payload_at = bytes.size();
  bytes.resize(payload_at + payload_floats * 4);
  std::memcpy(bytes.data() + payload_at, staged_.data(), payload_floats * 4);

  char name[32];
  std::snprintf(name, sizeof(name), "chunk_%05zu.nfac", chunks_.size());
  ChunkInfo info;
  info.file = name;
  info.samples = samples;
  info.byte_size = bytes.size();
  info.crc32 = buffer_crc(bytes.data(), bytes.size());
  write_file(dir_ + "/" + info.file, bytes);
  chunks_.push_back(std::move(info));
  staged_.erase(staged_.begin(),
                staged_.begin() + static_cast<int64_t>(payload_floats));
}

CacheManifest CacheWriter::finish() {
  if (finished_) throw input_error("cache writer: finish called twice");
  if (labels_.empty()) throw input_error("cache writer: no samples appended");
  if (!staged_.empty()) {
    flush_chunk(static_cast<int>(static_cast<int64_t>(staged_.size()) /
                                 sample_elems_));
  }
  finished_ = true;

  std::vector<char> label_bytes(labels_.size() * 4);
  std::memcpy(label_bytes.data(), labels_.data(), label_bytes.size());

  CacheManifest m;
  m.sample_shape = shape_;
  m.total_samples = static_cast<int64_t>(labels_.size());
  m.chunks = chunks_;
  m.label_file = "labels.bin";
  m.label_crc32 = buffer_crc(label_bytes.data(), label_bytes.size());
  write_file(dir_ + "/" + m.label_file, label_bytes);

  const std::string text = manifest_to_json(m);
  write_file(dir_ + "/manifest.json",
             std::vector<char>(text.begin(), text.end()));
  return m;
}

CacheReader::CacheReader(const std::string& dir) : dir_(dir) {
  const std::string manifest_path = dir_ + "/manifest.json";
  const std::vector<char> text = read_file(manifest_path);
  manifest_ = manifest_from_json(std::string(text.begin(), text.end()));

  const std::string label_path = dir_ + "/" + manifest_.label_file;
  const std::vector<char> label_bytes = read_file(label_path);
  if (label_bytes.size() !=
      static_cast<size_t>(manifest_.total_samples) * 4) {
    throw cache_error("cache label file " + label_path + " holds " +
                      std::to_string(label_bytes.size()) +
                      " bytes, expected " +
                      std::to_string(manifest_.total_samples * 4));
  }
  if (buffer_crc(label_bytes.data(), label_bytes.size()) !=
      manifest_.label_crc32) {
    throw cache_error("cache label file " + label_path +
                      " fails its checksum");
  }
  labels_.resize(static_cast<size_t>(manifest_.total_samples));
  std::memcpy(labels_.data(), label_bytes.data(), label_bytes.size());

  chunk_start_.reserve(manifest_.chunks.size());
  int64_t at = 0;
  for (const ChunkInfo& c : manifest_.chunks) {
    chunk_start_.push_back(at);
    at += c.samples;
  }
}

std::vector<float> CacheReader::load_chunk(int index) const {
  const ChunkInfo& info = manifest_.chunks[static_cast<size_t>(index)];
  const std::string path = dir_ + "/" + info.file;
  const std::vector<char> bytes = read_file(path);
  if (bytes.size() != info.byte_size) {
    throw cache_error("cache chunk " + path + " holds " +
                      std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(info.byte_size));
  }
  if (buffer_crc(bytes.data(), bytes.size()) != info.crc32) {
    throw cache_error("cache chunk " + path + " fails its checksum");
  }
  if (bytes.size() < kHeaderBytes ||
      std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw cache_error("cache chunk " + path + " is not a cache chunk file");
  }
  if (get_u32(bytes.data() + 4) != kFormatVersion) {
    throw cache_error("cache chunk " + path +
                      " has unsupported format version " +
                      std::to_string(get_u32(bytes.data() + 4)));
  }
  if (get_u32(bytes.data() + 8) != kDtypeF32 ||
      get_u32(bytes.data() + 12) != 4) {
    throw cache_error("cache chunk " + path + " has an unsupported layout");
  }
  const uint32_t dims[4] = {
      get_u32(bytes.data() + 16), get_u32(bytes.data() + 20),
      get_u32(bytes.data() + 24), get_u32(bytes.data() + 28)};
  if (dims[0] != static_cast<uint32_t>(info.samples) ||
      dims[1] != static_cast<uint32_t>(manifest_.sample_shape.c) ||
      dims[2] != static_cast<uint32_t>(manifest_.sample_shape.h) ||
      dims[3] != static_cast<uint32_t>(manifest_.sample_shape.w)) {
    throw cache_error("cache chunk " + path +
                      " disagrees with the manifest about its shape");
  }
  const size_t payload_floats = static_cast<size_t>(dims[0]) * dims[1] *
                                dims[2] * dims[3];
  if (bytes.size() != kHeaderBytes + payload_floats * 4) {
    throw cache_error("cache chunk " + path + " payload is truncated");
  }
  std::vector<float> payload(payload_floats);
  std::memcpy(payload.data(), bytes.data() + kHeaderBytes,
              payload_floats * 4);
  return payload;
}

CacheReader::BatchStream::BatchStream(const CacheReader* reader, int batch,
                                      std::vector<int> chunk_order)
    : reader_(reader), batch_(batch), order_(std::move(chunk_order)) {
  if (!order_.empty()) {
    const int first = order_[0];
    ahead_ = std::async(std::launch::async,
                        [reader, first] { return reader->load_chunk(first); });
  }
}

std::vector<float> CacheReader::BatchStream::take_chunk(int order_pos) {
  std::vector<float> chunk = ahead_.get();
  if (order_pos + 1 < static_cast<int>(order_.size())) {
    const CacheReader* reader = reader_;
    const int next_index = order_[static_cast<size_t>(order_pos) + 1];
    ahead_ = std::async(std::launch::async, [reader, next_index] {
      return reader->load_chunk(next_index);
    });
  }
  return chunk;
}

int CacheReader::BatchStream::batch_count() const {
  return static_cast<int>((reader_->size() + batch_ - 1) / batch_);
}

bool CacheReader::BatchStream::next(Tensor* x, std::vector<int32_t>* y) {
  const int64_t total = reader_->size();
  if (emitted_ >= total) return false;
  const Shape3 s = reader_->sample_shape();
  const int64_t elems = shape_elems(s);
  const int n = static_cast<int>(std::min<int64_t>(batch_, total - emitted_));

  // Release the caller's previous batch before allocating the next one so
  // only one batch is ever live (and metered) at a time.
  *x = Tensor();
  Tensor batch({n, s.c, s.h, s.w});
  y->resize(static_cast<size_t>(n));
  int filled = 0;
  while (filled < n) {
    const auto& chunks = reader_->manifest().chunks;
    if (order_pos_ < 0 ||
        chunk_offset_ >=
            chunks[static_cast<size_t>(order_[order_pos_])].samples) {
      ++order_pos_;
      current_ = take_chunk(order_pos_);
      chunk_offset_ = 0;
    }
    const int chunk_index = order_[static_cast<size_t>(order_pos_)];
    const int64_t avail = chunks[static_cast<size_t>(chunk_index)].samples -
                          chunk_offset_;
    const int take = static_cast<int>(
        std::min<int64_t>(avail, n - filled));
    std::memcpy(batch.data() + static_cast<int64_t>(filled) * elems,
                current_.data() + chunk_offset_ * elems,
                static_cast<size_t>(take) * elems * 4);
    const int64_t label_at =
        reader_->chunk_start_[static_cast<size_t>(chunk_index)] +
        chunk_offset_;
    for (int i = 0; i < take; ++i) {
      (*y)[static_cast<size_t>(filled + i)] =
          reader_->labels_[static_cast<size_t>(label_at + i)];
    }
    chunk_offset_ += take;
    filled += take;
  }
  emitted_ += n;
  *x = std::move(batch);
  return true;
}

CacheReader::BatchStream CacheReader::stream(int batch, bool shuffle_chunks,
                                             uint64_t seed, int epoch) const {
  if (batch < 1) throw input_error("cache stream: batch must be at least 1");
  std::vector<int> order(manifest_.chunks.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (shuffle_chunks) {
    rng gen(mix_seed(seed, 9100 + static_cast<uint64_t>(epoch)));
    gen.shuffle(order);
  }
  return BatchStream(this, batch, std::move(order));
}

}  // namespace neuroflux
