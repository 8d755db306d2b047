#include "model_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <utility>

#include "errors.hpp"
#include "json.hpp"
#include "spec_json.hpp"

namespace neuroflux {

namespace {

constexpr char kMagic[4] = {'N', 'F', 'C', 'M'};
constexpr uint32_t kContainerVersion = 1;
constexpr uint32_t kKindCheckpoint = 1;
constexpr uint32_t kKindCompact = 2;

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

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

void push_unit_names(const std::string& prefix, const UnitParams& u,
                     std::vector<std::string>& out) {
  out.push_back(prefix + "/conv1/w");
  out.push_back(prefix + "/conv1/b");
  if (u.has_conv2()) {
    out.push_back(prefix + "/conv2/w");
    out.push_back(prefix + "/conv2/b");
  }
  if (u.has_proj()) {
    out.push_back(prefix + "/proj/w");
    out.push_back(prefix + "/proj/b");
  }
}

void push_aux_names(const std::string& prefix, const AuxParams& a,
                    std::vector<std::string>& out) {
  if (a.spec.filters > 0) {
    out.push_back(prefix + "/conv/w");
    out.push_back(prefix + "/conv/b");
  }
  out.push_back(prefix + "/fc/w");
  out.push_back(prefix + "/fc/b");
}

// Walk order shared by both flavors: units, then classifiers.
template <typename Model, typename TensorPtr>
void walk_model(Model& model, std::vector<std::string>& names,
                std::vector<TensorPtr>& tensors) {
  // Model is ModelParams (checkpoints) or CompactModel.
  for (size_t i = 0; i < model.units.size(); ++i) {
    push_unit_names("unit" + std::to_string(i), model.units[i], names);
    for (TensorPtr t : model.units[i].tensors()) tensors.push_back(t);
  }
  if constexpr (requires { model.aux; }) {
    for (size_t i = 0; i < model.aux.size(); ++i) {
      push_aux_names("aux" + std::to_string(i), model.aux[i], names);
      for (TensorPtr t : model.aux[i].tensors()) tensors.push_back(t);
    }
    push_aux_names("head", model.head, names);
    for (TensorPtr t : model.head.tensors()) tensors.push_back(t);
  } else {
    push_aux_names("classifier", model.classifier, names);
    for (TensorPtr t : model.classifier.tensors()) tensors.push_back(t);
  }
}

template <typename Model>
std::vector<NamedTensor> model_records(const Model& model) {
  std::vector<std::string> names;
  std::vector<const Tensor*> tensors;
  walk_model(model, names, tensors);
  std::vector<NamedTensor> records;
  records.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    records.push_back({names[i], tensors[i]});
  }
  return records;
}

void write_container(const std::string& path, uint32_t kind,
                     const nlohmann::json& meta,
                     const std::vector<NamedTensor>& records) {
  std::vector<char> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kContainerVersion);
  put_u32(out, kind);
  const std::string meta_text = meta.dump();
  put_u32(out, static_cast<uint32_t>(meta_text.size()));
  out.insert(out.end(), meta_text.begin(), meta_text.end());
  put_u32(out, static_cast<uint32_t>(records.size()));
  for (const NamedTensor& r : records) {
    put_u32(out, static_cast<uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<uint32_t>(r.tensor->rank()));
    for (int d = 0; d < r.tensor->rank(); ++d) {
      put_u32(out, static_cast<uint32_t>(r.tensor->dim(d)));
    }
    const size_t at = out.size();
    const size_t bytes = static_cast<size_t>(r.tensor->numel()) * 4;
    out.resize(at + bytes);
    std::memcpy(out.data() + at, r.tensor->data(), bytes);
  }
  put_u32(out, buffer_crc(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw input_error("cannot write model file " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw input_error("short write to model file " + path);
}

struct Cursor {
  const std::vector<char>& bytes;
  size_t at = 0;
  const std::string& path;

  void need(size_t n) const {
    if (at + n > bytes.size()) {
      throw input_error("model file " + path + " is truncated");
    }
  }
  uint32_t u32() {
    need(4);
    const uint32_t v = get_u32(bytes.data() + at);
    at += 4;
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(bytes.data() + at, n);
    at += n;
    return s;
  }
};

struct Container {
  nlohmann::json meta;
  std::vector<char> bytes;
  size_t records_at = 0;
  uint32_t record_count = 0;
};

Container read_container(const std::string& path, uint32_t want_kind) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw input_error("cannot open model file " + path);
  Container c;
  c.bytes.resize(static_cast<size_t>(f.tellg()));
  f.seekg(0);
  f.read(c.bytes.data(), static_cast<std::streamsize>(c.bytes.size()));
  if (!f) throw input_error("short read from model file " + path);

  if (c.bytes.size() < 20 || std::memcmp(c.bytes.data(), kMagic, 4) != 0) {
    throw input_error("model file " + path + " is not a model container");
  }
  const uint32_t stored_crc = get_u32(c.bytes.data() + c.bytes.size() - 4);
  if (buffer_crc(c.bytes.data(), c.bytes.size() - 4) != stored_crc) {
    throw input_error("model file " + path + " fails its checksum");
  }
  Cursor cur{c.bytes, 4, path};
  const uint32_t version = cur.u32();
  if (version != kContainerVersion) {
    throw input_error("model file " + path + " has unsupported version " +
                      std::to_string(version));
  }
  const uint32_t kind = cur.u32();
  if (kind != want_kind) {
    throw input_error("model file " + path + " is a " +
                      (kind == kKindCheckpoint ? std::string("checkpoint")
                       : kind == kKindCompact  ? std::string("compact model")
                                               : std::to_string(kind)) +
                      ", not the requested flavor");
  }
  const uint32_t meta_len = cur.u32();
  try {
    c.meta = nlohmann::json::parse(cur.str(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw input_error("model file " + path + " has malformed metadata: " +
                      e.what());
  }
  c.record_count = cur.u32();
  c.records_at = cur.at;
  return c;
}

// Fills the model's tensors from the container's records; names and shapes
// must match the walk exactly.
template <typename Model>
void read_records(const Container& c, const std::string& path, Model& model) {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
  walk_model(model, names, tensors);
  if (c.record_count != names.size()) {
    throw input_error("model file " + path + " holds " +
                      std::to_string(c.record_count) + " tensors, expected " +
                      std::to_string(names.size()));
  }
  Cursor cur{c.bytes, c.records_at, path};
  for (size_t r = 0; r < names.size(); ++r) {
    const std::string name = cur.str(cur.u32());
    if (name != names[r]) {
      throw input_error("model file " + path + " record " + name +
                        " appears where " + names[r] + " belongs");
    }
    const uint32_t rank = cur.u32();
    Tensor* t = tensors[r];
    if (rank != static_cast<uint32_t>(t->rank())) {
      throw input_error("model file " + path + " record " + name +
                        " has rank " + std::to_string(rank));
    }
    int64_t elems = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = cur.u32();
      if (dim != static_cast<uint32_t>(t->dim(static_cast<int>(d)))) {
        throw input_error("model file " + path + " record " + name +
                          " shape disagrees with the network structure");
      }
      elems *= dim;
    }
    cur.need(static_cast<size_t>(elems) * 4);
    std::memcpy(t->data(), c.bytes.data() + cur.at,
                static_cast<size_t>(elems) * 4);
    cur.at += static_cast<size_t>(elems) * 4;
  }
  if (cur.at + 4 != c.bytes.size()) {
    throw input_error("model file " + path + " has trailing bytes");
  }
}

}  // namespace

void save_checkpoint(const ModelParams& model, const std::string& path) {
  validate(model.net);
  nlohmann::json meta;
  meta["network"] = detail::spec_to_json(model.net);
  meta["mode"] = model.mode == AuxMode::adaptive ? "adaptive" : "classic";
  // End-to-end trained models carry no per-layer classifiers; record that so
  // loading rebuilds the same record set.
  meta["with_auxiliaries"] = !model.aux.empty();
  write_container(path, kKindCheckpoint, meta, model_records(model));
}

ModelParams load_checkpoint(const std::string& path) {
  const Container c = read_container(path, kKindCheckpoint);
  ModelParams model;
  bool with_aux = true;
  try {
    model.net = detail::spec_from_json(c.meta.at("network"));
    const std::string mode = c.meta.at("mode").get<std::string>();
    if (mode != "adaptive" && mode != "classic") {
      throw input_error("model file " + path + " names unknown mode " + mode);
    }
    model.mode = mode == "adaptive" ? AuxMode::adaptive : AuxMode::classic;
    with_aux = c.meta.value("with_auxiliaries", true);
  } catch (const nlohmann::json::exception& e) {
    throw input_error("model file " + path + " has malformed metadata: " +
                      e.what());
  }
  validate(model.net);
  ModelParams fresh = init_parameters(model.net, model.mode, 0, with_aux);
  model.units = std::move(fresh.units);
  model.aux = std::move(fresh.aux);
  model.head = std::move(fresh.head);
  read_records(c, path, model);
  return model;
}

void save_compact(const ModelParams& model, int exit_layer,
                  const std::string& path) {
  validate(model.net);
  const int layers = static_cast<int>(model.net.layers.size());
  if (exit_layer < 0 || exit_layer >= layers) {
    throw input_error("exit layer " + std::to_string(exit_layer) +
                      " outside the network's " + std::to_string(layers) +
                      " layers");
  }
  const AuxParams& classifier = model.classifier_at(exit_layer);

  nlohmann::json meta;
  NetworkSpec net = model.net;
  net.layers.resize(static_cast<size_t>(exit_layer) + 1);
  meta["network"] = detail::spec_to_json(net);
  meta["mode"] = model.mode == AuxMode::adaptive ? "adaptive" : "classic";
  meta["exit_layer"] = exit_layer;
  meta["classifier"] = detail::aux_spec_to_json(classifier.spec);

  std::vector<std::string> names;
  std::vector<const Tensor*> tensors;
  for (int i = 0; i <= exit_layer; ++i) {
    const UnitParams& u = model.units[static_cast<size_t>(i)];
    push_unit_names("unit" + std::to_string(i), u, names);
    for (const Tensor* t : u.tensors()) tensors.push_back(t);
  }
  push_aux_names("classifier", classifier, names);
  for (const Tensor* t : classifier.tensors()) tensors.push_back(t);
  std::vector<NamedTensor> records;
  records.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    records.push_back({names[i], tensors[i]});
  }
  write_container(path, kKindCompact, meta, records);
}

CompactModel load_compact(const std::string& path) {
  const Container c = read_container(path, kKindCompact);
  CompactModel model;
  AuxiliarySpec cls_spec;
  try {
    model.net = detail::spec_from_json(c.meta.at("network"));
    const std::string mode = c.meta.at("mode").get<std::string>();
    if (mode != "adaptive" && mode != "classic") {
      throw input_error("model file " + path + " names unknown mode " + mode);
    }
    model.mode = mode == "adaptive" ? AuxMode::adaptive : AuxMode::classic;
    model.exit_layer = c.meta.at("exit_layer").get<int>();
    cls_spec = detail::aux_spec_from_json(c.meta.at("classifier"));
  } catch (const nlohmann::json::exception& e) {
    throw input_error("model file " + path + " has malformed metadata: " +
                      e.what());
  }
  validate(model.net);
  if (model.exit_layer + 1 < static_cast<int>(model.net.layers.size())) {
    throw input_error("model file " + path +
                      " stores layers past its own exit");
  }
  for (size_t i = 0; i < model.net.layers.size(); ++i) {
    model.units.push_back(init_unit(model.net.layers[i], 0));
  }
  model.classifier =
      init_aux(cls_spec, model.net.layers.back().out_channels, 0);
  read_records(c, path, model);
  return model;
}

Tensor compact_forward(const CompactModel& model, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != model.net.input.c ||
      x.dim(2) != model.net.input.h || x.dim(3) != model.net.input.w) {
    throw input_error("compact_forward: batch shape does not match the model");
  }
  Tensor h = x;
  for (const UnitParams& u : model.units) {
    UnitCtx ctx;
    h = unit_forward(u, std::move(h), &ctx);
  }
  AuxCtx ctx;
  return aux_forward(model.classifier, h, &ctx);
}

}  // namespace neuroflux
