#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "arch.hpp"
#include "errors.hpp"
#include "model_io.hpp"
#include "rng.hpp"
#include "support/test_util.hpp"

using namespace neuroflux;
using namespace nftest;

namespace {

void check_same_tensor(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  CHECK(std::memcmp(a.data(), b.data(),
                    static_cast<size_t>(a.numel()) * 4) == 0);
}

void check_same_params(const AuxParams& a, const AuxParams& b) {
  REQUIRE(a.spec.filters == b.spec.filters);
  CHECK(a.spec.classifier_inputs == b.spec.classifier_inputs);
  const auto at = a.tensors();
  const auto bt = b.tensors();
  REQUIRE(at.size() == bt.size());
  for (size_t i = 0; i < at.size(); ++i) check_same_tensor(*at[i], *bt[i]);
}

uint64_t file_bytes(const std::string& path) {
  return static_cast<uint64_t>(std::filesystem::file_size(path));
}

void flip_byte(const std::string& path, size_t at) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  REQUIRE(f.good());
  f.seekg(static_cast<std::streamoff>(at));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x01);
  f.seekp(static_cast<std::streamoff>(at));
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("checkpoints reload bit for bit") {
  const std::string dir = fresh_dir("model_ckpt").string();
  for (const char* name : {"vgg_toy6", "resnet_toy"}) {
    for (AuxMode mode : {AuxMode::adaptive, AuxMode::classic}) {
      CAPTURE(name);
      const NetworkSpec net = network_by_name(name, 10);
      const ModelParams model = init_parameters(net, mode, 17);
      const std::string path = dir + "/" + name + ".nfcm";
      save_checkpoint(model, path);
      const ModelParams back = load_checkpoint(path);

      CHECK(back.net.name == net.name);
      CHECK(back.mode == mode);
      REQUIRE(back.net.layers.size() == net.layers.size());
      REQUIRE(back.units.size() == model.units.size());
      for (size_t i = 0; i < model.units.size(); ++i) {
        const auto at = model.units[i].tensors();
        const auto bt = back.units[i].tensors();
        REQUIRE(at.size() == bt.size());
        for (size_t t = 0; t < at.size(); ++t) {
          check_same_tensor(*at[t], *bt[t]);
        }
      }
      REQUIRE(back.aux.size() == model.aux.size());
      for (size_t i = 0; i < model.aux.size(); ++i) {
        check_same_params(model.aux[i], back.aux[i]);
      }
      check_same_params(model.head, back.head);
    }
  }
}

TEST_CASE("checkpoints without per-layer classifiers round trip") {
  const std::string dir = fresh_dir("model_ckpt_noaux").string();
  const NetworkSpec net = network_by_name("vgg_toy6", 10);
  const ModelParams model =
      init_parameters(net, AuxMode::adaptive, 23, /*include_aux=*/false);
  REQUIRE(model.aux.empty());
  const std::string path = dir + "/bare.nfcm";
  save_checkpoint(model, path);
  const ModelParams back = load_checkpoint(path);

  CHECK(back.aux.empty());
  REQUIRE(back.units.size() == model.units.size());
  for (size_t i = 0; i < model.units.size(); ++i) {
    const auto at = model.units[i].tensors();
    const auto bt = back.units[i].tensors();
    REQUIRE(at.size() == bt.size());
    for (size_t t = 0; t < at.size(); ++t) check_same_tensor(*at[t], *bt[t]);
  }
  check_same_params(model.head, back.head);
  CHECK_THROWS_AS(back.classifier_at(0), input_error);
}

TEST_CASE("compact models reload bit for bit and predict identically") {
  const std::string dir = fresh_dir("model_compact").string();
  const NetworkSpec net = resnet_toy(10);
  const ModelParams model = init_parameters(net, AuxMode::adaptive, 23);
  rng gen(5);
  const Tensor x = random_tensor({3, 3, 32, 32}, gen);

  for (int exit_layer : {2, static_cast<int>(net.layers.size()) - 1}) {
    CAPTURE(exit_layer);
    const std::string path =
        dir + "/exit" + std::to_string(exit_layer) + ".nfcm";
    save_compact(model, exit_layer, path);
    const CompactModel compact = load_compact(path);

    CHECK(compact.exit_layer == exit_layer);
    CHECK(static_cast<int>(compact.net.layers.size()) == exit_layer + 1);
    check_same_params(model.classifier_at(exit_layer), compact.classifier);
    REQUIRE(compact.units.size() == static_cast<size_t>(exit_layer) + 1);
    for (int i = 0; i <= exit_layer; ++i) {
      const auto at = model.units[static_cast<size_t>(i)].tensors();
      const auto bt = compact.units[static_cast<size_t>(i)].tensors();
      REQUIRE(at.size() == bt.size());
      for (size_t t = 0; t < at.size(); ++t) check_same_tensor(*at[t], *bt[t]);
    }

    // Same logits as running the source model's prefix by hand.
    Tensor h = x;
    for (int i = 0; i <= exit_layer; ++i) {
      UnitCtx ctx;
      h = unit_forward(model.units[static_cast<size_t>(i)], std::move(h),
                       &ctx);
    }
    AuxCtx ctx;
    const Tensor want =
        aux_forward(model.classifier_at(exit_layer), h, &ctx);
    const Tensor got = compact_forward(compact, x);
    check_same_tensor(want, got);
  }

  // The terminal exit reuses the pooled head: no conv, filters 0.
  const CompactModel last =
      load_compact(dir + "/exit" +
                   std::to_string(net.layers.size() - 1) + ".nfcm");
  CHECK(last.classifier.spec.filters == 0);

  SUBCASE("input shape is validated") {
    const CompactModel compact = load_compact(dir + "/exit2.nfcm");
    CHECK_THROWS_AS(compact_forward(compact, Tensor({3, 3, 16, 16})),
                    const input_error&);
  }
  SUBCASE("exit index is validated") {
    CHECK_THROWS_AS(save_compact(model, -1, dir + "/bad.nfcm"),
                    const input_error&);
    CHECK_THROWS_AS(save_compact(model, 99, dir + "/bad.nfcm"),
                    const input_error&);
  }
}

TEST_CASE("an early exit shrinks the file several fold") {
  const std::string dir = fresh_dir("model_ratio").string();
  const ModelParams model = init_parameters(vgg8(10), AuxMode::adaptive, 3);
  save_checkpoint(model, dir + "/full.nfcm");
  save_compact(model, 2, dir + "/compact.nfcm");
  const double ratio =
      static_cast<double>(file_bytes(dir + "/full.nfcm")) /
      static_cast<double>(file_bytes(dir + "/compact.nfcm"));
  CHECK(ratio >= 3.0);
}

TEST_CASE("damaged or mismatched model files are rejected") {
  const std::string dir = fresh_dir("model_damage").string();
  const ModelParams model = init_parameters(vgg_toy6(10), AuxMode::adaptive, 9);
  const std::string ckpt = dir + "/model.nfcm";
  const std::string compact = dir + "/compact.nfcm";
  save_checkpoint(model, ckpt);
  save_compact(model, 1, compact);

  SUBCASE("flipped payload byte fails the checksum") {
    flip_byte(ckpt, file_bytes(ckpt) / 2);
    try {
      load_checkpoint(ckpt);
      FAIL("expected input_error");
    } catch (const input_error& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }
  SUBCASE("truncation is caught") {
    std::filesystem::resize_file(ckpt, file_bytes(ckpt) - 100);
    CHECK_THROWS_AS(load_checkpoint(ckpt), const input_error&);
  }
  SUBCASE("wrong flavor is named") {
    try {
      load_checkpoint(compact);
      FAIL("expected input_error");
    } catch (const input_error& e) {
      CHECK(std::string(e.what()).find("compact model") != std::string::npos);
    }
    CHECK_THROWS_AS(load_compact(ckpt), const input_error&);
  }
  SUBCASE("not a container") {
    std::ofstream(dir + "/junk.nfcm") << "junk bytes, not a model";
    CHECK_THROWS_AS(load_checkpoint(dir + "/junk.nfcm"), const input_error&);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir + "/absent.nfcm"), const input_error&);
  }
}
