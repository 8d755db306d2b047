#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "arch.hpp"
#include "errors.hpp"
#include "support/test_util.hpp"

using namespace neuroflux;
using nftest::fd_check;
using nftest::project;
using nftest::random_tensor;

namespace {

// Paper-scale VGG silhouette: widths span 64..512 with three downsamples.
NetworkSpec wide_vgg() {
  NetworkSpec n;
  n.name = "wide";
  n.input = {3, 32, 32};
  auto stage = [](int in, int out, bool ds) {
    return LayerSpec{LayerKind::conv_stage, in, out, ds};
  };
  n.layers = {stage(3, 64, false),   stage(64, 64, true),
              stage(64, 128, false), stage(128, 128, true),
              stage(128, 256, false), stage(256, 512, true),
              stage(512, 512, false)};
  n.num_classes = 10;
  return n;
}

}  // namespace

TEST_CASE("width-adaptive filter rule splits at the first downsample") {
  NetworkSpec n = wide_vgg();
  // min width 64 -> 32 filters before the first downsampling unit,
  // max width 512 -> 256 from that unit onward
  CHECK(adaptive_filter_count(n, 0) == 32);
  CHECK(adaptive_filter_count(n, 1) == 256);  // its own downsample puts it later
  CHECK(adaptive_filter_count(n, 2) == 256);
  CHECK(adaptive_filter_count(n, 5) == 256);
  CHECK_THROWS_AS(adaptive_filter_count(n, 6), input_error);  // final layer
  CHECK_THROWS_AS(adaptive_filter_count(n, -1), input_error);

  AuxiliarySpec a = build_auxiliary(n, 0, AuxMode::adaptive);
  CHECK(a.filters == 32);
  CHECK(a.classifier_inputs == 32 * 4);
  CHECK(a.num_classes == 10);

  AuxiliarySpec c = build_auxiliary(n, 0, AuxMode::classic);
  CHECK(c.filters == 256);
  AuxiliarySpec c5 = build_auxiliary(n, 5, AuxMode::classic);
  CHECK(c5.filters == 256);
}

TEST_CASE("terminal head pools the final activation directly") {
  NetworkSpec n = wide_vgg();
  AuxiliarySpec h = terminal_head_spec(n);
  CHECK(h.filters == 0);
  CHECK(h.classifier_inputs == 512 * 4);
  CHECK(h.num_classes == 10);
}

TEST_CASE("parameter_count matches hand arithmetic") {
  NetworkSpec single;
  single.name = "one";
  single.input = {3, 8, 8};
  single.layers = {LayerSpec{LayerKind::conv_stage, 3, 64, false}};
  single.num_classes = 10;
  CHECK(parameter_count(single) == 1792);  // 3*64*9 + 64

  NetworkSpec v = vgg8(8);
  CHECK(parameter_count(v) == 434592);
  CHECK(parameter_count(v, 0) == 896);
  // aux at layer 0: 16 filters (min width 32), conv 32*16*9+16, fc 64*8+8
  CHECK(parameter_count(v, 0, 0) == 896 + 4624 + 520);
  // whole backbone plus terminal head
  CHECK(parameter_count(v, 6, 6) == 434592 + 4104);
  CHECK_THROWS_AS(parameter_count(v, 7), input_error);
  CHECK_THROWS_AS(parameter_count(v, 2, 3), input_error);
}

TEST_CASE("activation shapes walk the downsampling chain") {
  NetworkSpec v = vgg8(8);
  Shape3 s = activation_shape(v, -1);
  CHECK(s.c == 3);
  CHECK(s.h == 32);
  s = activation_shape(v, 0);
  CHECK(s.c == 32);
  CHECK(s.h == 32);
  s = activation_shape(v, 1);
  CHECK(s.h == 16);
  s = activation_shape(v, 6);
  CHECK(s.c == 128);
  CHECK(s.h == 4);

  // strided residual halves with ceil semantics
  NetworkSpec r = resnet_toy(10);
  CHECK(activation_shape(r, 2).h == 16);
  CHECK(activation_shape(r, 4).h == 8);
}

TEST_CASE("validate rejects broken specs") {
  NetworkSpec n = vgg8(8);
  CHECK_NOTHROW(validate(n));
  n.layers[3].in_channels = 99;
  CHECK_THROWS_AS(validate(n), input_error);

  NetworkSpec tiny = vgg8(8);
  tiny.input = {3, 4, 4};  // three downsamples exhaust 4x4
  CHECK_THROWS_AS(validate(tiny), input_error);

  NetworkSpec one_class = vgg8(1);
  CHECK_THROWS_AS(validate(one_class), input_error);
}

TEST_CASE("initialization is seeded and follows the fan-in variance law") {
  NetworkSpec v = vgg8(8);
  ModelParams a = init_parameters(v, AuxMode::adaptive, 42);
  ModelParams b = init_parameters(v, AuxMode::adaptive, 42);
  ModelParams c = init_parameters(v, AuxMode::adaptive, 43);
  CHECK(a.units.size() == 7);
  CHECK(a.aux.size() == 6);
  REQUIRE(a.units[3].conv1.w.numel() == b.units[3].conv1.w.numel());
  bool identical = true, differs = false;
  for (int64_t i = 0; i < a.units[3].conv1.w.numel(); ++i) {
    identical = identical && a.units[3].conv1.w[i] == b.units[3].conv1.w[i];
    differs = differs || a.units[3].conv1.w[i] != c.units[3].conv1.w[i];
  }
  CHECK(identical);
  CHECK(differs);

  // empirical variance of a big filter bank vs 2/fan_in
  const Tensor& w = a.units[3].conv1.w;  // 64x64x3x3, fan_in 576
  double mean = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) mean += w[i];
  mean /= static_cast<double>(w.numel());
  double var = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i)
    var += (w[i] - mean) * (w[i] - mean);
  var /= static_cast<double>(w.numel());
  double want = 2.0 / 576.0;
  CHECK(var > want * 0.8);
  CHECK(var < want * 1.2);

  // biases start at zero
  for (int64_t i = 0; i < a.units[0].conv1.b.numel(); ++i)
    CHECK(a.units[0].conv1.b[i] == 0.0f);
}

TEST_CASE("conv stage forward applies conv, pool, relu in order") {
  rng r(3);
  LayerSpec spec{LayerKind::conv_stage, 2, 3, true};
  UnitParams p = init_unit(spec, 7);
  Tensor x = random_tensor({2, 2, 8, 8}, r);
  UnitCtx ctx;
  Tensor y = unit_forward(p, x, &ctx);
  REQUIRE(y.shape() == std::vector<int>{2, 3, 4, 4});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] >= 0.0f);
  // downsampled output matches pool of the raw conv
  Tensor conv = conv2d_forward(ctx.x, p.conv1.w, p.conv1.b, 1, 1);
  auto pooled = pool_forward(conv, PoolKind::max, 2, 2, 2);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y[i] == std::max(0.0f, pooled.output[i]));
}

namespace {

// Finite differences are only well defined away from relu kinks and pooling
// ties, so redraw until every pre-activation clears a margin the 1e-3 probes
// cannot cross.
bool kink_free(const UnitParams& p, const Tensor& x, const UnitCtx& ctx,
               float margin) {
  auto clear = [margin](const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
      if (std::abs(t[i]) < margin) return false;
    return true;
  };
  if (!clear(ctx.pre_relu)) return false;
  if (p.spec.kind == LayerKind::residual_block && !clear(ctx.h1_pre))
    return false;
  if (p.spec.kind == LayerKind::conv_stage && p.spec.downsample) {
    Tensor conv = conv2d_forward(x, p.conv1.w, p.conv1.b, 1, 1);
    const int c = conv.dim(1), h = conv.dim(2), w = conv.dim(3);
    for (int n = 0; n < conv.dim(0); ++n)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i + 1 < h; i += 2)
          for (int j = 0; j + 1 < w; j += 2) {
            float v[4] = {conv[((n * c + ch) * h + i) * w + j],
                          conv[((n * c + ch) * h + i) * w + j + 1],
                          conv[((n * c + ch) * h + i + 1) * w + j],
                          conv[((n * c + ch) * h + i + 1) * w + j + 1]};
            std::sort(v, v + 4);
            if (v[3] - v[2] < margin) return false;
          }
  }
  return true;
}

}  // namespace

TEST_CASE("unit gradients match finite differences") {
  struct Case {
    LayerSpec spec;
    const char* tag;
  };
  Case cases[] = {
      {{LayerKind::conv_stage, 3, 4, false}, "plain stage"},
      {{LayerKind::conv_stage, 3, 4, true}, "downsampling stage"},
      {{LayerKind::residual_block, 4, 4, false}, "identity residual"},
      {{LayerKind::residual_block, 3, 5, false}, "projected residual"},
      {{LayerKind::residual_block, 4, 6, true}, "strided residual"},
  };
  for (const auto& cs : cases) {
    INFO(cs.tag);
    UnitParams p;
    Tensor x;
    UnitCtx ctx;
    bool found = false;
    for (uint64_t seed = 1; seed <= 400 && !found; ++seed) {
      p = init_unit(cs.spec, seed);
      rng rx(seed * 31 + 5);
      x = random_tensor({1, cs.spec.in_channels, 6, 6}, rx, -2.0f, 2.0f);
      ctx = UnitCtx{};
      unit_forward(p, Tensor(x), &ctx);
      found = kink_free(p, x, ctx, 0.02f);
    }
    REQUIRE_MESSAGE(found, "no kink-free draw for " << cs.tag);

    Tensor y = unit_forward(p, Tensor(x), &ctx);
    rng rd(991);
    Tensor dir = random_tensor(y.shape(), rd);
    auto loss = [&] { return project(unit_forward(p, Tensor(x), nullptr), dir); };
    UnitGrads g = unit_backward(p, ctx, dir, true);
    auto params = p.tensors();
    REQUIRE(params.size() == g.tensors.size());
    for (size_t i = 0; i < params.size(); ++i) {
      auto res = fd_check(*params[i], g.tensors[i], loss, 1e-3, 40, &rd);
      CHECK_MESSAGE(res.max_rel_err < 1e-3, cs.tag << " param " << i);
    }
    auto xres = fd_check(x, g.grad_input, loss, 1e-3, 40, &rd);
    CHECK_MESSAGE(xres.max_rel_err < 1e-3, cs.tag << " input");
  }
}

TEST_CASE("auxiliary gradients match finite differences") {
  rng r(29);
  for (int filters : {5, 0}) {
    AuxiliarySpec spec;
    spec.filters = filters;
    spec.pool_h = 2;
    spec.pool_w = 2;
    spec.classifier_inputs = (filters > 0 ? filters : 4) * 4;
    spec.num_classes = 3;
    AuxParams p = init_aux(spec, 4, 5);
    Tensor x = random_tensor({3, 4, 5, 5}, r);
    AuxCtx ctx;
    Tensor logits = aux_forward(p, x, &ctx);
    REQUIRE(logits.shape() == std::vector<int>{3, 3});
    Tensor dir = random_tensor({3, 3}, r);
    auto loss = [&] {
      return project(aux_forward(p, x, nullptr), dir);
    };
    AuxGrads g = aux_backward(p, ctx, x, dir);
    auto params = p.tensors();
    REQUIRE(params.size() == g.tensors.size());
    for (size_t i = 0; i < params.size(); ++i)
      CHECK(fd_check(*params[i], g.tensors[i], loss, 1e-3, 60, &r).max_rel_err <
            1e-3);
    CHECK(fd_check(x, g.grad_input, loss, 1e-3, 60, &r).max_rel_err < 1e-3);
  }
}

TEST_CASE("builtin networks validate and stay distinct") {
  for (const char* name : {"vgg8", "resnet_toy", "vgg_toy6"}) {
    NetworkSpec n = network_by_name(name, 10);
    CHECK_NOTHROW(validate(n));
    CHECK(n.name == name);
  }
  CHECK(vgg_toy6(10).layers.size() == 5);
  CHECK_THROWS_AS(network_by_name("vgg99", 10), input_error);
}
