#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "errors.hpp"
#include "ops.hpp"
#include "support/test_util.hpp"

using namespace neuroflux;
using nftest::conv2d_oracle;
using nftest::fd_check;
using nftest::project;
using nftest::random_tensor;

TEST_CASE("conv2d matches the direct-loop reference on random shapes") {
  rng r(1234);
  struct Case { int n, c, h, w, k, kh, stride, pad; };
  const Case cases[] = {
      {2, 3, 8, 8, 4, 3, 1, 1}, {1, 1, 5, 7, 2, 3, 1, 0},
      {3, 4, 9, 9, 5, 3, 2, 1}, {2, 2, 6, 6, 3, 1, 1, 0},
      {1, 5, 4, 4, 7, 2, 2, 0}, {2, 3, 11, 7, 4, 5, 2, 2},
  };
  for (const auto& cs : cases) {
    Tensor x = random_tensor({cs.n, cs.c, cs.h, cs.w}, r);
    Tensor w = random_tensor({cs.k, cs.c, cs.kh, cs.kh}, r);
    Tensor b = random_tensor({cs.k}, r);
    Tensor got = conv2d_forward(x, w, b, cs.stride, cs.pad);
    Tensor want = conv2d_oracle(x, w, b, cs.stride, cs.pad);
    REQUIRE(got.shape() == want.shape());
    for (int64_t i = 0; i < got.numel(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));
  }
}

TEST_CASE("1x1 all-ones single-filter conv reduces to a channel sum") {
  rng r(77);
  Tensor x = random_tensor({2, 4, 5, 5}, r);
  Tensor w({1, 4, 1, 1}, std::vector<float>(4, 1.0f));
  Tensor b({1}, {0.0f});
  Tensor y = conv2d_forward(x, w, b, 1, 0);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 25; ++i) {
      float want = 0.0f;
      for (int c = 0; c < 4; ++c) want += x[(n * 4 + c) * 25 + i];
      CHECK(y[n * 25 + i] == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("2x2 average pool over a 4x4 ramp") {
  std::vector<float> vals(16);
  for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  Tensor x({1, 1, 4, 4}, std::move(vals));
  auto [y, ctx] = pool_forward(x, PoolKind::avg, 2, 2, 2);
  REQUIRE(y.numel() == 4);
  CHECK(y[0] == 3.5f);
  CHECK(y[1] == 5.5f);
  CHECK(y[2] == 11.5f);
  CHECK(y[3] == 13.5f);
}

TEST_CASE("max pool tracks argmax and routes gradient to it") {
  Tensor x({1, 1, 2, 2}, {1.0f, 9.0f, 3.0f, 2.0f});
  auto [y, ctx] = pool_forward(x, PoolKind::max, 2, 2, 2);
  CHECK(y[0] == 9.0f);
  Tensor gy({1, 1, 1, 1}, {5.0f});
  Tensor gx = pool_backward(ctx, gy);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[1] == 5.0f);
  CHECK(gx[2] == 0.0f);
  CHECK(gx[3] == 0.0f);
}

TEST_CASE("adaptive average pooling covers ragged regions exactly once") {
  rng r(5);
  Tensor x = random_tensor({2, 3, 5, 7}, r);
  Tensor y = adaptive_avg_pool_forward(x, 2, 2);
  REQUIRE(y.shape() == std::vector<int>{2, 3, 2, 2});
  // region (0,0) is rows [0,3), cols [0,4)
  double acc = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 4; ++b) acc += x[a * 7 + b];
  CHECK(y[0] == doctest::Approx(acc / 12.0).epsilon(1e-5));
  // gradient of the mean distributes uniformly and conserves mass
  Tensor gy({2, 3, 2, 2});
  for (int64_t i = 0; i < gy.numel(); ++i) gy[i] = 1.0f;
  Tensor gx = adaptive_avg_pool_backward({2, 3, 5, 7}, gy);
  double total = 0.0;
  for (int64_t i = 0; i < gx.numel(); ++i) total += gx[i];
  CHECK(total == doctest::Approx(2 * 3 * 4.0).epsilon(1e-5));
}

TEST_CASE("uniform logits give ln(C) cross-entropy") {
  for (int c : {2, 10, 100}) {
    Tensor logits({3, c});
    for (int64_t i = 0; i < logits.numel(); ++i) logits[i] = 0.37f;
    std::vector<int32_t> labels = {0, static_cast<int32_t>(c / 2),
                                   static_cast<int32_t>(c - 1)};
    auto sm = softmax_cross_entropy(logits, labels);
    CHECK(std::abs(sm.loss - std::log(static_cast<double>(c))) < 1e-6);
  }
}

TEST_CASE("cross-entropy of a pinned three-logit row") {
  Tensor logits({1, 3}, {1.0f, 2.0f, 3.0f});
  auto sm = softmax_cross_entropy(logits, {2});
  double want = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  CHECK(sm.loss == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("softmax gradient rows sum to zero") {
  rng r(42);
  Tensor logits = random_tensor({16, 10}, r, -4.0f, 4.0f);
  std::vector<int32_t> labels;
  for (int i = 0; i < 16; ++i)
    labels.push_back(static_cast<int32_t>(r.next_index(10)));
  auto sm = softmax_cross_entropy(logits, labels);
  for (int n = 0; n < 16; ++n) {
    double s = 0.0;
    for (int c = 0; c < 10; ++c) s += sm.grad[n * 10 + c];
    CHECK(std::abs(s) < 1e-6);
  }
}

TEST_CASE("softmax rejects out-of-range labels") {
  Tensor logits({2, 4});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 4}), input_error);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1, 0}), input_error);
}

TEST_CASE("sgd momentum follows the update rule exactly") {
  Tensor p({1}, {1.0f});
  Tensor v({1}, {0.0f});
  Tensor g1({1}, {0.5f});
  sgd_step(p, g1, v, 0.1f, 0.9f);
  CHECK(v[0] == doctest::Approx(0.5f));
  CHECK(p[0] == doctest::Approx(0.95f));
  Tensor g2({1}, {0.25f});
  sgd_step(p, g2, v, 0.1f, 0.9f);
  CHECK(v[0] == doctest::Approx(0.7f));
  CHECK(p[0] == doctest::Approx(0.88f));
}

TEST_CASE("conv2d gradients match central differences") {
  rng r(99);
  Tensor x = random_tensor({2, 3, 6, 6}, r);
  Tensor w = random_tensor({4, 3, 3, 3}, r, -0.5f, 0.5f);
  Tensor b = random_tensor({4}, r);
  Tensor dir = random_tensor({2, 4, 6, 6}, r);
  auto loss = [&] { return project(conv2d_forward(x, w, b, 1, 1), dir); };
  ConvGrads g = conv2d_backward(x, w, dir, 1, 1);

  auto wres = fd_check(w, g.grad_weight, loss);
  CHECK(wres.max_rel_err < 1e-3);
  auto bres = fd_check(b, g.grad_bias, loss);
  CHECK(bres.max_rel_err < 1e-3);
  auto xres = fd_check(x, g.grad_input, loss, 1e-3, 60, &r);
  CHECK(xres.max_rel_err < 1e-3);
}

TEST_CASE("strided conv gradients match central differences") {
  rng r(7);
  Tensor x = random_tensor({1, 2, 7, 7}, r);
  Tensor w = random_tensor({3, 2, 3, 3}, r, -0.5f, 0.5f);
  Tensor b = random_tensor({3}, r);
  Tensor y = conv2d_forward(x, w, b, 2, 1);
  Tensor dir = random_tensor(y.shape(), r);
  auto loss = [&] { return project(conv2d_forward(x, w, b, 2, 1), dir); };
  ConvGrads g = conv2d_backward(x, w, dir, 2, 1);
  CHECK(fd_check(w, g.grad_weight, loss).max_rel_err < 1e-3);
  CHECK(fd_check(x, g.grad_input, loss, 1e-3, 40, &r).max_rel_err < 1e-3);
}

TEST_CASE("linear gradients match central differences") {
  rng r(11);
  Tensor x = random_tensor({5, 12}, r);
  Tensor w = random_tensor({7, 12}, r, -0.5f, 0.5f);
  Tensor b = random_tensor({7}, r);
  Tensor dir = random_tensor({5, 7}, r);
  auto loss = [&] { return project(linear_forward(x, w, b), dir); };
  LinearGrads g = linear_backward(x, w, dir);
  CHECK(fd_check(w, g.grad_weight, loss).max_rel_err < 1e-3);
  CHECK(fd_check(b, g.grad_bias, loss).max_rel_err < 1e-3);
  CHECK(fd_check(x, g.grad_input, loss).max_rel_err < 1e-3);
}

TEST_CASE("pool and relu backward agree with finite differences") {
  rng r(23);
  // keep values away from tie/kink points so FD is well defined
  Tensor x = random_tensor({2, 2, 6, 6}, r, 0.1f, 2.0f);
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] += 0.01f * static_cast<float>(i % 97);

  auto [ym, ctxm] = pool_forward(x, PoolKind::max, 2, 2, 2);
  Tensor dirm = random_tensor(ym.shape(), r);
  auto loss_max = [&] {
    auto p = pool_forward(x, PoolKind::max, 2, 2, 2);
    return project(p.output, dirm);
  };
  Tensor gm = pool_backward(ctxm, dirm);
  CHECK(fd_check(x, gm, loss_max, 5e-4).max_rel_err < 1e-3);

  auto [ya, ctxa] = pool_forward(x, PoolKind::avg, 2, 2, 2);
  Tensor dira = random_tensor(ya.shape(), r);
  auto loss_avg = [&] {
    auto p = pool_forward(x, PoolKind::avg, 2, 2, 2);
    return project(p.output, dira);
  };
  Tensor ga = pool_backward(ctxa, dira);
  CHECK(fd_check(x, ga, loss_avg).max_rel_err < 1e-3);

  Tensor xr = random_tensor({3, 40}, r);
  for (int64_t i = 0; i < xr.numel(); ++i)
    if (std::abs(xr[i]) < 0.05f) xr[i] = 0.2f;
  Tensor dirr = random_tensor({3, 40}, r);
  auto loss_relu = [&] { return project(relu_forward(xr), dirr); };
  Tensor gr = relu_backward(xr, dirr);
  CHECK(fd_check(xr, gr, loss_relu).max_rel_err < 1e-3);
}

TEST_CASE("softmax gradient matches finite differences of the loss") {
  rng r(31);
  Tensor logits = random_tensor({6, 5}, r, -2.0f, 2.0f);
  std::vector<int32_t> labels;
  for (int i = 0; i < 6; ++i)
    labels.push_back(static_cast<int32_t>(r.next_index(5)));
  auto loss = [&] {
    return static_cast<double>(softmax_cross_entropy(logits, labels).loss);
  };
  auto sm = softmax_cross_entropy(logits, labels);
  CHECK(fd_check(logits, sm.grad, loss).max_rel_err < 1e-3);
}

TEST_CASE("adaptive pool gradient matches finite differences") {
  rng r(13);
  Tensor x = random_tensor({2, 3, 5, 7}, r);
  Tensor dir = random_tensor({2, 3, 2, 2}, r);
  auto loss = [&] { return project(adaptive_avg_pool_forward(x, 2, 2), dir); };
  Tensor gx = adaptive_avg_pool_backward({2, 3, 5, 7}, dir);
  CHECK(fd_check(x, gx, loss).max_rel_err < 1e-3);
}

TEST_CASE("kernels are bit-deterministic across repeated calls") {
  rng r(3);
  Tensor x = random_tensor({2, 3, 9, 9}, r);
  Tensor w = random_tensor({5, 3, 3, 3}, r);
  Tensor b = random_tensor({5}, r);
  Tensor y1 = conv2d_forward(x, w, b, 1, 1);
  Tensor y2 = conv2d_forward(x, w, b, 1, 1);
  REQUIRE(y1.numel() == y2.numel());
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("conv results are identical with and without a shared workspace") {
  rng r(17);
  Tensor x = random_tensor({3, 4, 7, 7}, r);
  Tensor w = random_tensor({6, 4, 3, 3}, r);
  Tensor b = random_tensor({6}, r);
  Tensor scratch({static_cast<int>(conv_scratch_elems(4, 3, 3, 7, 7))});

  Tensor plain = conv2d_forward(x, w, b, 1, 1);
  Tensor shared = conv2d_forward(x, w, b, 1, 1, &scratch);
  REQUIRE(plain.numel() == shared.numel());
  for (int64_t i = 0; i < plain.numel(); ++i) CHECK(plain[i] == shared[i]);

  Tensor gy = random_tensor(plain.shape(), r);
  ConvGrads g1 = conv2d_backward(x, w, gy, 1, 1, true);
  Tensor gw = Tensor(w.shape()), gb = Tensor({6});
  Tensor gx = conv2d_backward_acc(x, w, gy, 1, 1, true, gw, gb, &scratch);
  for (int64_t i = 0; i < gw.numel(); ++i) CHECK(gw[i] == g1.grad_weight[i]);
  for (int64_t i = 0; i < gb.numel(); ++i) CHECK(gb[i] == g1.grad_bias[i]);
  for (int64_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == g1.grad_input[i]);

  Tensor tiny({4});
  CHECK_THROWS_AS(conv2d_forward(x, w, b, 1, 1, &tiny), input_error);
}
