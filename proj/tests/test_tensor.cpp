#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "errors.hpp"
#include "support/test_util.hpp"
#include "tensor.hpp"

using namespace neuroflux;

TEST_CASE("tensor shape and element count stay consistent") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.bytes() == 96);
  CHECK(t.rank() == 3);
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);

  CHECK_THROWS_AS(Tensor({2, 0, 4}), input_error);
  CHECK_THROWS_AS(Tensor({-1}), input_error);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), input_error);
}

TEST_CASE("meter counts exactly four bytes per element") {
  MemoryMeter m;
  auto [value, peak] = meter_scope(m, [] {
    Tensor t({10});
    return t.numel();
  });
  CHECK(value == 10);
  CHECK(peak == 40);  // one 10-element tensor, nothing else
  CHECK(m.live_bytes() == 0);
  CHECK(m.peak_bytes() == 40);
}

TEST_CASE("live bytes return to the pre-scope value after every scope") {
  MemoryMeter m;
  Tensor outside({5});
  outside.register_with(m);
  CHECK(m.live_bytes() == 20);

  auto [r, peak] = meter_scope(m, [] {
    Tensor a({100});
    Tensor b({50});
    return a.numel() + b.numel();
  });
  CHECK(r == 150);
  CHECK(peak == 20 + 400 + 200);
  CHECK(m.live_bytes() == 20);

  outside.release_meter();
  CHECK(m.live_bytes() == 0);
}

TEST_CASE("peak is monotone and reflects simultaneous liveness only") {
  MemoryMeter m;
  auto [r, peak] = meter_scope(m, [] {
    int64_t total = 0;
    {
      Tensor a({25});
      total += a.numel();
    }
    {
      Tensor b({15});
      total += b.numel();
    }
    return total;
  });
  CHECK(r == 40);
  CHECK(peak == 100);  // 25 then 15 elements, never overlapping
  CHECK(m.peak_bytes() == 100);
}

TEST_CASE("moves transfer the charge, copies add a new one") {
  MemoryMeter m;
  {
    meter_guard g(m);
    Tensor a({8});
    CHECK(m.live_bytes() == 32);
    Tensor b(std::move(a));
    CHECK(m.live_bytes() == 32);
    Tensor c(b);
    CHECK(m.live_bytes() == 64);
  }
  CHECK(m.live_bytes() == 0);
}

TEST_CASE("explicit residency registration models load and unload") {
  MemoryMeter m;
  Tensor params({100});  // created unmetered, like stored weights
  CHECK(m.live_bytes() == 0);
  params.register_with(m);
  CHECK(m.live_bytes() == 400);
  params.register_with(m);  // idempotent
  CHECK(m.live_bytes() == 400);
  params.release_meter();
  CHECK(m.live_bytes() == 0);
  CHECK(params.numel() == 100);  // values untouched by accounting
}

TEST_CASE("reshape keeps storage and charge") {
  MemoryMeter m;
  meter_guard g(m);
  Tensor t({4, 6});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(i);
  Tensor r = std::move(t).reshaped({2, 12});
  CHECK(m.live_bytes() == 96);
  CHECK(r.dim(0) == 2);
  CHECK(r[13] == 13.0f);
  CHECK_THROWS_AS(std::move(r).reshaped({5, 5}), input_error);
}

TEST_CASE("nested windows observe their own spans") {
  MemoryMeter m;
  meter_guard g(m);
  int outer = m.open_window();
  Tensor a({10});
  int inner = m.open_window();
  { Tensor b({30}); }
  CHECK(m.window_peak(inner) == 160);  // a + b live together
  m.close_window(inner);
  CHECK(m.window_peak(outer) == 160);
  m.close_window(outer);
}

TEST_CASE("tensor_alloc registers with the given meter regardless of guards") {
  MemoryMeter inner;
  MemoryMeter active;
  meter_guard g(active);
  Tensor t = tensor_alloc({7}, inner);
  CHECK(inner.live_bytes() == 28);
  CHECK(active.live_bytes() == 0);
}
