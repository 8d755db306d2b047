#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <vector>

#include "arch.hpp"
#include "dataset.hpp"
#include "doctest.h"
#include "errors.hpp"
#include "exit_selector.hpp"
#include "model_io.hpp"
#include "rng.hpp"
#include "support/test_util.hpp"
#include "tensor.hpp"

using namespace neuroflux;

TEST_CASE("choose_exit picks the earliest layer inside the tolerance band") {
  // A typical depth/accuracy profile: fast climb, a plateau with a bump at
  // layer 4, then a slow decline.
  const std::vector<double> acc = {0.4629, 0.5106, 0.6060, 0.6401, 0.6507,
                                   0.6480, 0.6486, 0.6425, 0.6390, 0.6382,
                                   0.6360, 0.6348, 0.6365};

  CHECK(choose_exit(acc, 0.0) == 4);     // exact maximum
  CHECK(choose_exit(acc, 0.02) == 3);    // 0.6401 >= 0.6507 - 0.02
  CHECK(choose_exit(acc, 0.05) == 2);    // 0.6060 >= 0.6507 - 0.05
  CHECK(choose_exit(acc, 0.20) == 0);    // everything qualifies
  CHECK(choose_exit({0.5}, 0.0) == 0);

  SUBCASE("ties resolve to the earliest layer") {
    CHECK(choose_exit({0.3, 0.7, 0.7, 0.7}, 0.0) == 1);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(choose_exit({}, 0.0), input_error);
    CHECK_THROWS_AS(choose_exit(acc, -0.1), input_error);
    CHECK_THROWS_AS(choose_exit({0.5, std::nan("")}, 0.0), input_error);
  }
}

TEST_CASE("evaluate_exits scores every classifier in one backbone pass") {
  const NetworkSpec net = vgg_toy6(4);
  ModelParams model = init_parameters(net, AuxMode::adaptive, 3);
  const LabeledDataset data = synth_dataset(4, 12, {3, 16, 16}, 21);
  const int layers = static_cast<int>(net.layers.size());

  ExitReport rep = evaluate_exits(model, data, 16);
  REQUIRE(rep.layers.size() == static_cast<size_t>(layers));
  for (int i = 0; i < layers; ++i) CHECK(rep.layers[static_cast<size_t>(i)] == i);
  CHECK(rep.accuracy.size() == static_cast<size_t>(layers));
  for (double a : rep.accuracy) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  // One backbone traversal: exactly samples x layers unit evaluations.
  CHECK(rep.unit_evaluations ==
        static_cast<int64_t>(data.size()) * layers);
  CHECK(rep.peak_bytes > 0);

  SUBCASE("deterministic") {
    ExitReport again = evaluate_exits(model, data, 16);
    CHECK(again.accuracy == rep.accuracy);
    CHECK(again.peak_bytes == rep.peak_bytes);
  }
  SUBCASE("batch grouping does not change the scores") {
    ExitReport odd = evaluate_exits(model, data, 7);
    CHECK(odd.accuracy == rep.accuracy);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(evaluate_exits(model, data, 0), input_error);
    LabeledDataset empty;
    CHECK_THROWS_AS(evaluate_exits(model, empty, 16), input_error);
  }
  SUBCASE("a model without per-layer classifiers scores only its head") {
    ModelParams bare =
        init_parameters(net, AuxMode::adaptive, 3, /*include_aux=*/false);
    ExitReport head_only = evaluate_exits(bare, data, 16);
    REQUIRE(head_only.layers == std::vector<int>{layers - 1});
    REQUIRE(head_only.accuracy.size() == 1);
    // Scoring the head still walks the whole backbone.
    CHECK(head_only.unit_evaluations ==
          static_cast<int64_t>(data.size()) * layers);
    CHECK(head_only.accuracy[0] == rep.accuracy.back());
  }
}

TEST_CASE("chosen exit exports a compact model that reproduces its score") {
  const NetworkSpec net = vgg_toy6(4);
  ModelParams model = init_parameters(net, AuxMode::adaptive, 9);
  const LabeledDataset data = synth_dataset(4, 10, {3, 16, 16}, 31);

  ExitReport rep = evaluate_exits(model, data, 16);
  const int exit_layer = choose_exit(rep.accuracy, 0.01);

  auto dir = nftest::fresh_dir("exit_export");
  const std::string path = (dir / "compact.nfcm").string();
  save_compact(model, exit_layer, path);
  CompactModel compact = load_compact(path);

  // Score the deployable artifact directly and compare with the report.
  Tensor logits = compact_forward(compact, data.images);
  int64_t correct = 0;
  const int k = logits.dim(1);
  for (int i = 0; i < data.size(); ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (row[c] > row[best]) best = c;
    if (best == data.labels[static_cast<size_t>(i)]) ++correct;
  }
  CHECK(static_cast<double>(correct) / data.size() ==
        rep.accuracy[static_cast<size_t>(exit_layer)]);

  SUBCASE("throughput comes out positive and finite") {
    Tensor one({1, 3, 16, 16});
    for (int64_t i = 0; i < one.numel(); ++i)
      one[i] = data.images[i];
    const double rate = inference_throughput(compact, one, 5);
    CHECK(rate > 0.0);
    CHECK(std::isfinite(rate));
    CHECK_THROWS_AS(inference_throughput(compact, one, 0), input_error);
  }
}
