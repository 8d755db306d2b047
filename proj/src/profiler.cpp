#include "profiler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "rng.hpp"
#include "trainer.hpp"

namespace neuroflux {

namespace {

constexpr int kSchemaVersion = 1;

// Exact fit when every point sits on one line with an integer slope. Peak
// measurements are sums of 4-byte tensors whose element counts are affine in
// the batch, so this is the common case, and it keeps budget arithmetic
// exact instead of within OLS rounding.
bool exact_integer_fit(const std::vector<std::pair<int, uint64_t>>& pts,
                       LinearModel* out) {
  const int64_t x0 = pts.front().first;
  const auto y0 = static_cast<int64_t>(pts.front().second);
  const int64_t dx = pts.back().first - x0;
  const int64_t dy = static_cast<int64_t>(pts.back().second) - y0;
  if (dx == 0 || dy % dx != 0) return false;
  const int64_t slope = dy / dx;
  for (const auto& [x, y] : pts) {
    if (static_cast<int64_t>(y) - y0 != slope * (x - x0)) return false;
  }
  out->slope = static_cast<double>(slope);
  out->intercept = static_cast<double>(y0 - slope * x0);
  out->r2 = 1.0;
  return true;
}

void fill_uniform(Tensor& t, rng& g) {
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = g.uniform(-1.0f, 1.0f);
}

std::vector<int32_t> cycling_labels(int batch, int classes) {
  std::vector<int32_t> labels(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i) labels[static_cast<size_t>(i)] = i % classes;
  return labels;
}

void check_probe_batches(const std::vector<int>& probes) {
  if (probes.size() < 2) {
    throw input_error("profile: need at least two probe batch sizes");
  }
  std::set<int> distinct;
  for (int b : probes) {
    if (b < 1) throw input_error("profile: probe batch sizes must be positive");
    distinct.insert(b);
  }
  if (distinct.size() < 2) {
    throw input_error("profile: probe batch sizes must not all be equal");
  }
}

}  // namespace

LinearModel fit_linear(const std::vector<std::pair<int, uint64_t>>& points) {
  if (points.size() < 2) {
    throw input_error("fit_linear: need at least two points");
  }
  LinearModel m;
  if (exact_integer_fit(points, &m)) {
    if (m.intercept < 0.0) {
      m.intercept = 0.0;
      m.intercept_clamped = true;
    }
    return m;
  }

  const auto n = static_cast<double>(points.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : points) {
    sx += x;
    sy += static_cast<double>(y);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    const double dx = x - mx;
    const double dy = static_cast<double>(y) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) {
    throw input_error("fit_linear: all points share one batch size");
  }
  m.slope = sxy / sxx;
  m.intercept = my - m.slope * mx;

  double ss_res = 0.0;
  for (const auto& [x, y] : points) {
    const double r = static_cast<double>(y) - (m.slope * x + m.intercept);
    ss_res += r * r;
  }
  m.r2 = syy == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / syy;

  if (m.intercept < 0.0) {
    m.intercept = 0.0;
    m.intercept_clamped = true;
  }
  return m;
}

uint64_t measure_layer_step(const NetworkSpec& net, AuxMode mode, int index,
                            int batch, uint64_t seed) {
  validate(net);
  if (index < 0 || index >= static_cast<int>(net.layers.size())) {
    throw input_error("measure_layer_step: layer index out of range");
  }
  if (batch < 1) throw input_error("measure_layer_step: batch must be positive");

  const auto& spec = net.layers[static_cast<size_t>(index)];
  const bool last = index + 1 == static_cast<int>(net.layers.size());
  const AuxiliarySpec cspec =
      last ? terminal_head_spec(net) : build_auxiliary(net, index, mode);
  const Shape3 in = activation_shape(net, index - 1);

  MemoryMeter meter;
  auto [loss, peak] = meter_scope(meter, [&] {
    UnitParams unit = init_unit(spec, mix_seed(seed, static_cast<uint64_t>(index)));
    AuxParams cls = init_aux(cspec, spec.out_channels,
                             mix_seed(seed, 1000 + static_cast<uint64_t>(index)));
    auto uvel = zeros_matching(unit.tensors());
    auto cvel = zeros_matching(cls.tensors());

    Tensor x({batch, in.c, in.h, in.w});
    rng g(mix_seed(seed, 500 + static_cast<uint64_t>(index)));
    fill_uniform(x, g);
    auto labels = cycling_labels(batch, net.num_classes);

    auto r = local_step(unit, cls, std::move(x), labels, uvel, cvel, 0.01f,
                        0.9f, index);
    return r.loss;
  });
  (void)loss;
  return peak;
}

uint64_t measure_bp_step(const NetworkSpec& net, int batch, uint64_t seed) {
  validate(net);
  if (batch < 1) throw input_error("measure_bp_step: batch must be positive");

  MemoryMeter meter;
  auto [loss, peak] = meter_scope(meter, [&] {
    ModelParams model =
        init_parameters(net, AuxMode::adaptive, seed, /*include_aux=*/false);
    std::vector<std::vector<Tensor>> uvel;
    uvel.reserve(model.units.size());
    for (auto& u : model.units) uvel.push_back(zeros_matching(u.tensors()));
    auto hvel = zeros_matching(model.head.tensors());

    const Shape3 in = net.input;
    Tensor x({batch, in.c, in.h, in.w});
    rng g(mix_seed(seed, 500));
    fill_uniform(x, g);
    auto labels = cycling_labels(batch, net.num_classes);

    return bp_step(model, uvel, hvel, std::move(x), labels, 0.01f, 0.9f);
  });
  (void)loss;
  return peak;
}

ProfileReport profile_network(const NetworkSpec& net, ProfileMode mode,
                              const std::vector<int>& probe_batches,
                              uint64_t seed) {
  validate(net);
  check_probe_batches(probe_batches);

  ProfileReport report;
  report.network = net.name;
  report.mode = mode;
  report.probe_batches = probe_batches;
  report.seed = seed;

  if (mode == ProfileMode::backprop) {
    LayerProfile lp;
    lp.layer = -1;
    for (int b : probe_batches) {
      lp.samples.emplace_back(b, measure_bp_step(net, b, seed));
    }
    lp.model = fit_linear(lp.samples);
    report.layers.push_back(std::move(lp));
    return report;
  }

  const AuxMode aux_mode =
      mode == ProfileMode::adaptive ? AuxMode::adaptive : AuxMode::classic;
  for (int i = 0; i < static_cast<int>(net.layers.size()); ++i) {
    LayerProfile lp;
    lp.layer = i;
    for (int b : probe_batches) {
      lp.samples.emplace_back(b, measure_layer_step(net, aux_mode, i, b, seed));
    }
    lp.model = fit_linear(lp.samples);
    report.layers.push_back(std::move(lp));
  }
  return report;
}

std::string profile_mode_name(ProfileMode mode) {
  switch (mode) {
    case ProfileMode::adaptive: return "adaptive";
    case ProfileMode::classic: return "classic";
    case ProfileMode::backprop: return "backprop";
  }
  throw input_error("profile_mode_name: bad mode");
}

ProfileMode profile_mode_from_name(const std::string& name) {
  if (name == "adaptive") return ProfileMode::adaptive;
  if (name == "classic") return ProfileMode::classic;
  if (name == "backprop") return ProfileMode::backprop;
  throw input_error("unknown profile mode '" + name + "'");
}

std::string profile_to_json(const ProfileReport& report) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["network"] = report.network;
  j["mode"] = profile_mode_name(report.mode);
  j["probe_batches"] = report.probe_batches;
  j["seed"] = report.seed;
  j["layers"] = nlohmann::json::array();
  for (const auto& lp : report.layers) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& [b, peak] : lp.samples) {
      samples.push_back({{"batch", b}, {"peak_bytes", peak}});
    }
    j["layers"].push_back({{"layer", lp.layer},
                           {"slope_bytes_per_sample", lp.model.slope},
                           {"intercept_bytes", lp.model.intercept},
                           {"r2", lp.model.r2},
                           {"intercept_clamped", lp.model.intercept_clamped},
                           {"samples", samples}});
  }
  return j.dump(2);
}

ProfileReport profile_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("profile report: bad JSON: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw input_error("profile report: unsupported schema_version");
    }
    ProfileReport report;
    report.network = j.at("network").get<std::string>();
    report.mode = profile_mode_from_name(j.at("mode").get<std::string>());
    report.probe_batches = j.at("probe_batches").get<std::vector<int>>();
    report.seed = j.at("seed").get<uint64_t>();
    for (const auto& lj : j.at("layers")) {
      LayerProfile lp;
      lp.layer = lj.at("layer").get<int>();
      lp.model.slope = lj.at("slope_bytes_per_sample").get<double>();
      lp.model.intercept = lj.at("intercept_bytes").get<double>();
      lp.model.r2 = lj.at("r2").get<double>();
      lp.model.intercept_clamped = lj.at("intercept_clamped").get<bool>();
      for (const auto& sj : lj.at("samples")) {
        lp.samples.emplace_back(sj.at("batch").get<int>(),
                                sj.at("peak_bytes").get<uint64_t>());
      }
      report.layers.push_back(std::move(lp));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw input_error(std::string("profile report: missing or mistyped field: ") +
                      e.what());
  }
}

}  // namespace neuroflux
