#pragma once

// JSON forms of the architecture specs, shared by the model container and
// the run configuration. Internal: public APIs exchange strings, not
// nlohmann objects.

#include "arch.hpp"
#include "errors.hpp"
#include "json.hpp"

namespace neuroflux::detail {

inline nlohmann::json spec_to_json(const NetworkSpec& net) {
  nlohmann::json j;
  j["name"] = net.name;
  j["input"] = {{"c", net.input.c}, {"h", net.input.h}, {"w", net.input.w}};
  j["num_classes"] = net.num_classes;
  j["layers"] = nlohmann::json::array();
  for (const LayerSpec& l : net.layers) {
    j["layers"].push_back(
        {{"kind", l.kind == LayerKind::conv_stage ? "conv_stage"
                                                  : "residual_block"},
         {"in_channels", l.in_channels},
         {"out_channels", l.out_channels},
         {"downsample", l.downsample}});
  }
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec net;
  net.name = j.at("name").get<std::string>();
  net.input.c = j.at("input").at("c").get<int>();
  net.input.h = j.at("input").at("h").get<int>();
  net.input.w = j.at("input").at("w").get<int>();
  net.num_classes = j.at("num_classes").get<int>();
  for (const nlohmann::json& jl : j.at("layers")) {
    LayerSpec l;
    const std::string kind = jl.at("kind").get<std::string>();
    if (kind == "conv_stage") {
      l.kind = LayerKind::conv_stage;
    } else if (kind == "residual_block") {
      l.kind = LayerKind::residual_block;
    } else {
      throw input_error("unknown layer kind " + kind);
    }
    l.in_channels = jl.at("in_channels").get<int>();
    l.out_channels = jl.at("out_channels").get<int>();
    l.downsample = jl.at("downsample").get<bool>();
    net.layers.push_back(l);
  }
  return net;
}

inline nlohmann::json aux_spec_to_json(const AuxiliarySpec& s) {
  return {{"filters", s.filters},
          {"pool_h", s.pool_h},
          {"pool_w", s.pool_w},
          {"classifier_inputs", s.classifier_inputs},
          {"num_classes", s.num_classes}};
}

inline AuxiliarySpec aux_spec_from_json(const nlohmann::json& j) {
  AuxiliarySpec s;
  s.filters = j.at("filters").get<int>();
  s.pool_h = j.at("pool_h").get<int>();
  s.pool_w = j.at("pool_w").get<int>();
  s.classifier_inputs = j.at("classifier_inputs").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  return s;
}

}  // namespace neuroflux::detail
