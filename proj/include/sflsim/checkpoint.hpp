#pragma once

// JSON model checkpoints. Doubles are written with nlohmann's shortest
// round-trip formatting, so load(save(x)) reproduces every bit.

#include <fstream>
#include <string>

#include <json.hpp>

#include "sflsim/nn.hpp"

namespace sflsim {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const LayerStack& stack) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : stack.layers()) {
    nlohmann::json j;
    if (l.kind == LayerKind::kDense) {
      j["kind"] = "dense";
      j["in"] = l.in_width;
      j["out"] = l.out_width;
      j["has_bias"] = l.has_bias;
      j["weight"] = l.weight;
      if (l.has_bias) j["bias"] = l.bias;
    } else {
      j["kind"] = "relu";
      j["width"] = l.in_width;
    }
    layers.push_back(std::move(j));
  }
  return {{"format", "sflsim-checkpoint"}, {"version", kCheckpointVersion}, {"layers", layers}};
}

inline LayerStack checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sflsim-checkpoint") {
      throw ConfigError("checkpoint: unexpected format tag");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ConfigError("checkpoint: unsupported version " + j.at("version").dump());
    }
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
      const auto kind = lj.at("kind").get<std::string>();
      if (kind == "dense") {
        Layer l = Layer::dense(lj.at("in").get<std::size_t>(), lj.at("out").get<std::size_t>(),
                               lj.at("has_bias").get<bool>());
        l.weight = lj.at("weight").get<std::vector<double>>();
        if (l.has_bias) l.bias = lj.at("bias").get<std::vector<double>>();
        layers.push_back(std::move(l));
      } else if (kind == "relu") {
        layers.push_back(Layer::relu(lj.at("width").get<std::size_t>()));
      } else {
        throw ConfigError("checkpoint: unknown layer kind '" + kind + "'");
      }
    }
    return LayerStack(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const LayerStack& stack, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << checkpoint_to_json(stack).dump(1) << '\n';
}

inline LayerStack load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace sflsim
