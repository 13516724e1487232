#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "dsdf/error.hpp"
#include "dsdf/model.hpp"

namespace dsdf {

/// Everything a training run needs besides the corpus.
struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch = 8;
  std::uint64_t seed = 42;
  std::string precision = "f32";  // "f32" or "f64"

  void validate() const {
    model.validate();
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (precision != "f32" && precision != "f64") {
      throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + precision + "\"");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"image_size", c.model.image_size}, {"embed_dim", c.model.embed_dim}, {"heads", c.model.heads},
          {"scales", c.model.scales},         {"bins", c.model.bins},           {"d_b", c.model.blood_dim},
          {"alpha", c.model.alpha},           {"beta", c.model.beta},           {"lr", c.lr},
          {"epochs", c.epochs},               {"batch", c.batch},               {"seed", c.seed},
          {"precision", c.precision}};
}

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// are rejected.
inline TrainConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{"image_size", "embed_dim", "heads", "scales", "bins",  "d_b",      "alpha",
                                           "beta",       "lr",        "epochs", "batch", "seed", "precision"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key \"" + key + "\"");
  }
  TrainConfig c;
  try {
    auto read = [&](const char* key, auto& field) {
      if (doc.contains(key)) field = doc.at(key).get<std::decay_t<decltype(field)>>();
    };
    read("image_size", c.model.image_size);
    read("embed_dim", c.model.embed_dim);
    read("heads", c.model.heads);
    read("scales", c.model.scales);
    read("bins", c.model.bins);
    read("d_b", c.model.blood_dim);
    read("alpha", c.model.alpha);
    read("beta", c.model.beta);
    read("lr", c.lr);
    read("epochs", c.epochs);
    read("batch", c.batch);
    read("seed", c.seed);
    read("precision", c.precision);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

inline void save_config(const std::string& path, const TrainConfig& c) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config " + path);
  os << to_json(c).dump(2) << "\n";
}

}  // namespace dsdf
