#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "est/core.hpp"
#include "est/depth.hpp"
#include "est/inference.hpp"

namespace est::config {

using nlohmann::json;

struct RunConfig {
  double z_min = 0.5;
  double z_max = 5.0;
  int planes = 64;
  int channels = 32;
  double lambda = 0.8;
  int capacity = 2;
  inference::Fusion fusion = inference::Fusion::Adaptive;
  inference::Mode mode = inference::Mode::Estm;
  depth::StageWeighting weighting = depth::StageWeighting::AsPublished;
  std::string params;  // transformer parameter sidecar; empty = seeded defaults
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    if (!(z_min > 0.0) || !(z_max > z_min)) throw ConfigError("config: need 0 < z_min < z_max");
    if (planes < 2) throw ConfigError("config: planes must be at least 2");
    if (channels < 2 || channels % 2 != 0) throw ConfigError("config: channels must be even and at least 2");
    if (capacity < 0) throw ConfigError("config: capacity must be non-negative");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("config: lambda must lie in (0, 1]");
    if (threads < 1) throw ConfigError("config: threads must be at least 1");
  }

  inference::ModelConfig model() const {
    inference::ModelConfig m;
    m.z_min = z_min;
    m.z_max = z_max;
    m.planes = planes;
    m.channels = channels;
    m.seed = seed;
    m.fusion = fusion;
    return m;
  }
};

inline std::string to_string(inference::Mode m) {
  switch (m) {
    case inference::Mode::Independent: return "independent";
    case inference::Mode::Joint: return "joint";
    case inference::Mode::Estm: return "estm";
  }
  return "?";
}

inline std::string to_string(inference::Fusion f) { return f == inference::Fusion::Adaptive ? "adaptive" : "concat"; }

inline std::string to_string(depth::StageWeighting w) {
  return w == depth::StageWeighting::AsPublished ? "as-published" : "reversed";
}

inline inference::Mode parse_mode(const std::string& s) {
  if (s == "independent") return inference::Mode::Independent;
  if (s == "joint") return inference::Mode::Joint;
  if (s == "estm") return inference::Mode::Estm;
  throw ConfigError("config: unknown mode '" + s + "'");
}

inline inference::Fusion parse_fusion(const std::string& s) {
  if (s == "adaptive") return inference::Fusion::Adaptive;
  if (s == "concat") return inference::Fusion::Concat;
  throw ConfigError("config: unknown fusion '" + s + "'");
}

inline depth::StageWeighting parse_weighting(const std::string& s) {
  if (s == "as-published") return depth::StageWeighting::AsPublished;
  if (s == "reversed") return depth::StageWeighting::Reversed;
  throw ConfigError("config: unknown stage weighting '" + s + "'");
}

inline json to_json(const RunConfig& c) {
  return {{"z_min", c.z_min},         {"z_max", c.z_max},       {"planes", c.planes},
          {"channels", c.channels},   {"lambda", c.lambda},     {"capacity", c.capacity},
          {"fusion", to_string(c.fusion)}, {"mode", to_string(c.mode)}, {"weighting", to_string(c.weighting)},
          {"params", c.params},       {"seed", c.seed},         {"threads", c.threads}};
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected so a
/// typo cannot silently fall back to a default.
inline void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "z_min") c.z_min = value.get<double>();
      else if (key == "z_max") c.z_max = value.get<double>();
      else if (key == "planes") c.planes = value.get<int>();
      else if (key == "channels") c.channels = value.get<int>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "capacity") c.capacity = value.get<int>();
      else if (key == "fusion") c.fusion = parse_fusion(value.get<std::string>());
      else if (key == "mode") c.mode = parse_mode(value.get<std::string>());
      else if (key == "weighting") c.weighting = parse_weighting(value.get<std::string>());
      else if (key == "params") c.params = value.get<std::string>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "threads") c.threads = value.get<int>();
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace est::config
