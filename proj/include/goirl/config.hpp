#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "goirl/generator.hpp"
#include "goirl/pipeline.hpp"

namespace goirl {

/// Everything a CLI command needs. Built from defaults, then a JSON config
/// file, then `key=value` overrides; later sources win.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data;                // scenario corpus directory
  std::string out = "out";         // output directory
  std::string irl_checkpoint;      // stage-1 checkpoint path
  std::string refiner_checkpoint;  // stage-2 checkpoint path
  int horizon = kHorizon;
  int t_f = kFutureSteps;
  IrlConfig irl;
  RefineConfig refine;
  PipelineConfig pipeline;
  GeneratorParams generator;

  MdpSpec mdp() const {
    MdpSpec m;
    m.horizon = horizon;
    return m;
  }
};

inline Json run_config_json(const RunConfig& c) {
  const GeneratorParams& g = c.generator;
  return Json{
      {"seed", c.seed},
      {"data", c.data},
      {"out", c.out},
      {"irl_checkpoint", c.irl_checkpoint},
      {"refiner_checkpoint", c.refiner_checkpoint},
      {"horizon", c.horizon},
      {"t_f", c.t_f},
      {"irl",
       {{"epochs", c.irl.epochs},
        {"lr", c.irl.lr},
        {"weight_decay", c.irl.weight_decay},
        {"batch", c.irl.batch},
        {"mode", to_string(c.irl.mode)},
        {"sweeps", c.irl.sweeps},
        {"tol", c.irl.tol},
        {"widths", widths_to_json(c.irl.widths)}}},
      {"refine",
       {{"epochs", c.refine.epochs},
        {"lr", c.refine.lr},
        {"weight_decay", c.refine.weight_decay},
        {"batch", c.refine.batch},
        {"location", c.refine.widths.location},
        {"trunk", c.refine.widths.trunk},
        {"embedding",
         {c.refine.widths.embedding.feature, c.refine.widths.embedding.reward, c.refine.widths.embedding.coord}}}},
      {"pipeline",
       {{"L", c.pipeline.L},
        {"K", c.pipeline.K},
        {"degree", c.pipeline.degree},
        {"uniform_reward", c.pipeline.uniform_reward}}},
      {"generator",
       {{"speed_min", g.speed_min},
        {"speed_max", g.speed_max},
        {"accel_min", g.accel_min},
        {"accel_max", g.accel_max},
        {"noise_sigma", g.noise_sigma},
        {"block_prob", g.block_prob},
        {"junction_min", g.junction_min},
        {"junction_max", g.junction_max},
        {"neighbors_max", g.neighbors_max},
        {"random_world_pose", g.random_world_pose}}}};
}

namespace detail {

inline bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() || a.is_number_unsigned()) || !b.is_number_float() ||
                                             b.get<double>() == std::floor(b.get<double>());
  return a.type() == b.type();
}

/// Overlays `src` onto `dst`; every key of `src` must already exist in `dst`.
inline void merge_known(Json& dst, const Json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config " + (path.empty() ? std::string("root") : "'" + path + "'") +
                                          " must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    Json& d = dst[it.key()];
    if (d.is_object()) {
      merge_known(d, it.value(), key);
    } else {
      if (!same_kind(d, it.value())) throw ConfigError("config key '" + key + "' has the wrong type");
      if (d.is_number_unsigned() && it.value().get<double>() < 0.0)
        throw ConfigError("config key '" + key + "' must be non-negative");
      d = it.value().is_number_float() && (d.is_number_integer() || d.is_number_unsigned())
              ? Json(static_cast<std::int64_t>(it.value().get<double>()))
              : it.value();
    }
  }
}

}  // namespace detail

/// Parses "a.b=value". The value is read as JSON when possible, else as a string.
inline Json override_json(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json root = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(begin, end - begin);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    root = Json{{part, std::move(root)}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return root;
}

inline RunConfig run_config_from_json(const Json& src) {
  Json j = run_config_json(RunConfig{});
  detail::merge_known(j, src, "");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.data = j.at("data").get<std::string>();
    c.out = j.at("out").get<std::string>();
    c.irl_checkpoint = j.at("irl_checkpoint").get<std::string>();
    c.refiner_checkpoint = j.at("refiner_checkpoint").get<std::string>();
    c.horizon = j.at("horizon").get<int>();
    c.t_f = j.at("t_f").get<int>();
    const Json& i = j.at("irl");
    c.irl.epochs = i.at("epochs").get<int>();
    c.irl.lr = i.at("lr").get<double>();
    c.irl.weight_decay = i.at("weight_decay").get<double>();
    c.irl.batch = i.at("batch").get<int>();
    c.irl.mode = parse_solve_mode(i.at("mode").get<std::string>());
    c.irl.sweeps = i.at("sweeps").get<int>();
    c.irl.tol = i.at("tol").get<double>();
    c.irl.widths = widths_from_json(i.at("widths"));
    const Json& r = j.at("refine");
    c.refine.epochs = r.at("epochs").get<int>();
    c.refine.lr = r.at("lr").get<double>();
    c.refine.weight_decay = r.at("weight_decay").get<double>();
    c.refine.batch = r.at("batch").get<int>();
    c.refine.widths.location = r.at("location").get<int>();
    c.refine.widths.trunk = r.at("trunk").get<int>();
    const Json& e = r.at("embedding");
    if (!e.is_array() || e.size() != 3) throw ConfigError("config key 'refine.embedding' must be [feature, reward, coord]");
    c.refine.widths.embedding = {e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>()};
    const Json& p = j.at("pipeline");
    c.pipeline.L = p.at("L").get<int>();
    c.pipeline.K = p.at("K").get<int>();
    c.pipeline.degree = p.at("degree").get<int>();
    c.pipeline.uniform_reward = p.at("uniform_reward").get<bool>();
    const Json& g = j.at("generator");
    c.generator.speed_min = g.at("speed_min").get<double>();
    c.generator.speed_max = g.at("speed_max").get<double>();
    c.generator.accel_min = g.at("accel_min").get<double>();
    c.generator.accel_max = g.at("accel_max").get<double>();
    c.generator.noise_sigma = g.at("noise_sigma").get<double>();
    c.generator.block_prob = g.at("block_prob").get<double>();
    c.generator.junction_min = g.at("junction_min").get<double>();
    c.generator.junction_max = g.at("junction_max").get<double>();
    c.generator.neighbors_max = g.at("neighbors_max").get<int>();
    c.generator.random_world_pose = g.at("random_world_pose").get<bool>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  // The solver settings are shared by training and inference.
  c.irl.seed = c.refine.seed = c.seed;
  c.pipeline.mode = c.irl.mode;
  c.pipeline.sweeps = c.irl.sweeps;
  c.pipeline.tol = c.irl.tol;
  c.generator.check();
  if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
  if (c.t_f != kFutureSteps)
    throw ConfigError("t_f must equal the scenario future length " + std::to_string(kFutureSteps));
  if (c.pipeline.K < 1 || c.pipeline.L < c.pipeline.K) throw ConfigError("pipeline: need L >= K >= 1");
  if (c.pipeline.degree < 1 || c.pipeline.degree >= c.t_f) throw ConfigError("pipeline.degree must lie in [1, t_f)");
  if (c.irl.sweeps < 1) throw ConfigError("irl.sweeps must be >= 1");
  return c;
}

/// Defaults, then `file` (if non-empty), then overrides in order.
inline RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json j = Json::object();
  if (!file.empty()) {
    try {
      j = Json::parse(read_text_file(file));
    } catch (const Json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
  }
  Json merged = run_config_json(RunConfig{});
  if (!j.empty()) detail::merge_known(merged, j, "");
  for (const auto& o : overrides) detail::merge_known(merged, override_json(o), "");
  return run_config_from_json(merged);
}

}  // namespace goirl
