#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "goirl/scene.hpp"

namespace goirl {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json vec2_json(Vec2 p) { return Json::array({p.x, p.y}); }

template <typename T>
T get_as(const Json& j, const std::string& field) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(field, e.what());
  }
}

inline const Json& need(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path.empty() ? key : path + "." + key, "missing required field");
  return *it;
}

inline Vec2 parse_vec2(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2) throw ParseError(field, "expected [x, y]");
  return {get_as<double>(j[0], field), get_as<double>(j[1], field)};
}

inline std::vector<Vec2> parse_polyline(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ParseError(field, "expected an array of points");
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_vec2(j[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline Cell parse_cell(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2) throw ParseError(field, "expected [row, col]");
  return {get_as<int>(j[0], field), get_as<int>(j[1], field)};
}

inline void note_unknown(const Json& obj, const std::set<std::string>& known, const std::string& path,
                         std::vector<std::string>* warnings) {
  if (!warnings || !obj.is_object()) return;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) warnings->push_back("ignoring unknown field " + (path.empty() ? "" : path + ".") + it.key());
}

}  // namespace detail

inline Json scenario_to_json(const Scenario& s) {
  using detail::vec2_json;
  Json j;
  j["id"] = s.id;
  j["resolution_m"] = s.resolution_m;
  j["grid_side"] = s.grid_side;
  Json lanes = Json::array();
  for (const auto& l : s.lanes) {
    Json lj;
    lj["id"] = l.id;
    Json cl = Json::array();
    for (Vec2 p : l.centerline) cl.push_back(vec2_json(p));
    lj["centerline"] = cl;
    lj["pre"] = l.pre;
    lj["suc"] = l.suc;
    lj["left"] = l.left ? Json(*l.left) : Json(nullptr);
    lj["right"] = l.right ? Json(*l.right) : Json(nullptr);
    lanes.push_back(lj);
  }
  j["lanes"] = lanes;
  Json mask = Json::array();
  for (int r = 0; r < s.grid_side; ++r) {
    Json row = Json::array();
    for (int c = 0; c < s.grid_side; ++c) row.push_back(static_cast<int>(s.drivable_mask[static_cast<std::size_t>(r * s.grid_side + c)]));
    mask.push_back(row);
  }
  j["drivable_mask"] = mask;
  Json agents = Json::array();
  for (const auto& a : s.agents) {
    Json aj;
    aj["id"] = a.id;
    aj["is_target"] = a.is_target;
    Json tr = Json::array();
    for (const auto& smp : a.track) tr.push_back(Json::array({smp.t, smp.x, smp.y, smp.valid ? 1 : 0}));
    aj["track"] = tr;
    agents.push_back(aj);
  }
  j["agents"] = agents;
  if (s.gt_future) {
    Json f = Json::array();
    for (const auto& p : *s.gt_future) f.push_back(Json::array({p.t, p.x, p.y}));
    j["gt_future"] = f;
  }
  if (s.mode_label) j["mode_label"] = *s.mode_label;
  j["grid_pose"] = Json::array({s.grid_pose.x, s.grid_pose.y, s.grid_pose.yaw});
  if (!s.blocked_cells.empty()) {
    Json b = Json::array();
    for (const Cell& c : s.blocked_cells) b.push_back(Json::array({c.row, c.col}));
    j["blocked_cells"] = b;
  }
  Json meta;
  meta["kind"] = s.metadata.kind;
  Json modes = Json::array();
  for (const auto& m : s.metadata.modes) {
    Json mj;
    mj["label"] = m.label;
    Json pl = Json::array();
    for (Vec2 p : m.exit_polyline) pl.push_back(vec2_json(p));
    mj["exit_polyline"] = pl;
    mj["half_width"] = m.half_width;
    modes.push_back(mj);
  }
  meta["feasible_modes"] = modes;
  meta["blocked_mode"] = s.metadata.blocked_mode ? Json(*s.metadata.blocked_mode) : Json(nullptr);
  j["metadata"] = meta;
  return j;
}

/// Parses a scenario document. Unknown fields are reported through
/// `warnings` and otherwise ignored.
inline Scenario scenario_from_json(const Json& j, std::vector<std::string>* warnings = nullptr) {
  using namespace detail;
  if (!j.is_object()) throw ParseError("scenario", "expected a JSON object");
  note_unknown(j,
               {"id", "resolution_m", "grid_side", "lanes", "drivable_mask", "agents", "gt_future", "mode_label",
                "grid_pose", "blocked_cells", "metadata"},
               "", warnings);
  Scenario s;
  s.id = get_as<std::string>(need(j, "id", ""), "id");
  if (j.contains("resolution_m")) s.resolution_m = get_as<double>(j["resolution_m"], "resolution_m");
  if (j.contains("grid_side")) s.grid_side = get_as<int>(j["grid_side"], "grid_side");
  if (s.resolution_m <= 0.0) throw ParseError("resolution_m", "must be positive");
  if (s.grid_side <= 0) throw ParseError("grid_side", "must be positive");

  const Json& lanes = need(j, "lanes", "");
  if (!lanes.is_array()) throw ParseError("lanes", "expected an array");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string path = "lanes[" + std::to_string(i) + "]";
    const Json& lj = lanes[i];
    note_unknown(lj, {"id", "centerline", "pre", "suc", "left", "right"}, path, warnings);
    LaneSegment l;
    l.id = get_as<int>(need(lj, "id", path), path + ".id");
    l.centerline = parse_polyline(need(lj, "centerline", path), path + ".centerline");
    if (lj.contains("pre")) l.pre = get_as<std::vector<int>>(lj["pre"], path + ".pre");
    if (lj.contains("suc")) l.suc = get_as<std::vector<int>>(lj["suc"], path + ".suc");
    if (lj.contains("left") && !lj["left"].is_null()) l.left = get_as<int>(lj["left"], path + ".left");
    if (lj.contains("right") && !lj["right"].is_null()) l.right = get_as<int>(lj["right"], path + ".right");
    s.lanes.push_back(std::move(l));
  }

  const Json& mask = need(j, "drivable_mask", "");
  if (!mask.is_array() || static_cast<int>(mask.size()) != s.grid_side)
    throw ParseError("drivable_mask", "expected " + std::to_string(s.grid_side) + " rows");
  s.drivable_mask.assign(static_cast<std::size_t>(s.grid_side) * s.grid_side, 0);
  for (int r = 0; r < s.grid_side; ++r) {
    const Json& row = mask[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != s.grid_side)
      throw ParseError("drivable_mask", "row " + std::to_string(r) + " must have " + std::to_string(s.grid_side) + " cells");
    for (int c = 0; c < s.grid_side; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      bool on = false;
      if (v.is_boolean()) on = v.get<bool>();
      else if (v.is_number_integer()) on = v.get<int>() != 0;
      else throw ParseError("drivable_mask", "cell values must be 0/1 or booleans");
      s.drivable_mask[static_cast<std::size_t>(r * s.grid_side + c)] = on ? 1 : 0;
    }
  }

  const Json& agents = need(j, "agents", "");
  if (!agents.is_array()) throw ParseError("agents", "expected an array");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const std::string path = "agents[" + std::to_string(i) + "]";
    const Json& aj = agents[i];
    note_unknown(aj, {"id", "is_target", "track"}, path, warnings);
    AgentTrack a;
    a.id = get_as<int>(need(aj, "id", path), path + ".id");
    a.is_target = get_as<bool>(need(aj, "is_target", path), path + ".is_target");
    const Json& tr = need(aj, "track", path);
    if (!tr.is_array()) throw ParseError(path + ".track", "expected an array");
    for (std::size_t k = 0; k < tr.size(); ++k) {
      const std::string tp = path + ".track[" + std::to_string(k) + "]";
      if (!tr[k].is_array() || tr[k].size() != 4) throw ParseError(tp, "expected [t, x, y, valid]");
      TrackSample smp;
      smp.t = get_as<int>(tr[k][0], tp);
      smp.x = get_as<double>(tr[k][1], tp);
      smp.y = get_as<double>(tr[k][2], tp);
      const Json& v = tr[k][3];
      smp.valid = v.is_boolean() ? v.get<bool>() : get_as<int>(v, tp) != 0;
      a.track.push_back(smp);
    }
    s.agents.push_back(std::move(a));
  }

  if (j.contains("gt_future") && !j["gt_future"].is_null()) {
    const Json& f = j["gt_future"];
    if (!f.is_array()) throw ParseError("gt_future", "expected an array");
    std::vector<FuturePoint> fut;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const std::string fp = "gt_future[" + std::to_string(k) + "]";
      if (!f[k].is_array() || f[k].size() != 3) throw ParseError(fp, "expected [t, x, y]");
      fut.push_back({get_as<int>(f[k][0], fp), get_as<double>(f[k][1], fp), get_as<double>(f[k][2], fp)});
    }
    s.gt_future = std::move(fut);
  }
  if (j.contains("mode_label") && !j["mode_label"].is_null())
    s.mode_label = get_as<std::string>(j["mode_label"], "mode_label");
  if (j.contains("grid_pose")) {
    const Json& gp = j["grid_pose"];
    if (!gp.is_array() || gp.size() != 3) throw ParseError("grid_pose", "expected [x, y, yaw]");
    s.grid_pose = {get_as<double>(gp[0], "grid_pose"), get_as<double>(gp[1], "grid_pose"),
                   get_as<double>(gp[2], "grid_pose")};
  }
  if (j.contains("blocked_cells")) {
    const Json& b = j["blocked_cells"];
    if (!b.is_array()) throw ParseError("blocked_cells", "expected an array");
    for (std::size_t k = 0; k < b.size(); ++k) s.blocked_cells.push_back(parse_cell(b[k], "blocked_cells"));
  }
  if (j.contains("metadata")) {
    const Json& m = j["metadata"];
    note_unknown(m, {"kind", "feasible_modes", "blocked_mode"}, "metadata", warnings);
    if (m.contains("kind")) s.metadata.kind = get_as<std::string>(m["kind"], "metadata.kind");
    if (m.contains("feasible_modes")) {
      const Json& modes = m["feasible_modes"];
      if (!modes.is_array()) throw ParseError("metadata.feasible_modes", "expected an array");
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const std::string mp = "metadata.feasible_modes[" + std::to_string(k) + "]";
        ModeRegion r;
        r.label = get_as<std::string>(need(modes[k], "label", mp), mp + ".label");
        r.exit_polyline = parse_polyline(need(modes[k], "exit_polyline", mp), mp + ".exit_polyline");
        r.half_width = get_as<double>(need(modes[k], "half_width", mp), mp + ".half_width");
        s.metadata.modes.push_back(std::move(r));
      }
    }
    if (m.contains("blocked_mode") && !m["blocked_mode"].is_null())
      s.metadata.blocked_mode = get_as<std::string>(m["blocked_mode"], "metadata.blocked_mode");
  }
  try {
    validate(s, s.agents.empty() ? kHistorySteps : static_cast<int>(s.agents.front().track.size()));
  } catch (const ContractViolation& e) {
    throw ParseError("scenario", e.what());
  }
  return s;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  os.flush();
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_scenario(const Scenario& s, const std::filesystem::path& path) {
  write_text_file(path, scenario_to_json(s).dump(1) + "\n");
}

inline Scenario load_scenario(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("scenario", std::string("invalid JSON: ") + e.what());
  }
  return scenario_from_json(j, warnings);
}

/// Scenario files in a directory, sorted by file name.
inline std::vector<std::filesystem::path> list_scenarios(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename().string().rfind("scenario", 0) == 0)
      out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace goirl
