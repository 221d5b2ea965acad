#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "goirl/payload.hpp"

// After Eigen: <resolv.h> from httplib defines a `_res` macro.
#include <httplib.h>

namespace goirl {

inline constexpr const char* kServiceVersion = "1.0.0";

struct ServiceConfig {
  std::filesystem::path corpus;
  std::string irl_checkpoint;
  std::string refiner_checkpoint;
  PipelineConfig pipeline;
  MdpSpec mdp;
};

/// Status code plus JSON body (or raw JSON text when `raw` is set).
struct ServiceReply {
  int status = 200;
  Json body;
  std::optional<std::string> raw;
};

/// One what-if session. `base` is the target-frame scenario and never
/// changes; `current` is `base` plus the session's mask edits.
struct Session {
  std::string id;
  Scenario base;
  Scenario current;
  std::mutex mu;
};

/// Transport-independent request handling; `mount` wires it into httplib.
class WhatIfService {
 public:
  explicit WhatIfService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.corpus.empty())
      for (const auto& path : list_scenarios(cfg_.corpus)) {
        Scenario s = load_scenario(path);
        const std::string id = s.id;
        require(!corpus_.count(id), "duplicate scenario id '" + id + "' in " + cfg_.corpus.string());
        order_.push_back(id);
        corpus_[id] = {path, read_text_file(path), std::move(s)};
      }
    if (!cfg_.irl_checkpoint.empty() && std::filesystem::exists(cfg_.irl_checkpoint))
      model_ = std::make_shared<const ContextModel>(load_context_model(cfg_.irl_checkpoint));
    if (!cfg_.refiner_checkpoint.empty() && std::filesystem::exists(cfg_.refiner_checkpoint))
      refiner_ = std::make_shared<const Refiner>(load_refiner(cfg_.refiner_checkpoint));
  }

  ServiceReply health() const { return {200, Json{{"status", "ok"}, {"version", kServiceVersion}}, {}}; }

  ServiceReply list() const {
    Json items = Json::array();
    for (const auto& id : order_) {
      const auto& e = corpus_.at(id);
      items.push_back(Json{{"id", id}, {"kind", e.scenario.metadata.kind}, {"file", e.path.filename().string()}});
    }
    return {200, Json{{"scenarios", std::move(items)}}, {}};
  }

  ServiceReply scenario(const std::string& id) const {
    auto it = corpus_.find(id);
    if (it == corpus_.end()) return error(404, "unknown scenario '" + id + "'");
    return {200, {}, it->second.text};
  }

  ServiceReply create_session(const Json& req) {
    if (!req.is_object() || !req.contains("scenario_id") || !req["scenario_id"].is_string())
      return error(400, "body must be {\"scenario_id\": string}");
    const std::string id = req["scenario_id"].get<std::string>();
    auto it = corpus_.find(id);
    if (it == corpus_.end()) return error(404, "unknown scenario '" + id + "'");
    auto s = std::make_shared<Session>();
    s->base = to_target_frame(it->second.scenario).scenario;
    s->current = s->base;
    {
      std::lock_guard lock(sessions_mu_);
      s->id = "s" + std::to_string(++next_session_);
      sessions_[s->id] = s;
    }
    Json body = session_json(*s);
    return {201, std::move(body), {}};
  }

  ServiceReply get_session(const std::string& sid) {
    auto s = find(sid);
    if (!s) return error(404, "unknown session '" + sid + "'");
    std::lock_guard lock(s->mu);
    return {200, session_json(*s), {}};
  }

  ServiceReply mask(const std::string& sid, const Json& req) {
    auto s = find(sid);
    if (!s) return error(404, "unknown session '" + sid + "'");
    if (!req.is_object()) return error(400, "body must be a JSON object");
    for (auto it = req.begin(); it != req.end(); ++it)
      if (it.key() != "blocked_cells" && it.key() != "revert") return error(400, "unknown field '" + it.key() + "'");
    std::vector<Cell> block, revert;
    if (auto e = parse_cells(req, "blocked_cells", block)) return *e;
    if (auto e = parse_cells(req, "revert", revert)) return *e;
    const GridSpec g = s->base.fine_grid();
    for (const auto* list : {&block, &revert})
      for (const Cell& c : *list)
        if (!g.contains(c)) {
          ServiceReply r = error(422, "cell [" + std::to_string(c.row) + "," + std::to_string(c.col) +
                                          "] out of range for a " + std::to_string(g.side) + "x" +
                                          std::to_string(g.side) + " grid");
          r.body["cell"] = Json::array({c.row, c.col});
          return r;
        }
    std::lock_guard lock(s->mu);
    const MaskEdit blocked = block_cells(s->current, block);
    const MaskEdit reverted = revert_cells(s->current, revert);
    Json body = session_json(*s);
    body["changed"] = Json{{"blocked", cells_json(blocked.changed)}, {"reverted", cells_json(reverted.changed)}};
    body["noop"] = Json{{"blocked", cells_json(blocked.noop)}, {"reverted", cells_json(reverted.noop)}};
    Json warnings = Json::array();
    for (const Cell& c : blocked.noop)
      warnings.push_back("cell [" + std::to_string(c.row) + "," + std::to_string(c.col) + "] is already undrivable");
    for (const Cell& c : reverted.noop)
      warnings.push_back("cell [" + std::to_string(c.row) + "," + std::to_string(c.col) + "] was not blocked");
    body["warnings"] = std::move(warnings);
    return {200, std::move(body), {}};
  }

  ServiceReply predict(const std::string& sid, const Json& req) {
    auto s = find(sid);
    if (!s) return error(404, "unknown session '" + sid + "'");
    if (!model_ || !refiner_) {
      std::string missing = !model_ ? "stage-1" : "refiner";
      return error(409, missing + " checkpoint not loaded");
    }
    if (!req.is_object()) return error(400, "body must be a JSON object");
    PipelineConfig pc = cfg_.pipeline;
    std::uint64_t seed = 0;
    bool all_plans = false;
    try {
      for (auto it = req.begin(); it != req.end(); ++it) {
        if (it.key() == "K") pc.K = it.value().get<int>();
        else if (it.key() == "L") pc.L = it.value().get<int>();
        else if (it.key() == "seed") seed = it.value().get<std::uint64_t>();
        else if (it.key() == "all_plans") all_plans = it.value().get<bool>();
        else return error(400, "unknown field '" + it.key() + "'");
      }
    } catch (const Json::exception& e) {
      return error(400, std::string("bad predict request: ") + e.what());
    }
    if (pc.K < 1 || pc.L < pc.K || pc.L > 100000) return error(422, "need 1 <= K <= L <= 100000");
    Scenario current;
    {
      std::lock_guard lock(s->mu);
      current = s->current;
    }
    try {
      using Clock = std::chrono::steady_clock;
      const auto t0 = Clock::now();
      PreparedScene prep = prepare_scene(current, cfg_.mdp);
      const SceneInference inf = infer_proposals(*model_, std::move(prep), pc, seed, cfg_.mdp);
      const auto t1 = Clock::now();
      const Prediction pred = predict_scene(*refiner_, inf, cfg_.mdp);
      const auto t2 = Clock::now();
      PayloadOptions opt;
      opt.all_plans = all_plans;
      Json body = prediction_payload(inf, pred, pc, seed, cfg_.mdp, opt);
      body["session_id"] = sid;
      auto ms = [](auto a, auto b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
      body["timing_ms"] = Json{{"proposals", ms(t0, t1)}, {"refine", ms(t1, t2)}, {"total", ms(t0, Clock::now())}};
      return {200, std::move(body), {}};
    } catch (const std::exception& e) {
      const std::string diag = "diag-" + std::to_string(++next_diag_);
      std::cerr << "predict failure " << diag << " session " << sid << ": " << e.what() << "\n";
      ServiceReply r = error(500, "prediction failed");
      r.body["diagnostic_id"] = diag;
      return r;
    }
  }

  /// Registers every route, JSON 404s and CORS headers on `srv`.
  void mount(httplib::Server& srv) {
    auto send = [](httplib::Response& res, const ServiceReply& r) {
      res.status = r.status;
      res.set_content(r.raw ? *r.raw : r.body.dump(), "application/json");
    };
    auto body_json = [](const httplib::Request& req, std::optional<ServiceReply>& err) {
      try {
        return req.body.empty() ? Json::object() : Json::parse(req.body);
      } catch (const Json::parse_error& e) {
        err = error(400, std::string("malformed JSON: ") + e.what());
        return Json();
      }
    };
    srv.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    srv.Get("/api/scenarios", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list()); });
    srv.Get(R"(/api/scenarios/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, scenario(req.matches[1]));
    });
    srv.Post("/api/sessions", [this, send, body_json](const httplib::Request& req, httplib::Response& res) {
      std::optional<ServiceReply> err;
      const Json j = body_json(req, err);
      send(res, err ? *err : create_session(j));
    });
    srv.Get(R"(/api/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_session(req.matches[1]));
    });
    srv.Post(R"(/api/sessions/([^/]+)/mask)", [this, send, body_json](const httplib::Request& req,
                                                                       httplib::Response& res) {
      std::optional<ServiceReply> err;
      const Json j = body_json(req, err);
      send(res, err ? *err : mask(req.matches[1], j));
    });
    srv.Post(R"(/api/sessions/([^/]+)/predict)", [this, send, body_json](const httplib::Request& req,
                                                                          httplib::Response& res) {
      std::optional<ServiceReply> err;
      const Json j = body_json(req, err);
      send(res, err ? *err : predict(req.matches[1], j));
    });
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string msg = res.status == 404 ? "no route for " + req.method + " " + req.path : "request failed";
      res.set_content(Json{{"error", msg}, {"status", res.status}}.dump(), "application/json");
    });
    srv.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
  }

  bool has_checkpoints() const { return model_ && refiner_; }

 private:
  struct Entry {
    std::filesystem::path path;
    std::string text;
    Scenario scenario;
  };

  static ServiceReply error(int status, const std::string& msg) {
    return {status, Json{{"error", msg}, {"status", status}}, {}};
  }

  static Json cells_json(const std::vector<Cell>& cells) {
    Json out = Json::array();
    for (const Cell& c : cells) out.push_back(Json::array({c.row, c.col}));
    return out;
  }

  static Json mask_json(const Scenario& s) {
    Json rows = Json::array();
    for (int r = 0; r < s.grid_side; ++r) {
      Json row = Json::array();
      for (int c = 0; c < s.grid_side; ++c) row.push_back(s.drivable({r, c}) ? 1 : 0);
      rows.push_back(std::move(row));
    }
    return rows;
  }

  static Json session_json(const Session& s) {
    return Json{{"session_id", s.id},
                {"scenario_id", s.base.id},
                {"blocked_cells", cells_json(s.current.blocked_cells)},
                {"drivable_mask", mask_json(s.current)}};
  }

  static std::optional<ServiceReply> parse_cells(const Json& req, const char* key, std::vector<Cell>& out) {
    if (!req.contains(key)) return std::nullopt;
    const Json& a = req.at(key);
    if (!a.is_array()) return error(400, std::string(key) + " must be a list of [row, col] pairs");
    for (const auto& c : a) {
      if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() || !c[1].is_number_integer())
        return error(400, std::string(key) + " must be a list of [row, col] integer pairs");
      out.push_back({c[0].get<int>(), c[1].get<int>()});
    }
    return std::nullopt;
  }

  std::shared_ptr<Session> find(const std::string& sid) {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(sid);
    return it == sessions_.end() ? nullptr : it->second;
  }

  ServiceConfig cfg_;
  std::map<std::string, Entry> corpus_;
  std::vector<std::string> order_;
  std::shared_ptr<const ContextModel> model_;
  std::shared_ptr<const Refiner> refiner_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_session_ = 0;
  std::atomic<std::uint64_t> next_diag_{0};
};

}  // namespace goirl
