#pragma once

#include <string>
#include <vector>

#include "goirl/feature_net.hpp"
#include "goirl/grid_adaptor.hpp"
#include "goirl/scene_io.hpp"

namespace goirl {

/// Encoder outputs and reward maps of one scenario.
struct Context {
  FusedFeatures features;
  FeatureGrid fine;
  Matrix coarse;  // 625 × F_c
  RewardMaps reward;
  RowVector h0() const { return features.C_A.row(0); }
};

/// Stage-1 network: encoders, fusion, feature adaptor and reward head.
class ContextModel {
 public:
  explicit ContextModel(const Widths& w = {}, std::uint64_t seed = 0) : widths_(w) {
    Rng rng(derive_seed(seed, 1));
    lane_enc_ = LaneEncoder(params_, "lane_enc", w.lane, rng);
    lane_conv_ = LaneConv(params_, "lane_conv", w.lane, rng);
    drivable_ = PointDA(params_, "drivable", kDrivableInputs, w.drivable, rng);
    agent_ = AgentEncoder(params_, "agent", w.agent, rng);
    fusion_ = FusionNet(params_, "fusion", w, rng);
    down_ = Downsampler(params_, "down", w.drivable, w.coarse, rng);
    head_ = RewardHead(params_, "head", w.coarse, rng);
  }

  struct Cache {
    LaneEncoder::Cache lane_enc;
    LaneConv::Cache lane_conv;
    PointDA::Cache drivable;
    Mlp::Cache agent;
    FusionNet::Cache fusion;
    Downsampler::Cache down;
    RewardHead::Cache head;
  };

  const Widths& widths() const { return widths_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const FusionNet& fusion() const { return fusion_; }

  /// `effective_mask` gates the feature adaptor (edit-blocked cells are zero).
  Context forward(const SceneGraph& g, const std::vector<std::uint8_t>& effective_mask, const GridSpec& fine,
                  Cache* c = nullptr) const {
    Context ctx;
    FusedFeatures f;
    const Matrix U = lane_enc_.forward(params_, g.lanes, c ? &c->lane_enc : nullptr);
    f.C_L = g.lanes.size() ? lane_conv_.forward(params_, g.lanes, U, c ? &c->lane_conv : nullptr) : U;
    f.C_D = g.drivable.size() ? drivable_.forward(params_, g.drivable, g.drivable.raw, c ? &c->drivable : nullptr)
                              : Matrix::Zero(0, widths_.drivable);
    f.C_A = agent_.forward(params_, g.agents, c ? &c->agent : nullptr);
    ctx.features = fusion_.forward(params_, g, f, c ? &c->fusion : nullptr);
    ctx.fine = assign_to_grid(ctx.features.C_D, g.drivable.pos, fine, &effective_mask);
    ctx.coarse = down_.forward(params_, ctx.fine, c ? &c->down : nullptr);
    ctx.reward = head_.forward(params_, ctx.coarse, c ? &c->head : nullptr);
    return ctx;
  }

  /// Accumulates parameter gradients of a loss with gradients dR, dR_g.
  void backward(const SceneGraph& g, const Context& ctx, const Cache& c, const Vector& dR, const Vector& dRg,
                GradientBuffer& gb) const {
    const Matrix dCoarse = head_.backward(params_, c.head, dR, dRg, gb);
    const Matrix dFine = down_.backward(params_, c.down, dCoarse, gb);
    FusedFeatures d;
    d.C_D = assign_to_grid_backward(ctx.fine, dFine, static_cast<Eigen::Index>(g.drivable.size()));
    d.C_L = Matrix::Zero(ctx.features.C_L.rows(), ctx.features.C_L.cols());
    d.C_A = Matrix::Zero(ctx.features.C_A.rows(), ctx.features.C_A.cols());
    d = fusion_.backward(params_, g, c.fusion, std::move(d), gb);
    agent_.backward(params_, g.agents, c.agent, d.C_A, gb);
    if (g.drivable.size()) drivable_.backward(params_, c.drivable, d.C_D, gb);
    if (g.lanes.size()) {
      const Matrix dU = lane_conv_.backward(params_, g.lanes, c.lane_conv, d.C_L, gb);
      lane_enc_.backward(params_, c.lane_enc, dU, gb);
    }
  }

 private:
  Widths widths_;
  ParamStore params_;
  LaneEncoder lane_enc_;
  LaneConv lane_conv_;
  PointDA drivable_;
  AgentEncoder agent_;
  FusionNet fusion_;
  Downsampler down_;
  RewardHead head_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

constexpr int kCheckpointVersion = 1;

inline Json widths_to_json(const Widths& w) {
  return Json{{"lane", w.lane}, {"agent", w.agent}, {"drivable", w.drivable}, {"coarse", w.coarse}};
}

inline Widths widths_from_json(const Json& j) {
  Widths w;
  try {
    w.lane = j.at("lane").get<int>();
    w.agent = j.at("agent").get<int>();
    w.drivable = j.at("drivable").get<int>();
    w.coarse = j.at("coarse").get<int>();
  } catch (const Json::exception& e) {
    throw ParseError("widths", e.what());
  }
  return w;
}

inline Json params_to_json(const ParamStore& p) {
  Json tensors = Json::object();
  for (const auto& [name, t] : p.all()) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) row.push_back(t.value(r, c));
      rows.push_back(std::move(row));
    }
    tensors[name] = std::move(rows);
  }
  return tensors;
}

/// Loads tensors into an already-shaped store; every name and shape must match.
inline void params_from_json(const Json& tensors, ParamStore& p) {
  if (!tensors.is_object()) throw ParseError("tensors", "expected an object");
  if (tensors.size() != p.all().size())
    throw ParseError("tensors", "expected " + std::to_string(p.all().size()) + " tensors, found " +
                                    std::to_string(tensors.size()));
  for (auto& [name, t] : p.all_mutable()) {
    if (!tensors.contains(name)) throw ParseError("tensors." + name, "missing tensor");
    const Json& rows = tensors.at(name);
    if (!rows.is_array() || rows.size() != static_cast<std::size_t>(t.value.rows()))
      throw ParseError("tensors." + name, "shape mismatch (rows)");
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      const Json& row = rows[static_cast<std::size_t>(r)];
      if (!row.is_array() || row.size() != static_cast<std::size_t>(t.value.cols()))
        throw ParseError("tensors." + name, "shape mismatch (cols)");
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        if (!row[static_cast<std::size_t>(c)].is_number()) throw ParseError("tensors." + name, "non-numeric entry");
        t.value(r, c) = row[static_cast<std::size_t>(c)].get<double>();
      }
    }
  }
}

inline Json checkpoint_json(const std::string& kind, const Widths& w, const ParamStore& p, const Json& extra = Json()) {
  Json j{{"format", "goirl-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}, {"widths", widths_to_json(w)}};
  if (!extra.is_null()) j["config"] = extra;
  j["tensors"] = params_to_json(p);
  return j;
}

/// Validates the header of a checkpoint document and returns its widths.
inline Widths checkpoint_header(const Json& j, const std::string& kind) {
  if (!j.is_object() || j.value("format", "") != "goirl-checkpoint") throw ParseError("format", "not a goirl checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) throw ParseError("version", "unsupported checkpoint version");
  if (j.value("kind", "") != kind) throw ParseError("kind", "expected a '" + kind + "' checkpoint");
  if (!j.contains("widths")) throw ParseError("widths", "missing");
  return widths_from_json(j.at("widths"));
}

inline void save_context_model(const ContextModel& m, const std::filesystem::path& path, const Json& config = Json()) {
  write_text_file(path, checkpoint_json("context", m.widths(), m.params(), config).dump() + "\n");
}

inline ContextModel load_context_model(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw ParseError("checkpoint", e.what());
  }
  ContextModel m(checkpoint_header(j, "context"));
  if (!j.contains("tensors")) throw ParseError("tensors", "missing");
  params_from_json(j.at("tensors"), m.params());
  return m;
}

}  // namespace goirl
