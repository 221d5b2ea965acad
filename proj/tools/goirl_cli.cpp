#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "goirl/config.hpp"
#include "goirl/evaluate.hpp"
#include "goirl/generator.hpp"
#include "goirl/payload.hpp"
#include "goirl/render.hpp"
#include "goirl/service.hpp"

namespace fs = std::filesystem;
using namespace goirl;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::string> flags;  // overrides from dedicated flags; applied last
};

/// Registers a flag that turns into the override `key=<value>`.
template <typename T>
void override_flag(CLI::App* cmd, Common& common, const std::string& name, const std::string& key,
                   const std::string& help) {
  cmd->add_option_function<T>(
      name,
      [&common, key](const T& v) { common.flags.push_back(key + "=" + Json(v).dump()); },
      help + " (config key " + key + ")");
}

RunConfig resolve(const Common& c) {
  std::vector<std::string> all = c.sets;
  all.insert(all.end(), c.flags.begin(), c.flags.end());
  RunConfig cfg = load_run_config(c.config_file, all);
  if (cfg.irl_checkpoint.empty()) cfg.irl_checkpoint = (fs::path(cfg.out) / "irl_checkpoint.json").string();
  if (cfg.refiner_checkpoint.empty()) cfg.refiner_checkpoint = (fs::path(cfg.out) / "refiner_checkpoint.json").string();
  return cfg;
}

void log_config(const RunConfig& cfg, const std::string& command, const Json& extra = Json::object()) {
  Json j = run_config_json(cfg);
  j["command"] = command;
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text_file(fs::path(cfg.out) / (command + "_config.json"), j.dump(2) + "\n");
}

std::vector<Scenario> load_corpus(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("no scenario directory given (--data or config key data)");
  if (!fs::is_directory(cfg.data)) throw ConfigError("scenario directory '" + cfg.data + "' does not exist");
  std::vector<Scenario> out;
  for (const auto& p : list_scenarios(cfg.data)) {
    try {
      out.push_back(load_scenario(p));
    } catch (const ParseError& e) {
      throw ParseError(e.field(), p.filename().string() + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("no scenario_*.json files in '" + cfg.data + "'");
  return out;
}

ContextModel need_context_model(const RunConfig& cfg) {
  if (!fs::exists(cfg.irl_checkpoint)) throw ConfigError("stage-1 checkpoint '" + cfg.irl_checkpoint + "' not found");
  return load_context_model(cfg.irl_checkpoint);
}

Refiner need_refiner(const RunConfig& cfg) {
  if (!fs::exists(cfg.refiner_checkpoint))
    throw ConfigError("refiner checkpoint '" + cfg.refiner_checkpoint + "' not found");
  return load_refiner(cfg.refiner_checkpoint);
}

std::vector<Cell> parse_cell_list(const std::string& text) {
  std::vector<Cell> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    int r = 0, c = 0;
    char comma = 0, extra = 0;
    std::istringstream is(item);
    if (!(is >> r >> comma >> c) || comma != ',' || (is >> extra))
      throw ConfigError("cell '" + item + "' is not of the form row,col");
    out.push_back({r, c});
  }
  if (out.empty()) throw ConfigError("no cells given");
  return out;
}

std::string error_type(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ContractViolation*>(&e)) return "contract";
  if (dynamic_cast<const TrainingDivergence*>(&e)) return "divergence";
  if (dynamic_cast<const SizeGuardError*>(&e)) return "size_guard";
  return "runtime";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen(const RunConfig& cfg, const std::string& kinds, int count) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  std::vector<SceneKind> ks;
  std::stringstream ss(kinds);
  std::string k;
  while (std::getline(ss, k, ',')) ks.push_back(parse_scene_kind(k));
  if (ks.empty()) throw ConfigError("--kind is empty");
  for (int i = 0; i < count; ++i) {
    const Scenario s = generate_scenario(ks[static_cast<std::size_t>(i) % ks.size()], cfg.generator,
                                         derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "scenario_%05d.json", i);
    save_scenario(s, fs::path(cfg.out) / name);
  }
  log_config(cfg, "gen", Json{{"kind", kinds}, {"count", count}});
  std::cout << "wrote " << count << " scenarios to " << cfg.out << "\n";
}

void cmd_train_irl(const RunConfig& cfg) {
  const MdpSpec mdp = cfg.mdp();
  std::vector<PreparedScene> corpus;
  int skipped = 0;
  for (const auto& s : load_corpus(cfg)) {
    PreparedScene p = prepare_scene(s, mdp);
    if (!p.demo) {
      ++skipped;
      continue;
    }
    corpus.push_back(std::move(p));
  }
  ContextModel model(cfg.irl.widths, cfg.seed);
  const IrlRun run = train_irl(model, corpus, cfg.irl, mdp, [](const IrlEpochLog& e) {
    std::cerr << "epoch " << e.epoch << " nll " << e.mean_nll << "\n";
  });
  save_context_model(model, cfg.irl_checkpoint, irl_config_json(cfg.irl));
  write_text_file(fs::path(cfg.out) / "irl_log.csv", irl_log_csv(run.log));
  std::string warnings;
  for (const auto& w : run.warnings) warnings += w + "\n";
  write_text_file(fs::path(cfg.out) / "irl_warnings.txt", warnings);
  log_config(cfg, "train-irl", Json{{"scenes", corpus.size()}, {"skipped_without_gt", skipped}});
  std::cout << "stage-1 checkpoint " << cfg.irl_checkpoint << " (final NLL " << run.log.back().mean_nll << ")\n";
}

void cmd_train_refine(const RunConfig& cfg) {
  const MdpSpec mdp = cfg.mdp();
  const ContextModel model = need_context_model(cfg);
  std::vector<PreparedScene> preps;
  for (const auto& s : load_corpus(cfg)) {
    PreparedScene p = prepare_scene(s, mdp);
    if (p.scene.gt_future && !p.scene.gt_future->empty()) preps.push_back(std::move(p));
  }
  const std::vector<SceneInference> corpus = infer_corpus(model, preps, cfg.pipeline, cfg.seed, mdp);
  Refiner refiner(model.widths(), cfg.refine.widths, kHistorySteps, cfg.t_f, cfg.seed);
  const auto log = train_refiner(refiner, corpus, cfg.refine, mdp, [](int epoch, double loss) {
    std::cerr << "epoch " << epoch << " loss " << loss << "\n";
  });
  save_refiner(refiner, cfg.refiner_checkpoint,
               Json{{"refine", refine_config_json(cfg.refine)}, {"pipeline", pipeline_config_json(cfg.pipeline)}});
  write_text_file(fs::path(cfg.out) / "refine_log.csv", refine_log_csv(log));
  log_config(cfg, "train-refine", Json{{"scenes", corpus.size()}});
  std::cout << "refiner checkpoint " << cfg.refiner_checkpoint << "\n";
}

void cmd_predict(const RunConfig& cfg, const std::string& scenario, std::string output, bool all_plans) {
  const MdpSpec mdp = cfg.mdp();
  const ContextModel model = need_context_model(cfg);
  const Refiner refiner = need_refiner(cfg);
  const SceneInference inf = infer_proposals(model, prepare_scene(load_scenario(scenario), mdp), cfg.pipeline,
                                             cfg.seed, mdp);
  const Prediction pred = predict_scene(refiner, inf, mdp);
  PayloadOptions opt;
  opt.all_plans = all_plans;
  if (output.empty()) output = (fs::path(cfg.out) / "predictions.json").string();
  write_text_file(output, prediction_payload(inf, pred, cfg.pipeline, cfg.seed, mdp, opt).dump(1) + "\n");
  log_config(cfg, "predict", Json{{"scenario", scenario}, {"output", output}});
  std::cout << "wrote " << output << "\n";
}

void cmd_eval(const RunConfig& cfg, bool timing) {
  const ContextModel model = need_context_model(cfg);
  const Refiner refiner = need_refiner(cfg);
  const MetricReport rep = evaluate_corpus(model, refiner, load_corpus(cfg), cfg.pipeline, cfg.seed, cfg.mdp(), timing);
  write_text_file(fs::path(cfg.out) / "metrics.csv", metric_csv(rep));
  write_text_file(fs::path(cfg.out) / "metrics_summary.csv", metric_summary_csv(rep));
  log_config(cfg, "eval", Json{{"timing", timing}});
  std::cout << metric_summary_csv(rep);
}

void cmd_render(const RunConfig& cfg, const std::string& scenario, const std::string& predictions,
                std::string output) {
  const Scenario s = to_target_frame(load_scenario(scenario)).scenario;
  std::optional<Json> payload;
  if (!predictions.empty()) {
    try {
      payload = Json::parse(read_text_file(predictions));
    } catch (const Json::parse_error& e) {
      throw ParseError("predictions", e.what());
    }
  }
  if (output.empty()) output = (fs::path(cfg.out) / "render.svg").string();
  write_text_file(output, render_svg(s, payload ? &*payload : nullptr));
  log_config(cfg, "render", Json{{"scenario", scenario}, {"predictions", predictions}, {"output", output}});
  std::cout << "wrote " << output << "\n";
}

void cmd_mask(const RunConfig& cfg, const std::string& scenario, const std::string& cells, std::string output) {
  Scenario s = load_scenario(scenario);
  const std::vector<Cell> list = parse_cell_list(cells);
  const MaskEdit e = block_cells(s, list);
  if (output.empty()) output = (fs::path(cfg.out) / fs::path(scenario).filename()).string();
  save_scenario(s, output);
  log_config(cfg, "mask", Json{{"scenario", scenario}, {"cells", cells}, {"output", output}});
  auto cells_json = [](const std::vector<Cell>& v) {
    Json a = Json::array();
    for (const Cell& c : v) a.push_back(Json::array({c.row, c.col}));
    return a;
  };
  std::cout << Json{{"output", output}, {"blocked", cells_json(e.changed)}, {"already_undrivable", cells_json(e.noop)}}.dump()
            << "\n";
}

void cmd_serve(const RunConfig& cfg, const std::string& host, int port) {
  ServiceConfig sc;
  sc.corpus = cfg.data;
  sc.irl_checkpoint = cfg.irl_checkpoint;
  sc.refiner_checkpoint = cfg.refiner_checkpoint;
  sc.pipeline = cfg.pipeline;
  sc.mdp = cfg.mdp();
  if (sc.corpus.empty()) throw ConfigError("no scenario directory given (--data or config key data)");
  WhatIfService service(sc);
  httplib::Server srv;
  service.mount(srv);
  if (!service.has_checkpoints()) std::cerr << "warning: checkpoints missing; /predict will answer 409\n";
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  srv.listen_after_bind();
}

void cmd_bench(const RunConfig& cfg, int reps, const std::string& kind) {
  if (reps < 1) throw ConfigError("--reps must be >= 1");
  const MdpSpec mdp = cfg.mdp();
  const ContextModel model =
      fs::exists(cfg.irl_checkpoint) ? load_context_model(cfg.irl_checkpoint) : ContextModel(cfg.irl.widths, cfg.seed);
  const PreparedScene prep = prepare_scene(generate_scenario(kind, cfg.generator, cfg.seed), mdp);
  const Context ctx = model.forward(prep.graph, prep.gate, prep.scene.fine_grid());
  using Clock = std::chrono::steady_clock;
  struct Row {
    std::string op;
    std::vector<double> ms;
  };
  std::vector<Row> rows{{"soft_vi_stationary", {}}, {"soft_vi_finite_horizon", {}}, {"svf", {}}, {"sample_plans", {}}};
  SolveResult sol;
  for (int r = 0; r < reps; ++r) {
    auto t = Clock::now();
    sol = soft_value_iteration(ctx.reward, mdp, SolveMode::kStationary, cfg.pipeline.sweeps, cfg.pipeline.tol);
    rows[0].ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t).count());
    t = Clock::now();
    const SolveResult fh = soft_value_iteration(ctx.reward, mdp, SolveMode::kFiniteHorizon, cfg.pipeline.sweeps,
                                                cfg.pipeline.tol);
    rows[1].ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t).count());
    t = Clock::now();
    const SvfTable svf = expected_svf(sol.policy, mdp, prep.s_init);
    rows[2].ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t).count());
    t = Clock::now();
    const auto plans = sample_plans(sol.policy, mdp, prep.s_init, cfg.pipeline.L, cfg.seed);
    rows[3].ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t).count());
  }
  std::ostringstream csv;
  csv << "op,reps,mean_ms,min_ms,max_ms\n";
  std::printf("%-24s %6s %10s %10s %10s\n", "op", "reps", "mean_ms", "min_ms", "max_ms");
  for (const auto& row : rows) {
    double sum = 0.0, lo = kInf, hi = 0.0;
    for (double v : row.ms) sum += v, lo = std::min(lo, v), hi = std::max(hi, v);
    const double mean = sum / static_cast<double>(row.ms.size());
    std::printf("%-24s %6d %10.3f %10.3f %10.3f\n", row.op.c_str(), reps, mean, lo, hi);
    csv << row.op << "," << reps << "," << mean << "," << lo << "," << hi << "\n";
  }
  write_text_file(fs::path(cfg.out) / "bench.csv", csv.str());
  log_config(cfg, "bench", Json{{"reps", reps}, {"kind", kind}, {"L", cfg.pipeline.L}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal-oriented inverse-RL trajectory prediction on synthetic driving scenes"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config_file, "JSON run config; dedicated flags and --set override it");
  app.add_option("--set", common.sets, "Config override key=value, e.g. irl.lr=0.001 (repeatable)");
  override_flag<std::uint64_t>(&app, common, "--seed", "seed", "Master seed");
  override_flag<std::string>(&app, common, "--data", "data", "Scenario corpus directory");
  override_flag<std::string>(&app, common, "--out", "out", "Output directory");
  override_flag<std::string>(&app, common, "--irl-checkpoint", "irl_checkpoint",
                             "Stage-1 checkpoint (default <out>/irl_checkpoint.json)");
  override_flag<std::string>(&app, common, "--refiner-checkpoint", "refiner_checkpoint",
                             "Refiner checkpoint (default <out>/refiner_checkpoint.json)");

  auto* gen = app.add_subcommand("gen", "Generate a synthetic scenario corpus into --out");
  std::string kinds = "t_junction";
  int count = 10;
  gen->add_option("--kind", kinds, "Scene kind(s), comma separated: straight|curve|t_junction|crossing");
  gen->add_option("--count", count, "Number of scenarios");
  override_flag<double>(gen, common, "--block-prob", "generator.block_prob", "Probability of a blocked branch");

  auto* tirl = app.add_subcommand("train-irl", "Stage 1: train the context encoder and reward head");
  override_flag<int>(tirl, common, "--epochs", "irl.epochs", "Epochs");
  override_flag<double>(tirl, common, "--lr", "irl.lr", "Learning rate");
  override_flag<int>(tirl, common, "--batch", "irl.batch", "Batch size");
  override_flag<std::string>(tirl, common, "--mode", "irl.mode", "Solver: stationary|finite_horizon");

  auto* tref = app.add_subcommand("train-refine", "Stage 2: train the trajectory refiner on frozen stage-1 output");
  override_flag<int>(tref, common, "--epochs", "refine.epochs", "Epochs");
  override_flag<double>(tref, common, "--lr", "refine.lr", "Learning rate");
  override_flag<int>(tref, common, "--batch", "refine.batch", "Batch size");

  std::string scenario, output, predictions, cells, host = "127.0.0.1", bench_kind = "t_junction";
  bool all_plans = false, timing = false;
  int port = 8080, reps = 5;

  auto* pred = app.add_subcommand("predict", "Predict K trajectories for one scenario");
  pred->add_option("--scenario", scenario, "Scenario file")->required();
  pred->add_option("--output", output, "Payload file (default <out>/predictions.json)");
  pred->add_flag("--all-plans", all_plans, "Keep every sampled plan in the payload");
  override_flag<int>(pred, common, "--K", "pipeline.K", "Number of modes");
  override_flag<int>(pred, common, "--L", "pipeline.L", "Number of sampled plans");

  auto* ev = app.add_subcommand("eval", "Evaluate the pipeline on --data; writes metrics.csv");
  ev->add_flag("--timing", timing, "Record wall_ms per scenario (output no longer byte-stable)");
  override_flag<int>(ev, common, "--K", "pipeline.K", "Number of modes");
  override_flag<int>(ev, common, "--L", "pipeline.L", "Number of sampled plans");

  auto* ren = app.add_subcommand("render", "Layered SVG of a scenario and optional predictions");
  ren->add_option("--scenario", scenario, "Scenario file")->required();
  ren->add_option("--predictions", predictions, "Payload written by predict");
  ren->add_option("--output", output, "SVG file (default <out>/render.svg)");

  auto* msk = app.add_subcommand("mask", "Copy a scenario with listed fine cells set undrivable");
  msk->add_option("--scenario", scenario, "Scenario file")->required();
  msk->add_option("--cells", cells, "Cells as row,col;row,col")->required();
  msk->add_option("--output", output, "Output file (default <out>/<scenario file name>)");

  auto* srv = app.add_subcommand("serve", "Run the what-if HTTP service");
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--port", port, "Port (0 picks a free one)");

  auto* bench = app.add_subcommand("bench", "Timing table for soft value iteration, SVF and plan sampling");
  bench->add_option("--reps", reps, "Repetitions");
  bench->add_option("--kind", bench_kind, "Scene kind used for the benchmark");
  override_flag<int>(bench, common, "--L", "pipeline.L", "Number of sampled plans");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << Json{{"error", e.what()}, {"type", "usage"}}.dump() << std::endl;
    return 2;
  }

  try {
    const RunConfig cfg = resolve(common);
    if (*gen) cmd_gen(cfg, kinds, count);
    else if (*tirl) cmd_train_irl(cfg);
    else if (*tref) cmd_train_refine(cfg);
    else if (*pred) cmd_predict(cfg, scenario, output, all_plans);
    else if (*ev) cmd_eval(cfg, timing);
    else if (*ren) cmd_render(cfg, scenario, predictions, output);
    else if (*msk) cmd_mask(cfg, scenario, cells, output);
    else if (*srv) cmd_serve(cfg, host, port);
    else if (*bench) cmd_bench(cfg, reps, bench_kind);
  } catch (const std::exception& e) {
    std::cerr << Json{{"error", e.what()}, {"type", error_type(e)}}.dump() << std::endl;
    return error_type(e) == "config" ? 2 : 1;
  }
  return 0;
}
