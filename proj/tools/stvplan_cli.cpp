// Command-line front end: one planning episode, closed-loop simulation,
// open-loop replay batches, ablation sweeps and debug dumps.
//
// Every subcommand writes metrics.json (reproducible for a given input and
// seed) and timing.json (wall-clock latencies) into --out.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "stvplan/harness/io.hpp"
#include "stvplan/stvplan.hpp"

namespace fs = std::filesystem;
using namespace stvplan;
using namespace stvplan::harness;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int verbosity = 0;
};

PlannerConfig load_config(const Common& c) {
  if (c.config_path.empty()) return {};
  return planner_config_from_json(parse_json(read_file(c.config_path), c.config_path));
}

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return (fs::path(c.out_dir) / name).string();
}

Scenario load_scenario(const std::string& path, std::uint64_t seed, int agents) {
  if (path.empty()) return random_scenario(seed, agents);
  return scenario_from_json(parse_json(read_file(path), path));
}

/// One JSON line per optimizer attempt, for -v.
void log_attempts(const EpisodeResult& ep, double t) {
  for (const BehaviorOutcome& b : ep.behaviors)
    for (const Attempt& a : b.attempts)
      std::cerr << Json{{"t", t},
                        {"behavior", to_string(b.behavior)},
                        {"segments", a.segments},
                        {"status", to_string(a.status)},
                        {"iterations", a.iterations},
                        {"reason", a.reason}}
                       .dump()
                << "\n";
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string scene;
  int agents = 12;
};

int run_plan(const Common& c, const PlanArgs& a) {
  const PlannerConfig config = load_config(c);
  const Scenario sc = load_scenario(a.scene, c.seed, a.agents);
  Scene scene = scene_from_scenario(sc);
  const EpisodeResult ep = plan_episode(scene, config);
  if (c.verbosity > 0) log_attempts(ep, scene.timestamp);
  write_file(out_path(c, "episode.json"), dump_json(to_json(ep)));
  write_file(out_path(c, "scenario.json"), dump_json(to_json(sc)));
  write_file(out_path(c, "corridor.svg"), corridor_svg(ep));
  Json metrics{{"ok", ep.ok()},
               {"selected", ep.selected ? Json(to_string(*ep.selected)) : Json(nullptr)},
               {"voxels", ep.voxels.total()}};
  if (ep.trajectory) {
    write_file(out_path(c, "trajectory.csv"), trajectory_csv(*ep.trajectory));
    write_file(out_path(c, "profile.svg"), profile_svg(*ep.trajectory));
    const double t1 = ep.trajectory->end_time();
    metrics["cost"] = ep.outcome(*ep.selected).cost;
    metrics["segments"] = ep.trajectory->size();
    metrics["end_state"] = {{"t", t1},
                            {"s", ep.trajectory->evaluate(t1, Axis::kS, 0)},
                            {"d", ep.trajectory->evaluate(t1, Axis::kD, 0)},
                            {"v_s", ep.trajectory->evaluate(t1, Axis::kS, 1)}};
  }
  write_file(out_path(c, "metrics.json"), dump_json(metrics));
  write_file(out_path(c, "timing.json"), dump_json(to_json(ep.timing)));
  std::cout << (ep.ok() ? "planned " + std::string(to_string(*ep.selected)) : std::string("no plan")) << "\n";
  return ep.ok() ? 0 : 2;
}

// ---------------------------------------------------------------------------

struct SimArgs {
  std::string scenario;
  double duration = 480.0;
  int agents = 20;
};

int run_sim(const Common& c, const SimArgs& a) {
  const PlannerConfig config = load_config(c);
  const Scenario sc = load_scenario(a.scenario, c.seed, a.agents);
  const ClosedLoopResult r = run_closed_loop(sc, config, a.duration);
  write_file(out_path(c, "metrics.json"), dump_json(to_json(r.metrics)));
  write_file(out_path(c, "trace.csv"), closed_loop_trace_csv(r.trace));
  write_file(out_path(c, "trace.svg"), trace_svg(r.trace));
  write_file(out_path(c, "scenario.json"), dump_json(to_json(sc)));
  write_file(out_path(c, "timing.json"), dump_json(to_json(LatencyStats::from(r.latencies_ms))));
  const auto& m = r.metrics;
  std::cout << "simulated " << m.simulated_time << " s, collisions " << m.collisions << ", lane changes "
            << m.lane_changes << ", mean v_s " << m.mean_v_s << (m.aborted ? ", aborted: " + m.abort_reason : "")
            << "\n";
  return m.aborted ? 2 : 0;
}

// ---------------------------------------------------------------------------

struct ReplayArgs {
  std::string task = "both";
  std::size_t runs = 100;
  double density = 15.0;
  double horizon = 10.0;
  std::string log;
  std::string ego_id = "ego";
  int target_lane = -1;
  int lane_count = 4;
  std::size_t threads = 1;
  std::string export_log;
};

std::vector<ReplayTask> tasks_of(const std::string& name) {
  if (name == "lane_keep") return {ReplayTask::kLaneKeep};
  if (name == "lane_change") return {ReplayTask::kLaneChange};
  if (name == "both") return {ReplayTask::kLaneKeep, ReplayTask::kLaneChange};
  throw Error(ErrorCode::kInvalidConfig, "task must be lane_keep, lane_change or both");
}

ReplayBatchOptions batch_options(const Common& c, const ReplayArgs& a, ReplayTask task) {
  ReplayBatchOptions o;
  o.task = task;
  o.runs = a.runs;
  o.seed = c.seed;
  o.log.density = a.density;
  o.log.lane_count = a.lane_count;
  o.open_loop.horizon = a.horizon;
  // Per-tick logging from several workers would interleave.
  o.threads = c.verbosity > 0 ? 1 : a.threads;
  return o;
}

int run_replay(const Common& c, const ReplayArgs& a) {
  const PlannerConfig config = load_config(c);
  Json metrics = Json::object(), timing = Json::object();
  std::string table = metrics_csv_header();
  if (!a.log.empty()) {
    const ReplayLog log = read_replay_csv(read_file(a.log), 0.1, a.lane_count);
    if (a.target_lane < 0) throw Error(ErrorCode::kInvalidConfig, "--target-lane is required with --log");
    OpenLoopOptions ol;
    ol.horizon = a.horizon;
    if (c.verbosity > 0) ol.on_tick = [](const Scene& s, const EpisodeResult& ep) { log_attempts(ep, s.timestamp); };
    const RunResult r = run_open_loop(log, a.ego_id, a.target_lane, config, ol);
    const Metrics m = aggregate({r});
    metrics["log"] = {{"metrics", to_json(m)}, {"run", to_json(r)}};
    timing["log"] = to_json(LatencyStats::from(r.latencies_ms));
    table += metrics_csv_row("log", m);
  } else {
    for (ReplayTask task : tasks_of(a.task)) {
      ReplayBatchOptions o = batch_options(c, a, task);
      if (c.verbosity > 0) o.open_loop.on_tick = [](const Scene& s, const EpisodeResult& ep) { log_attempts(ep, s.timestamp); };
      const auto runs = run_replay_batch(config, o);
      const Metrics m = aggregate(runs);
      Json per_run = Json::array();
      for (const RunResult& r : runs) per_run.push_back(to_json(r));
      const std::string name(to_string(task));
      metrics[name] = {{"seed", c.seed}, {"density", a.density}, {"metrics", to_json(m)}, {"runs", per_run}};
      timing[name] = to_json(latency_of(runs));
      table += metrics_csv_row(name, m);
      std::cout << name << ": success " << m.success_rate << ", failure " << m.failure_rate << ", risk " << m.risk
                << ", efficiency " << m.efficiency << "\n";
    }
    if (!a.export_log.empty()) {
      SyntheticReplayConfig lc = batch_options(c, a, ReplayTask::kLaneKeep).log;
      lc.duration = a.horizon + 1.0;
      write_file(a.export_log, write_replay_csv(synthetic_log(lc, c.seed)));
    }
  }
  write_file(out_path(c, "metrics.json"), dump_json(metrics));
  write_file(out_path(c, "metrics.csv"), table);
  write_file(out_path(c, "timing.json"), dump_json(timing));
  return 0;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string harness = "replay";
  std::vector<std::string> variants;
  ReplayArgs replay;
  SimArgs sim;
};

int run_ablate(const Common& c, AblateArgs a) {
  const PlannerConfig config = load_config(c);
  std::vector<Variant> variants;
  if (a.variants.empty()) variants.assign(kAllVariants.begin(), kAllVariants.end());
  for (const std::string& name : a.variants) {
    const auto v = parse_variant(name);
    if (!v) throw Error(ErrorCode::kInvalidConfig, "unknown variant " + name);
    variants.push_back(*v);
  }
  Json metrics = Json::object(), timing = Json::object();
  std::string table = metrics_csv_header();
  if (a.harness == "replay") {
    for (ReplayTask task : tasks_of(a.replay.task)) {
      const auto rows = ablate_replay(config, batch_options(c, a.replay, task), variants);
      Json jt = Json::object(), tt = Json::object();
      for (const VariantMetrics& r : rows) {
        const std::string name(to_string(r.variant));
        jt[name] = to_json(r.metrics);
        tt[name] = to_json(r.latency);
        table += std::string(to_string(task)) + "/" + metrics_csv_row(name, r.metrics);
        std::cout << to_string(task) << " " << name << ": failure " << r.metrics.failure_rate << ", efficiency "
                  << r.metrics.efficiency << "\n";
      }
      metrics[std::string(to_string(task))] = jt;
      timing[std::string(to_string(task))] = tt;
    }
  } else if (a.harness == "sim") {
    table = "name,collisions,lane_changes,mean_v_s,aborted\n";
    const Scenario sc = load_scenario(a.sim.scenario, c.seed, a.sim.agents);
    for (const ClosedLoopVariantMetrics& r : ablate_closed_loop(config, sc, a.sim.duration, variants)) {
      const std::string name(to_string(r.variant));
      metrics[name] = to_json(r.metrics);
      timing[name] = to_json(r.latency);
      table += name + "," + std::to_string(r.metrics.collisions) + "," + std::to_string(r.metrics.lane_changes) +
               "," + format_number(r.metrics.mean_v_s) + "," + (r.metrics.aborted ? "1" : "0") + "\n";
      std::cout << name << ": mean v_s " << r.metrics.mean_v_s << ", collisions " << r.metrics.collisions << "\n";
    }
  } else {
    throw Error(ErrorCode::kInvalidConfig, "harness must be replay or sim");
  }
  write_file(out_path(c, "metrics.json"), dump_json(metrics));
  write_file(out_path(c, "metrics.csv"), table);
  write_file(out_path(c, "timing.json"), dump_json(timing));
  return 0;
}

// ---------------------------------------------------------------------------

struct DumpArgs {
  std::string scene;
  int agents = 12;
  std::string behavior = "lane_keep";
};

int run_dump(const Common& c, const DumpArgs& a) {
  const PlannerConfig config = load_config(c);
  const Scenario sc = load_scenario(a.scene, c.seed, a.agents);
  const Scene scene = scene_from_scenario(sc);
  Behavior behavior = Behavior::kLaneKeep;
  if (a.behavior == "left") behavior = Behavior::kLaneChangeLeft;
  else if (a.behavior == "right") behavior = Behavior::kLaneChangeRight;
  else if (a.behavior != "lane_keep") throw Error(ErrorCode::kInvalidConfig, "behavior must be lane_keep, left or right");

  // Same frame shift plan_episode uses, so the dumped QP is the one it solves.
  Scene local = scene;
  const double s0 = local.ego.state.s;
  local.ego.state.s = 0.0;
  for (Agent& ag : local.agents) ag.state.s -= s0;
  const VoxelSet voxels = generate_voxels(local, config.voxel.partition(), config.limits, config.voxel,
                                          config.perception);
  const VoxelGraph graph = build_graph(voxels, config.thresholds, config.limits);
  write_file(out_path(c, "voxels.json"), dump_json(to_json(voxels)));
  write_file(out_path(c, "graph.json"), dump_json(to_json(graph)));
  Json metrics{{"behavior", a.behavior}, {"voxels", voxels.total()}, {"frame_offset_s", s0}};
  std::size_t edges = 0;
  for (const auto& layer : graph.layers)
    for (const VoxelNode& n : layer) edges += n.parents.size();
  metrics["edges"] = edges;
  SearchOptions so;
  so.start_s = 0.0;
  std::optional<VoxelSequence> seq;
  if (local.lanes.has_lane(target_lane(behavior))) seq = search(graph, behavior, so);
  if (seq && behavior != Behavior::kLaneKeep) {
    ModifiedSequence mod = modify_sequence_for_lane_change(*seq, graph, config.thresholds.transition);
    seq = mod.empty_intersection ? std::nullopt : std::optional<VoxelSequence>(mod.sequence);
  }
  metrics["sequence_found"] = seq.has_value();
  if (seq) {
    const IdealEndStates ideals =
        ideal_end_states(*seq, local, config.optimizer.weights, config.limits, config.perception);
    const QpProblem qp = assemble(*seq, local.ego.state, ideals, config.optimizer.weights, config.limits);
    write_file(out_path(c, "sequence.json"), dump_json(to_json(*seq)));
    write_file(out_path(c, "qp.json"), dump_json(to_json(qp)));
    metrics["qp"] = {{"variables", qp.dimension()}, {"equalities", qp.A_eq.rows()}, {"inequalities", qp.A_in.rows()}};
  }
  write_file(out_path(c, "metrics.json"), dump_json(metrics));
  write_file(out_path(c, "timing.json"), dump_json(Json::object()));
  std::cout << "dumped " << voxels.total() << " voxels, " << edges << " edges"
            << (seq ? ", sequence and QP" : ", no sequence") << "\n";
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "planner config JSON")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  sub->add_option("--out", c.out_dir, "output directory")->capture_default_str();
  sub->add_flag("-v,--verbose", c.verbosity, "per-attempt JSON lines on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal voxel corridor planner"};
  app.require_subcommand(1);
  Common common;

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "one planning episode from a scenario snapshot");
  add_common(plan_cmd, common);
  plan_cmd->add_option("--scene", plan.scene, "scenario JSON (random when omitted)")->check(CLI::ExistingFile);
  plan_cmd->add_option("--agents", plan.agents, "agents in the random scenario")->capture_default_str();

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("sim", "closed-loop simulation");
  add_common(sim_cmd, common);
  sim_cmd->add_option("--scenario", sim.scenario, "scenario JSON (random when omitted)")->check(CLI::ExistingFile);
  sim_cmd->add_option("--duration", sim.duration, "simulated seconds")->capture_default_str();
  sim_cmd->add_option("--agents", sim.agents, "agents in the random scenario")->capture_default_str();

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "open-loop replay batch");
  add_common(replay_cmd, common);
  auto add_replay_options = [](CLI::App* cmd, ReplayArgs& r) {
    cmd->add_option("--task", r.task, "lane_keep, lane_change or both")->capture_default_str();
    cmd->add_option("--runs", r.runs, "runs per task")->capture_default_str();
    cmd->add_option("--density", r.density, "vehicles per km per lane")->capture_default_str();
    cmd->add_option("--horizon", r.horizon, "seconds per run")->capture_default_str();
    cmd->add_option("--lanes", r.lane_count, "lane count")->capture_default_str();
    cmd->add_option("--threads", r.threads, "worker threads, 0 = all cores")->capture_default_str();
  };
  add_replay_options(replay_cmd, replay);
  replay_cmd->add_option("--log", replay.log, "replay CSV instead of synthetic logs")->check(CLI::ExistingFile);
  replay_cmd->add_option("--ego-id", replay.ego_id, "agent replaced by the planner")->capture_default_str();
  replay_cmd->add_option("--target-lane", replay.target_lane, "target lane index for --log");
  replay_cmd->add_option("--export-log", replay.export_log, "write the seed's synthetic log as CSV");

  AblateArgs ablate;
  ablate.replay.density = 30.0;
  ablate.replay.runs = 50;
  auto* ablate_cmd = app.add_subcommand("ablate", "ablation variant sweep");
  add_common(ablate_cmd, common);
  ablate_cmd->add_option("--harness", ablate.harness, "replay or sim")->capture_default_str();
  ablate_cmd->add_option("--variants", ablate.variants,
                         "subset of default, fixed_voxel_count, uniform_dt, jerk_only, jerk_end_states");
  add_replay_options(ablate_cmd, ablate.replay);
  ablate_cmd->add_option("--duration", ablate.sim.duration, "simulated seconds for --harness sim")
      ->capture_default_str();
  ablate_cmd->add_option("--agents", ablate.sim.agents, "agents for --harness sim")->capture_default_str();

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand("dump", "corridor, graph and QP debug dump");
  add_common(dump_cmd, common);
  dump_cmd->add_option("--scene", dump.scene, "scenario JSON (random when omitted)")->check(CLI::ExistingFile);
  dump_cmd->add_option("--agents", dump.agents, "agents in the random scenario")->capture_default_str();
  dump_cmd->add_option("--behavior", dump.behavior, "lane_keep, left or right")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*plan_cmd) return run_plan(common, plan);
    if (*sim_cmd) return run_sim(common, sim);
    if (*replay_cmd) return run_replay(common, replay);
    if (*ablate_cmd) return run_ablate(common, ablate);
    if (*dump_cmd) return run_dump(common, dump);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
