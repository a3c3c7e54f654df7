#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "stvplan/harness/metrics.hpp"
#include "stvplan/harness/simulator.hpp"
#include "stvplan/planner.hpp"

namespace stvplan::harness {

/// One row of a replay log. `d` is measured from the center of lane 0.
struct ReplayRecord {
  long frame = 0;
  double time = 0.0;
  std::string id;
  double s = 0.0;
  double d = 0.0;
  double v_s = 0.0;
  double v_d = 0.0;
  double length = 4.8;
  double width = 1.9;
};

struct ReplayFrame {
  long index = 0;
  double time = 0.0;
  std::vector<ReplayRecord> agents;
};

/// Recorded traffic at a fixed frame period. Lane geometry is not part of
/// the CSV and travels alongside it.
struct ReplayLog {
  double frame_period = 0.1;
  int lane_count = 4;
  double lane_width = 3.75;
  double speed_limit = 20.0;
  std::vector<ReplayFrame> frames;

  /// Frames strictly ordered in time and every agent's trace contiguous.
  void validate() const {
    std::map<std::string, std::size_t> last_seen;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      if (k > 0 && !(frames[k].time > frames[k - 1].time))
        throw Error(ErrorCode::kParseError, "replay frames not strictly ordered in time");
      for (const ReplayRecord& r : frames[k].agents) {
        auto it = last_seen.find(r.id);
        if (it != last_seen.end() && it->second + 1 != k)
          throw Error(ErrorCode::kParseError, "trace of " + r.id + " is not contiguous");
        last_seen[r.id] = k;
      }
    }
  }

  /// Groups flat CSV rows into frames by frame index.
  static ReplayLog from_records(const std::vector<ReplayRecord>& rows, double frame_period) {
    ReplayLog log;
    log.frame_period = frame_period;
    for (const ReplayRecord& r : rows) {
      if (log.frames.empty() || log.frames.back().index != r.frame) {
        if (!log.frames.empty() && r.frame < log.frames.back().index)
          throw Error(ErrorCode::kParseError, "replay rows not ordered by frame");
        log.frames.push_back({r.frame, r.time, {}});
      } else if (r.time != log.frames.back().time) {
        throw Error(ErrorCode::kParseError, "frame " + std::to_string(r.frame) + " has two times");
      }
      log.frames.back().agents.push_back(r);
    }
    log.validate();
    return log;
  }

  std::vector<ReplayRecord> records() const {
    std::vector<ReplayRecord> out;
    for (const ReplayFrame& f : frames) out.insert(out.end(), f.agents.begin(), f.agents.end());
    return out;
  }

  double start_time() const { return frames.empty() ? 0.0 : frames.front().time; }
  double end_time() const { return frames.empty() ? 0.0 : frames.back().time; }

  bool contains(const std::string& id) const {
    for (const ReplayFrame& f : frames)
      for (const ReplayRecord& r : f.agents)
        if (r.id == id) return true;
    return false;
  }

  /// Time span over which `id` is recorded.
  std::optional<Interval> span_of(const std::string& id) const {
    std::optional<Interval> span;
    for (const ReplayFrame& f : frames)
      for (const ReplayRecord& r : f.agents)
        if (r.id == id) span = span ? Interval{span->lo, f.time} : Interval{f.time, f.time};
    return span;
  }

  /// Agents linearly interpolated at time t. Agents present in only one of
  /// the bracketing frames are left out.
  std::vector<ReplayRecord> at(double t) const {
    if (frames.empty() || t < start_time() - 1e-9 || t > end_time() + 1e-9)
      throw Error(ErrorCode::kTruncatedLog, "time outside the replay log");
    auto hi = std::lower_bound(frames.begin(), frames.end(), t,
                               [](const ReplayFrame& f, double x) { return f.time < x; });
    if (hi == frames.end()) hi = std::prev(frames.end());
    if (hi == frames.begin() || std::abs(hi->time - t) <= 1e-12) return hi->agents;
    const auto lo = std::prev(hi);
    const double w = (t - lo->time) / (hi->time - lo->time);
    std::vector<ReplayRecord> out;
    for (const ReplayRecord& a : lo->agents) {
      auto b = std::find_if(hi->agents.begin(), hi->agents.end(),
                            [&](const ReplayRecord& r) { return r.id == a.id; });
      if (b == hi->agents.end()) continue;
      ReplayRecord r = a;
      r.time = t;
      r.s = a.s + w * (b->s - a.s);
      r.d = a.d + w * (b->d - a.d);
      r.v_s = a.v_s + w * (b->v_s - a.v_s);
      r.v_d = a.v_d + w * (b->v_d - a.v_d);
      out.push_back(r);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Synthetic logs

struct SyntheticReplayConfig {
  int lane_count = 4;
  double lane_width = 3.75;
  double ego_speed_limit = 20.0;
  double agent_speed_limit = 15.0;
  double density = 25.0;  // vehicles per km per lane
  double min_spacing = 20.0;  // center to center
  // IDM settles the initial placement before frame 0.
  double warmup = 5.0;
  double span_behind = 150.0;
  double span_ahead = 250.0;
  double duration = 12.0;
  double frame_period = 0.1;
  double sim_dt = 0.05;
  // Expected scripted lane changes per agent over the log.
  double lane_change_rate = 0.1;
  double lane_change_duration = 4.0;
  int ego_lane = 1;
  std::string ego_id = "ego";
};

namespace detail {

/// Minimum-jerk lateral profile from 0 to 1 over [0, 1].
inline double smooth_step(double u, int order) {
  u = std::clamp(u, 0.0, 1.0);
  switch (order) {
    case 0: return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
    default: return 30.0 * u * u * (1.0 - u) * (1.0 - u);
  }
}

struct ScriptedChange {
  std::size_t agent = 0;
  double start = 0.0;
  double from_d = 0.0;
  double to_d = 0.0;
};

}  // namespace detail

/// IDM traffic with Poisson-spaced agents in every lane and a few scripted
/// lane changes. The agent `ego_id` sits at s = 0 in `ego_lane`; it is the
/// one an open-loop run removes and replaces with the planner.
inline ReplayLog synthetic_log(const SyntheticReplayConfig& cfg, std::uint64_t seed) {
  if (!(cfg.density > 0.0) || !(cfg.frame_period > 0.0) || !(cfg.duration > 0.0) ||
      cfg.lane_count < 1 || cfg.ego_lane < 0 || cfg.ego_lane >= cfg.lane_count)
    throw Error(ErrorCode::kInvalidConfig, "invalid synthetic replay config");
  std::mt19937_64 rng(seed);
  SimWorld world;
  world.lane_count = cfg.lane_count;
  world.lane_width = cfg.lane_width;
  // The ring is long enough that wrap-around never brings two agents close.
  world.length = 4.0 * (cfg.span_behind + cfg.span_ahead) + 1000.0;
  world.ego.d = -100.0;  // no planned vehicle in the log itself
  world.seed = seed;
  const double offset = cfg.span_behind + 100.0;  // ring position of s = 0
  const double mean_gap = 1000.0 / cfg.density;
  auto add = [&](std::string id, int lane, double s, double desired) {
    SimAgent a;
    a.agent.id = std::move(id);
    a.agent.state.s = s + offset;
    a.agent.state.d = lane * cfg.lane_width;
    a.idm.desired_speed = desired;
    a.agent.state.v_s = desired * uniform(rng, 0.85, 1.0);
    world.agents.push_back(a);
  };
  add(cfg.ego_id, cfg.ego_lane, 0.0, cfg.agent_speed_limit * uniform(rng, 0.75, 1.0));
  int next_id = 0;
  for (int lane = 0; lane < cfg.lane_count; ++lane) {
    // Poisson process shifted by the minimum spacing, same mean gap.
    const double excess = std::max(0.0, mean_gap - cfg.min_spacing);
    auto gap = [&] { return cfg.min_spacing - excess * std::log(1.0 - uniform01(rng)); };
    std::vector<double> positions;
    if (lane == cfg.ego_lane) {
      for (double s = gap(); s < cfg.span_ahead; s += gap()) positions.push_back(s);
      for (double s = -gap(); s > -cfg.span_behind; s -= gap()) positions.push_back(s);
    } else {
      for (double s = -cfg.span_behind + uniform(rng, 0.0, mean_gap); s < cfg.span_ahead; s += gap())
        positions.push_back(s);
    }
    std::sort(positions.begin(), positions.end());
    for (double s : positions)
      add("a" + std::to_string(next_id++), lane, s, cfg.agent_speed_limit * uniform(rng, 0.7, 1.0));
  }
  std::vector<detail::ScriptedChange> changes;
  for (std::size_t i = 1; i < world.agents.size(); ++i) {
    if (uniform01(rng) >= cfg.lane_change_rate) continue;
    const int lane = static_cast<int>(std::lround(world.agents[i].agent.state.d / cfg.lane_width));
    int dir = uniform01(rng) < 0.5 ? -1 : 1;
    if (lane + dir < 0 || lane + dir >= cfg.lane_count) dir = -dir;
    if (lane + dir < 0 || lane + dir >= cfg.lane_count) continue;
    const double start = uniform(rng, 0.0, std::max(0.0, cfg.duration - cfg.lane_change_duration));
    changes.push_back({i, start, lane * cfg.lane_width, (lane + dir) * cfg.lane_width});
  }

  ReplayLog log;
  log.frame_period = cfg.frame_period;
  log.lane_count = cfg.lane_count;
  log.lane_width = cfg.lane_width;
  log.speed_limit = cfg.ego_speed_limit;
  const auto frame_count = static_cast<long>(std::lround(cfg.duration / cfg.frame_period));
  const int substeps = std::max(1, static_cast<int>(std::lround(cfg.frame_period / cfg.sim_dt)));
  const double dt = cfg.frame_period / substeps;
  auto record = [&](long k) {
    ReplayFrame f;
    f.index = k;
    f.time = static_cast<double>(k) * cfg.frame_period;
    for (const SimAgent& a : world.agents) {
      ReplayRecord r;
      r.frame = k;
      r.time = f.time;
      r.id = a.agent.id;
      r.s = a.agent.state.s - offset;
      r.d = a.agent.state.d;
      r.v_s = a.agent.state.v_s;
      r.v_d = a.agent.state.v_d;
      r.length = a.agent.length;
      r.width = a.agent.width;
      f.agents.push_back(r);
    }
    log.frames.push_back(std::move(f));
  };
  for (long k = 0; k < static_cast<long>(std::lround(cfg.warmup / dt)); ++k) step_sim(world, dt);
  world.clock = 0.0;
  record(0);
  for (long k = 1; k <= frame_count; ++k) {
    for (int sub = 0; sub < substeps; ++sub) {
      step_sim(world, dt);
      for (const detail::ScriptedChange& c : changes) {
        const double u = (world.clock - c.start) / cfg.lane_change_duration;
        FrenetState& st = world.agents[c.agent].agent.state;
        st.d = c.from_d + (c.to_d - c.from_d) * detail::smooth_step(u, 0);
        st.v_d = (u > 0.0 && u < 1.0)
                     ? (c.to_d - c.from_d) * detail::smooth_step(u, 1) / cfg.lane_change_duration
                     : 0.0;
      }
    }
    record(k);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Open-loop runs

struct OpenLoopOptions {
  double horizon = 10.0;
  double sim_dt = 0.05;
  int max_consecutive_failures = 2;
  // Prefer the behavior heading for the target lane whenever it succeeds.
  bool task_driven = true;
  // Called after every planning tick with the scene and its result.
  std::function<void(const Scene&, const EpisodeResult&)> on_tick;
};

namespace detail {

inline int lane_of(double d, const ReplayLog& log) {
  const long idx = std::lround(d / log.lane_width);
  return static_cast<int>(std::clamp<long>(idx, 0, log.lane_count - 1));
}

inline Scene replay_scene(const ReplayLog& log, const std::vector<ReplayRecord>& agents,
                          const std::string& ego_id, const FrenetState& ego, const VehicleDims& dims,
                          double t) {
  Scene scene;
  const int lane = lane_of(ego.d, log);
  const double base = lane * log.lane_width;
  scene.lanes.lane_count = log.lane_count;
  scene.lanes.lane_width = log.lane_width;
  scene.lanes.current_lane = lane;
  scene.lanes.speed_limit = log.speed_limit;
  scene.lanes.reference_line = {{0.0, 0.0}, {1.0, 0.0}};
  scene.ego.state = ego;
  scene.ego.state.d -= base;
  scene.ego.dims = dims;
  scene.timestamp = t;
  for (const ReplayRecord& r : agents) {
    if (r.id == ego_id) continue;
    Agent a;
    a.id = r.id;
    a.state.s = r.s;
    a.state.d = r.d - base;
    a.state.v_s = r.v_s;
    a.state.v_d = r.v_d;
    a.length = r.length;
    a.width = r.width;
    scene.agents.push_back(a);
  }
  return scene;
}

inline std::optional<std::string> replay_collision(const std::vector<ReplayRecord>& agents,
                                                   const std::string& ego_id, const FrenetState& ego,
                                                   const VehicleDims& dims) {
  for (const ReplayRecord& r : agents) {
    if (r.id == ego_id) continue;
    if (std::abs(r.s - ego.s) < 0.5 * (r.length + dims.length) &&
        std::abs(r.d - ego.d) < 0.5 * (r.width + dims.width))
      return r.id;
  }
  return std::nullopt;
}

}  // namespace detail

/// Removes `ego_id` from the log and drives it with the planner at the
/// replan period for the horizon while the other agents follow the log.
/// Success needs no collision, no planning abort and the ego in
/// `target_lane` (absolute index) at the end.
inline RunResult run_open_loop(const ReplayLog& log, const std::string& ego_id, int target_lane,
                               const PlannerConfig& config, const OpenLoopOptions& options = {}) {
  if (!(options.horizon > 0.0)) throw Error(ErrorCode::kInvalidConfig, "horizon must be positive");
  if (target_lane < 0 || target_lane >= log.lane_count)
    throw Error(ErrorCode::kInvalidLane, "target lane does not exist");
  const auto span = log.span_of(ego_id);
  if (!span) throw Error(ErrorCode::kMissingEgo, "ego " + ego_id + " is not in the log");
  const double t0 = span->lo;
  const double t_end = t0 + options.horizon;
  if (t_end > log.end_time() + 1e-9) throw Error(ErrorCode::kTruncatedLog, "log ends before the horizon");
  if (t_end > span->hi + 1e-9) throw Error(ErrorCode::kTruncatedLog, "ego leaves the log before the horizon");

  const VehicleDims dims;
  FrenetState ego;
  for (const ReplayRecord& r : log.at(t0))
    if (r.id == ego_id) {
      ego.s = r.s;
      ego.d = r.d;
      ego.v_s = r.v_s;
      ego.v_d = r.v_d;
    }

  RunResult result;
  std::optional<ExecutedPlan> plan;
  const int substeps = std::max(1, static_cast<int>(std::lround(config.replan_period / options.sim_dt)));
  const double dt = config.replan_period / substeps;
  const auto ticks = static_cast<long>(std::lround(options.horizon / config.replan_period));
  const double first = config.voxel.partition().duration(0);
  int consecutive = 0;
  double v_sum = 0.0;
  std::size_t samples = 0;
  std::vector<RiskFrame> risk_frames;
  double t = t0;

  for (long tick = 0; tick < ticks && !result.collision && !result.planning_abort; ++tick) {
    const std::vector<ReplayRecord> now = log.at(t);
    Scene scene = detail::replay_scene(log, now, ego_id, ego, dims, t);
    scene.ego.state = admissible_initial_state(scene.ego.state, config.limits, first);
    PlannerConfig tick_config = config;
    if (options.task_driven) {
      const int lane = scene.lanes.current_lane;
      tick_config.preferred = lane < target_lane   ? Behavior::kLaneChangeLeft
                              : lane > target_lane ? Behavior::kLaneChangeRight
                                                   : Behavior::kLaneKeep;
    }
    const EpisodeResult ep = plan_episode(scene, tick_config);
    result.latencies_ms.push_back(ep.timing.total_ms);
    if (options.on_tick) options.on_tick(scene, ep);
    if (ep.ok()) {
      consecutive = 0;
      plan = ExecutedPlan{*ep.trajectory, t, scene.lanes.current_lane * log.lane_width, *ep.selected};
    } else {
      ++result.failed_ticks;
      if (!plan || ++consecutive >= options.max_consecutive_failures) {
        result.planning_abort = true;
        result.note = "planning failed";
        break;
      }
    }
    for (int k = 0; k < substeps; ++k) {
      t = t0 + (static_cast<double>(tick) * substeps + k + 1) * dt;
      ego = ego_state_at(*plan, t);
      const std::vector<ReplayRecord> agents = log.at(std::min(t, log.end_time()));
      v_sum += ego.v_s;
      ++samples;
      Scene local = detail::replay_scene(log, agents, ego_id, ego, dims, t);
      const auto front = front_agent(local.ego.state, local.agents, log.lane_width);
      risk_frames.push_back({local.ego.state, front});
      if (auto hit = detail::replay_collision(agents, ego_id, ego, dims)) {
        result.collision = true;
        result.note = "collision with " + *hit;
        break;
      }
    }
  }
  result.final_lane = detail::lane_of(ego.d, log);
  result.efficiency = samples ? v_sum / static_cast<double>(samples) : 0.0;
  result.risk = compute_risk(risk_frames, config.limits, dims.length);
  if (result.collision || result.planning_abort)
    result.outcome = RunOutcome::kFailure;
  else if (result.final_lane == target_lane)
    result.outcome = RunOutcome::kSuccess;
  else
    result.outcome = RunOutcome::kWrongLane;
  return result;
}

// ---------------------------------------------------------------------------
// Batches

enum class ReplayTask { kLaneKeep, kLaneChange };

inline std::string_view to_string(ReplayTask t) {
  return t == ReplayTask::kLaneKeep ? "lane_keep" : "lane_change";
}

struct ReplayBatchOptions {
  ReplayTask task = ReplayTask::kLaneKeep;
  std::size_t runs = 100;
  std::uint64_t seed = 1;
  SyntheticReplayConfig log;
  OpenLoopOptions open_loop;
  // Worker threads; 0 picks the hardware concurrency. Results do not depend
  // on it.
  std::size_t threads = 1;
};

/// Run `k` uses log seed (seed, k) and, for lane changes, a target lane
/// chosen from the same stream. Results are in run order.
inline std::vector<RunResult> run_replay_batch(const PlannerConfig& config,
                                               const ReplayBatchOptions& options) {
  std::vector<RunResult> out(options.runs);
  auto run = [&](std::size_t k) {
    std::mt19937_64 rng(options.seed * 1000003ULL + k);
    SyntheticReplayConfig lc = options.log;
    lc.duration = std::max(lc.duration, options.open_loop.horizon + 1.0);
    lc.ego_lane = static_cast<int>(uniform(rng, 0.0, lc.lane_count)) % lc.lane_count;
    int target = lc.ego_lane;
    if (options.task == ReplayTask::kLaneChange) {
      int dir = uniform01(rng) < 0.5 ? -1 : 1;
      if (target + dir < 0 || target + dir >= lc.lane_count) dir = -dir;
      target += dir;
    }
    const ReplayLog log = synthetic_log(lc, rng());
    out[k] = run_open_loop(log, lc.ego_id, target, config, options.open_loop);
  };
  std::size_t threads = options.threads ? options.threads
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(options.runs, 1));
  if (threads <= 1) {
    for (std::size_t k = 0; k < options.runs; ++k) run(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < options.runs;) {
        try {
          run(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace stvplan::harness
