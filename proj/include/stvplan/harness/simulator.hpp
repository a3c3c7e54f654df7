#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stvplan/harness/metrics.hpp"
#include "stvplan/planner.hpp"

namespace stvplan::harness {

/// Uniform double in [0, 1) with a fixed bit recipe (std distributions are
/// implementation-defined).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

struct IdmParams {
  double desired_speed = 15.0;
  double max_accel = 1.0;
  double comfort_decel = 1.5;
  double min_gap = 2.0;
  double headway = 1.5;
  double exponent = 4.0;
  double max_decel = 9.0;  // physical braking cap
};

/// Intelligent driver model acceleration; `gap` is bumper to bumper and
/// `closing` is v - v_leader. Without a leader pass gap = +inf.
inline double idm_acceleration(double v, double gap, double closing, const IdmParams& p) {
  // A zero desired speed parks the agent: brake if moving, else stay put.
  const double ratio = p.desired_speed > 0.0 ? std::max(v, 0.0) / p.desired_speed : (v > 0.0 ? kInf : 0.0);
  double a = p.max_accel * (1.0 - std::pow(ratio, p.exponent));
  if (std::isfinite(gap)) {
    const double s_star =
        p.min_gap + std::max(0.0, v * p.headway + v * closing / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
    a -= p.max_accel * std::pow(s_star / std::max(gap, 0.1), 2.0);
  }
  return std::max(a, -p.max_decel);
}

struct SimAgent {
  Agent agent;  // s on the ring, d from the center of lane 0
  IdmParams idm;
};

/// Trajectory being executed, with the frame it was planned in.
struct ExecutedPlan {
  PiecewiseBezier trajectory;
  double t0 = 0.0;      // world clock at planning time
  double d_base = 0.0;  // world d of the planning frame's reference line
  Behavior behavior = Behavior::kLaneKeep;
};

/// Ring road with IDM agents. Ego s is cumulative, agent s is kept in
/// [0, length).
struct SimWorld {
  int lane_count = 4;
  double lane_width = 3.75;
  double length = 1200.0;
  double ego_speed_limit = 20.0;
  FrenetState ego;
  VehicleDims ego_dims;
  std::optional<ExecutedPlan> plan;
  std::vector<SimAgent> agents;
  double clock = 0.0;
  std::uint64_t seed = 0;

  int ego_lane() const {
    const long idx = std::lround(ego.d / lane_width);
    return static_cast<int>(std::clamp<long>(idx, 0, lane_count - 1));
  }

  /// Signed ring distance from a to b in [-length/2, length/2).
  double ring_delta(double a, double b) const {
    double ds = std::fmod(b - a, length);
    if (ds < -0.5 * length) ds += length;
    if (ds >= 0.5 * length) ds -= length;
    return ds;
  }
};

struct Collision {
  std::string agent_id;
  double time = 0.0;
};

namespace detail {

inline bool lane_touches(double d, double width, int lane, double lane_width) {
  const double c = lane * lane_width;
  return d + 0.5 * width > c - 0.5 * lane_width && d - 0.5 * width < c + 0.5 * lane_width;
}

}  // namespace detail

/// Ego state from the executed plan at world time t.
inline FrenetState ego_state_at(const ExecutedPlan& plan, double t) {
  const double tl = std::clamp(t - plan.t0, plan.trajectory.start_time(), plan.trajectory.end_time());
  FrenetState s;
  s.s = plan.trajectory.evaluate(tl, Axis::kS, 0);
  s.d = plan.trajectory.evaluate(tl, Axis::kD, 0) + plan.d_base;
  s.v_s = plan.trajectory.evaluate(tl, Axis::kS, 1);
  s.v_d = plan.trajectory.evaluate(tl, Axis::kD, 1);
  s.a_s = plan.trajectory.evaluate(tl, Axis::kS, 2);
  s.a_d = plan.trajectory.evaluate(tl, Axis::kD, 2);
  return s;
}

/// Axis-aligned overlap of the ego and any agent, with ring wrap.
inline std::optional<Collision> detect_collision(const SimWorld& world) {
  for (const SimAgent& a : world.agents) {
    const double ds = std::abs(world.ring_delta(world.ego.s, a.agent.state.s));
    const double dd = std::abs(a.agent.state.d - world.ego.d);
    if (ds < 0.5 * (a.agent.length + world.ego_dims.length) &&
        dd < 0.5 * (a.agent.width + world.ego_dims.width))
      return Collision{a.agent.id, world.clock};
  }
  return std::nullopt;
}

/// Advances the world by dt: the ego along its plan, agents under IDM in
/// their lanes. Returns the first collision, if any.
inline std::optional<Collision> step_sim(SimWorld& world, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidConfig, "dt must be positive");
  const double t_next = world.clock + dt;
  const std::size_t n = world.agents.size();
  std::vector<double> accel(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Agent& me = world.agents[i].agent;
    const int lane = static_cast<int>(std::lround(me.state.d / world.lane_width));
    double best = kInf, v_lead = 0.0, len_lead = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Agent& other = world.agents[j].agent;
      if (std::lround(other.state.d / world.lane_width) != lane) continue;
      double ds = std::fmod(other.state.s - me.state.s + world.length, world.length);
      if (ds <= 0.0) ds += world.length;
      if (ds < best) {
        best = ds;
        v_lead = other.state.v_s;
        len_lead = other.length;
      }
    }
    if (detail::lane_touches(world.ego.d, world.ego_dims.width, lane, world.lane_width)) {
      const double ds = world.ring_delta(me.state.s, world.ego.s);
      if (ds > 0.0 && ds < best) {
        best = ds;
        v_lead = world.ego.v_s;
        len_lead = world.ego_dims.length;
      }
    }
    const double gap = std::isfinite(best) ? best - 0.5 * (me.length + len_lead) : kInf;
    accel[i] = idm_acceleration(me.state.v_s, gap, me.state.v_s - v_lead, world.agents[i].idm);
  }
  for (std::size_t i = 0; i < n; ++i) {
    FrenetState& st = world.agents[i].agent.state;
    const double cap = world.agents[i].idm.desired_speed;
    const double v_next = std::clamp(st.v_s + accel[i] * dt, 0.0, std::max(cap, st.v_s));
    st.s = std::fmod(st.s + 0.5 * (st.v_s + v_next) * dt, world.length);
    st.a_s = (v_next - st.v_s) / dt;
    st.v_s = v_next;
  }
  if (world.plan) world.ego = ego_state_at(*world.plan, t_next);
  world.clock = t_next;
  return detect_collision(world);
}

/// Planner input seen from the ego: its nearest lane becomes Current and
/// agents are unwrapped around the ego.
inline Scene build_scene(const SimWorld& world) {
  Scene scene;
  const int lane = world.ego_lane();
  const double base = lane * world.lane_width;
  scene.lanes.lane_count = world.lane_count;
  scene.lanes.lane_width = world.lane_width;
  scene.lanes.current_lane = lane;
  scene.lanes.speed_limit = world.ego_speed_limit;
  scene.lanes.reference_line = {{0.0, 0.0}, {1.0, 0.0}};
  scene.ego.state = world.ego;
  scene.ego.state.d -= base;
  scene.ego.dims = world.ego_dims;
  scene.timestamp = world.clock;
  for (const SimAgent& a : world.agents) {
    Agent local = a.agent;
    local.state.s = world.ego.s + world.ring_delta(world.ego.s, a.agent.state.s);
    local.state.d -= base;
    local.state.a_s = 0.0;
    scene.agents.push_back(local);
  }
  return scene;
}

struct ScenarioAgent {
  std::string id;
  double s = 0.0;
  double d = 0.0;
  double v_s = 0.0;
  double length = 4.8;
  double width = 1.9;
  IdmParams idm;
};

struct Scenario {
  int lane_count = 4;
  double lane_width = 3.75;
  double length = 1200.0;
  double ego_speed_limit = 20.0;
  double agent_speed_limit = 15.0;
  FrenetState ego;
  VehicleDims ego_dims;
  std::vector<ScenarioAgent> agents;
  std::uint64_t seed = 0;
};

inline SimWorld make_world(const Scenario& sc) {
  SimWorld w;
  w.lane_count = sc.lane_count;
  w.lane_width = sc.lane_width;
  w.length = sc.length;
  w.ego_speed_limit = sc.ego_speed_limit;
  w.ego = sc.ego;
  w.ego_dims = sc.ego_dims;
  w.seed = sc.seed;
  for (const ScenarioAgent& a : sc.agents) {
    SimAgent sa;
    sa.agent.id = a.id;
    sa.agent.state.s = std::fmod(a.s + sc.length, sc.length);
    sa.agent.state.d = a.d;
    sa.agent.state.v_s = a.v_s;
    sa.agent.length = a.length;
    sa.agent.width = a.width;
    sa.idm = a.idm;
    sa.idm.desired_speed = std::min(sa.idm.desired_speed, sc.agent_speed_limit);
    w.agents.push_back(sa);
  }
  return w;
}

/// Agents at uniformly random lanes and positions on the ring, at least
/// min_gap apart in a lane and clear of the ego's start, with desired speeds
/// drawn below the agent speed cap.
inline Scenario random_scenario(std::uint64_t seed, int agent_count = 20, int lane_count = 4,
                                double length = 1200.0, double min_gap = 25.0) {
  std::mt19937_64 rng(seed);
  Scenario sc;
  sc.seed = seed;
  sc.lane_count = lane_count;
  sc.length = length;
  sc.ego.s = 0.0;
  sc.ego.d = 1.0 * sc.lane_width;
  sc.ego.v_s = 12.0;
  auto too_close = [&](int lane, double s) {
    auto gap = [&](double a, double b) {
      const double d = std::fmod(std::abs(a - b), length);
      return std::min(d, length - d);
    };
    if (gap(s, sc.ego.s) < min_gap && std::abs(lane * sc.lane_width - sc.ego.d) < 0.5 * sc.lane_width)
      return true;
    for (const ScenarioAgent& o : sc.agents)
      if (std::abs(o.d - lane * sc.lane_width) < 1e-9 && gap(s, o.s) < min_gap) return true;
    return false;
  };
  for (int k = 0; k < agent_count; ++k) {
    ScenarioAgent a;
    a.id = "agent" + std::to_string(k);
    int lane = 0;
    double s = 0.0;
    int tries = 0;
    do {
      if (++tries > 1000) throw Error(ErrorCode::kInvalidConfig, "scenario too dense for min_gap");
      lane = static_cast<int>(uniform(rng, 0.0, lane_count)) % lane_count;
      s = uniform(rng, 0.0, length);
    } while (too_close(lane, s));
    a.s = s;
    a.d = lane * sc.lane_width;
    a.idm.desired_speed = sc.agent_speed_limit * uniform(rng, 0.7, 1.0);
    a.v_s = a.idm.desired_speed * uniform(rng, 0.8, 1.0);
    sc.agents.push_back(a);
  }
  return sc;
}

struct TraceRow {
  double t = 0.0;
  FrenetState ego;  // world frame
  double jerk_s = 0.0;
  double jerk_d = 0.0;
  int lane = 0;
  Behavior behavior = Behavior::kLaneKeep;
  double response_time = kInf;
};

struct ClosedLoopMetrics {
  double simulated_time = 0.0;
  std::size_t collisions = 0;
  std::string collision_with;
  std::size_t planning_failures = 0;  // failed ticks
  bool aborted = false;
  std::string abort_reason;
  std::size_t lane_changes = 0;
  double mean_v_s = 0.0;
  double max_abs_a_s = 0.0;
  double max_abs_a_d = 0.0;
  double max_abs_jerk_s = 0.0;
  double max_abs_jerk_d = 0.0;
  double risk = 0.0;
};

struct ClosedLoopResult {
  ClosedLoopMetrics metrics;
  std::vector<TraceRow> trace;
  std::vector<double> latencies_ms;
};

struct ClosedLoopOptions {
  double sim_dt = 0.05;
  int max_consecutive_failures = 2;
  // Once a lane change whose transition is at most commit_transition_index
  // segments away is selected, keep preferring it until the ego is within
  // settle_tolerance of the target lane center or the transition recedes.
  bool commit_lane_changes = true;
  std::size_t commit_transition_index = 1;
  double settle_tolerance = 0.5;
};

/// Replans every config.replan_period and executes the selected trajectory
/// in between. One failed tick keeps the previous trajectory; the second
/// consecutive failure aborts.
inline ClosedLoopResult run_closed_loop(const Scenario& scenario, const PlannerConfig& config,
                                        double duration, const ClosedLoopOptions& options = {}) {
  if (!(duration > 0.0)) throw Error(ErrorCode::kInvalidConfig, "duration must be positive");
  SimWorld world = make_world(scenario);
  ClosedLoopResult out;
  ClosedLoopMetrics& m = out.metrics;
  const int substeps = std::max(1, static_cast<int>(std::lround(config.replan_period / options.sim_dt)));
  const double dt = config.replan_period / substeps;
  const auto ticks = static_cast<long>(std::floor(duration / config.replan_period + 1e-9));
  int consecutive = 0;
  int last_lane = world.ego_lane();
  int target_lane = -1;  // committed lane change target, -1 when none
  double v_sum = 0.0;
  std::vector<RiskFrame> risk_frames;

  for (long tick = 0; tick < ticks; ++tick) {
    Scene scene = build_scene(world);
    scene.ego.state = admissible_initial_state(scene.ego.state, config.limits,
                                               config.voxel.partition().duration(0));
    PlannerConfig tick_config = config;
    if (target_lane >= 0 && world.ego_lane() == target_lane &&
        std::abs(world.ego.d - target_lane * world.lane_width) < options.settle_tolerance)
      target_lane = -1;
    if (target_lane >= 0) {
      const int lane = world.ego_lane();
      tick_config.preferred = lane < target_lane   ? Behavior::kLaneChangeLeft
                              : lane > target_lane ? Behavior::kLaneChangeRight
                                                   : Behavior::kLaneKeep;
    }
    const EpisodeResult ep = plan_episode(scene, tick_config);
    out.latencies_ms.push_back(ep.timing.total_ms);
    if (ep.ok()) {
      consecutive = 0;
      world.plan = ExecutedPlan{*ep.trajectory, world.clock, scene.lanes.current_lane * world.lane_width,
                                *ep.selected};
      const auto transition = ep.selected_sequence.transition_index();
      const bool imminent = transition && *transition <= options.commit_transition_index;
      if (!imminent) {
        target_lane = -1;
      } else if (options.commit_lane_changes && target_lane < 0) {
        target_lane = scene.lanes.current_lane + (*ep.selected == Behavior::kLaneChangeLeft ? 1 : -1);
      }
    } else {
      ++m.planning_failures;
      ++consecutive;
      if (!world.plan || consecutive >= options.max_consecutive_failures) {
        m.aborted = true;
        m.abort_reason = "planning failed";
        break;
      }
    }
    bool stop = false;
    for (int k = 0; k < substeps; ++k) {
      const auto hit = step_sim(world, dt);
      TraceRow row;
      row.t = world.clock;
      row.ego = world.ego;
      const double tl = std::clamp(world.clock - world.plan->t0, world.plan->trajectory.start_time(),
                                   world.plan->trajectory.end_time());
      row.jerk_s = world.plan->trajectory.evaluate(tl, Axis::kS, 3);
      row.jerk_d = world.plan->trajectory.evaluate(tl, Axis::kD, 3);
      row.lane = world.ego_lane();
      row.behavior = world.plan->behavior;
      const Scene now = build_scene(world);
      FrenetState ego_local = now.ego.state;
      const auto front = front_agent(ego_local, now.agents, world.lane_width);
      row.response_time = response_time(ego_local, front, config.limits, world.ego_dims.length);
      risk_frames.push_back({ego_local, front});
      if (row.lane != last_lane) {
        ++m.lane_changes;
        last_lane = row.lane;
      }
      v_sum += row.ego.v_s;
      m.max_abs_a_s = std::max(m.max_abs_a_s, std::abs(row.ego.a_s));
      m.max_abs_a_d = std::max(m.max_abs_a_d, std::abs(row.ego.a_d));
      m.max_abs_jerk_s = std::max(m.max_abs_jerk_s, std::abs(row.jerk_s));
      m.max_abs_jerk_d = std::max(m.max_abs_jerk_d, std::abs(row.jerk_d));
      out.trace.push_back(row);
      if (hit) {
        ++m.collisions;
        m.collision_with = hit->agent_id;
        m.aborted = true;
        m.abort_reason = "collision";
        stop = true;
        break;
      }
    }
    if (stop) break;
  }
  m.simulated_time = world.clock;
  m.mean_v_s = out.trace.empty() ? 0.0 : v_sum / static_cast<double>(out.trace.size());
  m.risk = compute_risk(risk_frames, config.limits, world.ego_dims.length);
  return out;
}

}  // namespace stvplan::harness
