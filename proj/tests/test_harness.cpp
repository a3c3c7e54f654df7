#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "stvplan/harness/ablation.hpp"
#include "stvplan/harness/metrics.hpp"
#include "stvplan/harness/replay.hpp"
#include "stvplan/harness/simulator.hpp"

using namespace stvplan;
using namespace stvplan::harness;

namespace {

SimAgent sim_agent(const std::string& id, double s, int lane, double v, double desired = 15.0) {
  SimAgent a;
  a.agent.id = id;
  a.agent.state.s = s;
  a.agent.state.d = lane * 3.75;
  a.agent.state.v_s = v;
  a.idm.desired_speed = desired;
  return a;
}

SimWorld agents_only() {
  SimWorld w;
  w.ego.d = -100.0;  // off the road so agents ignore it
  return w;
}

/// Smallest bumper gap over time when the leader brakes at t = 0 and the ego
/// brakes after a delay of tau, sampled every millisecond.
double min_gap_sampled(double gap, double ve, double vf, double decel, double tau) {
  auto pos = [&](double v, double delay, double t) {
    if (t <= delay) return v * t;
    const double tb = std::min(t - delay, v / decel);
    return v * delay + v * tb - 0.5 * decel * tb * tb;
  };
  const double horizon = tau + std::max(ve, vf) / decel + 0.01;
  double best = gap;
  for (double t = 0.0; t <= horizon; t += 1e-3)
    best = std::min(best, gap + pos(vf, 0.0, t) - pos(ve, tau, t));
  return best;
}

double response_time_oracle(double gap, double ve, double vf, double decel) {
  if (min_gap_sampled(gap, ve, vf, decel, 0.0) <= 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (min_gap_sampled(gap, ve, vf, decel, hi) > 0.0) hi *= 2.0;
  while (hi - lo > 1e-3) {
    const double mid = 0.5 * (lo + hi);
    (min_gap_sampled(gap, ve, vf, decel, mid) > 0.0 ? lo : hi) = mid;
  }
  return lo;
}

RiskFrame frame(double gap, bool has_front = true) {
  RiskFrame f;
  f.ego.v_s = 20.0;
  if (has_front) {
    Agent a;
    a.state.s = gap + 4.8;
    a.state.v_s = 20.0;
    f.front = a;
  }
  return f;
}

ReplayRecord rec(long frame, double time, const std::string& id, double s, double d = 0.0) {
  ReplayRecord r;
  r.frame = frame;
  r.time = time;
  r.id = id;
  r.s = s;
  r.d = d;
  return r;
}

SyntheticReplayConfig small_log() {
  SyntheticReplayConfig c;
  c.density = 15.0;
  c.duration = 6.0;
  return c;
}

}  // namespace

TEST(Harness, IdmFormula) {
  const IdmParams p;
  EXPECT_DOUBLE_EQ(idm_acceleration(0.0, kInf, 0.0, p), 1.0);
  EXPECT_DOUBLE_EQ(idm_acceleration(15.0, kInf, 0.0, p), 0.0);
  // Independent evaluation of the interaction term.
  const double v = 10.0, gap = 30.0, dv = 4.0;
  const double s_star = 2.0 + v * 1.5 + v * dv / (2.0 * std::sqrt(1.0 * 1.5));
  const double want = 1.0 - std::pow(v / 15.0, 4) - (s_star / gap) * (s_star / gap);
  EXPECT_NEAR(idm_acceleration(v, gap, dv, p), want, 1e-12);
  EXPECT_EQ(idm_acceleration(20.0, 0.5, 20.0, p), -p.max_decel);
}

TEST(Harness, IdmFreeRoadApproachesDesiredSpeed) {
  SimWorld w = agents_only();
  w.agents.push_back(sim_agent("a", 10.0, 1, 5.0, 15.0));
  double last = 5.0;
  for (int k = 0; k < 1200; ++k) {
    EXPECT_FALSE(step_sim(w, 0.05).has_value());
    const double v = w.agents[0].agent.state.v_s;
    EXPECT_GE(v, last - 1e-12);
    EXPECT_LE(v, 15.0);
    last = v;
  }
  EXPECT_GT(last, 14.0);
  EXPECT_GE(w.agents[0].agent.state.s, 0.0);
  EXPECT_LT(w.agents[0].agent.state.s, w.length);
}

TEST(Harness, ConstantSpeedStep) {
  SimWorld w = agents_only();
  // At the desired speed on a free road IDM gives exactly zero.
  SimAgent a = sim_agent("a", 1199.0, 0, 12.0, 12.0);
  w.agents.push_back(a);
  step_sim(w, 0.2);
  EXPECT_NEAR(w.agents[0].agent.state.v_s, 12.0, 1e-12);
  // 1199 + 2.4 wraps past the ring length.
  EXPECT_NEAR(w.agents[0].agent.state.s, 1.4, 1e-9);
  EXPECT_NEAR(w.clock, 0.2, 1e-15);
  EXPECT_THROW(step_sim(w, 0.0), Error);
}

TEST(Harness, FollowerStopsBehindStoppedLeader) {
  SimWorld w = agents_only();
  w.agents.push_back(sim_agent("lead", 100.0, 2, 0.0, 0.0));
  w.agents.push_back(sim_agent("follow", 60.0, 2, 10.0));
  double min_gap = kInf;
  for (int k = 0; k < 1200; ++k) {
    ASSERT_FALSE(step_sim(w, 0.05).has_value()) << "step " << k;
    const double gap = w.agents[0].agent.state.s - w.agents[1].agent.state.s - 4.8;
    min_gap = std::min(min_gap, gap);
  }
  EXPECT_GT(min_gap, 0.0);
  EXPECT_NEAR(w.agents[1].agent.state.v_s, 0.0, 1e-3);
  EXPECT_EQ(w.agents[0].agent.state.s, 100.0);
  EXPECT_EQ(w.agents[0].agent.state.v_s, 0.0);
}

TEST(Harness, AgentsYieldToEgoInTheirLane) {
  SimWorld w;
  w.ego.s = 50.0;
  w.ego.d = 3.75;
  w.agents.push_back(sim_agent("behind", 30.0, 1, 15.0));
  // Stationary ego without a plan: the agent must stop behind it.
  for (int k = 0; k < 400; ++k) ASSERT_FALSE(step_sim(w, 0.05).has_value());
  EXPECT_LT(w.agents[0].agent.state.s, 50.0 - 4.8);
}

TEST(Harness, CollisionDetectionWrapsTheRing) {
  SimWorld w;
  w.ego.s = 1199.0;
  w.ego.d = 0.0;
  w.agents.push_back(sim_agent("x", 2.0, 0, 0.0));
  ASSERT_TRUE(detect_collision(w).has_value());
  EXPECT_EQ(detect_collision(w)->agent_id, "x");
  w.agents[0].agent.state.d = 3.75;
  EXPECT_FALSE(detect_collision(w).has_value());
}

TEST(Harness, BuildSceneUnwrapsAgents) {
  SimWorld w;
  w.ego.s = 2400.0 + 5.0;  // cumulative
  w.ego.d = 2 * 3.75 + 0.4;
  w.agents.push_back(sim_agent("ahead", 20.0, 2, 10.0));
  w.agents.push_back(sim_agent("behind", 1190.0, 3, 10.0));
  const Scene scene = build_scene(w);
  EXPECT_EQ(scene.lanes.current_lane, 2);
  EXPECT_NEAR(scene.ego.state.d, 0.4, 1e-12);
  EXPECT_NEAR(scene.agents[0].state.s, 2420.0, 1e-9);
  EXPECT_NEAR(scene.agents[1].state.s, 2390.0, 1e-9);
  EXPECT_NEAR(scene.agents[1].state.d, 3.75, 1e-12);
}

TEST(Harness, RandomScenarioRespectsGaps) {
  const Scenario a = random_scenario(7), b = random_scenario(7);
  ASSERT_EQ(a.agents.size(), 20u);
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    EXPECT_EQ(a.agents[i].s, b.agents[i].s);
    EXPECT_LE(a.agents[i].idm.desired_speed, a.agent_speed_limit);
    for (std::size_t j = 0; j < i; ++j) {
      if (a.agents[i].d != a.agents[j].d) continue;
      const double ds = std::fmod(std::abs(a.agents[i].s - a.agents[j].s), a.length);
      EXPECT_GE(std::min(ds, a.length - ds), 25.0);
    }
  }
  EXPECT_THROW(random_scenario(1, 200, 4, 1200.0, 25.0), Error);
}

TEST(Harness, ResponseTimeExamples) {
  EXPECT_NEAR(response_time(100.0, 20.0, 20.0, 2.0), 5.0, 1e-12);
  EXPECT_EQ(response_time(0.0, 20.0, 20.0, 2.0), 0.0);
  EXPECT_EQ(response_time(-1.0, 20.0, 20.0, 2.0), 0.0);
  EXPECT_EQ(response_time(FrenetState{}, std::nullopt, KinodynamicLimits{}), kInf);
}

TEST(Harness, ResponseTimeMatchesSimulation) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 40; ++k) {
    const double gap = uniform(rng, 0.5, 80.0), ve = uniform(rng, 1.0, 25.0), vf = uniform(rng, 0.0, 25.0);
    const double got = response_time(gap, ve, vf, 2.0);
    EXPECT_NEAR(got, response_time_oracle(gap, ve, vf, 2.0), 0.01)
        << "gap " << gap << " ve " << ve << " vf " << vf;
  }
}

TEST(Harness, RiskFractions) {
  const KinodynamicLimits limits;
  EXPECT_EQ(compute_risk({}, limits), 0.0);
  EXPECT_EQ(compute_risk({frame(0, false), frame(0, false)}, limits), 0.0);
  EXPECT_EQ(compute_risk({frame(1.0), frame(5.0)}, limits), 1.0);
  // Gap 100 at equal speeds gives 5 s.
  EXPECT_EQ(compute_risk({frame(100.0), frame(100.0)}, limits), 0.0);
  EXPECT_EQ(compute_risk({frame(100.0), frame(1.0), frame(0, false), frame(2.0)}, limits), 0.5);
}

TEST(Harness, FrontAgentUsesEgoLaneBand) {
  FrenetState ego;
  ego.s = 10.0;
  ego.d = 0.3;
  Agent near, far, side, behind;
  near.id = "near", near.state.s = 40.0;
  far.id = "far", far.state.s = 80.0;
  side.id = "side", side.state.s = 20.0, side.state.d = 3.75;
  behind.id = "behind", behind.state.s = 5.0;
  const auto f = front_agent(ego, {far, side, behind, near}, 3.75);
  ASSERT_TRUE(f.has_value());
  EXPECT_EQ(f->id, "near");
  EXPECT_FALSE(front_agent(ego, {side, behind}, 3.75).has_value());
}

TEST(Harness, AggregateAndLatency) {
  std::vector<RunResult> runs(4);
  runs[0].outcome = RunOutcome::kSuccess;
  runs[0].risk = 0.2;
  runs[0].efficiency = 10.0;
  runs[0].latencies_ms = {1, 2, 3};
  runs[1].outcome = RunOutcome::kFailure;
  runs[1].collision = true;
  runs[2].outcome = RunOutcome::kWrongLane;
  runs[2].efficiency = 6.0;
  runs[3].outcome = RunOutcome::kSuccess;
  runs[3].planning_abort = true;
  runs[3].failed_ticks = 2;
  runs[3].latencies_ms = {4};
  const Metrics m = aggregate(runs);
  EXPECT_EQ(m.runs, 4u);
  EXPECT_EQ(m.successes, 2u);
  EXPECT_EQ(m.failures, 1u);
  EXPECT_EQ(m.wrong_lane, 1u);
  EXPECT_DOUBLE_EQ(m.success_rate, 0.5);
  EXPECT_DOUBLE_EQ(m.failure_rate, 0.25);
  EXPECT_DOUBLE_EQ(m.risk, 0.05);
  EXPECT_DOUBLE_EQ(m.efficiency, 4.0);
  EXPECT_EQ(m.collisions, 1u);
  EXPECT_EQ(m.planning_failures, 1u);
  EXPECT_EQ(m.failed_ticks, 2u);
  const LatencyStats l = latency_of(runs);
  EXPECT_EQ(l.count, 4u);
  EXPECT_DOUBLE_EQ(l.mean_ms, 2.5);
  EXPECT_DOUBLE_EQ(l.max_ms, 4.0);
  EXPECT_DOUBLE_EQ(l.p95_ms, 4.0);
  EXPECT_EQ(aggregate({}).runs, 0u);
}

TEST(Harness, ReplayLogStructure) {
  const ReplayLog log = ReplayLog::from_records(
      {rec(0, 0.0, "a", 0.0), rec(0, 0.0, "b", 50.0), rec(1, 0.1, "a", 1.0), rec(1, 0.1, "b", 52.0, 1.0)},
      0.1);
  ASSERT_EQ(log.frames.size(), 2u);
  const auto mid = log.at(0.05);
  ASSERT_EQ(mid.size(), 2u);
  EXPECT_NEAR(mid[0].s, 0.5, 1e-12);
  EXPECT_NEAR(mid[1].s, 51.0, 1e-12);
  EXPECT_NEAR(mid[1].d, 0.5, 1e-12);
  EXPECT_EQ(log.span_of("b")->hi, 0.1);
  EXPECT_FALSE(log.span_of("c").has_value());
  EXPECT_THROW(log.at(0.2), Error);

  // Frames out of order, two times in one frame, and a trace with a hole.
  EXPECT_THROW(ReplayLog::from_records({rec(1, 0.1, "a", 0), rec(0, 0.0, "a", 0)}, 0.1), Error);
  EXPECT_THROW(ReplayLog::from_records({rec(0, 0.0, "a", 0), rec(0, 0.1, "b", 0)}, 0.1), Error);
  EXPECT_THROW(ReplayLog::from_records({rec(0, 0.0, "a", 0), rec(1, 0.1, "b", 0), rec(2, 0.2, "a", 0)}, 0.1),
               Error);
}

TEST(Harness, OpenLoopErrors) {
  const ReplayLog log = synthetic_log(small_log(), 5);
  const PlannerConfig config;
  auto code_of = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidConfig;
  };
  EXPECT_EQ(code_of([&] { run_open_loop(log, "nobody", 1, config); }), ErrorCode::kMissingEgo);
  OpenLoopOptions long_run;
  long_run.horizon = 20.0;
  EXPECT_EQ(code_of([&] { run_open_loop(log, "ego", 1, config, long_run); }), ErrorCode::kTruncatedLog);
  EXPECT_EQ(code_of([&] { run_open_loop(log, "ego", 9, config); }), ErrorCode::kInvalidLane);
}

TEST(Harness, SyntheticLogIsDeterministic) {
  const ReplayLog a = synthetic_log(small_log(), 11), b = synthetic_log(small_log(), 11);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  ASSERT_EQ(a.frames.size(), 61u);
  EXPECT_TRUE(a.contains("ego"));
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    ASSERT_EQ(a.frames[k].agents.size(), b.frames[k].agents.size());
    for (std::size_t i = 0; i < a.frames[k].agents.size(); ++i) {
      EXPECT_EQ(a.frames[k].agents[i].s, b.frames[k].agents[i].s);
      EXPECT_EQ(a.frames[k].agents[i].d, b.frames[k].agents[i].d);
    }
  }
  EXPECT_NO_THROW(a.validate());
}

TEST(Harness, ReplayBatchPartitionAndThreads) {
  const PlannerConfig config;
  ReplayBatchOptions options;
  options.runs = 6;
  options.seed = 4;
  options.log = small_log();
  options.open_loop.horizon = 4.0;
  for (ReplayTask task : {ReplayTask::kLaneKeep, ReplayTask::kLaneChange}) {
    options.task = task;
    options.threads = 1;
    const auto serial = run_replay_batch(config, options);
    options.threads = 3;
    const auto parallel = run_replay_batch(config, options);
    ASSERT_EQ(serial.size(), 6u);
    const Metrics m = aggregate(serial);
    EXPECT_EQ(m.successes + m.failures + m.wrong_lane, m.runs);
    EXPECT_GE(m.risk, 0.0);
    EXPECT_LE(m.risk, 1.0);
    for (std::size_t k = 0; k < serial.size(); ++k) {
      EXPECT_EQ(serial[k].outcome, parallel[k].outcome);
      EXPECT_EQ(serial[k].risk, parallel[k].risk);
      EXPECT_EQ(serial[k].efficiency, parallel[k].efficiency);
      if (serial[k].outcome == RunOutcome::kFailure) {
        EXPECT_TRUE(serial[k].collision || serial[k].planning_abort);
      }
    }
  }
}

TEST(Harness, AblationVariants) {
  const PlannerConfig base;
  EXPECT_FALSE(apply_variant(base, Variant::kFixedVoxelCount).optimizer.retry);
  const PlannerConfig uni = apply_variant(base, Variant::kUniformDt);
  const TimePartition p = uni.voxel.partition();
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_NEAR(p.duration(i), p.duration(0), 1e-12);
  EXPECT_GT(base.voxel.partition().duration(4), base.voxel.partition().duration(0) + 0.1);
  const auto jerk = apply_variant(base, Variant::kJerkOnly).optimizer.weights.w;
  EXPECT_EQ(jerk[0], base.optimizer.weights.w[0]);
  for (std::size_t k = 1; k < jerk.size(); ++k) EXPECT_EQ(jerk[k], 0.0);
  const auto ends = apply_variant(base, Variant::kJerkEndStates).optimizer.weights.w;
  EXPECT_EQ(ends[3], 0.0);
  EXPECT_EQ(ends[4], 0.0);
  EXPECT_EQ(ends[1], base.optimizer.weights.w[1]);
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_FALSE(parse_variant("nope").has_value());
}

TEST(Harness, ClosedLoopEmptyRoad) {
  Scenario sc;
  sc.ego.d = 3.75;
  sc.ego.v_s = 12.0;
  const ClosedLoopResult r = run_closed_loop(sc, PlannerConfig{}, 30.0);
  const ClosedLoopMetrics& m = r.metrics;
  EXPECT_EQ(m.collisions, 0u);
  EXPECT_FALSE(m.aborted);
  EXPECT_EQ(m.lane_changes, 0u);
  EXPECT_NEAR(m.simulated_time, 30.0, 1e-9);
  EXPECT_NEAR(r.trace.back().ego.v_s, 20.0, 0.2);
  EXPECT_LE(m.max_abs_a_s, 2.0 + 1e-6);
  EXPECT_LE(m.max_abs_jerk_s, 2.0 + 1e-6);
  EXPECT_EQ(m.risk, 0.0);
  EXPECT_EQ(r.latencies_ms.size(), 150u);
}

TEST(Harness, ClosedLoopIsDeterministic) {
  const Scenario sc = random_scenario(3, 12);
  const PlannerConfig config;
  const ClosedLoopResult a = run_closed_loop(sc, config, 20.0), b = run_closed_loop(sc, config, 20.0);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    EXPECT_EQ(a.trace[k].ego.s, b.trace[k].ego.s);
    EXPECT_EQ(a.trace[k].ego.d, b.trace[k].ego.d);
  }
  EXPECT_EQ(a.metrics.lane_changes, b.metrics.lane_changes);
  EXPECT_EQ(a.metrics.mean_v_s, b.metrics.mean_v_s);
  EXPECT_THROW(run_closed_loop(sc, config, 0.0), Error);
}
