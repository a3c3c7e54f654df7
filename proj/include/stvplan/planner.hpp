#pragma once

#include <array>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "stvplan/optimizer.hpp"
#include "stvplan/voxel_graph.hpp"
#include "stvplan/voxelizer.hpp"

namespace stvplan {

struct PlannerConfig {
  VoxelConfig voxel;
  KinodynamicLimits limits;
  OptimizerConfig optimizer;
  GraphThresholds thresholds;
  PerceptionConfig perception;
  double replan_period = 0.2;
  // Selected whenever it succeeds, regardless of cost. Used by task-driven
  // runs and by the simulator to finish a lane change it has started.
  std::optional<Behavior> preferred;
  // Equal-cost behaviors are otherwise ordered LaneKeep, Left, Right. With
  // this set, a later one wins a tie when its corridor reaches more than
  // progress_margin further along s.
  bool progress_tiebreak = true;
  double progress_margin = 5.0;

  void validate() const {
    limits.validate();
    optimizer.weights.validate();
    if (!(progress_margin >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "progress margin < 0");
    if (!(replan_period > 0.0)) throw Error(ErrorCode::kInvalidConfig, "replan period <= 0");
    if (optimizer.min_segments < 1) throw Error(ErrorCode::kInvalidConfig, "min_segments < 1");
    (void)voxel.partition();
  }
};

struct BehaviorOutcome {
  Behavior behavior = Behavior::kLaneKeep;
  bool attempted = false;  // false when the target lane does not exist
  std::optional<PiecewiseBezier> trajectory;
  VoxelSequence sequence;  // searched, then (for successes) the solved one
  double cost = 0.0;
  double reach = 0.0;  // us of the searched sequence's last voxel
  std::string failure;
  std::vector<Attempt> attempts;

  bool ok() const { return trajectory.has_value(); }
};

struct StageTiming {
  double voxelize_ms = 0.0;
  double graph_ms = 0.0;
  double search_ms = 0.0;
  double optimize_ms = 0.0;
  double total_ms = 0.0;
};

struct EpisodeResult {
  std::array<BehaviorOutcome, 3> behaviors;
  std::optional<Behavior> selected;
  std::optional<PiecewiseBezier> trajectory;
  VoxelSequence selected_sequence;
  VoxelSet voxels;
  StageTiming timing;

  bool ok() const { return selected.has_value(); }

  const BehaviorOutcome& outcome(Behavior b) const {
    return behaviors[static_cast<std::size_t>(b)];
  }

  /// Throws AllBehaviorsFailed with every behavior's reason.
  void require_success() const {
    if (ok()) return;
    std::string msg;
    for (const auto& o : behaviors) {
      if (!msg.empty()) msg += "; ";
      msg += std::string(to_string(o.behavior)) + ": " + o.failure;
    }
    throw Error(ErrorCode::kAllBehaviorsFailed, msg);
  }
};

/// Mean edge cost along the sequence; 0 without edges.
inline double evaluate_trajectory(const VoxelSequence& sequence) {
  if (sequence.edge_costs.empty()) return 0.0;
  double sum = 0.0;
  for (double c : sequence.edge_costs) sum += c;
  return sum / static_cast<double>(sequence.edge_costs.size());
}

/// Projects a measured ego state onto states the QP can start from. The
/// velocity curve of the first segment is a quartic with control points
/// q0 = v, q1 = v + a dT / 4, and with the jerk bounded the acceleration can
/// only turn back at rate j, so a is capped where q1 and q2 still fit inside
/// the speed bounds. Closed-loop callers need this because an executed
/// trajectory sampled mid-segment can sit on a bound with acceleration
/// pointing outward.
inline FrenetState admissible_initial_state(FrenetState e, const KinodynamicLimits& limits,
                                            double first_duration) {
  const double dt = first_duration;
  auto fit = [&](double& v, double& a, const Interval& vb, const Interval& ab, const Interval& jb) {
    v = std::clamp(v, vb.lo, vb.hi);
    const double hi = std::min((vb.hi - v) * 4.0 / dt, 0.5 * ((vb.hi - v) * 4.0 / dt - jb.lo * dt / 3.0));
    const double lo = std::max((vb.lo - v) * 4.0 / dt, 0.5 * ((vb.lo - v) * 4.0 / dt - jb.hi * dt / 3.0));
    a = std::clamp(a, std::max(ab.lo, lo), std::min(ab.hi, hi));
  };
  fit(e.v_s, e.a_s, limits.v_s, limits.a_s, limits.j_s);
  fit(e.v_d, e.a_d, limits.v_d, limits.a_d, limits.j_d);
  return e;
}

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since)
      .count();
}

inline void shift_voxels(VoxelSequence& seq, double ds) {
  for (Voxel& v : seq.voxels) {
    v.ls += ds;
    v.us += ds;
  }
}

inline void shift_voxels(VoxelSet& set, double ds) {
  for (std::size_t i = 0; i < set.segments(); ++i)
    for (LaneLabel lane : kAllLanes)
      for (Voxel& v : set.cell(i, lane)) {
        v.ls += ds;
        v.us += ds;
      }
}

}  // namespace detail

/// One planning episode over all behaviors. Work happens in a frame where
/// the ego sits at s = 0 (for conditioning) and results are shifted back.
inline EpisodeResult plan_episode(const Scene& scene, const PlannerConfig& config) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  scene.validate();
  config.validate();

  const double s0 = scene.ego.state.s;
  Scene local = scene;
  local.ego.state.s = 0.0;
  for (Agent& a : local.agents) a.state.s -= s0;

  EpisodeResult result;
  auto t = clock::now();
  const TimePartition partition = config.voxel.partition();
  result.voxels = generate_voxels(local, partition, config.limits, config.voxel, config.perception);
  result.timing.voxelize_ms = detail::elapsed_ms(t);

  t = clock::now();
  const VoxelGraph graph = build_graph(result.voxels, config.thresholds, config.limits);
  result.timing.graph_ms = detail::elapsed_ms(t);

  SearchOptions search_options;
  search_options.start_s = 0.0;
  for (std::size_t k = 0; k < kAllBehaviors.size(); ++k) {
    const Behavior b = kAllBehaviors[k];
    BehaviorOutcome& out = result.behaviors[k];
    out.behavior = b;
    if (!local.lanes.has_lane(target_lane(b))) {
      out.failure = "lane does not exist";
      continue;
    }
    out.attempted = true;
    t = clock::now();
    std::optional<VoxelSequence> seq = search(graph, b, search_options);
    result.timing.search_ms += detail::elapsed_ms(t);
    if (!seq) {
      out.failure = "no voxel sequence";
      continue;
    }
    if (b != Behavior::kLaneKeep) {
      ModifiedSequence mod = modify_sequence_for_lane_change(*seq, graph, config.thresholds.transition);
      if (mod.empty_intersection) {
        out.sequence = *seq;
        out.failure = "lane change corridor has no common free range";
        continue;
      }
      seq = std::move(mod.sequence);
    }
    out.sequence = *seq;
    out.reach = seq->voxels.back().us + s0;
    t = clock::now();
    OptimizeResult opt =
        optimize_with_retry(*seq, local, config.limits, config.optimizer, config.perception);
    result.timing.optimize_ms += detail::elapsed_ms(t);
    out.attempts = std::move(opt.attempts);
    if (!opt.ok()) {
      out.failure = out.attempts.empty() ? "optimization failed" : out.attempts.back().reason;
      continue;
    }
    out.sequence = std::move(opt.sequence);
    out.cost = evaluate_trajectory(out.sequence);
    out.trajectory = std::move(opt.trajectory);
  }

  // Deterministic reduction; ties keep the earlier behavior in kAllBehaviors.
  for (BehaviorOutcome& out : result.behaviors) {
    if (out.ok()) {
      out.trajectory->shift(Axis::kS, s0);
      detail::shift_voxels(out.sequence, s0);
      if (!result.selected) {
        result.selected = out.behavior;
        continue;
      }
      const BehaviorOutcome& cur = result.outcome(*result.selected);
      if (out.cost < cur.cost ||
          (config.progress_tiebreak && out.cost == cur.cost &&
           out.reach > cur.reach + config.progress_margin))
        result.selected = out.behavior;
    } else {
      detail::shift_voxels(out.sequence, s0);
    }
  }
  detail::shift_voxels(result.voxels, s0);
  if (config.preferred && result.outcome(*config.preferred).ok()) result.selected = config.preferred;
  if (result.selected) {
    const BehaviorOutcome& best = result.outcome(*result.selected);
    result.trajectory = best.trajectory;
    result.selected_sequence = best.sequence;
  }
  result.timing.total_ms = detail::elapsed_ms(t_start);
  return result;
}

}  // namespace stvplan
