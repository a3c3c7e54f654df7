#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "stvplan/common.hpp"
#include "stvplan/limits.hpp"
#include "stvplan/scene.hpp"

namespace stvplan {

/// Monotone non-decreasing split of the planning horizon. Boundaries are
/// cumulative sums of the durations, so ut(i) == lt(i + 1) bit for bit.
class TimePartition {
 public:
  TimePartition() = default;
  explicit TimePartition(std::vector<double> durations) : durations_(std::move(durations)) {
    boundaries_.assign(durations_.size() + 1, 0.0);
    for (std::size_t i = 0; i < durations_.size(); ++i)
      boundaries_[i + 1] = boundaries_[i] + durations_[i];
  }

  std::size_t size() const { return durations_.size(); }
  double duration(std::size_t i) const { return durations_.at(i); }
  double lt(std::size_t i) const { return boundaries_.at(i); }
  double ut(std::size_t i) const { return boundaries_.at(i + 1); }
  double horizon() const { return boundaries_.back(); }
  const std::vector<double>& durations() const { return durations_; }

 private:
  std::vector<double> durations_;
  std::vector<double> boundaries_{0.0};
};

/// Geometric schedule dT_i = dT_0 * growth^i scaled to sum to the horizon.
inline TimePartition make_partition(double horizon, int n, double growth) {
  if (!(horizon > 0.0)) throw Error(ErrorCode::kInvalidConfig, "horizon must be positive");
  if (n < 1) throw Error(ErrorCode::kInvalidConfig, "segment count must be >= 1");
  if (!(growth >= 1.0)) throw Error(ErrorCode::kInvalidConfig, "growth must be >= 1");
  std::vector<double> durations(static_cast<std::size_t>(n));
  if (growth == 1.0) {
    std::fill(durations.begin(), durations.end(), horizon / n);
  } else {
    const double first = horizon * (growth - 1.0) / (std::pow(growth, n) - 1.0);
    for (int i = 0; i < n; ++i) durations[i] = first * std::pow(growth, i);
  }
  return TimePartition(std::move(durations));
}

/// Axis-aligned free box in (s, d, t). `reach_d` is the lateral interval the
/// ego can reach by `ut`; it gates lane-transition edges in the graph and is
/// unbounded for hand-built voxels.
struct Voxel {
  double ls = 0.0, us = 0.0;
  double ld = 0.0, ud = 0.0;
  double lt = 0.0, ut = 0.0;
  LaneLabel lane = LaneLabel::kCurrent;
  int segment = 0;
  Interval reach_d{-kInf, kInf};

  Interval s_range() const { return {ls, us}; }
  Interval d_range() const { return {ld, ud}; }
  double duration() const { return ut - lt; }

  friend bool operator==(const Voxel&, const Voxel&) = default;
};

inline std::size_t lane_index(LaneLabel lane) { return static_cast<std::size_t>(lane); }

/// Voxels keyed by (segment, lane), each cell sorted by ls.
class VoxelSet {
 public:
  VoxelSet() = default;
  explicit VoxelSet(std::size_t segments) : cells_(segments) {}

  std::size_t segments() const { return cells_.size(); }

  std::vector<Voxel>& cell(std::size_t segment, LaneLabel lane) {
    return cells_.at(segment)[lane_index(lane)];
  }
  const std::vector<Voxel>& cell(std::size_t segment, LaneLabel lane) const {
    return cells_.at(segment)[lane_index(lane)];
  }

  /// All voxels of one segment ordered Left, Current, Right then by ls.
  std::vector<Voxel> layer(std::size_t segment) const {
    std::vector<Voxel> out;
    for (LaneLabel lane : kAllLanes) {
      const auto& c = cell(segment, lane);
      out.insert(out.end(), c.begin(), c.end());
    }
    return out;
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& seg : cells_)
      for (const auto& c : seg) n += c.size();
    return n;
  }

 private:
  std::vector<std::array<std::vector<Voxel>, 3>> cells_;
};

struct VoxelConfig {
  double horizon = 6.0;
  int segments = 5;
  double growth = 1.2;
  int max_voxels_per_cell = 4;
  // Free ranges are expressed for the ego center (agent intervals are
  // inflated by half the ego length), so this is the physical gap minus the
  // ego length.
  double min_range_length = 2.0;
  // The closest agent behind the ego in its own lane cannot be evaded by
  // longitudinal motion and is left out of the Current-lane free space.
  bool ignore_direct_follower = true;
  // Scales the lateral acceleration/jerk used for the lane-transition reach
  // envelope; the Bezier hull cannot realize bang-bang profiles.
  double lateral_reach_scale = 0.6;
  // Same idea for the lateral stopping point that widens the Current band.
  double lateral_stop_scale = 0.5;

  TimePartition partition() const { return make_partition(horizon, segments, growth); }
};

/// Longitudinal positions reachable by braking for lt (floored at
/// standstill) and by accelerating for ut (capped at the speed limit).
inline Interval reachable_s_bounds(const FrenetState& ego, double lt, double ut,
                                   const KinodynamicLimits& limits) {
  const double v0 = std::max(0.0, ego.v_s);
  const double brake = limits.max_decel();
  double s_min;
  if (v0 <= brake * lt) {
    s_min = ego.s + v0 * v0 / (2.0 * brake);
  } else {
    s_min = ego.s + v0 * lt - 0.5 * brake * lt * lt;
  }
  const double accel = limits.max_accel();
  const double v_cap = limits.v_s.hi;
  double s_max;
  if (v0 >= v_cap) {
    s_max = ego.s + v0 * ut;
  } else {
    const double t_cap = (v_cap - v0) / accel;
    if (ut <= t_cap) {
      s_max = ego.s + v0 * ut + 0.5 * accel * ut * ut;
    } else {
      s_max = ego.s + v0 * t_cap + 0.5 * accel * t_cap * t_cap + v_cap * (ut - t_cap);
    }
  }
  return {s_min, s_max};
}

/// `base` minus the union of `occupied`, as closed intervals of positive
/// length ordered by lo.
inline std::vector<Interval> subtract_intervals(Interval base, std::vector<Interval> occupied) {
  std::sort(occupied.begin(), occupied.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  double cursor = base.lo;
  for (const Interval& o : occupied) {
    if (o.hi < cursor) continue;
    if (o.lo > base.hi) break;
    if (o.lo > cursor) out.push_back({cursor, std::min(o.lo, base.hi)});
    cursor = std::max(cursor, o.hi);
    if (cursor >= base.hi) break;
  }
  if (cursor < base.hi) out.push_back({cursor, base.hi});
  std::erase_if(out, [](const Interval& i) { return !(i.length() > 0.0); });
  return out;
}

/// Drops short ranges, keeps the `max_count` longest, returns them sorted by lo.
inline std::vector<Interval> select_ranges(std::vector<Interval> ranges, double min_length,
                                           int max_count) {
  std::erase_if(ranges, [&](const Interval& i) { return i.length() < min_length; });
  if (max_count >= 0 && ranges.size() > static_cast<std::size_t>(max_count)) {
    std::stable_sort(ranges.begin(), ranges.end(), [](const Interval& a, const Interval& b) {
      return a.length() > b.length();
    });
    ranges.resize(static_cast<std::size_t>(max_count));
  }
  std::sort(ranges.begin(), ranges.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  return ranges;
}

/// Agents whose predicted occupancy carves the lane's free space.
inline std::vector<Agent> blocking_agents(const Scene& scene, LaneLabel lane,
                                          const VoxelConfig& config,
                                          const PerceptionConfig& perception) {
  std::vector<Agent> agents = related_agents(scene, lane, perception);
  if (lane == LaneLabel::kCurrent && config.ignore_direct_follower) {
    const double ego_s = scene.ego.state.s;
    auto follower = agents.end();
    for (auto it = agents.begin(); it != agents.end(); ++it) {
      if (it->state.s >= ego_s) continue;
      if (!in_lane_band(it->state.d, LaneLabel::kCurrent, scene.lanes, 0.0)) continue;
      if (follower == agents.end() || it->state.s > follower->state.s) follower = it;
    }
    if (follower != agents.end()) agents.erase(follower);
  }
  return agents;
}

/// Free longitudinal ranges of one (lane, segment) cell.
inline std::vector<Interval> free_ranges(LaneLabel lane, std::size_t segment, const Scene& scene,
                                         const TimePartition& partition,
                                         const KinodynamicLimits& limits,
                                         const VoxelConfig& config = {},
                                         const PerceptionConfig& perception = {}) {
  const double lt = partition.lt(segment);
  const double ut = partition.ut(segment);
  const Interval reach = reachable_s_bounds(scene.ego.state, lt, ut, limits);
  const double inflation = perception.occupancy_margin + 0.5 * scene.ego.dims.length;
  std::vector<Interval> occupied;
  for (const Agent& agent : blocking_agents(scene, lane, config, perception))
    occupied.push_back(predict_occupancy(agent, lt, ut, inflation));
  return select_ranges(subtract_intervals(reach, std::move(occupied)),
                       config.min_range_length, config.max_voxels_per_cell);
}

namespace detail {

/// Furthest lateral excursion (signed, in direction `sign`) reachable from
/// (v, a) within `horizon` when jerk is held at its limit until acceleration
/// saturates and speed is capped. Forward-Euler on a fine fixed step.
inline double jerk_limited_reach(double v, double a, double horizon, double a_max, double j_max,
                                 double v_max, double sign) {
  constexpr double kStep = 0.005;
  double x = 0.0;
  double vel = sign * v;
  double acc = sign * a;
  const int steps = static_cast<int>(std::ceil(horizon / kStep));
  for (int k = 0; k < steps; ++k) {
    const double dt = std::min(kStep, horizon - k * kStep);
    double next_acc = std::min(acc + j_max * dt, a_max);
    if (vel >= v_max) next_acc = std::min(next_acc, 0.0);
    const double a_mid = 0.5 * (acc + next_acc);
    x += vel * dt + 0.5 * a_mid * dt * dt;
    vel = std::min(vel + a_mid * dt, std::max(v_max, vel));
    acc = next_acc;
  }
  return sign * x;
}

/// Point where a lateral motion (v, a) comes to rest under jerk-limited
/// braking, relative to the start.
inline double lateral_stop_offset(double v, double a, double a_max, double j_max) {
  if (v == 0.0 && a == 0.0) return 0.0;
  const double sign = v != 0.0 ? (v > 0.0 ? 1.0 : -1.0) : (a > 0.0 ? 1.0 : -1.0);
  constexpr double kStep = 0.005;
  double x = 0.0, vel = sign * v, acc = sign * a;
  for (int k = 0; k < 4000 && (vel > 0.0 || acc > 0.0); ++k) {
    const double next_acc = std::max(acc - j_max * kStep, std::min(-a_max, acc));
    const double a_mid = 0.5 * (acc + next_acc);
    x += vel * kStep + 0.5 * a_mid * kStep * kStep;
    vel += a_mid * kStep;
    acc = next_acc;
    if (vel <= 0.0 && acc <= 0.0) break;
  }
  return sign * x;
}

}  // namespace detail

/// Lateral interval the ego can occupy at some time in [lt, ut] using a
/// constant maximal lateral acceleration.
inline Interval lateral_reach(const FrenetState& ego, double lt, double ut,
                              const KinodynamicLimits& limits) {
  const double drift_lo = std::min(ego.v_d * lt, ego.v_d * ut);
  const double drift_hi = std::max(ego.v_d * lt, ego.v_d * ut);
  return {ego.d + drift_lo + 0.5 * limits.a_d.lo * ut * ut,
          ego.d + drift_hi + 0.5 * limits.a_d.hi * ut * ut};
}

/// Lateral bounds of voxels in `lane` for the segment [lt, ut].
inline Interval lateral_bounds(LaneLabel lane, const FrenetState& ego, double lt, double ut,
                               const LaneModel& lanes, const VehicleDims& dims,
                               const KinodynamicLimits& limits, double stop_scale = 0.5,
                               double first_duration = 0.0) {
  if (!lanes.has_lane(lane))
    throw Error(ErrorCode::kInvalidLane, std::string(to_string(lane)) + " lane does not exist");
  const Interval full = lanes.lane_band(lane);
  const Interval band{full.lo + 0.5 * dims.width, full.hi - 0.5 * dims.width};
  if (!(band.length() > 0.0))
    throw Error(ErrorCode::kEmptyBand, "ego wider than the lane");
  if (lane != LaneLabel::kCurrent) return band;

  // The band is widened to wherever the ego already is or must pass through
  // while braking its lateral motion; otherwise an ego mid-maneuver could
  // never satisfy its own first voxel. Braking uses scaled limits because
  // the control-point hull cannot follow the extremal profile.
  const double stop = ego.d + detail::lateral_stop_offset(ego.v_d, ego.a_d,
                                                          stop_scale * limits.a_d.hi,
                                                          stop_scale * limits.j_d.hi);
  Interval keep = hull(band, {std::min(ego.d, stop), std::max(ego.d, stop)});
  if (first_duration > 0.0) {
    // The first two control points after d0 are fixed by the initial state.
    const double t = first_duration;
    const double p1 = ego.d + ego.v_d * t / 5.0;
    const double p2 = ego.d + 2.0 * ego.v_d * t / 5.0 + ego.a_d * t * t / 20.0;
    keep = hull(keep, {std::min(p1, p2), std::max(p1, p2)});
  }
  const Interval reach = lateral_reach(ego, lt, ut, limits);
  Interval out = intersect(keep, reach);
  if (!(out.length() > 0.0)) out = reach;
  return out;
}

/// Lateral interval reachable by `t` under scaled acceleration and jerk
/// limits, used to decide whether a lane transition can complete in time.
inline Interval transition_reach(const FrenetState& ego, double t, const KinodynamicLimits& limits,
                                 double scale) {
  const double up = detail::jerk_limited_reach(ego.v_d, ego.a_d, t, scale * limits.a_d.hi,
                                               scale * limits.j_d.hi, limits.v_d.hi, 1.0);
  const double down = detail::jerk_limited_reach(ego.v_d, ego.a_d, t, -scale * limits.a_d.lo,
                                                 -scale * limits.j_d.lo, -limits.v_d.lo, -1.0);
  return {ego.d + down, ego.d + up};
}

/// Builds every (lane, segment) cell of the feasible region.
inline VoxelSet generate_voxels(const Scene& scene, const TimePartition& partition,
                                const KinodynamicLimits& limits, const VoxelConfig& config = {},
                                const PerceptionConfig& perception = {}) {
  VoxelSet set(partition.size());
  const FrenetState& ego = scene.ego.state;
  for (std::size_t i = 0; i < partition.size(); ++i) {
    const double lt = partition.lt(i);
    const double ut = partition.ut(i);
    const Interval reach_d = transition_reach(ego, ut, limits, config.lateral_reach_scale);
    for (LaneLabel lane : kAllLanes) {
      if (!scene.lanes.has_lane(lane)) continue;
      Interval d_range;
      try {
        d_range = lateral_bounds(lane, ego, lt, ut, scene.lanes, scene.ego.dims, limits,
                                 config.lateral_stop_scale, partition.duration(0));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kEmptyBand) continue;
        throw;
      }
      auto& cell = set.cell(i, lane);
      for (const Interval& r :
           free_ranges(lane, i, scene, partition, limits, config, perception)) {
        Voxel v;
        v.ls = r.lo;
        v.us = r.hi;
        v.ld = d_range.lo;
        v.ud = d_range.hi;
        v.lt = lt;
        v.ut = ut;
        v.lane = lane;
        v.segment = static_cast<int>(i);
        v.reach_d = reach_d;
        cell.push_back(v);
      }
    }
  }
  return set;
}

}  // namespace stvplan
