#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stvplan/bezier.hpp"
#include "stvplan/common.hpp"
#include "stvplan/limits.hpp"
#include "stvplan/qp_solver.hpp"
#include "stvplan/scene.hpp"
#include "stvplan/voxel_graph.hpp"
#include "stvplan/voxelizer.hpp"

namespace stvplan {

/// w[0] jerk, w[1] end position, w[2] end velocity, w[3] lateral velocity,
/// w[4] longitudinal acceleration.
struct ObjectiveWeights {
  std::array<double, 5> w = {1.0, 2.0, 1.0, 5.0, 0.5};
  double w_front = 1.0;
  double w_rear = 1.0;
  double t_response = 1.0;
  // The literal front target adds the closing-speed braking distance to the
  // leader's position, which pulls a fast ego toward a slow leader. The
  // braking-gap form subtracts it instead.
  bool braking_gap_front = true;

  void validate() const {
    for (double x : w)
      if (!(x >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "objective weight < 0");
    if (!(w_front >= 0.0 && w_rear >= 0.0 && w_front + w_rear > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "front/rear blend weights invalid");
    if (!(t_response >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "response time < 0");
  }
};

struct SegmentTarget {
  double alpha_s = 0.0;
  double alpha_d = 0.0;
  double beta_s = 0.0;
  double beta_d = 0.0;
};

struct IdealEndStates {
  std::vector<SegmentTarget> segments;
};

// ---------------------------------------------------------------------------
// Lane-change corridor rewrite

struct ModifiedSequence {
  VoxelSequence sequence;
  bool modified = false;
  bool empty_intersection = false;
};

/// Narrows the two voxels around the lane transition so they are free in
/// both lanes, and lets them span both lanes laterally. With the same-segment
/// rule, up to `lead_voxels` voxels before the transition get the same
/// treatment when the target lane is free next to them, so the lateral move
/// can start before the transition segment. Without that, a replanning ego
/// always finds the move one segment ahead and never starts it.
inline ModifiedSequence modify_sequence_for_lane_change(
    const VoxelSequence& sequence, const VoxelGraph& graph,
    TransitionRule rule = TransitionRule::kSameSegment, std::size_t lead_voxels = 1) {
  const auto i = sequence.transition_index();
  if (!i) throw Error(ErrorCode::kNoTransition, "sequence has no lane transition");
  ModifiedSequence out{sequence, false, false};
  Voxel& a = out.sequence.voxels[*i];
  Voxel& b = out.sequence.voxels[*i + 1];
  auto voxels_of = [&](std::size_t layer) {
    std::vector<Voxel> out_layer;
    for (const VoxelNode& node : graph.layers.at(layer)) out_layer.push_back(node.voxel);
    return out_layer;
  };
  const auto cut = transition_ranges(a, b, voxels_of(sequence.nodes.at(*i).layer),
                                     voxels_of(sequence.nodes.at(*i + 1).layer), rule);
  if (!cut) {
    out.empty_intersection = true;
    return out;
  }
  const LaneLabel target = b.lane;
  a.ls = cut->first.lo;
  a.us = cut->first.hi;
  b.ls = cut->second.lo;
  b.us = cut->second.hi;
  const Interval d = hull(a.d_range(), b.d_range());
  a.ld = b.ld = d.lo;
  a.ud = b.ud = d.hi;
  if (rule == TransitionRule::kSameSegment) {
    for (std::size_t k = *i; k-- > 0 && *i - k <= lead_voxels;) {
      Voxel& v = out.sequence.voxels[k];
      const auto lead = best_intersection(v.s_range(), voxels_of(sequence.nodes.at(k).layer), target);
      if (!lead) break;
      v.ls = lead->lo;
      v.us = lead->hi;
      const Interval dv = hull(v.d_range(), d);
      v.ld = dv.lo;
      v.ud = dv.hi;
    }
  }
  out.modified = true;
  return out;
}

// ---------------------------------------------------------------------------
// Ideal end states

/// gamma_f = s_f + (v0^2 - v_f^2) / (2 a) - v0 T_res
inline double front_target(double s_f, double v0, double v_f, double decel, double t_res) {
  return s_f + (v0 * v0 - v_f * v_f) / (2.0 * decel) - v0 * t_res;
}

/// Follow position that leaves room to brake down to the leader's speed
/// and to react: s_f - max(0, v0^2 - v_f^2) / (2 a) - v0 T_res.
inline double braking_gap_target(double s_f, double v0, double v_f, double decel, double t_res) {
  return s_f - std::max(0.0, v0 * v0 - v_f * v_f) / (2.0 * decel) - v0 * t_res;
}

/// gamma_r = s_r + (v_r^2 - v0^2) / (2 a) + v_r (T_res + ut - lt)
inline double rear_target(double s_r, double v0, double v_r, double decel, double t_res,
                          double duration) {
  return s_r + (v_r * v_r - v0 * v0) / (2.0 * decel) + v_r * (t_res + duration);
}

/// Per-segment end position and velocity targets. The front and rear agents
/// are the ones in the voxel's lane whose inflated occupancy over the
/// segment forms the voxel's upper and lower s bound.
inline IdealEndStates ideal_end_states(const VoxelSequence& sequence, const Scene& scene,
                                       const ObjectiveWeights& weights,
                                       const KinodynamicLimits& limits,
                                       const PerceptionConfig& perception = {}) {
  if (sequence.empty()) throw Error(ErrorCode::kEmptySequence, "empty voxel sequence");
  constexpr double kEps = 1e-6;
  const double v0 = scene.ego.state.v_s;
  const double decel = limits.max_decel();
  const double inflation = perception.occupancy_margin + 0.5 * scene.ego.dims.length;
  const double v_cap = std::min(limits.v_s.hi, scene.lanes.speed_limit);
  IdealEndStates out;
  for (const Voxel& v : sequence.voxels) {
    const Agent* front = nullptr;
    const Agent* rear = nullptr;
    double front_lo = kInf, rear_hi = -kInf;
    std::vector<Agent> agents = related_agents(scene, v.lane, perception);
    for (const Agent& agent : agents) {
      const Interval occ = predict_occupancy(agent, v.lt, v.ut, inflation);
      if (std::abs(occ.lo - v.us) <= kEps && occ.lo < front_lo) {
        front_lo = occ.lo;
        front = &agent;
      }
      if (std::abs(occ.hi - v.ls) <= kEps && occ.hi > rear_hi) {
        rear_hi = occ.hi;
        rear = &agent;
      }
    }
    SegmentTarget t;
    double gamma_f = 0.0, gamma_r = 0.0;
    if (front) {
      const double s_f = predict_occupancy(*front, v.ut, v.ut, inflation).lo;
      gamma_f = weights.braking_gap_front
                    ? braking_gap_target(s_f, v0, front->state.v_s, decel, weights.t_response)
                    : front_target(s_f, v0, front->state.v_s, decel, weights.t_response);
    }
    if (rear) {
      const double s_r = predict_occupancy(*rear, v.lt, v.lt, inflation).hi;
      gamma_r = rear_target(s_r, v0, rear->state.v_s, decel, weights.t_response, v.duration());
    }
    if (!front) {
      t.alpha_s = v.us;
    } else if (!rear) {
      t.alpha_s = gamma_f;
    } else {
      t.alpha_s = (weights.w_front * gamma_f + weights.w_rear * gamma_r) /
                  (weights.w_front + weights.w_rear);
    }
    t.alpha_s = std::clamp(t.alpha_s, v.ls, v.us);
    t.alpha_d = scene.lanes.lane_center(v.lane);
    t.beta_s = front ? std::clamp(front->state.v_s, limits.v_s.lo, v_cap) : v_cap;
    t.beta_d = 0.0;
    out.segments.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// QP assembly

/// Column of control point k of segment i on one axis.
inline Eigen::Index variable_index(std::size_t segment, Axis axis, int k) {
  return static_cast<Eigen::Index>(12 * segment + 6 * static_cast<int>(axis) + k);
}

namespace detail {

inline void add_block(Eigen::MatrixXd& H, std::size_t segment, Axis axis,
                      const Eigen::MatrixXd& Q) {
  H.block(variable_index(segment, axis, 0), variable_index(segment, axis, 0), 6, 6) += Q;
}

/// Adds w (a'x - c)^2 to the objective 0.5 x'Hx + g'x.
inline void add_square(QpProblem& qp, const Eigen::RowVectorXd& a, double c, double w) {
  if (w == 0.0) return;
  qp.H += 2.0 * w * a.transpose() * a;
  qp.g -= 2.0 * w * c * a.transpose();
}

/// Row selecting order-th derivative control point `k` (physical units) of
/// segment i on `axis`.
inline Eigen::RowVectorXd derivative_row(std::size_t n, std::size_t segment, Axis axis, int order,
                                         int k, double duration) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(12 * n));
  const Eigen::MatrixXd op = derivative_operator(order);
  const double scale = order == 0 ? duration : 1.0 / std::pow(duration, order - 1);
  row.segment(variable_index(segment, axis, 0), 6) = scale * op.row(k);
  return row;
}

}  // namespace detail

/// Builds the QP over the 12 n control points of the sequence. The ego state
/// must be expressed in the same frame as the voxels.
inline QpProblem assemble(const VoxelSequence& sequence, const FrenetState& ego,
                          const IdealEndStates& ideals, const ObjectiveWeights& weights,
                          const KinodynamicLimits& limits) {
  const std::size_t n = sequence.size();
  if (n == 0) throw Error(ErrorCode::kEmptySequence, "empty voxel sequence");
  if (ideals.segments.size() < n)
    throw Error(ErrorCode::kDimensionMismatch, "fewer ideal end states than segments");
  QpProblem qp(static_cast<Eigen::Index>(12 * n));
  constexpr std::array<Axis, 2> kAxes = {Axis::kS, Axis::kD};
  auto row = [&](std::size_t i, Axis axis, int order, int k) {
    return detail::derivative_row(n, i, axis, order, k, sequence.voxels[i].duration());
  };

  // Initial state.
  const double init[2][3] = {{ego.s, ego.v_s, ego.a_s}, {ego.d, ego.v_d, ego.a_d}};
  for (Axis axis : kAxes)
    for (int order = 0; order < 3; ++order)
      qp.add_equality(row(0, axis, order, 0), init[static_cast<int>(axis)][order]);

  // C2 continuity at the knots.
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (Axis axis : kAxes)
      for (int order = 0; order < 3; ++order)
        qp.add_equality(row(i, axis, order, 5 - order) - row(i + 1, axis, order, 0), 0.0);

  // Corridor and kinodynamic boxes on control points.
  const Interval bounds[2][4] = {{{}, limits.v_s, limits.a_s, limits.j_s},
                                 {{}, limits.v_d, limits.a_d, limits.j_d}};
  for (std::size_t i = 0; i < n; ++i) {
    const Voxel& v = sequence.voxels[i];
    for (Axis axis : kAxes) {
      const Interval box = axis == Axis::kS ? v.s_range() : v.d_range();
      for (int k = 0; k < 6; ++k) qp.add_inequality(row(i, axis, 0, k), box.lo, box.hi);
      for (int order = 1; order <= 3; ++order) {
        const Interval lim = bounds[static_cast<int>(axis)][order];
        for (int k = 0; k < 6 - order; ++k) qp.add_inequality(row(i, axis, order, k), lim.lo, lim.hi);
      }
    }
  }

  // Objective.
  const auto& w = weights.w;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = sequence.voxels[i].duration();
    if (w[0] != 0.0) {
      const Eigen::MatrixXd q3 = 2.0 * w[0] * squared_derivative_integral(3, dt);
      detail::add_block(qp.H, i, Axis::kS, q3);
      detail::add_block(qp.H, i, Axis::kD, q3);
    }
    if (w[3] != 0.0)
      detail::add_block(qp.H, i, Axis::kD, 2.0 * w[3] * squared_derivative_integral(1, dt));
    if (w[4] != 0.0)
      detail::add_block(qp.H, i, Axis::kS, 2.0 * w[4] * squared_derivative_integral(2, dt));
    const SegmentTarget& t = ideals.segments[i];
    detail::add_square(qp, row(i, Axis::kS, 0, 5), t.alpha_s, w[1]);
    detail::add_square(qp, row(i, Axis::kD, 0, 5), t.alpha_d, w[1]);
    detail::add_square(qp, row(i, Axis::kS, 1, 4), t.beta_s, w[2]);
    detail::add_square(qp, row(i, Axis::kD, 1, 4), t.beta_d, w[2]);
  }
  qp.H = 0.5 * (qp.H + qp.H.transpose());
  return qp;
}

/// Unpacks a solution vector into a piecewise curve on the voxels' spans.
inline PiecewiseBezier to_trajectory(const VoxelSequence& sequence, const Eigen::VectorXd& x) {
  std::vector<BezierSegment> segs;
  for (std::size_t i = 0; i < sequence.size(); ++i) {
    BezierSegment seg;
    seg.lt = sequence.voxels[i].lt;
    seg.ut = sequence.voxels[i].ut;
    for (int k = 0; k < 6; ++k) {
      seg.s[k] = x(variable_index(i, Axis::kS, k));
      seg.d[k] = x(variable_index(i, Axis::kD, k));
    }
    segs.push_back(seg);
  }
  return PiecewiseBezier(std::move(segs));
}

// ---------------------------------------------------------------------------
// Verification

struct Violation {
  double time = 0.0;
  std::string quantity;  // e.g. "s", "v_d", "jerk_s", "curvature"
  double value = 0.0;
  Interval bound;
};

struct VerifyOptions {
  double sample_dt = 0.02;
  double tolerance = 1e-4;
  std::size_t max_violations = 10;
  bool check_curvature = true;
};

/// Samples the trajectory against the corridor and limits. An empty result
/// means the trajectory passed.
inline std::vector<Violation> verify(const PiecewiseBezier& traj, const VoxelSequence& sequence,
                                     const KinodynamicLimits& limits,
                                     const VerifyOptions& options = {}) {
  std::vector<Violation> out;
  if (traj.empty() || sequence.empty()) return out;
  const double t0 = traj.start_time();
  const double t1 = traj.end_time();
  const auto count = static_cast<long>(std::floor((t1 - t0) / options.sample_dt + 1e-9));
  auto check = [&](double t, const char* name, double value, Interval bound) {
    if (out.size() >= options.max_violations) return;
    if (value < bound.lo - options.tolerance || value > bound.hi + options.tolerance)
      out.push_back({t, name, value, bound});
  };
  for (long k = 0; k <= count + 1 && out.size() < options.max_violations; ++k) {
    const double t = k > count ? t1 : t0 + k * options.sample_dt;
    if (k > count && t0 + count * options.sample_dt >= t1) break;
    const std::size_t i = std::min(traj.locate(t), sequence.size() - 1);
    const Voxel& v = sequence.voxels[i];
    const BezierSegment& seg = traj.segments()[i];
    const double tc = std::clamp(t, seg.lt, seg.ut);
    check(t, "s", evaluate(seg, tc, Axis::kS, 0), v.s_range());
    check(t, "d", evaluate(seg, tc, Axis::kD, 0), v.d_range());
    const double vs = evaluate(seg, tc, Axis::kS, 1), vd = evaluate(seg, tc, Axis::kD, 1);
    const double as = evaluate(seg, tc, Axis::kS, 2), ad = evaluate(seg, tc, Axis::kD, 2);
    check(t, "v_s", vs, limits.v_s);
    check(t, "v_d", vd, limits.v_d);
    check(t, "a_s", as, limits.a_s);
    check(t, "a_d", ad, limits.a_d);
    check(t, "jerk_s", evaluate(seg, tc, Axis::kS, 3), limits.j_s);
    check(t, "jerk_d", evaluate(seg, tc, Axis::kD, 3), limits.j_d);
    if (options.check_curvature) {
      const double speed2 = vs * vs + vd * vd;
      if (speed2 >= 1e-6)
        check(t, "curvature", std::abs(vs * ad - vd * as) / std::pow(speed2, 1.5),
              {0.0, limits.curvature_max});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Retry loop

struct OptimizerConfig {
  ObjectiveWeights weights;
  QpOptions qp;
  VerifyOptions verify;
  std::size_t min_segments = 2;
  // Drop the tail voxel and retry on failure. Off for the fixed-count ablation.
  bool retry = true;
};

struct Attempt {
  std::size_t segments = 0;
  std::string reason;  // empty on success
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  std::vector<Violation> violations;
};

struct OptimizeResult {
  std::optional<PiecewiseBezier> trajectory;
  VoxelSequence sequence;  // the sequence the trajectory was solved on
  std::vector<Attempt> attempts;

  bool ok() const { return trajectory.has_value(); }
};

/// assemble -> solve -> verify, removing the tail voxel after each failure.
inline OptimizeResult optimize_with_retry(const VoxelSequence& sequence, const Scene& scene,
                                          const KinodynamicLimits& limits,
                                          const OptimizerConfig& config,
                                          const PerceptionConfig& perception = {}) {
  if (sequence.empty()) throw Error(ErrorCode::kEmptySequence, "empty voxel sequence");
  OptimizeResult result;
  VoxelSequence current = sequence;
  const IdealEndStates ideals =
      ideal_end_states(sequence, scene, config.weights, limits, perception);
  QpOptions qp_options = config.qp;
  qp_options.check_convexity = false;  // Gram matrices are PSD by construction
  while (true) {
    Attempt attempt;
    attempt.segments = current.size();
    try {
      const QpProblem qp = assemble(current, scene.ego.state, ideals, config.weights, limits);
      const QpSolution sol = solve(qp, qp_options);
      attempt.status = sol.status;
      attempt.iterations = sol.iterations;
      if (sol.status != QpStatus::kOptimal) {
        attempt.reason = std::string("solver ") + std::string(to_string(sol.status));
      } else {
        PiecewiseBezier traj = to_trajectory(current, sol.x);
        attempt.violations = verify(traj, current, limits, config.verify);
        if (attempt.violations.empty()) {
          result.attempts.push_back(attempt);
          result.trajectory = std::move(traj);
          result.sequence = current;
          return result;
        }
        attempt.reason = "verification failed: " + attempt.violations.front().quantity;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumericalBreakdown) throw;
      attempt.reason = e.what();
    }
    result.attempts.push_back(std::move(attempt));
    if (!config.retry || current.size() <= config.min_segments) break;
    current = current.truncated(current.size() - 1);
  }
  result.sequence = current;
  return result;
}

}  // namespace stvplan
