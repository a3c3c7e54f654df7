#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stvplan/common.hpp"

namespace stvplan {

enum class LaneLabel { kLeft, kCurrent, kRight };

inline constexpr std::array<LaneLabel, 3> kAllLanes = {
    LaneLabel::kLeft, LaneLabel::kCurrent, LaneLabel::kRight};

inline std::string_view to_string(LaneLabel lane) {
  switch (lane) {
    case LaneLabel::kLeft: return "Left";
    case LaneLabel::kCurrent: return "Current";
    case LaneLabel::kRight: return "Right";
  }
  return "?";
}

/// +1 for Left, 0 for Current, -1 for Right (d grows to the left).
inline int lane_offset(LaneLabel lane) {
  switch (lane) {
    case LaneLabel::kLeft: return 1;
    case LaneLabel::kCurrent: return 0;
    case LaneLabel::kRight: return -1;
  }
  return 0;
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double k, Point2 a) { return {k * a.x, k * a.y}; }
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }

/// Lanes of a straight-in-Frenet highway. The reference line is the
/// centerline of the ego's current lane; lanes are indexed from the
/// rightmost (0) to the leftmost (lane_count - 1).
struct LaneModel {
  int lane_count = 3;
  double lane_width = 3.75;
  int current_lane = 1;
  std::vector<Point2> reference_line = {{0.0, 0.0}, {1.0e4, 0.0}};
  double speed_limit = 20.0;

  void validate() const {
    if (lane_count < 1) throw Error(ErrorCode::kInvalidConfig, "lane_count < 1");
    if (!(lane_width > 0.0)) throw Error(ErrorCode::kInvalidConfig, "lane_width <= 0");
    if (current_lane < 0 || current_lane >= lane_count)
      throw Error(ErrorCode::kInvalidConfig, "current_lane outside [0, lane_count)");
    if (reference_line.size() < 2)
      throw Error(ErrorCode::kInvalidConfig, "reference line needs >= 2 points");
    for (std::size_t i = 1; i < reference_line.size(); ++i) {
      if (!(norm(reference_line[i] - reference_line[i - 1]) > 0.0))
        throw Error(ErrorCode::kInvalidConfig, "reference line arc length not increasing");
    }
  }

  bool has_lane(LaneLabel lane) const {
    const int index = current_lane + lane_offset(lane);
    return index >= 0 && index < lane_count;
  }

  double lane_center(LaneLabel lane) const { return lane_offset(lane) * lane_width; }

  /// Full lateral extent of a lane relative to the reference line.
  Interval lane_band(LaneLabel lane) const {
    const double c = lane_center(lane);
    return {c - 0.5 * lane_width, c + 0.5 * lane_width};
  }
};

struct FrenetState {
  double s = 0.0;
  double d = 0.0;
  double v_s = 0.0;
  double v_d = 0.0;
  double a_s = 0.0;
  double a_d = 0.0;

  bool finite() const {
    return std::isfinite(s) && std::isfinite(d) && std::isfinite(v_s) &&
           std::isfinite(v_d) && std::isfinite(a_s) && std::isfinite(a_d);
  }

  friend bool operator==(const FrenetState&, const FrenetState&) = default;
};

struct VehicleDims {
  double length = 4.8;
  double width = 1.9;
};

struct Agent {
  std::string id;
  FrenetState state;
  double length = 4.8;
  double width = 1.9;
  LaneLabel lane = LaneLabel::kCurrent;
};

struct EgoVehicle {
  FrenetState state;
  VehicleDims dims;
};

struct Scene {
  LaneModel lanes;
  EgoVehicle ego;
  std::vector<Agent> agents;
  double timestamp = 0.0;

  void validate() const {
    lanes.validate();
    if (!ego.state.finite()) throw Error(ErrorCode::kInvalidConfig, "ego state not finite");
    std::set<std::string> ids;
    for (const Agent& a : agents) {
      if (!ids.insert(a.id).second)
        throw Error(ErrorCode::kInvalidConfig, "duplicate agent id " + a.id);
      if (!(a.length > 0.0) || !(a.width > 0.0))
        throw Error(ErrorCode::kInvalidConfig, "agent " + a.id + " has non-positive size");
    }
  }
};

/// Knobs that decide which agents matter and how much room they take.
struct PerceptionConfig {
  double sensing_range = 100.0;
  double straddle_tolerance = 0.3;
  double occupancy_margin = 1.0;
};

// ---------------------------------------------------------------------------
// Frenet conversion

namespace detail {

struct Projection {
  double s = 0.0;
  double distance = kInf;
  std::size_t segment = 0;
  double raw_t = 0.0;
  Point2 foot;
};

inline std::vector<double> cumulative_arc_length(const std::vector<Point2>& line) {
  std::vector<double> acc(line.size(), 0.0);
  for (std::size_t i = 1; i < line.size(); ++i)
    acc[i] = acc[i - 1] + norm(line[i] - line[i - 1]);
  return acc;
}

}  // namespace detail

/// Projects a Cartesian state onto the reference line. Velocity and
/// acceleration are rotated into the tangent/normal frame of the segment the
/// point projects onto.
inline FrenetState to_frenet(Point2 position, Point2 velocity, Point2 acceleration,
                             const LaneModel& lanes) {
  lanes.validate();
  constexpr double kTieTol = 1e-6;
  const auto& line = lanes.reference_line;
  const std::vector<double> arc = detail::cumulative_arc_length(line);

  detail::Projection best;
  std::optional<detail::Projection> rival;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Point2 a = line[i];
    const Point2 seg = line[i + 1] - a;
    const double len2 = dot(seg, seg);
    const double raw_t = dot(position - a, seg) / len2;
    const double t = std::clamp(raw_t, 0.0, 1.0);
    const Point2 foot = a + t * seg;
    const double dist = norm(position - foot);
    detail::Projection p{arc[i] + t * std::sqrt(len2), dist, i, raw_t, foot};
    if (dist < best.distance - kTieTol) {
      best = p;
      rival.reset();
    } else if (std::abs(dist - best.distance) <= kTieTol) {
      // Adjacent segments sharing the foot point are not a real tie.
      if (std::abs(p.s - best.s) > kTieTol) rival = p;
    }
  }
  if (rival) {
    throw Error(ErrorCode::kAmbiguousProjection,
                "point is equidistant from two reference line segments");
  }
  const std::size_t last = line.size() - 2;
  if ((best.segment == 0 && best.raw_t < -kTieTol) ||
      (best.segment == last && best.raw_t > 1.0 + kTieTol)) {
    throw Error(ErrorCode::kOutOfRange, "point projects beyond the reference line");
  }

  const Point2 seg = line[best.segment + 1] - line[best.segment];
  const Point2 tangent = (1.0 / norm(seg)) * seg;
  const Point2 normal{-tangent.y, tangent.x};
  FrenetState out;
  out.s = best.s;
  out.d = dot(position - best.foot, normal);
  out.v_s = dot(velocity, tangent);
  out.v_d = dot(velocity, normal);
  out.a_s = dot(acceleration, tangent);
  out.a_d = dot(acceleration, normal);
  return out;
}

/// Inverse of the position part of to_frenet.
inline Point2 from_frenet(double s, double d, const LaneModel& lanes) {
  const auto& line = lanes.reference_line;
  const std::vector<double> arc = detail::cumulative_arc_length(line);
  if (s < -1e-9 || s > arc.back() + 1e-9)
    throw Error(ErrorCode::kOutOfRange, "s beyond the reference line");
  std::size_t i = 0;
  while (i + 2 < line.size() && arc[i + 1] < s) ++i;
  const Point2 seg = line[i + 1] - line[i];
  const double len = norm(seg);
  const Point2 tangent = (1.0 / len) * seg;
  const Point2 normal{-tangent.y, tangent.x};
  return line[i] + (s - arc[i]) * tangent + d * normal;
}

// ---------------------------------------------------------------------------
// Prediction and lane membership

/// s-range swept by an agent between lt and ut under constant velocity,
/// inflated by half its length plus a margin.
inline Interval predict_occupancy(const Agent& agent, double lt, double ut,
                                  double margin = 1.0) {
  const double half = 0.5 * agent.length + margin;
  const double a = agent.state.s + agent.state.v_s * lt;
  const double b = agent.state.s + agent.state.v_s * ut;
  return {std::min(a, b) - half, std::max(a, b) + half};
}

inline bool in_lane_band(double d, LaneLabel lane, const LaneModel& lanes,
                         double straddle_tolerance) {
  const Interval band = lanes.lane_band(lane);
  return band.contains(d, straddle_tolerance);
}

/// Nearest existing lane for a lateral offset, if it is one of L/C/R.
inline std::optional<LaneLabel> nearest_lane(double d, const LaneModel& lanes) {
  const long idx = std::lround(d / lanes.lane_width);
  if (idx < -1 || idx > 1) return std::nullopt;
  const LaneLabel label = idx > 0 ? LaneLabel::kLeft
                                  : (idx < 0 ? LaneLabel::kRight : LaneLabel::kCurrent);
  if (!lanes.has_lane(label)) return std::nullopt;
  return label;
}

/// Agents in the given lane's d-band (with boundary straddling) and within
/// sensing range of the ego, in scene order.
inline std::vector<Agent> related_agents(const Scene& scene, LaneLabel lane,
                                         const PerceptionConfig& config = {}) {
  if (!scene.lanes.has_lane(lane))
    throw Error(ErrorCode::kInvalidLane, std::string(to_string(lane)) + " lane does not exist");
  std::vector<Agent> out;
  for (const Agent& agent : scene.agents) {
    if (std::abs(agent.state.s - scene.ego.state.s) > config.sensing_range) continue;
    if (!in_lane_band(agent.state.d, lane, scene.lanes, config.straddle_tolerance)) continue;
    out.push_back(agent);
  }
  return out;
}

}  // namespace stvplan
