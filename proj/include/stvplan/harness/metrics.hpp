#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stvplan/limits.hpp"
#include "stvplan/scene.hpp"

namespace stvplan::harness {

/// Longest delay before braking that keeps a positive gap when the leader
/// brakes now. Both vehicles use the same maximal deceleration; `gap` is
/// bumper to bumper.
inline double response_time(double gap, double v_ego, double v_front, double decel) {
  if (gap <= 0.0) return 0.0;
  if (v_ego <= 0.0) return kInf;
  // With equal deceleration the gap is smallest either now or when the ego
  // stops, so only the final gap matters.
  const double tau = (gap + (v_front * v_front - v_ego * v_ego) / (2.0 * decel)) / v_ego;
  return std::max(0.0, tau);
}

inline double response_time(const FrenetState& ego, const std::optional<Agent>& front,
                            const KinodynamicLimits& limits, double ego_length = 4.8) {
  if (!front) return kInf;
  const double gap = front->state.s - 0.5 * front->length - (ego.s + 0.5 * ego_length);
  return response_time(gap, ego.v_s, std::max(0.0, front->state.v_s), limits.max_decel());
}

/// Nearest agent ahead whose center lies in the band of the ego's lane.
inline std::optional<Agent> front_agent(const FrenetState& ego, const std::vector<Agent>& agents,
                                        double lane_width) {
  const double center = std::round(ego.d / lane_width) * lane_width;
  std::optional<Agent> best;
  for (const Agent& a : agents) {
    if (std::abs(a.state.d - center) > 0.5 * lane_width) continue;
    if (a.state.s <= ego.s) continue;
    if (!best || a.state.s < best->state.s) best = a;
  }
  return best;
}

/// One sample of the danger measure.
struct RiskFrame {
  FrenetState ego;
  std::optional<Agent> front;
};

/// Fraction of frames whose response time is below `threshold` seconds.
inline double compute_risk(const std::vector<RiskFrame>& frames, const KinodynamicLimits& limits,
                           double ego_length = 4.8, double threshold = 1.0) {
  if (frames.empty()) return 0.0;
  std::size_t danger = 0;
  for (const RiskFrame& f : frames)
    if (response_time(f.ego, f.front, limits, ego_length) < threshold) ++danger;
  return static_cast<double>(danger) / static_cast<double>(frames.size());
}

struct LatencyStats {
  std::size_t count = 0;
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;

  static LatencyStats from(std::vector<double> samples) {
    LatencyStats s;
    s.count = samples.size();
    if (samples.empty()) return s;
    double sum = 0.0;
    for (double x : samples) sum += x;
    s.mean_ms = sum / static_cast<double>(samples.size());
    std::sort(samples.begin(), samples.end());
    s.max_ms = samples.back();
    const auto k = static_cast<std::size_t>(std::ceil(0.95 * samples.size())) - 1;
    s.p95_ms = samples[std::min(k, samples.size() - 1)];
    return s;
  }
};

enum class RunOutcome { kSuccess, kFailure, kWrongLane };

inline std::string_view to_string(RunOutcome o) {
  switch (o) {
    case RunOutcome::kSuccess: return "success";
    case RunOutcome::kFailure: return "failure";
    case RunOutcome::kWrongLane: return "wrong_lane";
  }
  return "?";
}

/// Result of one open-loop replay run.
struct RunResult {
  RunOutcome outcome = RunOutcome::kFailure;
  bool collision = false;
  bool planning_abort = false;
  int failed_ticks = 0;
  int final_lane = 0;
  double risk = 0.0;
  double efficiency = 0.0;
  std::string note;
  std::vector<double> latencies_ms;
};

/// Batch summary in the Succ./Fail/Risk/Effi. layout.
struct Metrics {
  std::size_t runs = 0;
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::size_t wrong_lane = 0;
  double success_rate = 0.0;
  double failure_rate = 0.0;
  double risk = 0.0;
  double efficiency = 0.0;
  std::size_t collisions = 0;
  std::size_t planning_failures = 0;
  std::size_t failed_ticks = 0;
};

inline Metrics aggregate(const std::vector<RunResult>& runs) {
  Metrics m;
  m.runs = runs.size();
  if (runs.empty()) return m;
  double risk = 0.0, effi = 0.0;
  for (const RunResult& r : runs) {
    switch (r.outcome) {
      case RunOutcome::kSuccess: ++m.successes; break;
      case RunOutcome::kFailure: ++m.failures; break;
      case RunOutcome::kWrongLane: ++m.wrong_lane; break;
    }
    m.collisions += r.collision ? 1 : 0;
    m.planning_failures += r.planning_abort ? 1 : 0;
    m.failed_ticks += static_cast<std::size_t>(r.failed_ticks);
    risk += r.risk;
    effi += r.efficiency;
  }
  const double n = static_cast<double>(runs.size());
  m.success_rate = static_cast<double>(m.successes) / n;
  m.failure_rate = static_cast<double>(m.failures) / n;
  m.risk = risk / n;
  m.efficiency = effi / n;
  return m;
}

inline LatencyStats latency_of(const std::vector<RunResult>& runs) {
  std::vector<double> all;
  for (const RunResult& r : runs) all.insert(all.end(), r.latencies_ms.begin(), r.latencies_ms.end());
  return LatencyStats::from(std::move(all));
}

}  // namespace stvplan::harness
