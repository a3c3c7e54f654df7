#pragma once

#include <array>
#include <string>
#include <vector>

#include "stvplan/harness/metrics.hpp"
#include "stvplan/harness/replay.hpp"
#include "stvplan/harness/simulator.hpp"
#include "stvplan/planner.hpp"

namespace stvplan::harness {

enum class Variant { kDefault, kFixedVoxelCount, kUniformDt, kJerkOnly, kJerkEndStates };

inline constexpr std::array<Variant, 5> kAllVariants = {
    Variant::kDefault, Variant::kFixedVoxelCount, Variant::kUniformDt, Variant::kJerkOnly,
    Variant::kJerkEndStates};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kDefault: return "default";
    case Variant::kFixedVoxelCount: return "fixed_voxel_count";
    case Variant::kUniformDt: return "uniform_dt";
    case Variant::kJerkOnly: return "jerk_only";
    case Variant::kJerkEndStates: return "jerk_end_states";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  return std::nullopt;
}

/// The base configuration with one ablation switch applied. Search already
/// returns full-length sequences, so fixing the voxel count only needs the
/// tail-removal retry turned off.
inline PlannerConfig apply_variant(PlannerConfig config, Variant variant) {
  auto& w = config.optimizer.weights.w;
  switch (variant) {
    case Variant::kDefault: break;
    case Variant::kFixedVoxelCount: config.optimizer.retry = false; break;
    case Variant::kUniformDt: config.voxel.growth = 1.0; break;
    case Variant::kJerkOnly: w = {w[0], 0.0, 0.0, 0.0, 0.0}; break;
    case Variant::kJerkEndStates: w[3] = w[4] = 0.0; break;
  }
  return config;
}

struct VariantMetrics {
  Variant variant = Variant::kDefault;
  Metrics metrics;
  LatencyStats latency;
};

/// Replay batch per variant on identical logs.
inline std::vector<VariantMetrics> ablate_replay(const PlannerConfig& base,
                                                 const ReplayBatchOptions& options,
                                                 const std::vector<Variant>& variants) {
  std::vector<VariantMetrics> out;
  for (Variant v : variants) {
    const auto runs = run_replay_batch(apply_variant(base, v), options);
    out.push_back({v, aggregate(runs), latency_of(runs)});
  }
  return out;
}

struct ClosedLoopVariantMetrics {
  Variant variant = Variant::kDefault;
  ClosedLoopMetrics metrics;
  LatencyStats latency;
};

inline std::vector<ClosedLoopVariantMetrics> ablate_closed_loop(
    const PlannerConfig& base, const Scenario& scenario, double duration,
    const std::vector<Variant>& variants, const ClosedLoopOptions& options = {}) {
  std::vector<ClosedLoopVariantMetrics> out;
  for (Variant v : variants) {
    ClosedLoopResult r = run_closed_loop(scenario, apply_variant(base, v), duration, options);
    out.push_back({v, r.metrics, LatencyStats::from(std::move(r.latencies_ms))});
  }
  return out;
}

}  // namespace stvplan::harness
