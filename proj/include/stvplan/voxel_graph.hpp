#pragma once

#include <algorithm>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "stvplan/common.hpp"
#include "stvplan/limits.hpp"
#include "stvplan/voxelizer.hpp"

namespace stvplan {

enum class Behavior { kLaneKeep, kLaneChangeLeft, kLaneChangeRight };

inline constexpr std::array<Behavior, 3> kAllBehaviors = {
    Behavior::kLaneKeep, Behavior::kLaneChangeLeft, Behavior::kLaneChangeRight};

inline std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::kLaneKeep: return "LaneKeep";
    case Behavior::kLaneChangeLeft: return "LaneChangeLeft";
    case Behavior::kLaneChangeRight: return "LaneChangeRight";
  }
  return "?";
}

inline LaneLabel target_lane(Behavior b) {
  switch (b) {
    case Behavior::kLaneKeep: return LaneLabel::kCurrent;
    case Behavior::kLaneChangeLeft: return LaneLabel::kLeft;
    case Behavior::kLaneChangeRight: return LaneLabel::kRight;
  }
  return LaneLabel::kCurrent;
}

struct ParentEdge {
  std::size_t index = 0;  // into the previous layer
  double cost = 0.0;
  double s_overlap = 0.0;
};

struct VoxelNode {
  Voxel voxel;
  std::vector<ParentEdge> parents;
  std::size_t layer = 0;
};

struct VoxelGraph {
  std::vector<std::vector<VoxelNode>> layers;

  std::size_t size() const { return layers.size(); }
};

/// How the two voxels around a lane transition are narrowed so the ego is
/// clear of agents in both lanes while it crosses.
enum class TransitionRule {
  // Each transition voxel is cut by the other lane's free range over its own
  // segment.
  kSameSegment,
  // Voxel i is cut by its own lane's voxels of layer i + 1 and voxel i + 1
  // by its lane's voxels of layer i.
  kAdjacentLayer,
};

struct GraphThresholds {
  double s_overlap_min = 0.5;
  double d_overlap_min = 0.1;
  TransitionRule transition = TransitionRule::kSameSegment;
};

/// Only Current -> Current, Current -> X and X -> X transitions are allowed,
/// so a sequence changes lanes at most once.
inline bool lane_check(const Voxel& child, const Voxel& parent) {
  if (child.lane == LaneLabel::kCurrent) return parent.lane == LaneLabel::kCurrent;
  return parent.lane == child.lane || parent.lane == LaneLabel::kCurrent;
}

inline bool intersection_check(const Voxel& child, const Voxel& parent,
                               const GraphThresholds& thresholds) {
  return overlap_length(child.s_range(), parent.s_range()) >= thresholds.s_overlap_min &&
         overlap_length(child.d_range(), parent.d_range()) >= thresholds.d_overlap_min;
}

/// 1 - 2 s_inter / (dT^2 (a_max - a_min)), clamped to [0, 1].
inline double edge_cost(double s_inter, const KinodynamicLimits& limits, double segment_duration) {
  const double span = segment_duration * segment_duration * (limits.a_s.hi - limits.a_s.lo);
  return std::clamp(1.0 - 2.0 * s_inter / span, 0.0, 1.0);
}

inline double edge_cost(const Voxel& child, const Voxel& parent, const KinodynamicLimits& limits,
                        double segment_duration) {
  return edge_cost(overlap_length(child.s_range(), parent.s_range()), limits, segment_duration);
}

/// Largest intersection of `range` with the voxels of `layer` in `lane`.
inline std::optional<Interval> best_intersection(const Interval& range,
                                                 const std::vector<Voxel>& layer, LaneLabel lane) {
  std::optional<Interval> best;
  for (const Voxel& v : layer) {
    if (v.lane != lane) continue;
    const Interval cut = intersect(range, v.s_range());
    if (!(cut.length() > 0.0)) continue;
    if (!best || cut.length() > best->length()) best = cut;
  }
  return best;
}

/// Narrowed s-ranges of a (parent, child) lane transition, or nothing when
/// one side has no intersecting candidate.
inline std::optional<std::pair<Interval, Interval>> transition_ranges(
    const Voxel& parent, const Voxel& child, const std::vector<Voxel>& parent_layer,
    const std::vector<Voxel>& child_layer, TransitionRule rule) {
  std::optional<Interval> a, b;
  if (rule == TransitionRule::kSameSegment) {
    a = best_intersection(parent.s_range(), parent_layer, child.lane);
    b = best_intersection(child.s_range(), child_layer, parent.lane);
  } else {
    a = best_intersection(parent.s_range(), child_layer, parent.lane);
    b = best_intersection(child.s_range(), parent_layer, child.lane);
  }
  if (!a || !b) return std::nullopt;
  return std::make_pair(*a, *b);
}

/// Layered voxel graph. Same-lane edges need s and d overlap above the
/// thresholds. Lane-transition edges need s overlap, a target band that is
/// laterally reachable within the child's span, and narrowed transition
/// ranges that are still long enough and still overlap.
inline VoxelGraph build_graph(const VoxelSet& voxels, const GraphThresholds& thresholds,
                              const KinodynamicLimits& limits) {
  VoxelGraph graph;
  std::vector<Voxel> previous;
  for (std::size_t i = 0; i < voxels.segments(); ++i) {
    std::vector<Voxel> current = voxels.layer(i);
    std::vector<VoxelNode> layer;
    layer.reserve(current.size());
    for (const Voxel& v : current) {
      VoxelNode node{v, {}, i};
      if (i > 0) {
        for (std::size_t p = 0; p < previous.size(); ++p) {
          const Voxel& parent = previous[p];
          if (!lane_check(v, parent)) continue;
          const double s_inter = overlap_length(v.s_range(), parent.s_range());
          if (v.lane == parent.lane) {
            if (!intersection_check(v, parent, thresholds)) continue;
          } else {
            if (s_inter < thresholds.s_overlap_min) continue;
            if (overlap_length(v.d_range(), v.reach_d) < thresholds.d_overlap_min) continue;
            const auto cut =
                transition_ranges(parent, v, previous, current, thresholds.transition);
            if (!cut || cut->first.length() < thresholds.s_overlap_min ||
                cut->second.length() < thresholds.s_overlap_min ||
                overlap_length(cut->first, cut->second) < thresholds.s_overlap_min)
              continue;
          }
          node.parents.push_back({p, edge_cost(s_inter, limits, v.duration()), s_inter});
        }
      }
      layer.push_back(std::move(node));
    }
    graph.layers.push_back(std::move(layer));
    previous = std::move(current);
  }
  return graph;
}

struct NodeRef {
  std::size_t layer = 0;
  std::size_t index = 0;

  friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

/// A root-to-leaf path through the graph; edge_costs[k] and overlaps[k]
/// belong to the edge entering voxels[k + 1].
struct VoxelSequence {
  std::vector<Voxel> voxels;
  std::vector<NodeRef> nodes;
  std::vector<double> edge_costs;
  std::vector<double> overlaps;
  double cost = 0.0;

  std::size_t size() const { return voxels.size(); }
  bool empty() const { return voxels.empty(); }

  /// Index i such that voxels[i] and voxels[i + 1] differ in lane.
  std::optional<std::size_t> transition_index() const {
    for (std::size_t i = 0; i + 1 < voxels.size(); ++i)
      if (voxels[i].lane != voxels[i + 1].lane) return i;
    return std::nullopt;
  }

  /// Keeps the first `n` voxels.
  VoxelSequence truncated(std::size_t n) const {
    VoxelSequence out;
    n = std::min(n, voxels.size());
    out.voxels.assign(voxels.begin(), voxels.begin() + n);
    out.nodes.assign(nodes.begin(), nodes.begin() + std::min(n, nodes.size()));
    const std::size_t edges = n > 0 ? n - 1 : 0;
    out.edge_costs.assign(edge_costs.begin(), edge_costs.begin() + std::min(edges, edge_costs.size()));
    out.overlaps.assign(overlaps.begin(), overlaps.begin() + std::min(edges, overlaps.size()));
    out.cost = 0.0;
    for (double c : out.edge_costs) out.cost += c;
    return out;
  }
};

struct SearchOptions {
  // The ego physically starts in its own lane, so paths are rooted there.
  bool roots_in_current_lane = true;
  // When set, a root voxel must contain this s.
  std::optional<double> start_s;
};

namespace detail {

struct PathLabel {
  bool valid = false;
  double cost = 0.0;
  std::vector<double> overlaps;
  std::size_t parent = 0;
};

/// True when (cost_a, overlaps_a) should be preferred to (cost_b, overlaps_b).
inline bool better_path(double cost_a, const std::vector<double>& ov_a, double cost_b,
                        const std::vector<double>& ov_b) {
  if (cost_a != cost_b) return cost_a < cost_b;
  return std::lexicographical_compare(ov_b.begin(), ov_b.end(), ov_a.begin(), ov_a.end());
}

inline bool is_root(const VoxelNode& node, const SearchOptions& options) {
  if (options.roots_in_current_lane && node.voxel.lane != LaneLabel::kCurrent) return false;
  if (options.start_s && !node.voxel.s_range().contains(*options.start_s, 1e-9)) return false;
  return true;
}

}  // namespace detail

/// Minimum summed edge cost path ending in the behavior's lane. Per-node best
/// prefixes are memoized layer by layer, which visits the same candidates an
/// exhaustive depth-first traversal would. Ties prefer the larger final us,
/// then the lexicographically larger layer-wise s-overlap.
inline std::optional<VoxelSequence> search(const VoxelGraph& graph, Behavior behavior,
                                           const SearchOptions& options = {}) {
  if (graph.layers.empty()) return std::nullopt;
  std::vector<std::vector<detail::PathLabel>> labels(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto& layer = graph.layers[i];
    labels[i].resize(layer.size());
    for (std::size_t j = 0; j < layer.size(); ++j) {
      auto& label = labels[i][j];
      if (i == 0) {
        label.valid = detail::is_root(layer[j], options);
        continue;
      }
      for (const ParentEdge& e : layer[j].parents) {
        const auto& pl = labels[i - 1][e.index];
        if (!pl.valid) continue;
        const double cost = pl.cost + e.cost;
        std::vector<double> ov = pl.overlaps;
        ov.push_back(e.s_overlap);
        if (!label.valid || detail::better_path(cost, ov, label.cost, label.overlaps)) {
          label.valid = true;
          label.cost = cost;
          label.overlaps = std::move(ov);
          label.parent = e.index;
        }
      }
    }
  }

  const std::size_t last = graph.size() - 1;
  const LaneLabel lane = target_lane(behavior);
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < graph.layers[last].size(); ++j) {
    const auto& node = graph.layers[last][j];
    const auto& label = labels[last][j];
    if (!label.valid || node.voxel.lane != lane) continue;
    if (!best) {
      best = j;
      continue;
    }
    const auto& cur = labels[last][*best];
    const double us_new = node.voxel.us;
    const double us_cur = graph.layers[last][*best].voxel.us;
    bool take = false;
    if (label.cost != cur.cost) {
      take = label.cost < cur.cost;
    } else if (us_new != us_cur) {
      take = us_new > us_cur;
    } else {
      take = std::lexicographical_compare(cur.overlaps.begin(), cur.overlaps.end(),
                                          label.overlaps.begin(), label.overlaps.end());
    }
    if (take) best = j;
  }
  if (!best) return std::nullopt;

  VoxelSequence seq;
  std::size_t j = *best;
  for (std::size_t i = last + 1; i-- > 0;) {
    seq.nodes.push_back({i, j});
    seq.voxels.push_back(graph.layers[i][j].voxel);
    if (i > 0) {
      const std::size_t parent = labels[i][j].parent;
      for (const ParentEdge& e : graph.layers[i][j].parents) {
        if (e.index == parent) {
          seq.edge_costs.push_back(e.cost);
          seq.overlaps.push_back(e.s_overlap);
          break;
        }
      }
      j = parent;
    }
  }
  std::reverse(seq.nodes.begin(), seq.nodes.end());
  std::reverse(seq.voxels.begin(), seq.voxels.end());
  std::reverse(seq.edge_costs.begin(), seq.edge_costs.end());
  std::reverse(seq.overlaps.begin(), seq.overlaps.end());
  seq.cost = labels[last][*best].cost;
  return seq;
}

}  // namespace stvplan
