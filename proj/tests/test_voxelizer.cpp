#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "stvplan/voxelizer.hpp"

using namespace stvplan;
using stvplan::harness::uniform;

namespace {

Scene empty_road(int lanes = 3, double v = 10.0) {
  Scene scene;
  scene.lanes.lane_count = lanes;
  scene.lanes.current_lane = lanes / 2;
  scene.ego.state.v_s = v;
  return scene;
}

Agent parked(const std::string& id, double s, double d, double length = 4.0) {
  Agent a;
  a.id = id;
  a.state.s = s;
  a.state.d = d;
  a.length = length;
  return a;
}

}  // namespace

TEST(Voxelizer, PartitionExamples) {
  EXPECT_EQ(make_partition(6.0, 3, 1.0).durations(), (std::vector<double>{2.0, 2.0, 2.0}));
  const auto p = make_partition(7.0, 3, 2.0).durations();
  ASSERT_EQ(p.size(), 3u);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 2.0, 1e-12);
  EXPECT_NEAR(p[2], 4.0, 1e-12);
  ASSERT_EQ(make_partition(6.0, 1, 3.7).size(), 1u);
  EXPECT_NEAR(make_partition(6.0, 1, 3.7).duration(0), 6.0, 1e-12);
  EXPECT_THROW(make_partition(0.0, 3, 1.0), Error);
  EXPECT_THROW(make_partition(6.0, 0, 1.0), Error);
  EXPECT_THROW(make_partition(6.0, 3, 0.5), Error);
}

TEST(Voxelizer, PartitionInvariants) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 300; ++k) {
    const double horizon = uniform(rng, 0.5, 12.0), growth = uniform(rng, 1.0, 2.5);
    const int n = 1 + static_cast<int>(uniform(rng, 0.0, 8.0));
    const TimePartition p = make_partition(horizon, n, growth);
    ASSERT_EQ(p.size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
      EXPECT_GE(p.duration(i + 1), p.duration(i));
      EXPECT_EQ(p.ut(i), p.lt(i + 1));
    }
    EXPECT_EQ(p.lt(0), 0.0);
    EXPECT_NEAR(p.horizon(), horizon, 1e-12);
  }
}

TEST(Voxelizer, ReachableBoundsExamples) {
  const KinodynamicLimits limits;
  FrenetState ego;
  ego.v_s = 10.0;
  Interval r = reachable_s_bounds(ego, 1.0, 1.0, limits);
  EXPECT_DOUBLE_EQ(r.lo, 9.0);
  EXPECT_DOUBLE_EQ(r.hi, 11.0);

  ego.v_s = 1.0;
  EXPECT_DOUBLE_EQ(reachable_s_bounds(ego, 2.0, 3.0, limits).lo, 0.25);

  ego.s = 5.0;
  ego.v_s = 0.0;
  r = reachable_s_bounds(ego, 0.0, 1e-9, limits);
  EXPECT_DOUBLE_EQ(r.lo, 5.0);
  EXPECT_NEAR(r.hi, 5.0, 1e-12);
}

TEST(Voxelizer, ReachableBoundsMatchIntegration) {
  std::mt19937_64 rng(9);
  const KinodynamicLimits limits;
  for (int k = 0; k < 300; ++k) {
    FrenetState ego;
    ego.s = uniform(rng, -10, 10);
    ego.v_s = uniform(rng, 0, 22);
    const double lt = uniform(rng, 0, 5), ut = lt + uniform(rng, 0.01, 3);
    const Interval r = reachable_s_bounds(ego, lt, ut, limits);
    const Interval o = oracle::integrated_reach(ego, lt, ut, limits);
    EXPECT_NEAR(r.lo, o.lo, 1e-6);
    EXPECT_NEAR(r.hi, o.hi, 1e-6);
    // Monotone in time.
    EXPECT_GE(reachable_s_bounds(ego, lt, ut + 0.5, limits).hi, r.hi);
    EXPECT_GE(reachable_s_bounds(ego, lt + 0.5, ut + 0.5, limits).lo, r.lo);
  }
}

TEST(Voxelizer, SubtractIntervalsExamples) {
  using V = std::vector<Interval>;
  auto same = [](const V& a, const V& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
      if (a[k].lo != b[k].lo || a[k].hi != b[k].hi) return false;
    return true;
  };
  EXPECT_TRUE(same(subtract_intervals({0, 100}, {{40, 60}}), V{{0, 40}, {60, 100}}));
  EXPECT_TRUE(subtract_intervals({0, 100}, {{-10, 110}}).empty());
  const V two = subtract_intervals({0, 100}, {{15, 30}, {10, 20}});
  EXPECT_TRUE(same(two, V{{0, 10}, {30, 100}}));

  // 0.01 m grid over the same example.
  V grid;
  double start = -1.0;
  for (int k = 0; k <= 10000; ++k) {
    const double x = (k + 0.5) * 0.01;
    const bool free = k < 10000 && !(x >= 10 && x <= 20) && !(x >= 15 && x <= 30);
    if (free && start < 0) start = k * 0.01;
    if (!free && start >= 0) {
      grid.push_back({start, k * 0.01});
      start = -1.0;
    }
  }
  ASSERT_EQ(grid.size(), two.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    EXPECT_NEAR(grid[k].lo, two[k].lo, 0.01);
    EXPECT_NEAR(grid[k].hi, two[k].hi, 0.01);
  }
}

TEST(Voxelizer, SelectRangesKeepsLongest) {
  const auto out = select_ranges({{0, 1}, {2, 10}, {11, 14}, {20, 40}, {50, 55}}, 2.0, 2);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].lo, 2.0);
  EXPECT_EQ(out[1].lo, 20.0);
}

TEST(Voxelizer, FreeRangesMatchGridOracle) {
  std::mt19937_64 rng(10);
  const KinodynamicLimits limits;
  const VoxelConfig config;
  const PerceptionConfig perception;
  const TimePartition partition = config.partition();
  int compared = 0, ambiguous = 0;
  for (int k = 0; k < 40; ++k) {
    const Scene scene = oracle::random_scene(rng, 8);
    for (LaneLabel lane : kAllLanes) {
      if (!scene.lanes.has_lane(lane)) continue;
      for (std::size_t i = 0; i < partition.size(); ++i) {
        const auto got = free_ranges(lane, i, scene, partition, limits, config, perception);
        const auto want = oracle::grid_free_ranges(lane, partition.lt(i), partition.ut(i), scene, limits, config,
                                                   perception);
        const auto match =
            oracle::compare_ranges(got, want, config.min_range_length, config.max_voxels_per_cell, 0.02);
        EXPECT_NE(match, oracle::RangeMatch::kDifferent) << "scene " << k << " segment " << i;
        ++compared;
        if (match == oracle::RangeMatch::kAmbiguous) ++ambiguous;
      }
    }
  }
  EXPECT_LT(ambiguous, compared / 20);
}

TEST(Voxelizer, LateralBoundsExamples) {
  LaneModel lanes;
  lanes.lane_count = 3;
  lanes.current_lane = 1;
  lanes.lane_width = 4.0;
  VehicleDims dims;
  dims.width = 2.0;
  const KinodynamicLimits limits;
  const FrenetState ego;
  Interval b = lateral_bounds(LaneLabel::kCurrent, ego, 0.0, 10.0, lanes, dims, limits);
  EXPECT_DOUBLE_EQ(b.lo, -1.0);
  EXPECT_DOUBLE_EQ(b.hi, 1.0);
  b = lateral_bounds(LaneLabel::kLeft, ego, 0.0, 10.0, lanes, dims, limits);
  EXPECT_DOUBLE_EQ(b.lo, 3.0);
  EXPECT_DOUBLE_EQ(b.hi, 5.0);

  dims.width = 4.5;
  try {
    lateral_bounds(LaneLabel::kCurrent, ego, 0.0, 10.0, lanes, dims, limits);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBand);
  }
  lanes.current_lane = 2;
  dims.width = 2.0;
  EXPECT_THROW(lateral_bounds(LaneLabel::kLeft, ego, 0.0, 1.0, lanes, dims, limits), Error);
}

TEST(Voxelizer, CurrentLaneClippedToLateralReach) {
  LaneModel lanes;
  lanes.lane_width = 4.0;
  VehicleDims dims;
  dims.width = 2.0;
  const KinodynamicLimits limits;
  const FrenetState ego;
  // Within 0.5 s the lateral envelope is +-0.25 m, tighter than the band.
  const Interval b = lateral_bounds(LaneLabel::kCurrent, ego, 0.0, 0.5, lanes, dims, limits);
  EXPECT_DOUBLE_EQ(b.lo, -0.25);
  EXPECT_DOUBLE_EQ(b.hi, 0.25);
}

TEST(Voxelizer, GenerateOnEmptyRoad) {
  const Scene scene = empty_road();
  const VoxelSet set = generate_voxels(scene, make_partition(6.0, 2, 1.0), KinodynamicLimits{});
  EXPECT_EQ(set.total(), 6u);
  for (std::size_t i = 0; i < 2; ++i)
    for (LaneLabel lane : kAllLanes) {
      ASSERT_EQ(set.cell(i, lane).size(), 1u);
      const Voxel& v = set.cell(i, lane)[0];
      EXPECT_EQ(v.lt, 3.0 * i);
      EXPECT_EQ(v.ut, 3.0 * (i + 1));
      EXPECT_LT(v.ls, v.us);
      EXPECT_LT(v.ld, v.ud);
    }
}

TEST(Voxelizer, AgentSplitsCurrentLane) {
  Scene scene = empty_road();
  scene.agents.push_back(parked("stopped", 20.0, 0.0));
  const VoxelSet set = generate_voxels(scene, make_partition(6.0, 2, 1.0), KinodynamicLimits{});
  // Reach [0, 39] minus [20 -+ (2 + 1 + 2.4)].
  const auto& cell = set.cell(0, LaneLabel::kCurrent);
  ASSERT_EQ(cell.size(), 2u);
  EXPECT_DOUBLE_EQ(cell[0].ls, 0.0);
  EXPECT_DOUBLE_EQ(cell[0].us, 14.6);
  EXPECT_DOUBLE_EQ(cell[1].ls, 25.4);
  EXPECT_DOUBLE_EQ(cell[1].us, 39.0);
}

TEST(Voxelizer, BlockedLeftLaneHasNoVoxels) {
  Scene scene = empty_road();
  scene.agents.push_back(parked("wall", 50.0, 3.75, 400.0));
  const VoxelSet set = generate_voxels(scene, VoxelConfig{}.partition(), KinodynamicLimits{});
  for (std::size_t i = 0; i < set.segments(); ++i) {
    EXPECT_TRUE(set.cell(i, LaneLabel::kLeft).empty());
    EXPECT_FALSE(set.cell(i, LaneLabel::kCurrent).empty());
  }
}

TEST(Voxelizer, DirectFollowerIgnoredOnlyInCurrentLane) {
  Scene scene = empty_road(3, 0.0);
  scene.ego.state.s = 50.0;
  scene.agents.push_back(parked("behind", 46.0, 0.0));
  scene.agents.push_back(parked("left_behind", 46.0, 3.75));
  const TimePartition p = make_partition(6.0, 2, 1.0);
  const KinodynamicLimits limits;
  EXPECT_EQ(free_ranges(LaneLabel::kCurrent, 0, scene, p, limits).size(), 1u);
  // Ego at standstill is inside the left agent's inflated footprint.
  const auto left = free_ranges(LaneLabel::kLeft, 0, scene, p, limits);
  ASSERT_EQ(left.size(), 1u);
  EXPECT_DOUBLE_EQ(left[0].lo, 46.0 + 2.0 + 1.0 + 2.4);
  VoxelConfig keep;
  keep.ignore_direct_follower = false;
  const auto strict = free_ranges(LaneLabel::kCurrent, 0, scene, p, limits, keep);
  ASSERT_EQ(strict.size(), 1u);
  EXPECT_DOUBLE_EQ(strict[0].lo, 51.4);
}

TEST(Voxelizer, VoxelsAvoidPredictedAgents) {
  std::mt19937_64 rng(12);
  const KinodynamicLimits limits;
  const VoxelConfig config;
  const PerceptionConfig perception;
  const TimePartition partition = config.partition();
  for (int k = 0; k < 60; ++k) {
    const Scene scene = oracle::random_scene(rng, 10);
    const VoxelSet set = generate_voxels(scene, partition, limits, config, perception);
    for (std::size_t i = 0; i < set.segments(); ++i)
      for (LaneLabel lane : kAllLanes) {
        if (!scene.lanes.has_lane(lane)) continue;
        const auto& cell = set.cell(i, lane);
        for (std::size_t j = 0; j < cell.size(); ++j) {
          const Voxel& v = cell[j];
          EXPECT_EQ(v.lt, partition.lt(i));
          EXPECT_EQ(v.ut, partition.ut(i));
          if (j > 0) {
            EXPECT_LE(cell[j - 1].us, v.ls);
          }
          for (const Agent& a : blocking_agents(scene, lane, config, perception)) {
            const Interval occ = predict_occupancy(a, v.lt, v.ut, perception.occupancy_margin);
            EXPECT_LE(overlap_length(occ, v.s_range()), 1e-9) << a.id;
          }
        }
      }
  }
}
