#pragma once

#include "stvplan/bezier.hpp"
#include "stvplan/common.hpp"
#include "stvplan/limits.hpp"
#include "stvplan/optimizer.hpp"
#include "stvplan/planner.hpp"
#include "stvplan/qp_solver.hpp"
#include "stvplan/scene.hpp"
#include "stvplan/voxel_graph.hpp"
#include "stvplan/voxelizer.hpp"
#include "stvplan/harness/ablation.hpp"
#include "stvplan/harness/metrics.hpp"
#include "stvplan/harness/replay.hpp"
#include "stvplan/harness/simulator.hpp"
