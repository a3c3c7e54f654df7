#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stvplan/harness/ablation.hpp"
#include "stvplan/harness/metrics.hpp"
#include "stvplan/harness/replay.hpp"
#include "stvplan/harness/simulator.hpp"
#include "stvplan/planner.hpp"

namespace stvplan::harness {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Numbers and files

/// Shortest round-trip decimal, independent of the locale.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view text) {
  double x = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), x);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw Error(ErrorCode::kParseError, "not a number: '" + std::string(text) + "'");
  return x;
}

/// JSON has no infinity; unbounded values are written as null.
inline Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidConfig, "cannot write " + path);
  out << content;
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, what + ": " + e.what());
  }
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

namespace detail {

/// Rejects keys outside `allowed` so typos in config files surface.
inline void expect_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::kParseError, "unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read(const Json& j, std::string_view key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, "bad value for '" + std::string(key) + "': " + e.what());
  }
}

inline void read(const Json& j, std::string_view key, Interval& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
    throw Error(ErrorCode::kParseError, "'" + std::string(key) + "' must be [lo, hi]");
  out = {(*it)[0].get<double>(), (*it)[1].get<double>()};
}

inline Json interval(const Interval& i) { return Json::array({finite_or_null(i.lo), finite_or_null(i.hi)}); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Planner config

inline std::string_view to_string(TransitionRule r) {
  return r == TransitionRule::kSameSegment ? "same_segment" : "adjacent_layer";
}

/// Overrides `config` with whatever the JSON sets; absent keys keep their
/// values.
inline PlannerConfig planner_config_from_json(const Json& j, PlannerConfig c = {}) {
  using detail::read;
  detail::expect_keys(j, {"voxel", "limits", "weights", "optimizer", "thresholds", "perception", "planner"},
                      "config");
  if (j.contains("voxel")) {
    const Json& v = j["voxel"];
    detail::expect_keys(v, {"horizon", "segments", "growth", "max_voxels_per_cell", "min_range_length",
                            "ignore_direct_follower", "lateral_reach_scale", "lateral_stop_scale"},
                        "voxel");
    read(v, "horizon", c.voxel.horizon);
    read(v, "segments", c.voxel.segments);
    read(v, "growth", c.voxel.growth);
    read(v, "max_voxels_per_cell", c.voxel.max_voxels_per_cell);
    read(v, "min_range_length", c.voxel.min_range_length);
    read(v, "ignore_direct_follower", c.voxel.ignore_direct_follower);
    read(v, "lateral_reach_scale", c.voxel.lateral_reach_scale);
    read(v, "lateral_stop_scale", c.voxel.lateral_stop_scale);
  }
  if (j.contains("limits")) {
    const Json& l = j["limits"];
    detail::expect_keys(l, {"v_s", "v_d", "a_s", "a_d", "j_s", "j_d", "curvature_max"}, "limits");
    read(l, "v_s", c.limits.v_s);
    read(l, "v_d", c.limits.v_d);
    read(l, "a_s", c.limits.a_s);
    read(l, "a_d", c.limits.a_d);
    read(l, "j_s", c.limits.j_s);
    read(l, "j_d", c.limits.j_d);
    read(l, "curvature_max", c.limits.curvature_max);
  }
  if (j.contains("weights")) {
    const Json& w = j["weights"];
    detail::expect_keys(w, {"w", "w_front", "w_rear", "t_response", "braking_gap_front"}, "weights");
    read(w, "w", c.optimizer.weights.w);
    read(w, "w_front", c.optimizer.weights.w_front);
    read(w, "w_rear", c.optimizer.weights.w_rear);
    read(w, "t_response", c.optimizer.weights.t_response);
    read(w, "braking_gap_front", c.optimizer.weights.braking_gap_front);
  }
  if (j.contains("optimizer")) {
    const Json& o = j["optimizer"];
    detail::expect_keys(o, {"min_segments", "retry", "qp_tolerance", "qp_max_iterations"}, "optimizer");
    read(o, "min_segments", c.optimizer.min_segments);
    read(o, "retry", c.optimizer.retry);
    read(o, "qp_tolerance", c.optimizer.qp.tolerance);
    read(o, "qp_max_iterations", c.optimizer.qp.max_iterations);
  }
  if (j.contains("thresholds")) {
    const Json& t = j["thresholds"];
    detail::expect_keys(t, {"s_overlap_min", "d_overlap_min", "transition"}, "thresholds");
    read(t, "s_overlap_min", c.thresholds.s_overlap_min);
    read(t, "d_overlap_min", c.thresholds.d_overlap_min);
    if (t.contains("transition")) {
      const std::string rule = t["transition"].is_string() ? t["transition"].get<std::string>() : "";
      if (rule == "same_segment") c.thresholds.transition = TransitionRule::kSameSegment;
      else if (rule == "adjacent_layer") c.thresholds.transition = TransitionRule::kAdjacentLayer;
      else throw Error(ErrorCode::kParseError, "transition must be same_segment or adjacent_layer");
    }
  }
  if (j.contains("perception")) {
    const Json& p = j["perception"];
    detail::expect_keys(p, {"sensing_range", "straddle_tolerance", "occupancy_margin"}, "perception");
    read(p, "sensing_range", c.perception.sensing_range);
    read(p, "straddle_tolerance", c.perception.straddle_tolerance);
    read(p, "occupancy_margin", c.perception.occupancy_margin);
  }
  if (j.contains("planner")) {
    const Json& p = j["planner"];
    detail::expect_keys(p, {"replan_period", "progress_tiebreak", "progress_margin"}, "planner");
    read(p, "replan_period", c.replan_period);
    read(p, "progress_tiebreak", c.progress_tiebreak);
    read(p, "progress_margin", c.progress_margin);
  }
  c.validate();
  return c;
}

inline Json to_json(const PlannerConfig& c) {
  const auto& w = c.optimizer.weights;
  return Json{
      {"voxel",
       {{"horizon", c.voxel.horizon},
        {"segments", c.voxel.segments},
        {"growth", c.voxel.growth},
        {"max_voxels_per_cell", c.voxel.max_voxels_per_cell},
        {"min_range_length", c.voxel.min_range_length},
        {"ignore_direct_follower", c.voxel.ignore_direct_follower},
        {"lateral_reach_scale", c.voxel.lateral_reach_scale},
        {"lateral_stop_scale", c.voxel.lateral_stop_scale}}},
      {"limits",
       {{"v_s", detail::interval(c.limits.v_s)},
        {"v_d", detail::interval(c.limits.v_d)},
        {"a_s", detail::interval(c.limits.a_s)},
        {"a_d", detail::interval(c.limits.a_d)},
        {"j_s", detail::interval(c.limits.j_s)},
        {"j_d", detail::interval(c.limits.j_d)},
        {"curvature_max", c.limits.curvature_max}}},
      {"weights",
       {{"w", w.w},
        {"w_front", w.w_front},
        {"w_rear", w.w_rear},
        {"t_response", w.t_response},
        {"braking_gap_front", w.braking_gap_front}}},
      {"optimizer",
       {{"min_segments", c.optimizer.min_segments},
        {"retry", c.optimizer.retry},
        {"qp_tolerance", c.optimizer.qp.tolerance},
        {"qp_max_iterations", c.optimizer.qp.max_iterations}}},
      {"thresholds",
       {{"s_overlap_min", c.thresholds.s_overlap_min},
        {"d_overlap_min", c.thresholds.d_overlap_min},
        {"transition", to_string(c.thresholds.transition)}}},
      {"perception",
       {{"sensing_range", c.perception.sensing_range},
        {"straddle_tolerance", c.perception.straddle_tolerance},
        {"occupancy_margin", c.perception.occupancy_margin}}},
      {"planner",
       {{"replan_period", c.replan_period},
        {"progress_tiebreak", c.progress_tiebreak},
        {"progress_margin", c.progress_margin}}}};
}

// ---------------------------------------------------------------------------
// Scenario JSON

inline Scenario scenario_from_json(const Json& j) {
  using detail::read;
  detail::expect_keys(j, {"lanes", "speed_limits", "ego", "agents", "seed"}, "scenario");
  Scenario sc;
  if (j.contains("lanes")) {
    const Json& l = j["lanes"];
    detail::expect_keys(l, {"count", "width", "length"}, "lanes");
    read(l, "count", sc.lane_count);
    read(l, "width", sc.lane_width);
    read(l, "length", sc.length);
  }
  if (j.contains("speed_limits")) {
    const Json& s = j["speed_limits"];
    detail::expect_keys(s, {"ego", "agents"}, "speed_limits");
    read(s, "ego", sc.ego_speed_limit);
    read(s, "agents", sc.agent_speed_limit);
  }
  if (!j.contains("ego")) throw Error(ErrorCode::kParseError, "scenario has no ego");
  {
    const Json& e = j["ego"];
    detail::expect_keys(e, {"s", "d", "v_s", "v_d", "a_s", "a_d", "dimensions"}, "ego");
    read(e, "s", sc.ego.s);
    read(e, "d", sc.ego.d);
    read(e, "v_s", sc.ego.v_s);
    read(e, "v_d", sc.ego.v_d);
    read(e, "a_s", sc.ego.a_s);
    read(e, "a_d", sc.ego.a_d);
    if (e.contains("dimensions")) {
      detail::expect_keys(e["dimensions"], {"length", "width"}, "ego.dimensions");
      read(e["dimensions"], "length", sc.ego_dims.length);
      read(e["dimensions"], "width", sc.ego_dims.width);
    }
  }
  if (j.contains("agents")) {
    if (!j["agents"].is_array()) throw Error(ErrorCode::kParseError, "agents must be an array");
    for (const Json& a : j["agents"]) {
      detail::expect_keys(a, {"id", "s", "d", "v_s", "length", "width", "model_params"}, "agent");
      ScenarioAgent sa;
      read(a, "id", sa.id);
      read(a, "s", sa.s);
      read(a, "d", sa.d);
      read(a, "v_s", sa.v_s);
      read(a, "length", sa.length);
      read(a, "width", sa.width);
      if (a.contains("model_params")) {
        const Json& m = a["model_params"];
        detail::expect_keys(m, {"desired_speed", "max_accel", "comfort_decel", "min_gap", "headway",
                                "exponent", "max_decel"},
                            "model_params");
        read(m, "desired_speed", sa.idm.desired_speed);
        read(m, "max_accel", sa.idm.max_accel);
        read(m, "comfort_decel", sa.idm.comfort_decel);
        read(m, "min_gap", sa.idm.min_gap);
        read(m, "headway", sa.idm.headway);
        read(m, "exponent", sa.idm.exponent);
        read(m, "max_decel", sa.idm.max_decel);
      }
      if (sa.id.empty()) throw Error(ErrorCode::kParseError, "agent without id");
      sc.agents.push_back(sa);
    }
  }
  read(j, "seed", sc.seed);
  if (sc.lane_count < 1 || !(sc.lane_width > 0.0) || !(sc.length > 0.0))
    throw Error(ErrorCode::kInvalidConfig, "invalid lane geometry");
  return sc;
}

inline Json to_json(const Scenario& sc) {
  Json agents = Json::array();
  for (const ScenarioAgent& a : sc.agents)
    agents.push_back({{"id", a.id},
                      {"s", a.s},
                      {"d", a.d},
                      {"v_s", a.v_s},
                      {"length", a.length},
                      {"width", a.width},
                      {"model_params",
                       {{"desired_speed", a.idm.desired_speed},
                        {"max_accel", a.idm.max_accel},
                        {"comfort_decel", a.idm.comfort_decel},
                        {"min_gap", a.idm.min_gap},
                        {"headway", a.idm.headway},
                        {"exponent", a.idm.exponent},
                        {"max_decel", a.idm.max_decel}}}});
  return Json{{"lanes", {{"count", sc.lane_count}, {"width", sc.lane_width}, {"length", sc.length}}},
              {"speed_limits", {{"ego", sc.ego_speed_limit}, {"agents", sc.agent_speed_limit}}},
              {"ego",
               {{"s", sc.ego.s},
                {"d", sc.ego.d},
                {"v_s", sc.ego.v_s},
                {"v_d", sc.ego.v_d},
                {"a_s", sc.ego.a_s},
                {"a_d", sc.ego.a_d},
                {"dimensions", {{"length", sc.ego_dims.length}, {"width", sc.ego_dims.width}}}}},
              {"agents", agents},
              {"seed", sc.seed}};
}

/// The planner's view of a scenario at its initial state.
inline Scene scene_from_scenario(const Scenario& sc) { return build_scene(make_world(sc)); }

// ---------------------------------------------------------------------------
// Replay CSV

inline constexpr std::string_view kReplayHeader = "frame,time,id,s,d,v_s,v_d,length,width";

inline std::string write_replay_csv(const ReplayLog& log) {
  std::string out(kReplayHeader);
  out += '\n';
  for (const ReplayRecord& r : log.records()) {
    out += std::to_string(r.frame) + ',' + format_number(r.time) + ',' + r.id + ',' + format_number(r.s) +
           ',' + format_number(r.d) + ',' + format_number(r.v_s) + ',' + format_number(r.v_d) + ',' +
           format_number(r.length) + ',' + format_number(r.width) + '\n';
  }
  return out;
}

/// Parses the CSV body; lane geometry and frame period come from the
/// caller.
inline ReplayLog read_replay_csv(const std::string& text, double frame_period = 0.1,
                                 int lane_count = 4, double lane_width = 3.75,
                                 double speed_limit = 20.0) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "empty replay CSV");
  if (!line.empty() && line.back() == '\r') throw Error(ErrorCode::kParseError, "CRLF line endings");
  if (line != kReplayHeader) throw Error(ErrorCode::kParseError, "unexpected replay CSV header");
  std::vector<ReplayRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.back() == '\r') throw Error(ErrorCode::kParseError, "CRLF line endings");
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != 9)
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": expected 9 fields");
    ReplayRecord r;
    const double frame = parse_number(f[0]);
    if (frame != std::floor(frame)) throw Error(ErrorCode::kParseError, "frame index not integral");
    r.frame = static_cast<long>(frame);
    r.time = parse_number(f[1]);
    r.id = std::string(f[2]);
    r.s = parse_number(f[3]);
    r.d = parse_number(f[4]);
    r.v_s = parse_number(f[5]);
    r.v_d = parse_number(f[6]);
    r.length = parse_number(f[7]);
    r.width = parse_number(f[8]);
    rows.push_back(std::move(r));
  }
  ReplayLog log = ReplayLog::from_records(rows, frame_period);
  log.lane_count = lane_count;
  log.lane_width = lane_width;
  log.speed_limit = speed_limit;
  return log;
}

// ---------------------------------------------------------------------------
// Planner artifacts

inline Json to_json(const Voxel& v) {
  return Json{{"segment", v.segment}, {"lane", to_string(v.lane)}, {"ls", v.ls}, {"us", v.us},
              {"ld", v.ld},           {"ud", v.ud},                {"lt", v.lt}, {"ut", v.ut}};
}

inline Json to_json(const VoxelSet& set) {
  Json out = Json::array();
  for (std::size_t i = 0; i < set.segments(); ++i)
    for (const Voxel& v : set.layer(i)) out.push_back(to_json(v));
  return out;
}

inline Json to_json(const VoxelGraph& g) {
  Json nodes = Json::array(), edges = Json::array();
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t k = 0; k < g.layers[i].size(); ++k) {
      const VoxelNode& n = g.layers[i][k];
      Json node = to_json(n.voxel);
      node["id"] = std::to_string(i) + ":" + std::to_string(k);
      nodes.push_back(node);
      for (const ParentEdge& e : n.parents)
        edges.push_back({{"from", std::to_string(i - 1) + ":" + std::to_string(e.index)},
                         {"to", std::to_string(i) + ":" + std::to_string(k)},
                         {"cost", e.cost},
                         {"s_overlap", e.s_overlap}});
    }
  return Json{{"nodes", nodes}, {"edges", edges}};
}

inline Json to_json(const VoxelSequence& seq) {
  Json voxels = Json::array();
  for (const Voxel& v : seq.voxels) voxels.push_back(to_json(v));
  return Json{{"voxels", voxels}, {"edge_costs", seq.edge_costs}, {"cost", seq.cost}};
}

inline Json to_json(const PiecewiseBezier& traj) {
  Json segs = Json::array();
  for (const BezierSegment& s : traj.segments())
    segs.push_back({{"lt", s.lt}, {"ut", s.ut}, {"s", s.s}, {"d", s.d}});
  return segs;
}

inline Json to_json(const QpProblem& qp) {
  auto matrix = [](const Eigen::MatrixXd& m) {
    std::vector<double> data;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
  };
  auto vec = [](const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v(i)));
    return out;
  };
  return Json{{"H", matrix(qp.H)},       {"g", vec(qp.g)},   {"A_eq", matrix(qp.A_eq)},
              {"b_eq", vec(qp.b_eq)},    {"A_in", matrix(qp.A_in)},
              {"lb", vec(qp.lb)},        {"ub", vec(qp.ub)}};
}

/// Episode summary without wall-clock timing, so it is reproducible.
inline Json to_json(const EpisodeResult& ep) {
  Json behaviors = Json::array();
  for (const BehaviorOutcome& b : ep.behaviors) {
    Json attempts = Json::array();
    for (const Attempt& a : b.attempts)
      attempts.push_back({{"segments", a.segments},
                          {"status", to_string(a.status)},
                          {"iterations", a.iterations},
                          {"reason", a.reason}});
    Json jb{{"behavior", to_string(b.behavior)},
            {"attempted", b.attempted},
            {"ok", b.ok()},
            {"failure", b.failure},
            {"cost", b.cost},
            {"reach", b.reach},
            {"sequence", to_json(b.sequence)},
            {"attempts", attempts}};
    if (b.trajectory) jb["trajectory"] = to_json(*b.trajectory);
    behaviors.push_back(jb);
  }
  return Json{{"ok", ep.ok()},
              {"selected", ep.selected ? Json(to_string(*ep.selected)) : Json(nullptr)},
              {"behaviors", behaviors}};
}

inline Json to_json(const StageTiming& t) {
  return Json{{"voxelize_ms", t.voxelize_ms}, {"graph_ms", t.graph_ms}, {"search_ms", t.search_ms},
              {"optimize_ms", t.optimize_ms}, {"total_ms", t.total_ms}};
}

/// Samples at `dt`: t, s, d, v_s, v_d, a_s, a_d, jerk_s, jerk_d, kappa.
inline std::string trajectory_csv(const PiecewiseBezier& traj, double dt = 0.02) {
  std::string out = "t,s,d,v_s,v_d,a_s,a_d,jerk_s,jerk_d,kappa\n";
  const double t0 = traj.start_time(), t1 = traj.end_time();
  const auto count = static_cast<long>(std::floor((t1 - t0) / dt + 1e-9));
  for (long k = 0; k <= count; ++k) {
    const double t = std::min(t0 + k * dt, t1);
    double v[8];
    for (int order = 0; order < 4; ++order) {
      v[2 * order] = traj.evaluate(t, Axis::kS, order);
      v[2 * order + 1] = traj.evaluate(t, Axis::kD, order);
    }
    const double speed2 = v[2] * v[2] + v[3] * v[3];
    const double kappa = speed2 < 1e-6 ? 0.0 : std::abs(v[2] * v[5] - v[3] * v[4]) / std::pow(speed2, 1.5);
    out += format_number(t);
    for (double x : v) out += ',' + format_number(x);
    out += ',' + format_number(kappa) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline Json to_json(const Metrics& m) {
  return Json{{"runs", m.runs},
              {"successes", m.successes},
              {"failures", m.failures},
              {"wrong_lane", m.wrong_lane},
              {"success_rate", m.success_rate},
              {"failure_rate", m.failure_rate},
              {"risk", m.risk},
              {"efficiency", m.efficiency},
              {"collisions", m.collisions},
              {"planning_failures", m.planning_failures},
              {"failed_ticks", m.failed_ticks}};
}

inline Json to_json(const RunResult& r) {
  return Json{{"outcome", to_string(r.outcome)}, {"collision", r.collision},
              {"planning_abort", r.planning_abort}, {"failed_ticks", r.failed_ticks},
              {"final_lane", r.final_lane},           {"risk", r.risk},
              {"efficiency", r.efficiency},           {"note", r.note}};
}

inline Json to_json(const LatencyStats& s) {
  return Json{{"count", s.count}, {"mean_ms", s.mean_ms}, {"p95_ms", s.p95_ms}, {"max_ms", s.max_ms}};
}

inline Json to_json(const ClosedLoopMetrics& m) {
  return Json{{"simulated_time", m.simulated_time},
              {"collisions", m.collisions},
              {"collision_with", m.collision_with},
              {"planning_failures", m.planning_failures},
              {"aborted", m.aborted},
              {"abort_reason", m.abort_reason},
              {"lane_changes", m.lane_changes},
              {"mean_v_s", m.mean_v_s},
              {"max_abs_a_s", m.max_abs_a_s},
              {"max_abs_a_d", m.max_abs_a_d},
              {"max_abs_jerk_s", m.max_abs_jerk_s},
              {"max_abs_jerk_d", m.max_abs_jerk_d},
              {"risk", m.risk}};
}

/// Table row layout: name, Succ., Fail, Risk, Effi.
inline std::string metrics_csv_header() { return "name,succ,fail,risk,effi\n"; }

inline std::string metrics_csv_row(std::string_view name, const Metrics& m) {
  return std::string(name) + ',' + format_number(m.success_rate) + ',' + format_number(m.failure_rate) +
         ',' + format_number(m.risk) + ',' + format_number(m.efficiency) + '\n';
}

inline std::string closed_loop_trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "t,s,d,v_s,v_d,a_s,a_d,jerk_s,jerk_d,lane,behavior,response_time\n";
  for (const TraceRow& r : trace) {
    out += format_number(r.t) + ',' + format_number(r.ego.s) + ',' + format_number(r.ego.d) + ',' +
           format_number(r.ego.v_s) + ',' + format_number(r.ego.v_d) + ',' + format_number(r.ego.a_s) +
           ',' + format_number(r.ego.a_d) + ',' + format_number(r.jerk_s) + ',' +
           format_number(r.jerk_d) + ',' + std::to_string(r.lane) + ',' +
           std::string(to_string(r.behavior)) + ',' + format_number(r.response_time) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// SVG

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;
};

struct SvgBox {
  double x0, x1, y0, y1;
  std::string color;
  double opacity = 0.15;
};

struct SvgPanel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<SvgSeries> series;
  std::vector<SvgBox> boxes;
};

namespace detail {

inline std::string fixed(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Stacked panels sharing a width, each with its own axes.
inline std::string render_svg(const std::vector<SvgPanel>& panels, double width = 720.0,
                              double panel_height = 220.0) {
  const double ml = 60, mr = 20, mt = 28, mb = 36;
  const double height = panel_height * static_cast<double>(panels.size());
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fixed(width) +
                    "\" height=\"" + detail::fixed(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const SvgPanel& panel = panels[p];
    double x_lo = kInf, x_hi = -kInf, y_lo = kInf, y_hi = -kInf;
    auto grow = [&](double x, double y) {
      if (!std::isfinite(x) || !std::isfinite(y)) return;
      x_lo = std::min(x_lo, x), x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y), y_hi = std::max(y_hi, y);
    };
    for (const SvgSeries& s : panel.series)
      for (auto [x, y] : s.points) grow(x, y);
    for (const SvgBox& b : panel.boxes) grow(b.x0, b.y0), grow(b.x1, b.y1);
    if (!(x_lo <= x_hi)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
    if (x_hi - x_lo < 1e-9) x_hi = x_lo + 1;
    if (y_hi - y_lo < 1e-9) y_lo -= 0.5, y_hi += 0.5;
    const double top = panel_height * static_cast<double>(p);
    const double pw = width - ml - mr, ph = panel_height - mt - mb;
    auto X = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto Y = [&](double y) { return top + mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };
    out += "<text x=\"" + detail::fixed(ml) + "\" y=\"" + detail::fixed(top + 16) + "\" font-weight=\"bold\">" +
           detail::escape(panel.title) + "</text>\n";
    out += "<rect x=\"" + detail::fixed(ml) + "\" y=\"" + detail::fixed(top + mt) + "\" width=\"" +
           detail::fixed(pw) + "\" height=\"" + detail::fixed(ph) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double fx = x_lo + (x_hi - x_lo) * k / 4.0, fy = y_lo + (y_hi - y_lo) * k / 4.0;
      out += "<text x=\"" + detail::fixed(X(fx)) + "\" y=\"" + detail::fixed(top + mt + ph + 14) +
             "\" text-anchor=\"middle\">" + detail::fixed(fx) + "</text>\n";
      out += "<text x=\"" + detail::fixed(ml - 4) + "\" y=\"" + detail::fixed(Y(fy) + 4) +
             "\" text-anchor=\"end\">" + detail::fixed(fy) + "</text>\n";
    }
    out += "<text x=\"" + detail::fixed(ml + pw / 2) + "\" y=\"" + detail::fixed(top + panel_height - 6) +
           "\" text-anchor=\"middle\">" + detail::escape(panel.x_label) + "</text>\n";
    out += "<text x=\"12\" y=\"" + detail::fixed(top + mt + ph / 2) + "\" transform=\"rotate(-90 12 " +
           detail::fixed(top + mt + ph / 2) + ")\" text-anchor=\"middle\">" +
           detail::escape(panel.y_label) + "</text>\n";
    for (const SvgBox& b : panel.boxes) {
      const double x0 = X(b.x0), x1 = X(b.x1), y0 = Y(b.y1), y1 = Y(b.y0);
      out += "<rect x=\"" + detail::fixed(x0) + "\" y=\"" + detail::fixed(y0) + "\" width=\"" +
             detail::fixed(x1 - x0) + "\" height=\"" + detail::fixed(y1 - y0) + "\" fill=\"" + b.color +
             "\" fill-opacity=\"" + detail::fixed(b.opacity) + "\" stroke=\"" + b.color + "\"/>\n";
    }
    double legend_x = ml + pw;
    for (auto it = panel.series.rbegin(); it != panel.series.rend(); ++it) {
      const SvgSeries& s = *it;
      if (s.points.empty()) continue;
      out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"";
      for (auto [x, y] : s.points) out += detail::fixed(X(x)) + "," + detail::fixed(Y(y)) + " ";
      out += "\"/>\n";
      out += "<text x=\"" + detail::fixed(legend_x) + "\" y=\"" + detail::fixed(top + 16) + "\" fill=\"" +
             s.color + "\" text-anchor=\"end\">" + detail::escape(s.label) + "</text>\n";
      legend_x -= 8.0 * static_cast<double>(s.label.size()) + 12.0;
    }
  }
  out += "</svg>\n";
  return out;
}

inline std::vector<std::pair<double, double>> sample_axis(const PiecewiseBezier& traj, Axis axis, int order,
                                                          double dt = 0.02) {
  std::vector<std::pair<double, double>> pts;
  const double t0 = traj.start_time(), t1 = traj.end_time();
  const auto count = static_cast<long>(std::floor((t1 - t0) / dt + 1e-9));
  for (long k = 0; k <= count; ++k) {
    const double t = std::min(t0 + k * dt, t1);
    pts.emplace_back(t, traj.evaluate(t, axis, order));
  }
  return pts;
}

/// s-t and d-t diagrams: every voxel faint, the selected corridor solid,
/// the selected trajectory on top.
inline std::string corridor_svg(const EpisodeResult& ep) {
  SvgPanel st{"s-t corridor", "t [s]", "s [m]", {}, {}};
  SvgPanel dt{"d-t corridor", "t [s]", "d [m]", {}, {}};
  for (std::size_t i = 0; i < ep.voxels.segments(); ++i)
    for (const Voxel& v : ep.voxels.layer(i)) {
      st.boxes.push_back({v.lt, v.ut, v.ls, v.us, "#999999", 0.08});
      dt.boxes.push_back({v.lt, v.ut, v.ld, v.ud, "#999999", 0.08});
    }
  for (const Voxel& v : ep.selected_sequence.voxels) {
    st.boxes.push_back({v.lt, v.ut, v.ls, v.us, "#1f77b4", 0.2});
    dt.boxes.push_back({v.lt, v.ut, v.ld, v.ud, "#1f77b4", 0.2});
  }
  if (ep.trajectory) {
    st.series.push_back({"s(t)", "#d62728", sample_axis(*ep.trajectory, Axis::kS, 0)});
    dt.series.push_back({"d(t)", "#d62728", sample_axis(*ep.trajectory, Axis::kD, 0)});
  }
  return render_svg({st, dt});
}

/// Velocity, acceleration and jerk on both axes.
inline std::string profile_svg(const PiecewiseBezier& traj) {
  const char* names[] = {"velocity", "acceleration", "jerk"};
  const char* units[] = {"m/s", "m/s^2", "m/s^3"};
  std::vector<SvgPanel> panels;
  for (int order = 1; order <= 3; ++order) {
    SvgPanel p{names[order - 1], "t [s]", units[order - 1], {}, {}};
    p.series.push_back({"s", "#1f77b4", sample_axis(traj, Axis::kS, order)});
    p.series.push_back({"d", "#ff7f0e", sample_axis(traj, Axis::kD, order)});
    panels.push_back(std::move(p));
  }
  return render_svg(panels);
}

/// Closed-loop velocity, acceleration, jerk and lane over time.
inline std::string trace_svg(const std::vector<TraceRow>& trace) {
  SvgPanel v{"velocity", "t [s]", "m/s", {}, {}}, a{"acceleration", "t [s]", "m/s^2", {}, {}},
      j{"jerk", "t [s]", "m/s^3", {}, {}}, d{"lateral position", "t [s]", "d [m]", {}, {}};
  SvgSeries vs{"v_s", "#1f77b4", {}}, as{"a_s", "#1f77b4", {}}, ad{"a_d", "#ff7f0e", {}},
      js{"jerk_s", "#1f77b4", {}}, jd{"jerk_d", "#ff7f0e", {}}, ds{"d", "#2ca02c", {}};
  for (const TraceRow& r : trace) {
    vs.points.emplace_back(r.t, r.ego.v_s);
    as.points.emplace_back(r.t, r.ego.a_s);
    ad.points.emplace_back(r.t, r.ego.a_d);
    js.points.emplace_back(r.t, r.jerk_s);
    jd.points.emplace_back(r.t, r.jerk_d);
    ds.points.emplace_back(r.t, r.ego.d);
  }
  v.series = {vs};
  a.series = {as, ad};
  j.series = {js, jd};
  d.series = {ds};
  return render_svg({v, a, j, d});
}

}  // namespace stvplan::harness
