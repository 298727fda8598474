#pragma once

#include "echoplan/metrics.hpp"
#include "echoplan/world.hpp"

#include <functional>
#include <string>
#include <vector>

namespace echoplan::closedloop {

// Planner callback: ego-frame raster + command + current ego state ->
// kNumWaypoints x 2 ego-frame waypoints.
using PlannerFn = std::function<metrics::Trajectory(const world::SemanticRaster&, world::Command,
                                                    const world::EgoState&)>;

struct RolloutConfig {
  int max_steps = 60;
  int replan_every = 1;
  double goal_radius = 1.0;  // m
  world::GridSpec grid;
  std::vector<std::pair<std::uint64_t, world::Scenario>> suite;
};

struct RunTraceRow {
  int step = 0;
  world::EgoState ego;
  metrics::Trajectory planned;
};

struct RunResult {
  bool success = false;
  bool planner_failure = false;
  double completion = 0.0;  // fraction of route arc length
  int collisions = 0;
  double score = 0.0;  // completion * 0.6^collisions
  std::vector<RunTraceRow> trace;
};

struct ClosedLoopReport {
  double success_rate = 0.0;     // percent
  double route_completion = 0.0;  // mean fraction
  int collisions = 0;             // total over the suite
  double score = 0.0;             // mean
  std::vector<RunResult> runs;

  std::string to_json() const;
};

RunResult rollout_one(const PlannerFn& planner, std::uint64_t seed, world::Scenario scenario,
                      const RolloutConfig& config);

ClosedLoopReport rollout(const PlannerFn& planner, const RolloutConfig& config);

// The feasibility-guaranteed reference planner: tracks the ground-truth route.
PlannerFn oracle_planner(std::uint64_t seed, world::Scenario scenario);

void write_trace_csv(const RunResult& run, const std::string& path);

// Default 20-entry evaluation suite.
std::vector<std::pair<std::uint64_t, world::Scenario>> default_suite(std::uint64_t base_seed);

}  // namespace echoplan::closedloop
