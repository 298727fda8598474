#include "echoplan/closedloop.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <memory>

namespace echoplan::closedloop {

using geom::Vec2;
using json = nlohmann::json;

namespace {

constexpr double kMaxTurnPerStep = 30.0 * geom::kPi / 180.0;
constexpr double kMaxSpeed = 4.0;  // m/s

double project_arclen(const world::Centerline& route, Vec2 p) {
  double best_d2 = 1e300, best_s = 0.0;
  for (std::size_t i = 0; i < route.points.size(); ++i) {
    double dx = p.x - route.points[i].x, dy = p.y - route.points[i].y;
    double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = route.arclen[i];
    }
  }
  return best_s;
}

}  // namespace

RunResult rollout_one(const PlannerFn& planner, std::uint64_t seed, world::Scenario scenario,
                      const RolloutConfig& config) {
  world::ScenarioWorld wld = world::build_scenario(seed, scenario);
  RunResult result;

  world::EgoState ego = wld.ego_at(0.0);
  metrics::Trajectory plan = metrics::Trajectory::Zero(world::kNumWaypoints, 2);
  double total_len = wld.route.total_length();
  Vec2 goal = wld.route.points.back();

  for (int step = 0; step < config.max_steps; ++step) {
    double t = step * world::kFrameDt;
    std::vector<world::AgentState> agents = wld.agents_at(t);
    double s_proj = project_arclen(wld.route, {ego.x, ego.y});
    result.completion = std::max(result.completion, s_proj / total_len);

    if (geom::norm(Vec2{ego.x, ego.y} - goal) <= config.goal_radius) {
      result.completion = 1.0;
      result.success = result.collisions == 0;
      break;
    }

    std::vector<double> window;
    for (int k = 0; k <= world::kNumWaypoints; ++k)
      window.push_back(wld.route.heading_at(s_proj + wld.ego_speed * k * world::kFrameDt));
    world::Command command = world::command_for_route(window);

    if (step % config.replan_every == 0) {
      world::SemanticRaster raster = world::rasterize_frame(ego, agents, wld, config.grid);
      plan = planner(raster, command, ego);
      if (!plan.allFinite()) {
        result.planner_failure = true;
        break;
      }
    }
    result.trace.push_back({step, ego, plan});

    // Track waypoint 1 with a capped proportional heading controller.
    Vec2 wp1{plan(0, 0), plan(0, 1)};
    double turn = 0.0;
    double dist = geom::norm(wp1);
    if (dist > 1e-6) turn = std::clamp(std::atan2(wp1.y, wp1.x), -kMaxTurnPerStep, kMaxTurnPerStep);
    double speed = std::clamp(dist / world::kFrameDt, 0.0, kMaxSpeed);
    ego.heading = geom::wrap_angle(ego.heading + turn);
    ego.x += speed * std::cos(ego.heading) * world::kFrameDt;
    ego.y += speed * std::sin(ego.heading) * world::kFrameDt;
    ego.speed = speed;

    std::vector<world::AgentState> next_agents = wld.agents_at((step + 1) * world::kFrameDt);
    geom::OrientedBox ego_box{{ego.x, ego.y, ego.heading}, world::kEgoLength, world::kEgoWidth};
    if (metrics::footprint_collides(ego_box, next_agents, config.grid.cell_size)) {
      ++result.collisions;
      break;
    }
  }

  result.score = result.completion * std::pow(0.6, result.collisions);
  return result;
}

ClosedLoopReport rollout(const PlannerFn& planner, const RolloutConfig& config) {
  ClosedLoopReport report;
  for (const auto& [seed, scenario] : config.suite) {
    RunResult run = rollout_one(planner, seed, scenario, config);
    report.success_rate += run.success ? 1.0 : 0.0;
    report.route_completion += run.completion;
    report.collisions += run.collisions;
    report.score += run.score;
    report.runs.push_back(std::move(run));
  }
  std::size_t n = config.suite.size();
  if (n > 0) {
    report.success_rate *= 100.0 / n;
    report.route_completion /= n;
    report.score /= n;
  }
  return report;
}

PlannerFn oracle_planner(std::uint64_t seed, world::Scenario scenario) {
  auto wld = std::make_shared<world::ScenarioWorld>(world::build_scenario(seed, scenario));
  return [wld](const world::SemanticRaster&, world::Command, const world::EgoState& ego) {
    double s = project_arclen(wld->route, {ego.x, ego.y});
    metrics::Trajectory out(world::kNumWaypoints, 2);
    for (int k = 1; k <= world::kNumWaypoints; ++k) {
      Vec2 p = wld->route.point_at(s + wld->ego_speed * k * world::kFrameDt);
      Vec2 local = geom::world_to_frame(ego.pose(), p);
      out(k - 1, 0) = local.x;
      out(k - 1, 1) = local.y;
    }
    return out;
  };
}

std::string ClosedLoopReport::to_json() const {
  json j = {{"success_rate_pct", success_rate},
            {"route_completion", route_completion},
            {"collisions", collisions},
            {"score", score},
            {"runs", json::array()}};
  for (const RunResult& r : runs)
    j["runs"].push_back({{"success", r.success},
                         {"planner_failure", r.planner_failure},
                         {"completion", r.completion},
                         {"collisions", r.collisions},
                         {"score", r.score}});
  return j.dump(2);
}

void write_trace_csv(const RunResult& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "step,x,y,heading,speed";
  for (int k = 1; k <= world::kNumWaypoints; ++k) out << ",wx" << k << ",wy" << k;
  out << "\n";
  for (const RunTraceRow& row : run.trace) {
    out << row.step << "," << row.ego.x << "," << row.ego.y << "," << row.ego.heading << "," << row.ego.speed;
    for (int k = 0; k < row.planned.rows(); ++k) out << "," << row.planned(k, 0) << "," << row.planned(k, 1);
    out << "\n";
  }
}

std::vector<std::pair<std::uint64_t, world::Scenario>> default_suite(std::uint64_t base_seed) {
  std::vector<std::pair<std::uint64_t, world::Scenario>> suite;
  const world::Scenario kinds[4] = {world::Scenario::kStraight, world::Scenario::kLeftTurn,
                                    world::Scenario::kRightTurn, world::Scenario::kIntersectionMixed};
  for (int i = 0; i < 20; ++i) suite.emplace_back(base_seed + i, kinds[i % 4]);
  return suite;
}

}  // namespace echoplan::closedloop
