#include "echoplan/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace echoplan::metrics {

using geom::Vec2;
using json = nlohmann::json;

const char* protocol_name(Protocol p) { return p == Protocol::kFinalMax ? "final_max" : "average"; }

double l2_at_horizon(const Trajectory& pred, const Trajectory& gt, int h_steps, Protocol protocol) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("l2_at_horizon: shape mismatch");
  if (h_steps < 1 || h_steps > pred.rows()) throw std::invalid_argument("l2_at_horizon: h_steps out of range");
  if (protocol == Protocol::kFinalMax) {
    return (pred.row(h_steps - 1) - gt.row(h_steps - 1)).norm();
  }
  double sum = 0.0;
  for (int k = 0; k < h_steps; ++k) sum += (pred.row(k) - gt.row(k)).norm();
  return sum / h_steps;
}

geom::OrientedBox ego_box_at_step(const Trajectory& pred, int step, const world::EgoState& ego_t) {
  // step is 1-based; waypoint k lives at row k-1, in the ego frame of frame t.
  Vec2 wp{pred(step - 1, 0), pred(step - 1, 1)};
  double heading_local;
  if (step == 1) {
    heading_local = 0.0;  // current heading in its own frame
  } else {
    Vec2 prev{pred(step - 2, 0), pred(step - 2, 1)};
    Vec2 d = wp - prev;
    heading_local = (geom::norm(d) < 1e-9) ? 0.0 : std::atan2(d.y, d.x);
  }
  Vec2 world_pos = geom::frame_to_world(ego_t.pose(), wp);
  return {{world_pos.x, world_pos.y, geom::wrap_angle(ego_t.heading + heading_local)},
          world::kEgoLength, world::kEgoWidth};
}

bool footprint_collides(const geom::OrientedBox& ego_box, const std::vector<world::AgentState>& agents,
                        double cell_size) {
  // Scan world-aligned cells covering the ego box bounding box; a collision
  // is a cell center inside the ego box and inside some agent box.
  double reach = 0.5 * std::hypot(ego_box.length, ego_box.width);
  int i0 = static_cast<int>(std::floor((ego_box.pose.x - reach) / cell_size)) - 1;
  int i1 = static_cast<int>(std::ceil((ego_box.pose.x + reach) / cell_size)) + 1;
  int j0 = static_cast<int>(std::floor((ego_box.pose.y - reach) / cell_size)) - 1;
  int j1 = static_cast<int>(std::ceil((ego_box.pose.y + reach) / cell_size)) + 1;
  for (int i = i0; i <= i1; ++i) {
    for (int j = j0; j <= j1; ++j) {
      Vec2 center{(i + 0.5) * cell_size, (j + 0.5) * cell_size};
      if (!geom::point_in_box(ego_box, center)) continue;
      for (const world::AgentState& a : agents)
        if (geom::point_in_box(a.box(), center)) return true;
    }
  }
  return false;
}

double collision_rate(const std::vector<CollisionSample>& samples, int h_steps, Protocol protocol) {
  if (samples.empty()) return 0.0;
  double cell = samples.front().episode ? samples.front().episode->grid.cell_size : 0.5;

  // collide[s][k]: sample s collides at step k+1
  std::vector<std::vector<bool>> collide(samples.size(), std::vector<bool>(h_steps, false));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const CollisionSample& cs = samples[s];
    if (cs.frame_idx + h_steps >= static_cast<int>(cs.episode->frames.size()))
      throw std::invalid_argument("collision_rate: insufficient future frames for sample " + std::to_string(s));
    const world::Frame& frame_t = cs.episode->frames[cs.frame_idx];
    for (int k = 1; k <= h_steps; ++k) {
      const world::Frame& future = cs.episode->frames[cs.frame_idx + k];
      geom::OrientedBox box = ego_box_at_step(cs.pred, k, frame_t.ego);
      collide[s][k - 1] = footprint_collides(box, future.agents, cell);
    }
  }

  if (protocol == Protocol::kFinalMax) {
    int hits = 0;
    for (const auto& row : collide)
      for (bool c : row)
        if (c) {
          ++hits;
          break;
        }
    return 100.0 * hits / static_cast<double>(samples.size());
  }
  double acc = 0.0;
  for (int k = 0; k < h_steps; ++k) {
    int hits = 0;
    for (const auto& row : collide)
      if (row[k]) ++hits;
    acc += hits / static_cast<double>(samples.size());
  }
  return 100.0 * acc / h_steps;
}

double temporal_consistency(const Eigen::MatrixXd& pred_bev, const Eigen::MatrixXd& gt_bev) {
  if (pred_bev.rows() != gt_bev.rows() || pred_bev.cols() != gt_bev.cols())
    throw std::invalid_argument("temporal_consistency: shape mismatch");
  return (pred_bev - gt_bev).array().square().mean();
}

std::string OpenLoopReport::to_json() const {
  auto entry = [](const OpenLoopEntry& e) {
    return json{{"l2", {{"1s", e.l2[0]}, {"2s", e.l2[1]}, {"3s", e.l2[2]}, {"avg", e.l2_avg}}},
                {"collision_pct",
                 {{"1s", e.collision[0]}, {"2s", e.collision[1]}, {"3s", e.collision[2]}, {"avg", e.collision_avg}}}};
  };
  json j = {{"final_max", entry(final_max)},
            {"average", entry(average)},
            {"temporal_mse", temporal_mse},
            {"samples", samples}};
  return j.dump(2);
}

std::string OpenLoopReport::to_table() const {
  std::ostringstream os;
  char buf[256];
  os << "protocol    L2(m) 1s    2s      3s      Avg   | CR(%) 1s    2s      3s      Avg\n";
  for (const auto* e : {&final_max, &average}) {
    const char* name = (e == &final_max) ? "final_max" : "average  ";
    std::snprintf(buf, sizeof(buf), "%s   %7.3f %7.3f %7.3f %7.3f  | %7.3f %7.3f %7.3f %7.3f\n", name, e->l2[0],
                  e->l2[1], e->l2[2], e->l2_avg, e->collision[0], e->collision[1], e->collision[2], e->collision_avg);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "temporal MSE %.6f over %d samples\n", temporal_mse, samples);
  os << buf;
  return os.str();
}

}  // namespace echoplan::metrics
