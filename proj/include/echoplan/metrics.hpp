#pragma once

#include "echoplan/world.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace echoplan::metrics {

// Aggregation conventions: UniAD-style final/any-collision vs VAD-style
// per-step averaging.
enum class Protocol { kFinalMax, kAverage };

const char* protocol_name(Protocol p);

using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, 2>;

// Horizon -> step map at 2 Hz: 1s -> 2, 2s -> 4, 3s -> 6.
inline constexpr int kHorizonSteps[3] = {2, 4, 6};
inline constexpr const char* kHorizonNames[3] = {"1s", "2s", "3s"};

double l2_at_horizon(const Trajectory& pred, const Trajectory& gt, int h_steps, Protocol protocol);

struct CollisionSample {
  Trajectory pred;             // ego frame of `frame_idx`
  const world::Episode* episode = nullptr;
  int frame_idx = 0;
};

// Cell-center collision test: ego footprint at a predicted waypoint against
// an agent box, on the world-aligned grid of the given cell size.
bool footprint_collides(const geom::OrientedBox& ego_box, const std::vector<world::AgentState>& agents,
                        double cell_size);

// Ego box placed at predicted waypoint k (heading from consecutive
// waypoints, step 1 uses the current heading).
geom::OrientedBox ego_box_at_step(const Trajectory& pred, int step, const world::EgoState& ego_t);

double collision_rate(const std::vector<CollisionSample>& samples, int h_steps, Protocol protocol);

// Same kernel as the current-BEV reconstruction loss (mean squared error).
double temporal_consistency(const Eigen::MatrixXd& pred_bev, const Eigen::MatrixXd& gt_bev);

struct OpenLoopEntry {
  double l2[3] = {0, 0, 0};         // per horizon
  double collision[3] = {0, 0, 0};  // percent
  double l2_avg = 0.0;
  double collision_avg = 0.0;
};

struct OpenLoopReport {
  OpenLoopEntry final_max;
  OpenLoopEntry average;
  double temporal_mse = 0.0;
  int samples = 0;

  std::string to_json() const;
  std::string to_table() const;  // aligned text, Table-2 style columns
};

}  // namespace echoplan::metrics
