#pragma once

#include "echoplan/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace echoplan::world {

enum class Command : std::uint8_t { kLeft = 0, kStraight = 1, kRight = 2 };
enum class Scenario : std::uint8_t { kStraight = 0, kLeftTurn = 1, kRightTurn = 2, kIntersectionMixed = 3 };

const char* command_name(Command c);
const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct GridSpec {
  int h = 32;
  int w = 32;
  double cell_size = 0.5;
  static constexpr int k_sem = 5;  // drivable, agent_occupancy, lane_sin, lane_cos, route_hint

  bool operator==(const GridSpec&) const = default;
};

// Semantic channel indices.
inline constexpr int kChDrivable = 0;
inline constexpr int kChAgentOcc = 1;
inline constexpr int kChLaneSin = 2;
inline constexpr int kChLaneCos = 3;
inline constexpr int kChRouteHint = 4;

inline constexpr int kNumWaypoints = 6;   // 2 Hz over 3 s
inline constexpr double kFrameDt = 0.5;   // s
inline constexpr double kEgoLength = 4.0;  // m
inline constexpr double kEgoWidth = 2.0;   // m

struct EgoState {
  double x = 0.0;       // world frame, m
  double y = 0.0;
  double heading = 0.0;  // rad, wrapped to (-pi, pi]
  double speed = 0.0;    // m/s, >= 0

  geom::Pose2 pose() const { return {x, y, heading}; }
};

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  double length = 4.0;
  double width = 2.0;

  geom::OrientedBox box() const { return {{x, y, heading}, length, width}; }
};

// Ego-frame semantic map, ego at grid center facing +x (increasing row).
struct SemanticRaster {
  int h = 0;
  int w = 0;
  std::vector<float> values;  // h*w*k_sem, index (row, col, channel)

  SemanticRaster() = default;
  SemanticRaster(int h_, int w_) : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_ * GridSpec::k_sem, 0.0f) {}

  float& at(int r, int c, int ch) { return values[(static_cast<std::size_t>(r) * w + c) * GridSpec::k_sem + ch]; }
  float at(int r, int c, int ch) const { return values[(static_cast<std::size_t>(r) * w + c) * GridSpec::k_sem + ch]; }
};

// Center of cell (r, c) in the ego frame.
geom::Vec2 cell_center(const GridSpec& grid, int r, int c);

struct Frame {
  SemanticRaster raster;
  EgoState ego;
  std::vector<AgentState> agents;
  Command command = Command::kStraight;
  std::vector<double> gt_future;  // kNumWaypoints x 2, ego frame, row-major

  geom::Vec2 waypoint(int k) const { return {gt_future[2 * k], gt_future[2 * k + 1]}; }
};

struct Episode {
  std::string scenario_id;
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::kStraight;
  GridSpec grid;
  std::vector<Frame> frames;
};

// Dense centerline with arc-length parameterization; routes and crossing
// roads are both stored this way.
struct Centerline {
  std::vector<geom::Vec2> points;
  std::vector<double> headings;
  std::vector<double> arclen;  // cumulative, arclen[0] = 0

  double total_length() const { return arclen.empty() ? 0.0 : arclen.back(); }
  geom::Vec2 point_at(double s) const;
  double heading_at(double s) const;
};

// Full scenario geometry: everything needed to rasterize and simulate at an
// arbitrary ego state (used by episode sampling and closed-loop rollout).
struct ScenarioWorld {
  Centerline route;
  std::vector<Centerline> roads;  // includes the route's own road
  std::vector<AgentState> agents;  // states at t = 0; constant velocity
  double ego_speed = 2.0;
  double lane_half_width = 2.5;
  double hint_half_width = 1.0;

  EgoState ego_at(double t) const;
  std::vector<AgentState> agents_at(double t) const;
};

// --- Operations ---

// Command label from the headings of an upcoming route segment.
Command command_for_route(const std::vector<double>& future_headings);

Command reverse_command(Command c);

ScenarioWorld build_scenario(std::uint64_t seed, Scenario scenario);

Episode generate_episode(std::uint64_t seed, Scenario scenario, const GridSpec& grid);

SemanticRaster rasterize_frame(const EgoState& ego, const std::vector<AgentState>& agents,
                               const ScenarioWorld& geometry, const GridSpec& grid);

// Resamples a raster stored in src_ego's frame into dst_ego's frame
// (nearest-neighbor; lane direction channels rotated by the heading delta).
SemanticRaster warp_raster(const SemanticRaster& src, const EgoState& src_ego,
                           const EgoState& dst_ego, const GridSpec& grid);

// Grid cells (row, col) whose centers fall inside an oriented box given in
// the ego frame.
std::vector<std::pair<int, int>> footprint_cells(const GridSpec& grid, const geom::OrientedBox& box_ego);

void save_dataset(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> load_dataset(const std::string& path);

// Content hash of a dataset directory (order-independent across episodes).
std::uint64_t dataset_hash(const std::string& path);

}  // namespace echoplan::world
