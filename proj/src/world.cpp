#include "echoplan/world.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace echoplan::world {

namespace fs = std::filesystem;
using geom::Vec2;
using json = nlohmann::json;

const char* command_name(Command c) {
  switch (c) {
    case Command::kLeft: return "LEFT";
    case Command::kStraight: return "STRAIGHT";
    case Command::kRight: return "RIGHT";
  }
  return "?";
}

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kStraight: return "straight";
    case Scenario::kLeftTurn: return "left_turn";
    case Scenario::kRightTurn: return "right_turn";
    case Scenario::kIntersectionMixed: return "intersection_mixed";
  }
  return "?";
}

Scenario scenario_from_name(const std::string& name) {
  for (Scenario s : {Scenario::kStraight, Scenario::kLeftTurn, Scenario::kRightTurn, Scenario::kIntersectionMixed})
    if (name == scenario_name(s)) return s;
  throw std::invalid_argument("unknown scenario: " + name);
}

// Round through f32 so in-memory episodes match their on-disk encoding.
// Rounds through f32 so in-memory values match the serialized payload
// bit-exactly. The volatile stops the optimizer from folding the casts away.
static double snap(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

geom::Vec2 cell_center(const GridSpec& grid, int r, int c) {
  return {(r - grid.h / 2 + 0.5) * grid.cell_size, (c - grid.w / 2 + 0.5) * grid.cell_size};
}

geom::Vec2 Centerline::point_at(double s) const {
  if (points.empty()) throw std::runtime_error("empty centerline");
  if (s <= 0.0) return points.front();
  if (s >= arclen.back()) return points.back();
  auto it = std::upper_bound(arclen.begin(), arclen.end(), s);
  std::size_t i = static_cast<std::size_t>(it - arclen.begin());
  double t = (s - arclen[i - 1]) / (arclen[i] - arclen[i - 1]);
  return {points[i - 1].x + t * (points[i].x - points[i - 1].x),
          points[i - 1].y + t * (points[i].y - points[i - 1].y)};
}

double Centerline::heading_at(double s) const {
  if (headings.empty()) throw std::runtime_error("empty centerline");
  if (s <= 0.0) return headings.front();
  if (s >= arclen.back()) return headings.back();
  auto it = std::upper_bound(arclen.begin(), arclen.end(), s);
  std::size_t i = static_cast<std::size_t>(it - arclen.begin());
  double t = (s - arclen[i - 1]) / (arclen[i] - arclen[i - 1]);
  return headings[i - 1] + t * (headings[i] - headings[i - 1]);
}

EgoState ScenarioWorld::ego_at(double t) const {
  double s = ego_speed * t;
  Vec2 p = route.point_at(s);
  return {p.x, p.y, geom::wrap_angle(route.heading_at(s)), ego_speed};
}

std::vector<AgentState> ScenarioWorld::agents_at(double t) const {
  std::vector<AgentState> out = agents;
  for (AgentState& a : out) {
    a.x += a.speed * std::cos(a.heading) * t;
    a.y += a.speed * std::sin(a.heading) * t;
  }
  return out;
}

Command command_for_route(const std::vector<double>& future_headings) {
  if (future_headings.empty()) throw std::invalid_argument("empty route segment");
  double delta = geom::wrap_angle(future_headings.back() - future_headings.front());
  constexpr double kThreshold = 15.0 * geom::kPi / 180.0;
  if (delta > kThreshold) return Command::kLeft;
  if (delta < -kThreshold) return Command::kRight;
  return Command::kStraight;
}

Command reverse_command(Command c) {
  switch (c) {
    case Command::kLeft: return Command::kRight;
    case Command::kRight: return Command::kLeft;
    case Command::kStraight: return Command::kStraight;
  }
  return c;
}

namespace {

constexpr double kSampleDs = 0.1;
constexpr int kEpisodeFrames = 14;

// Piecewise line/arc path. curvature > 0 bends left.
struct PathSeg {
  geom::Pose2 start;
  double length = 0.0;
  double curvature = 0.0;
};

geom::Pose2 seg_pose(const PathSeg& seg, double u) {
  if (seg.curvature == 0.0) {
    return {seg.start.x + u * std::cos(seg.start.heading),
            seg.start.y + u * std::sin(seg.start.heading), seg.start.heading};
  }
  double h = seg.start.heading + seg.curvature * u;
  double inv = 1.0 / seg.curvature;
  return {seg.start.x + inv * (std::sin(h) - std::sin(seg.start.heading)),
          seg.start.y - inv * (std::cos(h) - std::cos(seg.start.heading)), h};
}

Centerline sample_path(const std::vector<PathSeg>& segs) {
  Centerline line;
  double total = 0.0;
  for (const PathSeg& s : segs) total += s.length;
  int n = static_cast<int>(total / kSampleDs) + 1;
  for (int i = 0; i <= n; ++i) {
    double s = std::min(i * kSampleDs, total);
    double rem = s;
    geom::Pose2 p = segs.back().start;
    for (const PathSeg& seg : segs) {
      if (rem <= seg.length || &seg == &segs.back()) {
        p = seg_pose(seg, std::min(rem, seg.length));
        break;
      }
      rem -= seg.length;
    }
    line.points.push_back({p.x, p.y});
    line.headings.push_back(p.heading);
    line.arclen.push_back(s);
  }
  return line;
}

// Exact separating-axis test for two oriented boxes.
bool boxes_separated(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  auto corners = [](const geom::OrientedBox& box) {
    std::vector<Vec2> out;
    for (double sx : {-0.5, 0.5})
      for (double sy : {-0.5, 0.5})
        out.push_back(geom::frame_to_world(box.pose, {sx * box.length, sy * box.width}));
    return out;
  };
  std::vector<Vec2> ca = corners(a), cb = corners(b);
  std::vector<Vec2> axes;
  for (const geom::OrientedBox* box : {&a, &b}) {
    double c = std::cos(box->pose.heading), s = std::sin(box->pose.heading);
    axes.push_back({c, s});
    axes.push_back({-s, c});
  }
  for (Vec2 ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (Vec2 p : ca) {
      double d = geom::dot(ax, p);
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (Vec2 p : cb) {
      double d = geom::dot(ax, p);
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return true;  // separating axis found
  }
  return false;
}

bool overlaps(const geom::OrientedBox& a, const geom::OrientedBox& b) { return !boxes_separated(a, b); }

}  // namespace

ScenarioWorld build_scenario(std::uint64_t seed, Scenario scenario) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  auto uniform = [&rng](double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  };

  // Turn scenarios consume identical draws and differ only by a sign so a
  // left-turn world is the exact mirror of the right-turn world at the same
  // seed.
  double turn_sign = (scenario == Scenario::kRightTurn) ? -1.0 : 1.0;
  double approach = uniform(3.0, 6.0);
  double radius = uniform(6.0, 10.0);
  double branch_draw = uniform(0.0, 1.0);

  ScenarioWorld wld;
  std::vector<PathSeg> segs;
  bool crossing_road = false;
  double cross_x = 0.0;

  Scenario effective = scenario;
  if (scenario == Scenario::kIntersectionMixed) {
    crossing_road = true;
    if (branch_draw < 1.0 / 3.0) {
      effective = Scenario::kStraight;
    } else if (branch_draw < 2.0 / 3.0) {
      effective = Scenario::kLeftTurn;
      turn_sign = 1.0;
    } else {
      effective = Scenario::kRightTurn;
      turn_sign = -1.0;
    }
    cross_x = approach + radius;
  }

  if (effective == Scenario::kStraight) {
    segs.push_back({{0.0, 0.0, 0.0}, 40.0, 0.0});
  } else {
    segs.push_back({{0.0, 0.0, 0.0}, approach, 0.0});
    geom::Pose2 arc_start = seg_pose(segs.back(), approach);
    double curv = turn_sign / radius;
    double arc_len = radius * geom::kPi / 2.0;
    segs.push_back({arc_start, arc_len, curv});
    geom::Pose2 exit_start = seg_pose(segs.back(), arc_len);
    segs.push_back({exit_start, 20.0, 0.0});
  }
  wld.route = sample_path(segs);
  wld.roads.push_back(wld.route);
  if (crossing_road) {
    std::vector<PathSeg> cross{{{cross_x, -25.0, geom::kPi / 2.0}, 50.0, 0.0}};
    wld.roads.push_back(sample_path(cross));
  }

  wld.ego_speed = uniform(1.5, 3.0);

  // Covers the episode, the planning horizon, and a full closed-loop drive
  // down the route.
  double horizon = std::max((kEpisodeFrames - 1 + kNumWaypoints) * kFrameDt,
                            wld.route.total_length() / wld.ego_speed + 3.0);
  int n_agents = static_cast<int>(uniform(0.0, 1.0) * 5.0);  // 0..4
  for (int i = 0; i < n_agents; ++i) {
    double s_frac = uniform(0.25, 0.9);
    double side = uniform(0.0, 1.0) < 0.5 ? 1.0 : -1.0;
    // Lateral offset and heading noise carry the turn sign so agents mirror
    // together with the route.
    double lateral = side * uniform(1.8, 5.0) * turn_sign;
    double heading_noise = uniform(-0.2, 0.2) * turn_sign;
    double speed = uniform(0.0, 1.5);
    double length = uniform(3.5, 4.5);
    double width = uniform(1.8, 2.2);

    double s_a = s_frac * wld.route.total_length();
    Vec2 base = wld.route.point_at(s_a);
    double road_heading = wld.route.heading_at(s_a);
    AgentState agent;
    agent.x = base.x - std::sin(road_heading) * lateral;
    agent.y = base.y + std::cos(road_heading) * lateral;
    agent.heading = geom::wrap_angle(road_heading + heading_noise);
    agent.speed = speed;
    agent.length = length;
    agent.width = width;

    // Feasibility: the ground-truth route must stay collision-free over the
    // whole episode plus the planning horizon.
    bool feasible = true;
    for (double t = 0.0; t <= horizon + 1e-9; t += kFrameDt) {
      EgoState ego = wld.ego_at(t);
      geom::OrientedBox ego_box{{ego.x, ego.y, ego.heading}, kEgoLength + 1.2, kEgoWidth + 1.2};
      AgentState at = agent;
      at.x += at.speed * std::cos(at.heading) * t;
      at.y += at.speed * std::sin(at.heading) * t;
      if (overlaps(ego_box, at.box())) {
        feasible = false;
        break;
      }
    }
    if (feasible) wld.agents.push_back(agent);
  }
  return wld;
}

SemanticRaster rasterize_frame(const EgoState& ego, const std::vector<AgentState>& agents,
                               const ScenarioWorld& geometry, const GridSpec& grid) {
  SemanticRaster raster(grid.h, grid.w);
  geom::Pose2 ego_pose = ego.pose();
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      Vec2 p = geom::frame_to_world(ego_pose, cell_center(grid, r, c));

      double best_d2 = 1e300;
      double best_heading = 0.0;
      for (const Centerline& road : geometry.roads) {
        for (std::size_t i = 0; i < road.points.size(); ++i) {
          double dx = p.x - road.points[i].x, dy = p.y - road.points[i].y;
          double d2 = dx * dx + dy * dy;
          if (d2 < best_d2) {
            best_d2 = d2;
            best_heading = road.headings[i];
          }
        }
      }
      if (best_d2 <= geometry.lane_half_width * geometry.lane_half_width) {
        raster.at(r, c, kChDrivable) = 1.0f;
        double rel = best_heading - ego.heading;
        raster.at(r, c, kChLaneSin) = static_cast<float>(std::sin(rel));
        raster.at(r, c, kChLaneCos) = static_cast<float>(std::cos(rel));
      }

      double route_d2 = 1e300;
      for (const Vec2& q : geometry.route.points) {
        double dx = p.x - q.x, dy = p.y - q.y;
        route_d2 = std::min(route_d2, dx * dx + dy * dy);
      }
      if (route_d2 <= geometry.hint_half_width * geometry.hint_half_width)
        raster.at(r, c, kChRouteHint) = 1.0f;

      for (const AgentState& a : agents) {
        if (geom::point_in_box(a.box(), p)) {
          raster.at(r, c, kChAgentOcc) = 1.0f;
          break;
        }
      }
    }
  }
  return raster;
}

SemanticRaster warp_raster(const SemanticRaster& src, const EgoState& src_ego,
                           const EgoState& dst_ego, const GridSpec& grid) {
  SemanticRaster out(grid.h, grid.w);
  double delta = src_ego.heading - dst_ego.heading;
  double cd = std::cos(delta), sd = std::sin(delta);
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      Vec2 world = geom::frame_to_world(dst_ego.pose(), cell_center(grid, r, c));
      Vec2 local = geom::world_to_frame(src_ego.pose(), world);
      int sr = static_cast<int>(std::lround(local.x / grid.cell_size + grid.h / 2 - 0.5));
      int sc = static_cast<int>(std::lround(local.y / grid.cell_size + grid.w / 2 - 0.5));
      if (sr < 0 || sr >= grid.h || sc < 0 || sc >= grid.w) continue;
      out.at(r, c, kChDrivable) = src.at(sr, sc, kChDrivable);
      out.at(r, c, kChAgentOcc) = src.at(sr, sc, kChAgentOcc);
      out.at(r, c, kChRouteHint) = src.at(sr, sc, kChRouteHint);
      double lsin = src.at(sr, sc, kChLaneSin), lcos = src.at(sr, sc, kChLaneCos);
      out.at(r, c, kChLaneSin) = static_cast<float>(lsin * cd + lcos * sd);
      out.at(r, c, kChLaneCos) = static_cast<float>(lcos * cd - lsin * sd);
    }
  }
  return out;
}

std::vector<std::pair<int, int>> footprint_cells(const GridSpec& grid, const geom::OrientedBox& box_ego) {
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < grid.h; ++r)
    for (int c = 0; c < grid.w; ++c)
      if (geom::point_in_box(box_ego, cell_center(grid, r, c))) out.emplace_back(r, c);
  return out;
}

Episode generate_episode(std::uint64_t seed, Scenario scenario, const GridSpec& grid) {
  ScenarioWorld wld = build_scenario(seed, scenario);

  Episode ep;
  ep.scenario_id = std::string(scenario_name(scenario)) + "-" + std::to_string(seed);
  ep.seed = seed;
  ep.scenario = scenario;
  ep.grid = grid;

  for (int i = 0; i < kEpisodeFrames; ++i) {
    double t = i * kFrameDt;
    Frame frame;
    EgoState ego = wld.ego_at(t);
    frame.ego = {snap(ego.x), snap(ego.y), snap(ego.heading), snap(ego.speed)};
    for (AgentState a : wld.agents_at(t)) {
      frame.agents.push_back({snap(a.x), snap(a.y), snap(a.heading), snap(a.speed), snap(a.length), snap(a.width)});
    }

    std::vector<double> future_headings;
    for (int k = 0; k <= kNumWaypoints; ++k)
      future_headings.push_back(wld.route.heading_at(wld.ego_speed * (t + k * kFrameDt)));
    frame.command = command_for_route(future_headings);

    frame.gt_future.resize(2 * kNumWaypoints);
    for (int k = 1; k <= kNumWaypoints; ++k) {
      EgoState fut = wld.ego_at((i + k) * kFrameDt);
      Vec2 world_pos{snap(fut.x), snap(fut.y)};
      Vec2 local = geom::world_to_frame(frame.ego.pose(), world_pos);
      frame.gt_future[2 * (k - 1)] = snap(local.x);
      frame.gt_future[2 * (k - 1) + 1] = snap(local.y);
    }

    frame.raster = rasterize_frame(frame.ego, frame.agents, wld, grid);
    ep.frames.push_back(std::move(frame));
  }
  return ep;
}

// --- Dataset persistence ---

namespace {

constexpr char kMagic[4] = {'E', 'P', 'W', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const char* field) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(std::string(field) + " truncated");
}

void write_episode(const Episode& ep, const fs::path& dir) {
  fs::create_directories(dir);
  json meta = {
      {"scenario_id", ep.scenario_id},
      {"scenario", scenario_name(ep.scenario)},
      {"seed", ep.seed},
      {"grid", {{"h", ep.grid.h}, {"w", ep.grid.w}, {"cell_size", ep.grid.cell_size}}},
      {"frame_count", ep.frames.size()},
  };
  std::ofstream meta_out(dir / "meta.json");
  meta_out << meta.dump(2) << "\n";

  std::ofstream out(dir / "frames.bin", std::ios::binary);
  out.write(kMagic, 4);
  write_pod(out, static_cast<std::uint32_t>(ep.grid.h));
  write_pod(out, static_cast<std::uint32_t>(ep.grid.w));
  write_pod(out, static_cast<std::uint32_t>(GridSpec::k_sem));
  write_pod(out, static_cast<std::uint32_t>(kNumWaypoints));
  write_pod(out, static_cast<std::uint32_t>(ep.frames.size()));
  for (const Frame& f : ep.frames) {
    out.write(reinterpret_cast<const char*>(f.raster.values.data()),
              static_cast<std::streamsize>(f.raster.values.size() * sizeof(float)));
    for (double v : {f.ego.x, f.ego.y, f.ego.heading, f.ego.speed}) write_pod(out, static_cast<float>(v));
    write_pod(out, static_cast<std::uint32_t>(f.agents.size()));
    for (const AgentState& a : f.agents)
      for (double v : {a.x, a.y, a.heading, a.speed, a.length, a.width}) write_pod(out, static_cast<float>(v));
    for (double v : f.gt_future) write_pod(out, static_cast<float>(v));
    write_pod(out, static_cast<std::uint8_t>(f.command));
  }
}

Episode read_episode(const fs::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw std::runtime_error("missing file: " + (dir / "meta.json").string());
  json meta = json::parse(meta_in, nullptr, false);
  if (meta.is_discarded()) throw std::runtime_error("malformed meta.json in " + dir.string());

  Episode ep;
  ep.scenario_id = meta.at("scenario_id").get<std::string>();
  ep.scenario = scenario_from_name(meta.at("scenario").get<std::string>());
  ep.seed = meta.at("seed").get<std::uint64_t>();
  ep.grid.h = meta.at("grid").at("h").get<int>();
  ep.grid.w = meta.at("grid").at("w").get<int>();
  ep.grid.cell_size = meta.at("grid").at("cell_size").get<double>();
  std::size_t frame_count = meta.at("frame_count").get<std::size_t>();

  std::ifstream in(dir / "frames.bin", std::ios::binary);
  if (!in) throw std::runtime_error("missing file: " + (dir / "frames.bin").string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("malformed header: bad magic in " + (dir / "frames.bin").string());
  std::uint32_t h, w, k_sem, n_t, n_frames;
  read_pod(in, h, "header.h");
  read_pod(in, w, "header.w");
  read_pod(in, k_sem, "header.k_sem");
  read_pod(in, n_t, "header.n_t");
  read_pod(in, n_frames, "header.frame_count");
  if (static_cast<int>(h) != ep.grid.h || static_cast<int>(w) != ep.grid.w)
    throw std::runtime_error("dimension mismatch: grid h/w differs between header and meta.json");
  if (k_sem != GridSpec::k_sem) throw std::runtime_error("dimension mismatch: k_sem");
  if (n_t != kNumWaypoints) throw std::runtime_error("dimension mismatch: n_t");
  if (n_frames != frame_count) throw std::runtime_error("dimension mismatch: frame_count");

  for (std::uint32_t i = 0; i < n_frames; ++i) {
    Frame f;
    f.raster = SemanticRaster(ep.grid.h, ep.grid.w);
    in.read(reinterpret_cast<char*>(f.raster.values.data()),
            static_cast<std::streamsize>(f.raster.values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(f.raster.values.size() * sizeof(float)))
      throw std::runtime_error("raster size mismatch");
    float ego[4];
    for (float& v : ego) read_pod(in, v, "ego state");
    f.ego = {ego[0], ego[1], ego[2], ego[3]};
    std::uint32_t n_agents;
    read_pod(in, n_agents, "agent count");
    if (n_agents > 64) throw std::runtime_error("agent count implausible: " + std::to_string(n_agents));
    for (std::uint32_t a = 0; a < n_agents; ++a) {
      float vals[6];
      for (float& v : vals) read_pod(in, v, "agent state");
      f.agents.push_back({vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]});
    }
    f.gt_future.resize(2 * kNumWaypoints);
    for (double& v : f.gt_future) {
      float fv;
      read_pod(in, fv, "gt_future");
      v = fv;
    }
    std::uint8_t cmd;
    read_pod(in, cmd, "command");
    if (cmd > 2) throw std::runtime_error("command out of range");
    f.command = static_cast<Command>(cmd);
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

}  // namespace

void save_dataset(const std::vector<Episode>& episodes, const std::string& path) {
  fs::create_directories(path);
  for (const Episode& ep : episodes) write_episode(ep, fs::path(path) / ep.scenario_id);
}

std::vector<Episode> load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing file: " + path);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no episodes found in " + path);
  std::vector<Episode> out;
  out.reserve(dirs.size());
  for (const fs::path& d : dirs) out.push_back(read_episode(d));
  return out;
}

std::uint64_t dataset_hash(const std::string& path) {
  std::vector<fs::path> files;
  // Only episode payloads count; run manifests and other side files written
  // next to them must not change the content hash.
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    auto name = entry.path().filename().string();
    if (name == "meta.json" || name == "frames.bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t hash = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&hash](const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(data[i]);
      hash *= 1099511628211ULL;
    }
  };
  for (const fs::path& f : files) {
    std::string rel = fs::relative(f, path).generic_string();
    mix(rel.data(), rel.size());
    std::ifstream in(f, std::ios::binary);
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) mix(buf, static_cast<std::size_t>(in.gcount()));
  }
  return hash;
}

}  // namespace echoplan::world
