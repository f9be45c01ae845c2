#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pathdiff/geometry.hpp"
#include "pathdiff/path.hpp"

namespace pathdiff {

/// Obstacle with a constant-turn-rate, constant-speed motion model. The
/// velocity vector rotates together with the box heading.
struct ObstacleTrack {
  OrientedBox box;  ///< pose at t = 0
  double vx = 0.0;
  double vy = 0.0;
  double yaw_rate = 0.0;

  OrientedBox at(double t) const;

  friend bool operator==(const ObstacleTrack&, const ObstacleTrack&) = default;
};

struct EgoDims {
  double length = 4.5;
  double width = 2.0;

  friend bool operator==(const EgoDims&, const EgoDims&) = default;
};

struct Scenario {
  std::string id;
  std::uint64_t seed = 0;
  EgoDims ego;
  std::vector<ObstacleTrack> obstacles;
  double extent = 50.0;  ///< half-width of the square world, meters
  Path gt_path;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

struct ScenarioConfig {
  double extent = 50.0;
  int min_obstacles = 2;
  int max_obstacles = 8;
  double min_speed = 2.0;  ///< ego initial speed range, m/s
  double max_speed = 12.0;
  double max_accel = 1.5;        ///< m/s^2
  double max_curvature = 0.08;   ///< 1/m
  double stop_probability = 0.05;
  double straight_probability = 0.35;
  double near_path_fraction = 0.5;  ///< share of obstacles placed beside the gt path
  double near_gap_min = 0.3;        ///< lateral clearance range for near-path obstacles
  double near_gap_max = 2.0;
  double obstacle_max_speed = 6.0;
  double static_probability = 0.5;
  EgoDims ego;
  int horizon = static_cast<int>(kDefaultHorizon);
  double dt = kDefaultDt;
  int max_retries = 100;  ///< placement attempts per obstacle before giving up
};

/// Throws ConfigError on a non-positive extent, inverted ranges and the like.
void validate(const ScenarioConfig& config);

/// Pure function of (seed, config). Throws GenerationError when an obstacle
/// cannot be placed within `max_retries` attempts.
Scenario generate_scenario(std::uint64_t seed, const ScenarioConfig& config);

/// `count` scenarios with ids "scn-00000", ... and per-index derived seeds.
/// The result does not depend on `jobs`.
std::vector<Scenario> generate_scenarios(std::size_t count, std::uint64_t seed,
                                         const ScenarioConfig& config, int jobs = 1);

/// Unicycle at constant speed and curvature, sampled at t = dt, 2 dt, ...
Path ground_truth_path(double speed, double curvature, std::size_t n, double dt);

/// Ego boxes placed along a path. Heading at waypoint j points to waypoint
/// j + 1; the last waypoint reuses the previous heading; a zero-length
/// segment gives heading 0.
std::vector<OrientedBox> ego_placements(const Path& path, const EgoDims& ego);

struct GridConfig {
  int channels = 6;
  int height = 64;
  int width = 64;
  double resolution = 0.5;
};

/// C x H x W feature grid, row-major per channel. Row index grows with x
/// (forward), column index grows with y (left); the ego sits at the corner
/// shared by the four central cells.
struct BevGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  double resolution = 0.0;
  std::vector<double> data;

  double at(int c, int r, int col) const {
    return data[(static_cast<std::size_t>(c) * height + r) * width + col];
  }
  double& at(int c, int r, int col) {
    return data[(static_cast<std::size_t>(c) * height + r) * width + col];
  }
  double cell_x(int r) const { return (r - height / 2 + 0.5) * resolution; }
  double cell_y(int col) const { return (col - width / 2 + 0.5) * resolution; }
};

inline constexpr int kChannelOccupancy = 0;
inline constexpr int kChannelDrivable = 1;
inline constexpr int kChannelEgo = 2;
inline constexpr int kFirstFutureChannel = 3;

/// Channel 0: obstacle occupancy at t = 0; 1: inside-world and free;
/// 2: ego footprint; 3..C-1: occupancy at (k + 1) * horizon / (C - 3).
/// A cell counts as covered when any centre of a 10x10 sub-cell lattice lies
/// inside a box.
BevGrid rasterize_bev(const Scenario& scenario, const GridConfig& config);

void validate(const GridConfig& config);

// JSON Lines dataset I/O.
std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& line);
void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios);
std::vector<Scenario> read_scenarios(std::istream& in);

}  // namespace pathdiff
