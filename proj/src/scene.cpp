#include "pathdiff/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "pathdiff/error.hpp"
#include "pathdiff/parallel.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

namespace {

using Json = nlohmann::ordered_json;

struct Motion {
  double speed = 0.0;
  double accel = 0.0;
  double curvature_first = 0.0;
  double curvature_second = 0.0;
  std::size_t switch_index = 0;
};

// Advances a unicycle pose along an arc of length s with curvature k.
void advance_arc(double& x, double& y, double& heading, double s, double k) {
  if (std::abs(k) < 1e-12) {
    x += s * std::cos(heading);
    y += s * std::sin(heading);
  } else {
    x += (std::sin(heading + k * s) - std::sin(heading)) / k;
    y += (std::cos(heading) - std::cos(heading + k * s)) / k;
  }
  heading += k * s;
}

// Piecewise constant curvature, piecewise constant speed per interval (the
// interval speed is evaluated at its midpoint).
Path rollout(const Motion& motion, std::size_t n, double dt) {
  Path path;
  path.dt = dt;
  path.waypoints.reserve(n);
  double x = 0.0, y = 0.0, heading = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double v = std::max(0.0, motion.speed + motion.accel * (static_cast<double>(j) + 0.5) * dt);
    const double k = j < motion.switch_index ? motion.curvature_first : motion.curvature_second;
    advance_arc(x, y, heading, v * dt, k);
    path.waypoints.push_back({x, y});
  }
  return path;
}

Motion sample_motion(Rng& rng, const ScenarioConfig& config) {
  Motion m;
  if (uniform(rng, 0.0, 1.0) < config.stop_probability) return m;
  m.speed = uniform(rng, config.min_speed, config.max_speed);
  m.accel = uniform(rng, -config.max_accel, config.max_accel);
  if (uniform(rng, 0.0, 1.0) >= config.straight_probability) {
    m.curvature_first = uniform(rng, -config.max_curvature, config.max_curvature);
    m.curvature_second = uniform(rng, -config.max_curvature, config.max_curvature);
    m.switch_index = std::uniform_int_distribution<std::size_t>(
        0, static_cast<std::size_t>(config.horizon))(rng);
  }
  return m;
}

struct ObstacleClass {
  double length;
  double width;
};

// car, truck, pedestrian, cyclist
constexpr ObstacleClass kClasses[] = {{4.5, 1.9}, {8.0, 2.5}, {0.8, 0.8}, {1.8, 0.8}};

ObstacleTrack sample_obstacle(Rng& rng, const ScenarioConfig& config, const Path& gt,
                              const std::vector<OrientedBox>& placements) {
  std::discrete_distribution<int> pick_class({0.5, 0.15, 0.2, 0.15});
  const ObstacleClass cls = kClasses[pick_class(rng)];
  ObstacleTrack track;
  track.box.length = cls.length;
  track.box.width = cls.width;

  const bool moving = uniform(rng, 0.0, 1.0) >= config.static_probability;
  double direction = 0.0;
  if (uniform(rng, 0.0, 1.0) < config.near_path_fraction) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, gt.size() - 1)(rng);
    const OrientedBox& anchor = placements[j];
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    const double lateral = 0.5 * config.ego.width + 0.5 * cls.width +
                           uniform(rng, config.near_gap_min, config.near_gap_max);
    const double along = uniform(rng, -2.0, 2.0);
    const double c = std::cos(anchor.heading), s = std::sin(anchor.heading);
    track.box.cx = anchor.cx + along * c - side * lateral * s;
    track.box.cy = anchor.cy + along * s + side * lateral * c;
    track.box.heading = normalize_angle(anchor.heading + uniform(rng, -0.2, 0.2));
    direction = uniform(rng, 0.0, 1.0) < 0.8 ? track.box.heading : track.box.heading + std::numbers::pi;
  } else {
    const double span = 0.6 * config.extent;
    track.box.cx = uniform(rng, -span, span);
    track.box.cy = uniform(rng, -span, span);
    track.box.heading = normalize_angle(uniform(rng, -std::numbers::pi, std::numbers::pi));
    direction = track.box.heading;
    if (moving) track.yaw_rate = uniform(rng, -0.2, 0.2);
  }
  if (moving) {
    const double speed = uniform(rng, 0.0, config.obstacle_max_speed);
    track.vx = speed * std::cos(direction);
    track.vy = speed * std::sin(direction);
  }
  return track;
}

bool acceptable(const ObstacleTrack& track, const Scenario& scenario,
                const std::vector<OrientedBox>& placements) {
  const double extent = scenario.extent;
  if (std::abs(track.box.cx) > extent || std::abs(track.box.cy) > extent) return false;
  const OrientedBox ego_now{0.0, 0.0, 0.0, scenario.ego.length, scenario.ego.width};
  if (boxes_intersect(ego_now, track.box)) return false;
  for (std::size_t j = 0; j < placements.size(); ++j) {
    const double t = static_cast<double>(j + 1) * scenario.gt_path.dt;
    if (boxes_intersect(placements[j], track.at(t))) return false;
  }
  for (const auto& other : scenario.obstacles) {
    if (boxes_intersect(other.box, track.box)) return false;
  }
  return true;
}

}  // namespace

OrientedBox ObstacleTrack::at(double t) const {
  OrientedBox moved = box;
  const double speed = std::hypot(vx, vy);
  if (std::abs(yaw_rate) < 1e-12 || speed == 0.0) {
    moved.cx += vx * t;
    moved.cy += vy * t;
  } else {
    const double phi = std::atan2(vy, vx);
    const double r = speed / yaw_rate;
    moved.cx += r * (std::sin(phi + yaw_rate * t) - std::sin(phi));
    moved.cy -= r * (std::cos(phi + yaw_rate * t) - std::cos(phi));
  }
  moved.heading = normalize_angle(box.heading + yaw_rate * t);
  return moved;
}

void validate(const ScenarioConfig& c) {
  if (!(c.extent > 0.0)) throw ConfigError("scenario.extent must be positive");
  if (c.min_obstacles < 0 || c.max_obstacles < c.min_obstacles)
    throw ConfigError("scenario obstacle count range is invalid");
  if (c.min_speed < 0.0 || c.max_speed < c.min_speed)
    throw ConfigError("scenario speed range is invalid");
  if (c.max_accel < 0.0 || c.max_curvature < 0.0 || c.obstacle_max_speed < 0.0)
    throw ConfigError("scenario acceleration/curvature/obstacle speed must be non-negative");
  if (c.near_gap_min < 0.0 || c.near_gap_max < c.near_gap_min)
    throw ConfigError("scenario near-path gap range is invalid");
  if (c.horizon < 1 || !(c.dt > 0.0)) throw ConfigError("scenario horizon/dt must be positive");
  if (!(c.ego.length > 0.0) || !(c.ego.width > 0.0)) throw ConfigError("ego dims must be positive");
  if (c.max_retries < 1) throw ConfigError("scenario.max_retries must be at least 1");
}

Path ground_truth_path(double speed, double curvature, std::size_t n, double dt) {
  if (n < 1 || !(dt > 0.0) || speed < 0.0) throw DomainError("ground_truth_path needs n >= 1, dt > 0, speed >= 0");
  Path path;
  path.dt = dt;
  path.waypoints.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = speed * static_cast<double>(j + 1) * dt;
    if (std::abs(curvature) < 1e-12) {
      path.waypoints.push_back({s, 0.0});
    } else {
      path.waypoints.push_back(
          {std::sin(curvature * s) / curvature, (1.0 - std::cos(curvature * s)) / curvature});
    }
  }
  return path;
}

std::vector<OrientedBox> ego_placements(const Path& path, const EgoDims& ego) {
  const std::size_t n = path.size();
  std::vector<double> headings(n, 0.0);
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double dx = path.waypoints[j + 1].x - path.waypoints[j].x;
    const double dy = path.waypoints[j + 1].y - path.waypoints[j].y;
    headings[j] = (dx == 0.0 && dy == 0.0) ? 0.0 : std::atan2(dy, dx);
  }
  if (n >= 2) headings[n - 1] = headings[n - 2];
  std::vector<OrientedBox> boxes;
  boxes.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    boxes.push_back({path.waypoints[j].x, path.waypoints[j].y, headings[j], ego.length, ego.width});
  }
  return boxes;
}

Scenario generate_scenario(std::uint64_t seed, const ScenarioConfig& config) {
  validate(config);
  Rng rng(seed);
  Scenario scenario;
  scenario.id = "seed-" + std::to_string(seed);
  scenario.seed = seed;
  scenario.ego = config.ego;
  scenario.extent = config.extent;

  const auto n = static_cast<std::size_t>(config.horizon);
  for (int attempt = 0;; ++attempt) {
    scenario.gt_path = rollout(sample_motion(rng, config), n, config.dt);
    const bool inside = std::all_of(scenario.gt_path.waypoints.begin(), scenario.gt_path.waypoints.end(),
                                    [&](const Waypoint& w) {
                                      return std::abs(w.x) <= config.extent && std::abs(w.y) <= config.extent;
                                    });
    if (inside) break;
    if (attempt + 1 >= config.max_retries)
      throw GenerationError("ground-truth path leaves the world extent after " +
                            std::to_string(config.max_retries) + " attempts");
  }

  const auto placements = ego_placements(scenario.gt_path, scenario.ego);
  const int count = std::uniform_int_distribution<int>(config.min_obstacles, config.max_obstacles)(rng);
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
      ObstacleTrack track = sample_obstacle(rng, config, scenario.gt_path, placements);
      if (acceptable(track, scenario, placements)) {
        scenario.obstacles.push_back(track);
        placed = true;
      }
    }
    if (!placed)
      throw GenerationError("could not place obstacle " + std::to_string(k) + " after " +
                            std::to_string(config.max_retries) + " attempts (overcrowded config)");
  }
  return scenario;
}

std::vector<Scenario> generate_scenarios(std::size_t count, std::uint64_t seed,
                                         const ScenarioConfig& config, int jobs) {
  validate(config);
  std::vector<Scenario> out(count);
  parallel_for(count, jobs, [&](std::size_t i) {
    out[i] = generate_scenario(derive_seed(seed, 0x5ce7a110, i), config);
    char id[32];
    std::snprintf(id, sizeof id, "scn-%05zu", i);
    out[i].id = id;
  });
  return out;
}

void validate(const GridConfig& config) {
  if (config.channels < 3) throw ConfigError("grid.channels must be at least 3");
  if (config.height <= 0 || config.width <= 0 || config.height % 2 != 0 || config.width % 2 != 0)
    throw ConfigError("grid.height and grid.width must be positive and even");
  if (!(config.resolution > 0.0)) throw ConfigError("grid.resolution must be positive");
}

namespace {

// A cell counts as covered when any point of a kCoverageSamples^2 lattice of
// sub-cell centres lies inside the box.
constexpr int kCoverageSamples = 10;

bool covers_cell(const OrientedBox& box, double x, double y, double res) {
  const double step = res / kCoverageSamples;
  const double x0 = x - 0.5 * res + 0.5 * step;
  const double y0 = y - 0.5 * res + 0.5 * step;
  for (int i = 0; i < kCoverageSamples; ++i)
    for (int j = 0; j < kCoverageSamples; ++j)
      if (contains(box, x0 + i * step, y0 + j * step)) return true;
  return false;
}

}  // namespace

BevGrid rasterize_bev(const Scenario& scenario, const GridConfig& config) {
  validate(config);
  if (config.height * config.resolution < scenario.ego.length ||
      config.width * config.resolution < scenario.ego.width)
    throw ConfigError("grid is too small to contain the ego footprint");

  BevGrid grid;
  grid.channels = config.channels;
  grid.height = config.height;
  grid.width = config.width;
  grid.resolution = config.resolution;
  grid.data.assign(static_cast<std::size_t>(config.channels) * config.height * config.width, 0.0);

  const double res = config.resolution;
  auto paint = [&](int channel, const OrientedBox& box) {
    double xmin = box.cx, xmax = box.cx, ymin = box.cy, ymax = box.cy;
    for (const auto& c : corners(box)) {
      xmin = std::min(xmin, c.x);
      xmax = std::max(xmax, c.x);
      ymin = std::min(ymin, c.y);
      ymax = std::max(ymax, c.y);
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(xmin / res)) + grid.height / 2 - 1);
    const int r1 = std::min(grid.height - 1, static_cast<int>(std::floor(xmax / res)) + grid.height / 2 + 1);
    const int c0 = std::max(0, static_cast<int>(std::floor(ymin / res)) + grid.width / 2 - 1);
    const int c1 = std::min(grid.width - 1, static_cast<int>(std::floor(ymax / res)) + grid.width / 2 + 1);
    for (int r = r0; r <= r1; ++r) {
      for (int col = c0; col <= c1; ++col) {
        if (grid.at(channel, r, col) == 0.0 && covers_cell(box, grid.cell_x(r), grid.cell_y(col), res))
          grid.at(channel, r, col) = 1.0;
      }
    }
  };

  for (const auto& obstacle : scenario.obstacles) paint(kChannelOccupancy, obstacle.box);
  for (int r = 0; r < grid.height; ++r) {
    for (int col = 0; col < grid.width; ++col) {
      const bool inside = std::abs(grid.cell_x(r)) <= scenario.extent && std::abs(grid.cell_y(col)) <= scenario.extent;
      grid.at(kChannelDrivable, r, col) = (inside && grid.at(kChannelOccupancy, r, col) == 0.0) ? 1.0 : 0.0;
    }
  }
  paint(kChannelEgo, OrientedBox{0.0, 0.0, 0.0, scenario.ego.length, scenario.ego.width});

  const int future = config.channels - kFirstFutureChannel;
  const double horizon = scenario.gt_path.horizon();
  for (int k = 0; k < future; ++k) {
    const double t = horizon * static_cast<double>(k + 1) / static_cast<double>(future);
    for (const auto& obstacle : scenario.obstacles) paint(kFirstFutureChannel + k, obstacle.at(t));
  }
  return grid;
}

namespace {

Json path_to_json(const Path& path) {
  Json waypoints = Json::array();
  for (const auto& w : path.waypoints) waypoints.push_back({w.x, w.y});
  return Json{{"dt", path.dt}, {"waypoints", std::move(waypoints)}};
}

const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw ParseError(ParseError::Reason::kMissingField, key, std::string("missing field \"") + key + "\"");
  return j.at(key);
}

double number(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (!v.is_number())
    throw ParseError(ParseError::Reason::kInvalidValue, key, std::string("field \"") + key + "\" must be a number");
  return v.get<double>();
}

Path path_from_json(const Json& j) {
  Path path;
  path.dt = number(j, "dt");
  const Json& waypoints = require(j, "waypoints");
  if (!waypoints.is_array())
    throw ParseError(ParseError::Reason::kInvalidValue, "waypoints", "field \"waypoints\" must be an array");
  for (const auto& w : waypoints) {
    if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number())
      throw ParseError(ParseError::Reason::kInvalidValue, "waypoints", "waypoint must be a [x, y] pair");
    path.waypoints.push_back({w[0].get<double>(), w[1].get<double>()});
  }
  return path;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  Json obstacles = Json::array();
  for (const auto& o : s.obstacles) {
    obstacles.push_back({{"cx", o.box.cx},
                         {"cy", o.box.cy},
                         {"heading", o.box.heading},
                         {"length", o.box.length},
                         {"width", o.box.width},
                         {"vx", o.vx},
                         {"vy", o.vy},
                         {"yaw_rate", o.yaw_rate}});
  }
  Json j{{"id", s.id},
         {"seed", s.seed},
         {"ego_dims", {s.ego.length, s.ego.width}},
         {"extent", s.extent},
         {"obstacles", std::move(obstacles)},
         {"gt_path", path_to_json(s.gt_path)}};
  return j.dump();
}

Scenario scenario_from_json(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(ParseError::Reason::kSyntax, "", std::string("malformed scenario JSON: ") + e.what());
  }
  Scenario s;
  const Json& id = require(j, "id");
  if (!id.is_string()) throw ParseError(ParseError::Reason::kInvalidValue, "id", "field \"id\" must be a string");
  s.id = id.get<std::string>();
  const Json& seed = require(j, "seed");
  if (!seed.is_number_unsigned())
    throw ParseError(ParseError::Reason::kInvalidValue, "seed", "field \"seed\" must be an unsigned integer");
  s.seed = seed.get<std::uint64_t>();
  const Json& dims = require(j, "ego_dims");
  if (!dims.is_array() || dims.size() != 2 || !dims[0].is_number() || !dims[1].is_number())
    throw ParseError(ParseError::Reason::kInvalidValue, "ego_dims", "field \"ego_dims\" must be [length, width]");
  s.ego = {dims[0].get<double>(), dims[1].get<double>()};
  s.extent = number(j, "extent");
  const Json& obstacles = require(j, "obstacles");
  if (!obstacles.is_array())
    throw ParseError(ParseError::Reason::kInvalidValue, "obstacles", "field \"obstacles\" must be an array");
  for (const auto& o : obstacles) {
    ObstacleTrack t;
    t.box = {number(o, "cx"), number(o, "cy"), number(o, "heading"), number(o, "length"), number(o, "width")};
    t.vx = number(o, "vx");
    t.vy = number(o, "vy");
    t.yaw_rate = number(o, "yaw_rate");
    s.obstacles.push_back(t);
  }
  s.gt_path = path_from_json(require(j, "gt_path"));
  try {
    validate_path(s.gt_path);
  } catch (const DomainError& e) {
    throw ParseError(ParseError::Reason::kInvalidValue, "gt_path", e.what());
  }
  return s;
}

void write_scenarios(std::ostream& out, const std::vector<Scenario>& scenarios) {
  for (const auto& s : scenarios) out << scenario_to_json(s) << '\n';
}

std::vector<Scenario> read_scenarios(std::istream& in) {
  std::vector<Scenario> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(scenario_from_json(line));
  }
  return out;
}

}  // namespace pathdiff
