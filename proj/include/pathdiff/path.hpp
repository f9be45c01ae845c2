#pragma once

#include <cstddef>
#include <vector>

namespace pathdiff {

/// Ego-frame point: x forward, y left, meters.
struct Waypoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

/// Waypoint j sits at time (j + 1) * dt; the ego is at the origin at t = 0.
struct Path {
  std::vector<Waypoint> waypoints;
  double dt = 0.5;

  std::size_t size() const { return waypoints.size(); }
  double horizon() const { return dt * static_cast<double>(waypoints.size()); }

  friend bool operator==(const Path&, const Path&) = default;
};

inline constexpr std::size_t kDefaultHorizon = 6;
inline constexpr double kDefaultDt = 0.5;

/// Throws DomainError unless n >= 1, dt > 0 and every coordinate is finite.
void validate_path(const Path& path);

/// Largest coordinate-wise absolute difference. Paths must have equal length.
double max_abs_difference(const Path& a, const Path& b);

}  // namespace pathdiff
