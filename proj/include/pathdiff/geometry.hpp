#pragma once

#include <array>

#include "pathdiff/path.hpp"

namespace pathdiff {

struct OrientedBox {
  double cx = 0.0;
  double cy = 0.0;
  double heading = 0.0;  ///< radians, normalized to (-pi, pi]
  double length = 1.0;   ///< along heading
  double width = 1.0;

  friend bool operator==(const OrientedBox&, const OrientedBox&) = default;
};

double normalize_angle(double angle);

/// Corners in counter-clockwise order starting front-left.
std::array<Waypoint, 4> corners(const OrientedBox& box);

/// Closed point-in-box test.
bool contains(const OrientedBox& box, double x, double y);

/// Minimum projection overlap over the four separating-axis candidates.
/// Positive: penetration depth; zero: touching; negative: separated (the
/// magnitude is then a lower bound on the gap).
double sat_overlap(const OrientedBox& a, const OrientedBox& b);

/// Separating-axis test; touching counts as intersecting.
bool boxes_intersect(const OrientedBox& a, const OrientedBox& b);

}  // namespace pathdiff
