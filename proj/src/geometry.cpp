#include "pathdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "pathdiff/error.hpp"

namespace pathdiff {

namespace {

// Boundary tolerance for the touching-inclusive test.
constexpr double kTouchTolerance = 1e-12;

struct Axes {
  double ux, uy;  // along length
  double vx, vy;  // along width
};

Axes axes_of(const OrientedBox& box) {
  const double c = std::cos(box.heading);
  const double s = std::sin(box.heading);
  return {c, s, -s, c};
}

double half_extent(const OrientedBox& box, const Axes& ax, double dx, double dy) {
  return 0.5 * box.length * std::abs(ax.ux * dx + ax.uy * dy) +
         0.5 * box.width * std::abs(ax.vx * dx + ax.vy * dy);
}

}  // namespace

double normalize_angle(double angle) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  angle = std::fmod(angle, kTwoPi);
  if (angle <= -std::numbers::pi) angle += kTwoPi;
  if (angle > std::numbers::pi) angle -= kTwoPi;
  return angle;
}

std::array<Waypoint, 4> corners(const OrientedBox& box) {
  const Axes ax = axes_of(box);
  const double hl = 0.5 * box.length;
  const double hw = 0.5 * box.width;
  auto at = [&](double a, double b) {
    return Waypoint{box.cx + a * ax.ux + b * ax.vx, box.cy + a * ax.uy + b * ax.vy};
  };
  return {at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)};
}

bool contains(const OrientedBox& box, double x, double y) {
  const Axes ax = axes_of(box);
  const double dx = x - box.cx;
  const double dy = y - box.cy;
  const double u = dx * ax.ux + dy * ax.uy;
  const double v = dx * ax.vx + dy * ax.vy;
  return std::abs(u) <= 0.5 * box.length && std::abs(v) <= 0.5 * box.width;
}

double sat_overlap(const OrientedBox& a, const OrientedBox& b) {
  const Axes axa = axes_of(a);
  const Axes axb = axes_of(b);
  const double dx = b.cx - a.cx;
  const double dy = b.cy - a.cy;
  const std::array<std::array<double, 2>, 4> candidates = {
      {{axa.ux, axa.uy}, {axa.vx, axa.vy}, {axb.ux, axb.uy}, {axb.vx, axb.vy}}};
  double overlap = std::numeric_limits<double>::infinity();
  for (const auto& axis : candidates) {
    const double ra = half_extent(a, axa, axis[0], axis[1]);
    const double rb = half_extent(b, axb, axis[0], axis[1]);
    const double distance = std::abs(dx * axis[0] + dy * axis[1]);
    overlap = std::min(overlap, ra + rb - distance);
  }
  return overlap;
}

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) {
  return sat_overlap(a, b) >= -kTouchTolerance;
}

}  // namespace pathdiff
