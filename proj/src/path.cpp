#include "pathdiff/path.hpp"

#include <algorithm>
#include <cmath>

#include "pathdiff/error.hpp"

namespace pathdiff {

void validate_path(const Path& path) {
  if (path.waypoints.empty()) throw DomainError("path must contain at least one waypoint");
  if (!(path.dt > 0.0) || !std::isfinite(path.dt)) throw DomainError("path dt must be positive");
  for (const auto& w : path.waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) throw DomainError("path waypoint is not finite");
  }
}

double max_abs_difference(const Path& a, const Path& b) {
  if (a.size() != b.size()) throw AlignmentError("paths differ in length");
  double worst = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    worst = std::max({worst, std::abs(a.waypoints[j].x - b.waypoints[j].x),
                      std::abs(a.waypoints[j].y - b.waypoints[j].y)});
  }
  return worst;
}

}  // namespace pathdiff
