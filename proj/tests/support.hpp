#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pathdiff/path.hpp"
#include "pathdiff/rng.hpp"

namespace testing {

inline pathdiff::Path random_path(pathdiff::Rng& rng, std::size_t n = pathdiff::kDefaultHorizon, double scale = 10.0) {
  pathdiff::Path p;
  for (std::size_t j = 0; j < n; ++j) p.waypoints.push_back({pathdiff::uniform(rng, -scale, scale), pathdiff::uniform(rng, -scale, scale)});
  return p;
}

inline pathdiff::Path constant_path(double x, double y, std::size_t n = pathdiff::kDefaultHorizon) {
  pathdiff::Path p;
  p.waypoints.assign(n, {x, y});
  return p;
}

// Inverse of the standard normal CDF by bisection on erfc.
inline double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pathdiff-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
