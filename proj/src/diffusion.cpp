#include "pathdiff/diffusion.hpp"

#include <cmath>

#include "pathdiff/error.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

DiffusionSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double product = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    product *= 1.0 - s.beta[i];
    s.alpha_bar[i] = product;
  }
  return s;
}

double noise_level(const DiffusionSchedule& schedule, std::size_t i) {
  if (i >= schedule.steps()) throw DomainError("timestep beyond schedule");
  const double abar = schedule.alpha_bar[i];
  return std::sqrt((1.0 - abar) / abar);
}

double noise_time(const DiffusionSchedule& schedule, std::size_t i) { return -std::log(noise_level(schedule, i)); }

Path forward_noise(const Path& gt, std::size_t i, const DiffusionSchedule& schedule, const NoiseModel& noise,
                   std::uint64_t seed) {
  if (i >= schedule.steps()) throw DomainError("timestep " + std::to_string(i) + " beyond schedule");
  if (!noise.fitted()) throw FittingError("forward noising needs a fitted noise model");
  const double signal = std::sqrt(schedule.alpha_bar[i]);
  const double spread = std::sqrt(1.0 - schedule.alpha_bar[i]);
  Rng rng(seed);
  Path out = gt;
  for (auto& w : out.waypoints) {
    const double ex = noise.mean_x + noise.std_x * standard_normal(rng);
    const double ey = noise.mean_y + noise.std_y * standard_normal(rng);
    w.x = signal * w.x + spread * ex;
    w.y = signal * w.y + spread * ey;
  }
  return out;
}

Path to_data_scale(const Path& noised, double alpha_bar) {
  const double inv = 1.0 / std::sqrt(alpha_bar);
  Path out = noised;
  for (auto& w : out.waypoints) {
    w.x *= inv;
    w.y *= inv;
  }
  return out;
}

double ReverseTimeGrid::sigma(std::size_t k) const { return std::exp(-t_values.at(k)); }

ReverseTimeGrid ReverseTimeGrid::uniform(std::size_t intervals, double t_start, double t_end) {
  if (intervals > 0 && !(t_end > t_start)) throw ConfigError("reverse grid needs t_end > t_start");
  ReverseTimeGrid grid;
  grid.t_values.resize(intervals + 1);
  for (std::size_t k = 0; k <= intervals; ++k) {
    grid.t_values[k] = intervals == 0 ? t_start
                                      : t_start + (t_end - t_start) * static_cast<double>(k) /
                                                      static_cast<double>(intervals);
  }
  return grid;
}

Standardizer fit_standardizer(std::span<const Path> paths) {
  if (paths.size() < 2) throw FittingError("standardizer needs at least 2 paths");
  std::vector<double> xs, ys;
  for (const auto& p : paths) {
    for (const auto& w : p.waypoints) {
      xs.push_back(w.x);
      ys.push_back(w.y);
    }
  }
  Standardizer s;
  s.mean_x = sample_mean(xs);
  s.mean_y = sample_mean(ys);
  s.std_x = sample_std(xs);
  s.std_y = sample_std(ys);
  if (!(s.std_x > 0.0) || !(s.std_y > 0.0)) throw FittingError("standardizer: zero variance in a coordinate");
  return s;
}

Path standardize(const Path& path, const Standardizer& s) {
  Path out = path;
  for (auto& w : out.waypoints) {
    w.x = (w.x - s.mean_x) / s.std_x;
    w.y = (w.y - s.mean_y) / s.std_y;
  }
  return out;
}

Path destandardize(const Path& path, const Standardizer& s) {
  Path out = path;
  for (auto& w : out.waypoints) {
    w.x = w.x * s.std_x + s.mean_x;
    w.y = w.y * s.std_y + s.mean_y;
  }
  return out;
}

Path reverse_step(const Path& noisy, const Path& prediction, double t_now, double t_next) {
  if (noisy.size() != prediction.size()) throw AlignmentError("reverse_step: path lengths differ");
  const double h = t_next - t_now;
  if (!(h > 0.0)) throw DomainError("reverse_step needs t_next > t_now");
  // sigma(t_next) / sigma(t_now) == exp(-h)
  // Written as prediction + keep * (noisy - prediction) so equal inputs are
  // an exact fixed point.
  const double keep = std::exp(-h);
  Path out = noisy;
  for (std::size_t j = 0; j < out.size(); ++j) {
    out.waypoints[j].x = prediction.waypoints[j].x + keep * (noisy.waypoints[j].x - prediction.waypoints[j].x);
    out.waypoints[j].y = prediction.waypoints[j].y + keep * (noisy.waypoints[j].y - prediction.waypoints[j].y);
  }
  return out;
}

Path sample(const Denoiser& denoiser, const BevGrid& bev, const ContextEmbedding& context, const Path& start,
            const ReverseTimeGrid& grid, std::vector<Path>* trace) {
  Path current = start;
  if (trace) {
    trace->clear();
    trace->push_back(current);
  }
  for (std::size_t k = 0; k < grid.intervals(); ++k) {
    const Path prediction = denoiser.denoise(current, bev, context, grid.t_values[k]);
    current = reverse_step(current, prediction, grid.t_values[k], grid.t_values[k + 1]);
    if (trace) trace->push_back(current);
  }
  return destandardize(current, denoiser.standardizer());
}

}  // namespace pathdiff
