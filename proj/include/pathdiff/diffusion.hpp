#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pathdiff/path.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"

namespace pathdiff {

/// Linear beta schedule with cumulative products alpha_bar[i] = prod_{t<=i} (1 - beta[t]).
struct DiffusionSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
};

DiffusionSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

/// Noise level of step i in data scale: sqrt((1 - abar) / abar). Dividing
/// a forward-noised path by sqrt(abar) gives gt + level * eps.
double noise_level(const DiffusionSchedule& schedule, std::size_t i);

/// Reverse-time coordinate of step i: the t with exp(-t) == noise_level(i).
double noise_time(const DiffusionSchedule& schedule, std::size_t i);

/// a' = sqrt(abar_i) * gt + sqrt(1 - abar_i) * eps, eps ~ N(mean_c, std_c^2)
/// i.i.d. per waypoint and coordinate. Requires a fitted noise model.
Path forward_noise(const Path& gt, std::size_t i, const DiffusionSchedule& schedule, const NoiseModel& noise,
                   std::uint64_t seed);

/// Divides every coordinate by sqrt(alpha_bar).
Path to_data_scale(const Path& noised, double alpha_bar);

/// Increasing reverse times t_0 < ... < t_K with sigma(t) = exp(-t).
struct ReverseTimeGrid {
  std::vector<double> t_values;

  std::size_t intervals() const { return t_values.empty() ? 0 : t_values.size() - 1; }
  double sigma(std::size_t k) const;

  /// K uniform intervals on [t_start, t_end].
  static ReverseTimeGrid uniform(std::size_t intervals, double t_start, double t_end);
};

/// Per-coordinate z-scoring with dataset-level statistics.
struct Standardizer {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double std_x = 1.0;
  double std_y = 1.0;

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

Standardizer fit_standardizer(std::span<const Path> paths);
Path standardize(const Path& path, const Standardizer& s);
Path destandardize(const Path& path, const Standardizer& s);

/// One exponential-sigma update with h = t_next - t_now > 0:
/// exp(-h) * noisy + (1 - exp(-h)) * prediction.
Path reverse_step(const Path& noisy, const Path& prediction, double t_now, double t_next);

/// Conditioned clean-path predictor working in standardized coordinates.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Path denoise(const Path& noisy, const BevGrid& bev, const ContextEmbedding& context, double t) const = 0;
  virtual const Standardizer& standardizer() const = 0;
};

/// Runs the reverse loop from a standardized `start` over `grid` and returns
/// the destandardized result. `trace`, when given, receives the standardized
/// iterate after every step (K + 1 entries including the start).
Path sample(const Denoiser& denoiser, const BevGrid& bev, const ContextEmbedding& context, const Path& start,
            const ReverseTimeGrid& grid, std::vector<Path>* trace = nullptr);

}  // namespace pathdiff
