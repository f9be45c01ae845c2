#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pathdiff/path.hpp"

namespace pathdiff {

/// Residuals proposal - ground truth for one path (or a pooled group).
struct NoiseSamples {
  std::vector<double> residual_x;
  std::vector<double> residual_y;
};

struct KsResult {
  double d_n = 0.0;
  double p_value = 0.0;
  std::size_t n = 0;
  bool passed = false;
};

/// Gaussian residual model. A model produced by fit_noise_model has
/// sample_count >= 2; hand-specified mock models leave it at 0.
struct NoiseModel {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double std_x = 0.0;
  double std_y = 0.0;
  std::size_t sample_count = 0;

  bool fitted() const { return sample_count >= 2; }

  static NoiseModel isotropic(double std) { return {0.0, 0.0, std, std, 0}; }
};

struct NormalityReport {
  std::size_t total_paths = 0;
  std::size_t passed_paths = 0;
  double pass_percentage = 0.0;
};

inline constexpr double kDefaultAlpha = 0.05;

/// residual[j] = proposal[j] - gt[j]. Throws AlignmentError on a count or
/// length mismatch.
std::vector<NoiseSamples> extract_noise(std::span<const Path> proposals, std::span<const Path> ground_truths);

/// Concatenates each run of `group` consecutive samples; a trailing partial
/// group is dropped. group = 1 is the identity.
std::vector<NoiseSamples> pool_noise(std::span<const NoiseSamples> noise, std::size_t group);

/// Empirical distribution function (1/n) * #{a_i <= x}.
double edf(std::span<const double> samples, double x);

double normal_cdf(double z);

/// Exact sup |F_n - Phi((x - mean) / std)| over the sorted sample.
double ks_statistic(std::span<const double> samples, double mean, double std);

/// Pr(K > t) for the Kolmogorov distribution; t must be positive.
double kolmogorov_sf(double t);

/// Sample mean and unbiased standard deviation.
double sample_mean(std::span<const double> values);
double sample_std(std::span<const double> values);

/// One-sample KS against a normal with the sample's own mean/std;
/// p = kolmogorov_sf(sqrt(n) * d_n), passed <=> p >= alpha.
/// Throws DegenerateError for constant samples.
KsResult ks_normality(std::span<const double> samples, double alpha);

struct PathNormality {
  KsResult x;
  KsResult y;
  bool passed = false;
};

/// Both coordinates must pass.
PathNormality is_normal(const NoiseSamples& noise, double alpha);

/// Pooled mean and unbiased std per coordinate across all paths.
NoiseModel fit_noise_model(std::span<const NoiseSamples> noise);

struct NormalityDetail {
  std::size_t path_id = 0;
  std::size_t n = 0;
  bool degenerate = false;
  PathNormality result;
};

/// Table-style summary; degenerate paths count as not passed.
NormalityReport normality_report(std::span<const NoiseSamples> noise, double alpha,
                                 std::vector<NormalityDetail>* details = nullptr);

}  // namespace pathdiff
