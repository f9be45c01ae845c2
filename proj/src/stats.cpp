#include "pathdiff/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pathdiff/error.hpp"

namespace pathdiff {

std::vector<NoiseSamples> extract_noise(std::span<const Path> proposals, std::span<const Path> ground_truths) {
  if (proposals.size() != ground_truths.size())
    throw AlignmentError("proposal and ground-truth counts differ (" + std::to_string(proposals.size()) + " vs " +
                         std::to_string(ground_truths.size()) + ")");
  std::vector<NoiseSamples> out;
  out.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const Path& p = proposals[i];
    const Path& g = ground_truths[i];
    if (p.size() != g.size())
      throw AlignmentError("path " + std::to_string(i) + ": proposal has " + std::to_string(p.size()) +
                           " waypoints, ground truth " + std::to_string(g.size()));
    NoiseSamples s;
    s.residual_x.reserve(p.size());
    s.residual_y.reserve(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      s.residual_x.push_back(p.waypoints[j].x - g.waypoints[j].x);
      s.residual_y.push_back(p.waypoints[j].y - g.waypoints[j].y);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<NoiseSamples> pool_noise(std::span<const NoiseSamples> noise, std::size_t group) {
  if (group == 0) throw ConfigError("pool size must be at least 1");
  std::vector<NoiseSamples> out;
  for (std::size_t start = 0; start + group <= noise.size(); start += group) {
    NoiseSamples pooled;
    for (std::size_t k = start; k < start + group; ++k) {
      pooled.residual_x.insert(pooled.residual_x.end(), noise[k].residual_x.begin(), noise[k].residual_x.end());
      pooled.residual_y.insert(pooled.residual_y.end(), noise[k].residual_y.begin(), noise[k].residual_y.end());
    }
    out.push_back(std::move(pooled));
  }
  return out;
}

double edf(std::span<const double> samples, double x) {
  if (samples.empty()) throw DomainError("edf of an empty sample");
  const auto count = std::count_if(samples.begin(), samples.end(), [x](double a) { return a <= x; });
  return static_cast<double>(count) / static_cast<double>(samples.size());
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double ks_statistic(std::span<const double> samples, double mean, double std) {
  if (samples.empty()) throw DomainError("ks_statistic of an empty sample");
  if (!(std > 0.0)) throw DegenerateError("ks_statistic needs a positive standard deviation");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = normal_cdf((sorted[i] - mean) / std);
    const double above = static_cast<double>(i + 1) / n - cdf;
    const double below = cdf - static_cast<double>(i) / n;
    d = std::max({d, above, below});
  }
  return d;
}

double kolmogorov_sf(double t) {
  if (!(t > 0.0)) throw DomainError("kolmogorov_sf needs t > 0");
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double kk = static_cast<double>(k);
    const double term = std::exp(-2.0 * kk * kk * t * t);
    sum += (k % 2 == 1) ? term : -term;
    if (term < 1e-12) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double sample_mean(std::span<const double> values) {
  if (values.empty()) throw FittingError("mean of an empty sample");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) throw FittingError("standard deviation needs at least 2 values");
  const double mean = sample_mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

KsResult ks_normality(std::span<const double> samples, double alpha) {
  if (samples.size() < 2) throw DegenerateError("normality test needs at least 2 values");
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi) throw DegenerateError("constant residuals have no spread");
  const double mean = sample_mean(samples);
  const double std = sample_std(samples);
  if (!(std > 0.0)) throw DegenerateError("constant residuals have no spread");
  KsResult r;
  r.n = samples.size();
  r.d_n = ks_statistic(samples, mean, std);
  r.p_value = kolmogorov_sf(std::sqrt(static_cast<double>(r.n)) * r.d_n);
  r.passed = r.p_value >= alpha;
  return r;
}

PathNormality is_normal(const NoiseSamples& noise, double alpha) {
  PathNormality out;
  out.x = ks_normality(noise.residual_x, alpha);
  out.y = ks_normality(noise.residual_y, alpha);
  out.passed = out.x.passed && out.y.passed;
  return out;
}

NoiseModel fit_noise_model(std::span<const NoiseSamples> noise) {
  std::vector<double> xs, ys;
  for (const auto& s : noise) {
    xs.insert(xs.end(), s.residual_x.begin(), s.residual_x.end());
    ys.insert(ys.end(), s.residual_y.begin(), s.residual_y.end());
  }
  if (xs.size() < 2 || ys.size() < 2)
    throw FittingError("noise model needs at least 2 residuals per coordinate, got " + std::to_string(xs.size()));
  NoiseModel model;
  model.mean_x = sample_mean(xs);
  model.mean_y = sample_mean(ys);
  model.std_x = sample_std(xs);
  model.std_y = sample_std(ys);
  model.sample_count = xs.size();
  return model;
}

NormalityReport normality_report(std::span<const NoiseSamples> noise, double alpha,
                                 std::vector<NormalityDetail>* details) {
  if (noise.empty()) throw DomainError("normality report over zero paths");
  NormalityReport report;
  report.total_paths = noise.size();
  if (details) details->clear();
  for (std::size_t i = 0; i < noise.size(); ++i) {
    NormalityDetail d;
    d.path_id = i;
    d.n = noise[i].residual_x.size();
    try {
      d.result = is_normal(noise[i], alpha);
    } catch (const DegenerateError&) {
      d.degenerate = true;
    }
    if (d.result.passed) ++report.passed_paths;
    if (details) details->push_back(d);
  }
  report.pass_percentage =
      100.0 * static_cast<double>(report.passed_paths) / static_cast<double>(report.total_paths);
  return report;
}

}  // namespace pathdiff
