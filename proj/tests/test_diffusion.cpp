#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pathdiff/diffusion.hpp"
#include "pathdiff/error.hpp"
#include "pathdiff/eval.hpp"
#include "support.hpp"

using namespace pathdiff;

namespace {

NoiseModel fixed_noise(double mean_x, double mean_y, double std_x = 0.0, double std_y = 0.0) {
  return {mean_x, mean_y, std_x, std_y, 2};
}

// Predicts a fixed path in standardized space.
class FixedDenoiser final : public Denoiser {
 public:
  FixedDenoiser(Path target, Standardizer s) : target_(std::move(target)), s_(s) {}
  Path denoise(const Path&, const BevGrid&, const ContextEmbedding&, double) const override { return target_; }
  const Standardizer& standardizer() const override { return s_; }

 private:
  Path target_;
  Standardizer s_;
};

}  // namespace

TEST_CASE("schedule worked examples") {
  const DiffusionSchedule one = make_schedule(1, 0.1, 0.1);
  REQUIRE(one.alpha_bar.size() == 1);
  CHECK(one.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));

  const DiffusionSchedule three = make_schedule(3, 0.1, 0.3);
  CHECK(three.beta[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(three.beta[1] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(three.beta[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(three.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(three.alpha_bar[1] == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(three.alpha_bar[2] == doctest::Approx(0.504).epsilon(1e-15));

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t steps = 1 + rng() % 300;
    const double lo = uniform(rng, 1e-6, 0.1);
    const DiffusionSchedule s = make_schedule(steps, lo, uniform(rng, lo, 0.5));
    double product = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      CHECK(s.beta[i] > 0.0);
      CHECK(s.beta[i] < 1.0);
      product *= 1.0 - s.beta[i];
      CHECK(s.alpha_bar[i] == doctest::Approx(product).epsilon(1e-12));
      CHECK(s.alpha_bar[i] > 0.0);
      CHECK(s.alpha_bar[i] < 1.0);
      if (i > 0) CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
    }
  }

  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule(3, 0.3, 0.1), ConfigError);
  CHECK_THROWS_AS(make_schedule(3, 0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(make_schedule(3, 0.1, 1.0), ConfigError);
}

TEST_CASE("zero-noise forward pass is pure signal scaling") {
  const DiffusionSchedule s = make_schedule(100, 1e-4, 0.02);
  Rng rng(2);
  for (std::size_t i : {0, 1, 50, 99}) {
    const Path gt = testing::random_path(rng);
    const Path noised = forward_noise(gt, i, s, fixed_noise(0.0, 0.0), 5);
    const double scale = std::sqrt(s.alpha_bar[i]);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      CHECK(noised.waypoints[j].x == scale * gt.waypoints[j].x);
      CHECK(noised.waypoints[j].y == scale * gt.waypoints[j].y);
    }
  }
  // beta_start -> 0 limit at i = 0 returns the ground truth.
  const DiffusionSchedule tiny = make_schedule(1, 1e-15, 1e-15);
  const Path gt = testing::random_path(rng);
  CHECK(max_abs_difference(forward_noise(gt, 0, tiny, fixed_noise(0.3, 0.3, 1.0, 1.0), 1), gt) < 1e-6);
}

TEST_CASE("forward pass with a fixed offset") {
  // alpha_bar = 0.5 and eps fixed to (1, 1).
  const DiffusionSchedule s = make_schedule(1, 0.5, 0.5);
  const Path noised = forward_noise(testing::constant_path(2.0, 0.0), 0, s, fixed_noise(1.0, 1.0), 3);
  for (const auto& w : noised.waypoints) {
    CHECK(w.x == doctest::Approx(2.1213203435596424).epsilon(1e-14));
    CHECK(w.y == doctest::Approx(0.7071067811865476).epsilon(1e-14));
  }
}

TEST_CASE("forward pass is seeded and needs a fitted model") {
  const DiffusionSchedule s = make_schedule(100, 1e-4, 0.02);
  Rng rng(3);
  const Path gt = testing::random_path(rng);
  const NoiseModel noise = fixed_noise(0.1, -0.2, 0.5, 0.4);
  CHECK(forward_noise(gt, 40, s, noise, 9) == forward_noise(gt, 40, s, noise, 9));
  CHECK(forward_noise(gt, 40, s, noise, 9) != forward_noise(gt, 40, s, noise, 10));
  CHECK_THROWS_AS(forward_noise(gt, 40, s, NoiseModel::isotropic(0.5), 9), FittingError);
  CHECK_THROWS_AS(forward_noise(gt, 100, s, noise, 9), DomainError);
}

TEST_CASE("data-scale noise level matches the schedule") {
  const DiffusionSchedule s = make_schedule(100, 1e-4, 0.02);
  for (std::size_t i = 0; i < s.steps(); ++i) {
    const double sigma = std::sqrt((1.0 - s.alpha_bar[i]) / s.alpha_bar[i]);
    CHECK(noise_level(s, i) == doctest::Approx(sigma).epsilon(1e-14));
    CHECK(std::exp(-noise_time(s, i)) == doctest::Approx(sigma).epsilon(1e-12));
  }
  const Path x = testing::constant_path(1.0, 2.0);
  const Path d = to_data_scale(x, 0.25);
  CHECK(d.waypoints[0].x == 2.0);
  CHECK(d.waypoints[0].y == 4.0);
}

TEST_CASE("standardizer round-trip and moments") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Path> paths;
    for (int p = 0; p < 50; ++p) paths.push_back(testing::random_path(rng, 6, uniform(rng, 0.5, 30.0)));
    const Standardizer s = fit_standardizer(paths);
    double sx = 0, sy = 0, sxx = 0, syy = 0, n = 0;
    for (const auto& p : paths) {
      const Path z = standardize(p, s);
      CHECK(max_abs_difference(destandardize(z, s), p) < 1e-12);
      for (const auto& w : z.waypoints) {
        sx += w.x;
        sy += w.y;
        sxx += w.x * w.x;
        syy += w.y * w.y;
        n += 1;
      }
    }
    CHECK(std::abs(sx / n) < 1e-9);
    CHECK(std::abs(sy / n) < 1e-9);
    CHECK(std::abs(std::sqrt((sxx - sx * sx / n) / (n - 1)) - 1.0) < 1e-9);
    CHECK(std::abs(std::sqrt((syy - sy * sy / n) / (n - 1)) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(fit_standardizer(std::vector<Path>(3, testing::constant_path(1.0, 1.0))), FittingError);
  CHECK_THROWS_AS(fit_standardizer(std::vector<Path>{testing::random_path(rng)}), FittingError);
}

TEST_CASE("reverse step worked examples") {
  Rng rng(5);
  const Path a = testing::random_path(rng), b = testing::random_path(rng);
  CHECK(max_abs_difference(reverse_step(b, b, 0.0, 0.3), b) < 1e-12);
  CHECK(max_abs_difference(reverse_step(a, b, 1.0, 1.0 + 1e-13), a) < 1e-9);

  const Path half = reverse_step(testing::constant_path(1.0, 0.0), testing::constant_path(0.0, 0.0), 0.2,
                                 0.2 + std::log(2.0));
  for (const auto& w : half.waypoints) {
    CHECK(std::abs(w.x - 0.5) < 1e-12);
    CHECK(w.y == 0.0);
  }
  CHECK_THROWS_AS(reverse_step(a, testing::random_path(rng, 5), 0.0, 1.0), AlignmentError);
  CHECK_THROWS_AS(reverse_step(a, b, 1.0, 1.0), DomainError);
}

TEST_CASE("reverse step is a coordinate-wise convex combination") {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const Path a = testing::random_path(rng), b = testing::random_path(rng);
    const double t0 = uniform(rng, -2.0, 5.0), t1 = t0 + uniform(rng, 1e-6, 4.0);
    const Path c = reverse_step(a, b, t0, t1);
    const double w = std::exp(-(t1 - t0));
    for (std::size_t j = 0; j < a.size(); ++j) {
      CHECK(c.waypoints[j].x >= std::min(a.waypoints[j].x, b.waypoints[j].x) - 1e-12);
      CHECK(c.waypoints[j].x <= std::max(a.waypoints[j].x, b.waypoints[j].x) + 1e-12);
      CHECK(c.waypoints[j].y == doctest::Approx(w * a.waypoints[j].y + (1 - w) * b.waypoints[j].y).epsilon(1e-12));
    }
  }
}

TEST_CASE("reverse time grid") {
  const ReverseTimeGrid g = ReverseTimeGrid::uniform(10, 0.0, 3.0);
  REQUIRE(g.intervals() == 10);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(g.t_values[k + 1] - g.t_values[k] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(g.sigma(k) == doctest::Approx(std::exp(-g.t_values[k])).epsilon(1e-15));
  }
  CHECK(ReverseTimeGrid::uniform(0, 0.0, 3.0).intervals() == 0);
  CHECK_THROWS_AS(ReverseTimeGrid::uniform(3, 1.0, 1.0), ConfigError);
}

TEST_CASE("oracle sampling contracts the error geometrically") {
  Rng rng(7);
  const BevGrid bev;
  const ContextEmbedding context;
  for (int trial = 0; trial < 100; ++trial) {
    const Path gt = testing::random_path(rng), start = testing::random_path(rng);
    const std::size_t k = 1 + rng() % 12;
    const double t0 = uniform(rng, 0.0, 1.0);
    const ReverseTimeGrid grid = ReverseTimeGrid::uniform(k, t0, t0 + uniform(rng, 0.1, 4.0));
    const double total = grid.t_values.back() - grid.t_values.front();
    std::vector<Path> trace;
    const Path out = sample(OracleDenoiser(gt), bev, context, start, grid, &trace);
    CHECK(max_abs_difference(out, gt) <= std::exp(-total) * max_abs_difference(start, gt) + 1e-9);
    for (std::size_t s = 1; s < trace.size(); ++s)
      CHECK(max_abs_difference(trace[s], gt) <= max_abs_difference(trace[s - 1], gt) + 1e-12);
  }
}

TEST_CASE("sampling edge cases") {
  Rng rng(8);
  const Standardizer s{1.0, -2.0, 3.0, 0.5};
  const Path start = testing::random_path(rng);
  const FixedDenoiser denoiser(testing::random_path(rng), s);
  CHECK(sample(denoiser, BevGrid{}, ContextEmbedding{}, start, ReverseTimeGrid::uniform(0, 0.0, 3.0)) ==
        destandardize(start, s));

  const Path gt = testing::random_path(rng);
  std::vector<Path> trace;
  const Path out = sample(OracleDenoiser(gt), BevGrid{}, ContextEmbedding{}, gt, ReverseTimeGrid::uniform(10, 0.0, 3.0), &trace);
  for (const auto& p : trace) CHECK(max_abs_difference(p, gt) < 1e-12);
  CHECK(max_abs_difference(out, gt) < 1e-12);
}
