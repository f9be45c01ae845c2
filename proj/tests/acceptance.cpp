// Acceptance checks. Prints one PASS/FAIL line per criterion; `--only N`
// runs a single criterion. Exit status is non-zero when any selected
// criterion fails.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "pathdiff/eval.hpp"
#include "pathdiff/stats.hpp"
#include "support.hpp"

using namespace pathdiff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buffer[512];
  std::snprintf(buffer, sizeof buffer, format, args...);
  return buffer;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

Outcome ks_oracles() {
  const auto start = std::chrono::steady_clock::now();
  double sf_error = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double t = 0.2 + 4.8 * i / 49.0;
    double reference = 0.0;
    for (int k = 1; k <= 500; ++k) reference += (k % 2 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * t * t);
    sf_error = std::max(sf_error, std::abs(kolmogorov_sf(t) - std::clamp(reference, 0.0, 1.0)));
  }
  Rng rng(101);
  double d_error = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(5 + rng() % 60);
    for (auto& x : s) x = trial % 2 ? standard_normal(rng) : uniform(rng, -1.0, 1.0);
    const double mean = sample_mean(s), std = sample_std(s);
    std::sort(s.begin(), s.end());
    const double lo = s.front() - 3 * std, hi = s.back() + 3 * std;
    double oracle = 0.0;
    for (int g = 0; g < 100000; ++g) {
      const double x = lo + (hi - lo) * g / 99999.0;
      const double f = static_cast<double>(std::upper_bound(s.begin(), s.end(), x) - s.begin()) / s.size();
      oracle = std::max(oracle, std::abs(f - phi((x - mean) / std)));
    }
    // The grid misses the exact jump points; add both one-sided limits there.
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double f = phi((s[i] - mean) / std);
      oracle = std::max({oracle, std::abs(static_cast<double>(i) / s.size() - f),
                         std::abs(static_cast<double>(i + 1) / s.size() - f)});
    }
    d_error = std::max(d_error, std::abs(ks_statistic(s, mean, std) - oracle));
  }
  const double elapsed = seconds_since(start);
  return {sf_error < 1e-10 && d_error < 1e-6 && elapsed < 10.0,
          fmt("sf max error %.3g (< 1e-10), D_n max error %.3g (< 1e-6), %.2f s (< 10 s)", sf_error, d_error, elapsed)};
}

// Mock proposals of 8-waypoint paths, 8 proposals pooled per test unit, so
// each unit holds 64 residuals per coordinate.
double pooled_pass_percentage(const std::function<double(Rng&)>& residual, std::uint64_t seed) {
  ScenarioConfig config;
  config.horizon = 8;
  const auto scenarios = generate_scenarios(16000, seed, config);
  Rng rng(seed + 1);
  std::vector<Path> proposals, truths;
  for (const auto& s : scenarios) {
    Path p = s.gt_path;
    for (auto& w : p.waypoints) {
      w.x += residual(rng);
      w.y += residual(rng);
    }
    proposals.push_back(std::move(p));
    truths.push_back(s.gt_path);
  }
  const auto pooled = pool_noise(extract_noise(proposals, truths), 8);
  return normality_report(pooled, kDefaultAlpha).pass_percentage;
}

Outcome table_one_analog() {
  const auto start = std::chrono::steady_clock::now();
  const double gaussian = pooled_pass_percentage([](Rng& r) { return 0.5 * standard_normal(r); }, 201);
  // Uniform with the same standard deviation (half-width 0.5 * sqrt(3)).
  const double half = 0.5 * std::sqrt(3.0);
  const double flat = pooled_pass_percentage([half](Rng& r) { return uniform(r, -half, half); }, 202);
  const double elapsed = seconds_since(start);
  const bool pass = gaussian >= 92.0 && gaussian <= 98.0 && gaussian - flat >= 20.0 && elapsed < 30.0;
  return {pass, fmt("Gaussian %.2f%% (need 92..98), uniform %.2f%% (need <= %.2f%%), %.1f s", gaussian, flat,
                    gaussian - 20.0, elapsed)};
}

Outcome diffusion_contracts() {
  Rng rng(301);
  const DiffusionSchedule schedule = make_schedule(100, 1e-4, 0.02);
  bool exact = true;
  for (std::size_t i = 0; i < 100; i += 7) {
    const Path gt = testing::random_path(rng);
    const Path noised = forward_noise(gt, i, schedule, NoiseModel{0, 0, 0, 0, 2}, i);
    const double scale = std::sqrt(schedule.alpha_bar[i]);
    for (std::size_t j = 0; j < gt.size(); ++j)
      exact = exact && noised.waypoints[j].x == scale * gt.waypoints[j].x && noised.waypoints[j].y == scale * gt.waypoints[j].y;
  }
  double step_error = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Path a = testing::random_path(rng), b = testing::random_path(rng);
    step_error = std::max(step_error, max_abs_difference(reverse_step(b, b, 0.0, 0.3), b));
    step_error = std::max(step_error, max_abs_difference(reverse_step(a, b, 0.5, 0.5 + 1e-14), a));
    const Path half = reverse_step(a, b, 0.1, 0.1 + std::log(2.0));
    for (std::size_t j = 0; j < a.size(); ++j) {
      step_error = std::max(step_error, std::abs(half.waypoints[j].x - 0.5 * (a.waypoints[j].x + b.waypoints[j].x)));
      step_error = std::max(step_error, std::abs(half.waypoints[j].y - 0.5 * (a.waypoints[j].y + b.waypoints[j].y)));
    }
  }
  double contraction_excess = -1e300;
  for (int trial = 0; trial < 200; ++trial) {
    const Path gt = testing::random_path(rng), start = testing::random_path(rng);
    const ReverseTimeGrid grid = ReverseTimeGrid::uniform(1 + rng() % 15, 0.0, uniform(rng, 0.1, 5.0));
    const Path out = sample(OracleDenoiser(gt), BevGrid{}, ContextEmbedding{}, start, grid);
    const double expected = std::exp(-grid.t_values.back()) * max_abs_difference(start, gt);
    contraction_excess = std::max(contraction_excess, std::abs(max_abs_difference(out, gt) - expected));
  }
  return {exact && step_error <= 1e-12 && contraction_excess <= 1e-9,
          fmt("zero-noise forward bit-exact: %s; reverse-step max error %.3g (<= 1e-12); contraction deviation %.3g "
              "(<= 1e-9)",
              exact ? "yes" : "no", step_error, contraction_excess)};
}

Outcome gradient_check() {
  const auto start = std::chrono::steady_clock::now();
  const double error = grad_check(DenoiserConfig{}, 1e-5, 401, 200);
  const double elapsed = seconds_since(start);
  return {error < 1e-4 && elapsed < 60.0,
          fmt("max relative error %.3g over 200 parameters (< 1e-4), %.1f s (< 60 s)", error, elapsed)};
}

constexpr std::size_t kEndToEndSteps = 6000;

Outcome end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  RunConfig config;
  config.training.steps = kEndToEndSteps;
  const auto all = generate_scenarios(2500, 501, config.scenario);
  const std::span<const Scenario> scenarios(all);
  const auto train_s = scenarios.first(2000), test_s = scenarios.last(500);
  const auto train_r = mock_responses(train_s, NoiseModel::isotropic(0.5), 502, 1);
  const auto test_r = mock_responses(test_s, NoiseModel::isotropic(0.5), 503, 1);
  const NoiseModel noise = fit_noise_from_responses(train_s, train_r);
  std::vector<LossRecord> curve;
  const TransformerDenoiser model = train_denoiser(config, config.denoiser, train_s, train_r, noise, 504, &curve);
  EvalOptions options;
  options.grid = config.grid;
  options.reverse = config.reverse;
  options.context_seed = config.training.context_seed;
  options.d_model = config.denoiser.d_model;
  const EvalResult r = run_eval(&model, test_s, test_r, options);
  const double elapsed = seconds_since(start);
  const double reduction = 1.0 - r.sampled.l2_avg / r.proposal.l2_avg;
  const bool pass = reduction >= 0.30 && r.sampled.coll_avg <= r.proposal.coll_avg && elapsed <= 900.0;
  auto window = [&](std::size_t from) {
    double sum = 0.0;
    for (std::size_t i = from; i < from + 100; ++i) sum += curve[i].loss.total;
    return sum / 100.0;
  };
  return {pass, fmt("%zu steps; avg L2 sampled %.4f vs proposal %.4f (%.1f%% lower, need >= 30%%); collision "
                    "sampled %.3f%% vs proposal %.3f%%; loss %.4g -> %.4g; %.0f s (<= 900 s)",
                    kEndToEndSteps, r.sampled.l2_avg, r.proposal.l2_avg, 100.0 * reduction, r.sampled.coll_avg,
                    r.proposal.coll_avg, window(0), window(curve.size() - 100), elapsed)};
}

Outcome ablation_direction() {
  RunConfig config;
  config.training.steps = 1500;
  const auto all = generate_scenarios(1300, 601, config.scenario);
  const std::span<const Scenario> scenarios(all);
  const auto train_s = scenarios.first(1000), test_s = scenarios.last(300);
  const auto train_r = mock_responses(train_s, NoiseModel::isotropic(0.5), 602, 1);
  const auto test_r = mock_responses(test_s, NoiseModel::isotropic(0.5), 603, 1);
  const NoiseModel noise = fit_noise_from_responses(train_s, train_r);
  const std::vector<AblationFlags> rows{ablation_flags("all"), ablation_flags("no-tse")};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto table = ablation_run(config, rows, seeds, train_s, train_r, test_s, test_r, noise);
  std::vector<double> full, no_tse;
  for (const auto& row : table) (row.flags.use_tse ? full : no_tse).push_back(row.l2_avg);
  std::sort(full.begin(), full.end());
  std::sort(no_tse.begin(), no_tse.end());
  return {full[1] <= no_tse[1],
          fmt("median avg L2 all flags %.4f [%.4f %.4f %.4f] vs no-TSE %.4f [%.4f %.4f %.4f]", full[1], full[0], full[1],
              full[2], no_tse[1], no_tse[0], no_tse[1], no_tse[2])};
}

bool inside(const OrientedBox& b, double x, double y) {
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double u = (x - b.cx) * c + (y - b.cy) * s, v = -(x - b.cx) * s + (y - b.cy) * c;
  return std::abs(u) <= 0.5 * b.length + 1e-12 && std::abs(v) <= 0.5 * b.width + 1e-12;
}

bool sampled_intersect(const OrientedBox& a, const OrientedBox& b) {
  for (int which = 0; which < 2; ++which) {
    const OrientedBox& p = which ? b : a;
    const OrientedBox& q = which ? a : b;
    const double c = std::cos(p.heading), s = std::sin(p.heading);
    for (int i = 0; i < 200; ++i)
      for (int j = 0; j < 200; ++j) {
        const double u = p.length * (i / 199.0 - 0.5), v = p.width * (j / 199.0 - 0.5);
        if (inside(q, p.cx + u * c - v * s, p.cy + u * s + v * c)) return true;
      }
  }
  return false;
}

// Penetration (positive) or gap (negative) along the best of the four axes.
double boundary_margin(const OrientedBox& a, const OrientedBox& b) {
  double best = 1e300;
  for (double h : {a.heading, a.heading + std::numbers::pi / 2, b.heading, b.heading + std::numbers::pi / 2}) {
    const double ux = std::cos(h), uy = std::sin(h);
    auto extent = [&](const OrientedBox& box, double& lo, double& hi) {
      const double centre = box.cx * ux + box.cy * uy;
      const double c = std::cos(box.heading - h), s = std::sin(box.heading - h);
      const double r = 0.5 * box.length * std::abs(c) + 0.5 * box.width * std::abs(s);
      lo = centre - r;
      hi = centre + r;
    };
    double alo, ahi, blo, bhi;
    extent(a, alo, ahi);
    extent(b, blo, bhi);
    best = std::min(best, std::min(ahi, bhi) - std::max(alo, blo));
  }
  return best;
}

Outcome collision_equivalence() {
  Rng rng(701);
  int compared = 0, agree = 0, excluded = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto box = [&] {
      return OrientedBox{uniform(rng, -2.5, 2.5), uniform(rng, -2.5, 2.5), normalize_angle(uniform(rng, -4.0, 4.0)),
                         uniform(rng, 0.3, 4.0), uniform(rng, 0.3, 4.0)};
    };
    const OrientedBox a = box(), b = box();
    if (std::abs(boundary_margin(a, b)) < 1e-6) {
      ++excluded;
      continue;
    }
    ++compared;
    agree += boxes_intersect(a, b) == sampled_intersect(a, b);
  }
  return {agree == compared, fmt("%d/%d pairs agree (%d inside the 1e-6 band excluded)", agree, compared, excluded)};
}

int run_cli(const fs::path& dir, const std::string& args) {
  const std::string command = "cd '" + dir.string() + "' && '" + PATHDIFF_CLI_PATH + "' " + args + " 2>>stderr.txt";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
  const std::string small =
      "--seed 7 --set denoiser.d_model=16 --set denoiser.layers=1 --set denoiser.heads=2 --set training.batch_size=8 ";
  const std::vector<std::pair<std::string, std::string>> stages{
      {"gen --count 60 --out scenarios.jsonl", "scenarios.jsonl"},
      {"propose --scenarios scenarios.jsonl --out responses.jsonl", "responses.jsonl"},
      {"ks-verify --scenarios scenarios.jsonl --responses responses.jsonl --pool 4 --out ks.csv", "ks.csv"},
      {"fit-noise --scenarios scenarios.jsonl --responses responses.jsonl --out noise.json", "noise.json"},
      {"train --scenarios scenarios.jsonl --responses responses.jsonl --noise noise.json --steps 30 --out model.bin "
       "--loss loss.csv",
       "model.bin"},
      {"sample --model model.bin --scenarios scenarios.jsonl --responses responses.jsonl --out sampled.jsonl",
       "sampled.jsonl"},
      {"eval --model model.bin --scenarios scenarios.jsonl --responses responses.jsonl --out report.csv",
       "report.csv"},
      {"ablate --scenarios scenarios.jsonl --responses responses.jsonl --noise noise.json --rows all,no-tse "
       "--seeds 1,2 --holdout 20 --steps 10 --out ablation.csv",
       "ablation.csv"},
  };
  std::vector<fs::path> dirs;
  for (const char* name : {"run-a", "run-b", "run-c"}) dirs.push_back(testing::scratch_dir(std::string("accept-") + name));
  int identical = 0, failures = 0;
  std::string mismatched;
  for (const auto& [args, output] : stages) {
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      // The third run uses more worker threads; outputs must not change.
      if (run_cli(dirs[d], small + (d == 2 ? "--jobs 3 " : "") + args) != 0) ++failures;
    }
    const std::string first = testing::read_file(dirs[0] / output);
    const bool same = !first.empty() && first == testing::read_file(dirs[1] / output) &&
                      first == testing::read_file(dirs[2] / output);
    identical += same;
    if (!same) mismatched += " " + output;
    if (output == "model.bin" && testing::read_file(dirs[0] / "loss.csv") != testing::read_file(dirs[1] / "loss.csv"))
      mismatched += " loss.csv";
  }
  const bool pass = failures == 0 && mismatched.empty();
  return {pass, fmt("%d/%zu stage outputs byte-identical across 3 runs (one with --jobs 3), %d failed invocations%s%s",
                    identical, stages.size(), failures, mismatched.empty() ? "" : "; differing:", mismatched.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") only = std::atoi(argv[i + 1]);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"KS oracle equivalence", ks_oracles},
      {"normality pass-rate analog", table_one_analog},
      {"forward/reverse diffusion contracts", diffusion_contracts},
      {"gradient correctness", gradient_check},
      {"end-to-end desk-scale experiment", end_to_end},
      {"ablation direction (TSE)", ablation_direction},
      {"collision-checker equivalence", collision_equivalence},
      {"CLI determinism", cli_determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (only != 0 && only != number) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s - %s\n", number, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
