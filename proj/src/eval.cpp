#include "pathdiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "pathdiff/error.hpp"
#include "pathdiff/parallel.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

std::size_t horizon_index(const Path& path, double seconds) {
  if (!(path.dt > 0.0)) throw ConfigError("path dt must be positive");
  const double steps = seconds / path.dt;
  const double rounded = std::round(steps);
  if (rounded < 1.0 || std::abs(steps - rounded) > 1e-9)
    throw ConfigError("horizon " + std::to_string(seconds) + " s is not on the waypoint grid (dt = " +
                      std::to_string(path.dt) + ")");
  const auto index = static_cast<std::size_t>(rounded) - 1;
  if (index >= path.size())
    throw ConfigError("horizon " + std::to_string(seconds) + " s lies beyond the path (" +
                      std::to_string(path.size()) + " waypoints)");
  return index;
}

HorizonL2 l2_at_horizons(const Path& prediction, const Path& gt, L2Mode mode) {
  if (prediction.size() != gt.size()) throw AlignmentError("l2: path lengths differ");
  std::vector<double> dist(gt.size());
  for (std::size_t j = 0; j < gt.size(); ++j) {
    dist[j] = std::hypot(prediction.waypoints[j].x - gt.waypoints[j].x, prediction.waypoints[j].y - gt.waypoints[j].y);
  }
  std::array<double, 3> values{};
  for (std::size_t h = 0; h < kEvalHorizons.size(); ++h) {
    const std::size_t idx = horizon_index(gt, kEvalHorizons[h]);
    if (mode == L2Mode::kPoint) {
      values[h] = dist[idx];
    } else {
      double sum = 0.0;
      for (std::size_t j = 0; j <= idx; ++j) sum += dist[j];
      values[h] = sum / static_cast<double>(idx + 1);
    }
  }
  return {values[0], values[1], values[2], (values[0] + values[1] + values[2]) / 3.0};
}

bool collides(const Path& path, const Scenario& scenario, double horizon_s) {
  const std::size_t last = horizon_index(path, horizon_s);
  const auto boxes = ego_placements(path, scenario.ego);
  for (std::size_t j = 0; j <= last; ++j) {
    const double t = static_cast<double>(j + 1) * path.dt;
    for (const auto& obstacle : scenario.obstacles) {
      if (boxes_intersect(boxes[j], obstacle.at(t))) return true;
    }
  }
  return false;
}

double collision_rate(std::span<const Path> paths, std::span<const Scenario> scenarios, double horizon_s) {
  if (paths.size() != scenarios.size()) throw AlignmentError("collision_rate: path and scenario counts differ");
  if (paths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < paths.size(); ++i) hits += collides(paths[i], scenarios[i], horizon_s) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(paths.size());
}

double collision_rate(const Path& path, const Scenario& scenario, double horizon_s) {
  return collides(path, scenario, horizon_s) ? 100.0 : 0.0;
}

EvalReport make_report(std::span<const Path> paths, std::span<const Scenario> scenarios, L2Mode mode) {
  if (paths.size() != scenarios.size()) throw AlignmentError("report: path and scenario counts differ");
  EvalReport r;
  r.scenario_count = paths.size();
  if (paths.empty()) return r;
  std::array<std::size_t, 3> hits{};
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const HorizonL2 l2 = l2_at_horizons(paths[i], scenarios[i].gt_path, mode);
    r.l2_1s += l2.l2_1s;
    r.l2_2s += l2.l2_2s;
    r.l2_3s += l2.l2_3s;
    for (std::size_t h = 0; h < kEvalHorizons.size(); ++h) {
      hits[h] += collides(paths[i], scenarios[i], kEvalHorizons[h]) ? 1 : 0;
    }
  }
  const double n = static_cast<double>(paths.size());
  r.l2_1s /= n;
  r.l2_2s /= n;
  r.l2_3s /= n;
  r.l2_avg = (r.l2_1s + r.l2_2s + r.l2_3s) / 3.0;
  r.coll_1s = 100.0 * static_cast<double>(hits[0]) / n;
  r.coll_2s = 100.0 * static_cast<double>(hits[1]) / n;
  r.coll_3s = 100.0 * static_cast<double>(hits[2]) / n;
  r.coll_avg = (r.coll_1s + r.coll_2s + r.coll_3s) / 3.0;
  return r;
}

EvalResult run_eval(const Denoiser* model, std::span<const Scenario> scenarios,
                    std::span<const StructuredResponse> responses, const EvalOptions& options) {
  if (scenarios.size() != responses.size())
    throw AlignmentError("eval: " + std::to_string(scenarios.size()) + " scenarios but " +
                         std::to_string(responses.size()) + " responses");
  const ContextEncoder encoder(options.context_seed, options.d_model);
  const ReverseTimeGrid grid =
      ReverseTimeGrid::uniform(options.reverse.intervals, options.reverse.t_start, options.reverse.t_end);

  EvalResult result;
  result.sampled_paths.resize(scenarios.size());
  std::vector<Path> proposals(scenarios.size());
  parallel_for(scenarios.size(), options.jobs, [&](std::size_t i) {
    const Scenario& scenario = scenarios[i];
    const StructuredResponse& response = responses[i];
    if (response.scenario_id != scenario.id)
      throw AlignmentError("response " + std::to_string(i) + " refers to scenario \"" + response.scenario_id +
                           "\", expected \"" + scenario.id + "\"");
    if (response.proposed_path.size() != scenario.gt_path.size())
      throw AlignmentError("response for \"" + scenario.id + "\" has the wrong path length");
    proposals[i] = response.proposed_path;
    const BevGrid bev = rasterize_bev(scenario, options.grid);
    const ContextEmbedding context = encoder.encode(response);
    if (model) {
      const Path start = standardize(response.proposed_path, model->standardizer());
      result.sampled_paths[i] = sample(*model, bev, context, start, grid);
    } else {
      const OracleDenoiser oracle(scenario.gt_path);
      result.sampled_paths[i] = sample(oracle, bev, context, response.proposed_path, grid);
    }
  });
  result.sampled = make_report(result.sampled_paths, scenarios, options.l2_mode);
  result.proposal = make_report(proposals, scenarios, options.l2_mode);
  return result;
}

std::vector<StructuredResponse> mock_responses(std::span<const Scenario> scenarios, const NoiseModel& noise,
                                               std::uint64_t seed, int jobs) {
  std::vector<StructuredResponse> out(scenarios.size());
  parallel_for(scenarios.size(), jobs,
               [&](std::size_t i) { out[i] = propose(scenarios[i], noise, derive_seed(seed, 0x9e0905e, i)); });
  return out;
}

NoiseModel fit_noise_from_responses(std::span<const Scenario> scenarios,
                                    std::span<const StructuredResponse> responses) {
  if (scenarios.size() != responses.size()) throw AlignmentError("noise fit: scenario and response counts differ");
  std::vector<Path> proposals, truths;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (responses[i].scenario_id != scenarios[i].id)
      throw AlignmentError("response " + std::to_string(i) + " refers to scenario \"" + responses[i].scenario_id +
                           "\", expected \"" + scenarios[i].id + "\"");
    proposals.push_back(responses[i].proposed_path);
    truths.push_back(scenarios[i].gt_path);
  }
  const auto noise = extract_noise(proposals, truths);
  return fit_noise_model(noise);
}

namespace {

std::vector<TrainingExample> training_set(const RunConfig& config, const DenoiserConfig& model_config,
                                          std::span<const Scenario> scenarios,
                                          std::span<const StructuredResponse> responses, const NoiseModel& noise,
                                          std::uint64_t seed) {
  const DiffusionSchedule schedule =
      make_schedule(config.schedule.steps, config.schedule.beta_start, config.schedule.beta_end);
  TrainingSetOptions options;
  options.per_scenario = config.training.per_scenario;
  options.context_seed = config.training.context_seed;
  options.seed = derive_seed(seed, 0xda7a);
  options.jobs = config.jobs;
  return build_training_set(scenarios, responses, noise, schedule, config.grid, model_config, options);
}

}  // namespace

TransformerDenoiser train_denoiser(const RunConfig& config, const DenoiserConfig& model_config,
                                   std::span<const Scenario> scenarios, std::span<const StructuredResponse> responses,
                                   const NoiseModel& noise, std::uint64_t seed, std::vector<LossRecord>* curve) {
  const auto examples = training_set(config, model_config, scenarios, responses, noise, seed);
  TransformerDenoiser model(model_config, fit_standardizer(std::span<const TrainingExample>(examples)),
                            derive_seed(seed, 0x1417));
  auto losses = train(model, examples, to_optimizer(config.training, derive_seed(seed, 0x54f1), config.jobs));
  if (curve) *curve = std::move(losses);
  return model;
}

std::vector<LossRecord> resume_training(TransformerDenoiser& model, const RunConfig& config,
                                        std::span<const Scenario> scenarios,
                                        std::span<const StructuredResponse> responses, const NoiseModel& noise,
                                        std::uint64_t seed) {
  const auto examples = training_set(config, model.config(), scenarios, responses, noise, seed);
  return train(model, examples, to_optimizer(config.training, derive_seed(seed, 0x54f1), config.jobs));
}

AblationFlags ablation_flags(const std::string& name) {
  AblationFlags f;
  f.name = name;
  if (name == "all") return f;
  if (name == "no-tse") {
    f.use_tse = false;
  } else if (name == "no-caf") {
    f.use_caf = false;
  } else if (name == "no-cap") {
    f.use_cap = false;
  } else if (name == "no-bfc") {
    f.use_bfc = false;
  } else if (name == "none") {
    f.use_tse = f.use_caf = f.use_cap = f.use_bfc = false;
  } else {
    throw ConfigError("unknown ablation row \"" + name + "\" (expected all, no-tse, no-caf, no-cap, no-bfc, none)");
  }
  return f;
}

std::vector<AblationRow> ablation_run(const RunConfig& config, std::span<const AblationFlags> rows,
                                      std::span<const std::uint64_t> seeds, std::span<const Scenario> train_scenarios,
                                      std::span<const StructuredResponse> train_responses,
                                      std::span<const Scenario> test_scenarios,
                                      std::span<const StructuredResponse> test_responses, const NoiseModel& noise) {
  EvalOptions options;
  options.grid = config.grid;
  options.reverse = config.reverse;
  options.context_seed = config.training.context_seed;
  options.d_model = config.denoiser.d_model;
  options.l2_mode = config.eval.l2_mode;
  options.jobs = config.jobs;

  std::vector<AblationRow> out;
  for (const auto& flags : rows) {
    DenoiserConfig model_config = config.denoiser;
    model_config.use_tse = flags.use_tse;
    model_config.use_caf = flags.use_caf;
    model_config.use_cap = flags.use_cap;
    model_config.use_bfc = flags.use_bfc;
    for (const std::uint64_t seed : seeds) {
      const TransformerDenoiser model =
          train_denoiser(config, model_config, train_scenarios, train_responses, noise, seed);
      const EvalResult result = run_eval(&model, test_scenarios, test_responses, options);
      out.push_back({flags, seed, result.sampled.l2_avg, result.sampled.coll_avg});
    }
  }
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void report_row(std::ostream& out, const char* method, const EvalReport& r) {
  out << method << ',' << fmt(r.l2_1s) << ',' << fmt(r.l2_2s) << ',' << fmt(r.l2_3s) << ',' << fmt(r.l2_avg) << ','
      << fmt(r.coll_1s) << ',' << fmt(r.coll_2s) << ',' << fmt(r.coll_3s) << ',' << fmt(r.coll_avg) << ','
      << r.scenario_count << '\n';
}

}  // namespace

void write_report_csv(std::ostream& out, const EvalResult& result) {
  out << kReportHeader << '\n';
  report_row(out, "sampled", result.sampled);
  report_row(out, "proposal", result.proposal);
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << kAblationHeader << '\n';
  auto mark = [](bool on) { return on ? "1" : "0"; };
  for (const auto& r : rows) {
    out << mark(r.flags.use_tse) << ',' << mark(r.flags.use_caf) << ',' << mark(r.flags.use_cap) << ','
        << mark(r.flags.use_bfc) << ',' << r.seed << ',' << fmt(r.l2_avg) << ',' << fmt(r.coll_avg) << '\n';
  }
}

std::string overlay_svg(const Scenario& scenario, const Path& proposal, const Path& sampled) {
  // Ego frame drawn with x up and y to the left, 10 px per meter.
  constexpr double kScale = 10.0;
  constexpr double kHalf = 40.0;
  auto sx = [&](double y) { return (kHalf - y) * kScale; };
  auto sy = [&](double x) { return (kHalf - x) * kScale; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kHalf * kScale << "\" height=\""
    << 2 * kHalf * kScale << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto polygon = [&](const OrientedBox& box, const char* colour) {
    s << "<polygon fill=\"" << colour << "\" fill-opacity=\"0.4\" stroke=\"" << colour << "\" points=\"";
    for (const auto& c : corners(box)) s << fmt(sx(c.y)) << ',' << fmt(sy(c.x)) << ' ';
    s << "\"/>\n";
  };
  for (const auto& o : scenario.obstacles) polygon(o.box, "#c0392b");
  polygon({0.0, 0.0, 0.0, scenario.ego.length, scenario.ego.width}, "#2c3e50");
  auto polyline = [&](const Path& p, const char* colour) {
    s << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << colour << "\" points=\"" << fmt(sx(0.0)) << ','
      << fmt(sy(0.0)) << ' ';
    for (const auto& w : p.waypoints) s << fmt(sx(w.y)) << ',' << fmt(sy(w.x)) << ' ';
    s << "\"/>\n";
  };
  polyline(scenario.gt_path, "#27ae60");
  polyline(proposal, "#e67e22");
  polyline(sampled, "#2980b9");
  s << "</svg>\n";
  return s.str();
}

}  // namespace pathdiff
