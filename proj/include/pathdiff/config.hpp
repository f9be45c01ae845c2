#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pathdiff/denoiser.hpp"
#include "pathdiff/diffusion.hpp"
#include "pathdiff/scene.hpp"
#include "pathdiff/stats.hpp"

namespace pathdiff {

using Json = nlohmann::ordered_json;

enum class L2Mode { kAverage, kPoint };

struct ScheduleConfig {
  std::size_t steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct ReverseGridConfig {
  std::size_t intervals = 10;
  double t_start = 0.0;
  double t_end = 3.0;
};

/// Isotropic Gaussian used by the mock proposer.
struct ProposalNoiseConfig {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double std_x = 0.5;
  double std_y = 0.5;
};

struct TrainingConfig {
  std::size_t per_scenario = 4;
  std::uint64_t context_seed = 17;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
};

struct StatsConfig {
  double alpha = kDefaultAlpha;
  std::size_t pool = 1;
};

struct EvalConfig {
  L2Mode l2_mode = L2Mode::kAverage;
};

struct FilePaths {
  std::string scenarios = "scenarios.jsonl";
  std::string responses = "responses.jsonl";
  std::string noise = "noise.json";
  std::string model = "model.bin";
  std::string loss = "loss.csv";
  std::string report = "report.csv";
};

/// Everything a pipeline run needs. Stage seeds are derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  ScenarioConfig scenario;
  GridConfig grid;
  ProposalNoiseConfig noise;
  ScheduleConfig schedule;
  ReverseGridConfig reverse;
  DenoiserConfig denoiser;
  TrainingConfig training;
  StatsConfig stats;
  EvalConfig eval;
  FilePaths paths;
};

Json to_json(const ScenarioConfig& c);
Json to_json(const GridConfig& c);
Json to_json(const DenoiserConfig& c);
Json to_json(const Standardizer& s);
Json to_json(const NoiseModel& m);
Json to_json(const RunConfig& c);

// Strict readers: every key must be known, every value must have the right
// type. Failures throw ConfigError naming the dotted key.
DenoiserConfig denoiser_config_from_json(const Json& j, const std::string& prefix = "denoiser");
Standardizer standardizer_from_json(const Json& j, const std::string& prefix = "standardizer");
NoiseModel noise_model_from_json(const Json& j, const std::string& prefix = "noise_model");
RunConfig run_config_from_json(const Json& j);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

/// Defaults, then the optional file, then overrides; validated.
RunConfig load_run_config(const std::filesystem::path* file, const std::vector<std::string>& overrides);

void validate(const RunConfig& config);

NoiseModel to_noise_model(const ProposalNoiseConfig& c);
OptimizerConfig to_optimizer(const TrainingConfig& c, std::uint64_t seed, int jobs);

}  // namespace pathdiff
