#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pathdiff/config.hpp"
#include "pathdiff/denoiser.hpp"
#include "pathdiff/diffusion.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/scene.hpp"

namespace pathdiff {

inline constexpr std::array<double, 3> kEvalHorizons{1.0, 2.0, 3.0};

/// Zero-based waypoint index reached at `seconds` (waypoint j sits at
/// (j + 1) * dt). Throws ConfigError when the horizon is off the grid or
/// beyond the path.
std::size_t horizon_index(const Path& path, double seconds);

struct HorizonL2 {
  double l2_1s = 0.0;
  double l2_2s = 0.0;
  double l2_3s = 0.0;
  double avg = 0.0;
};

/// kAverage: mean waypoint distance over every waypoint up to the horizon.
/// kPoint: distance at the horizon waypoint only.
HorizonL2 l2_at_horizons(const Path& prediction, const Path& gt, L2Mode mode = L2Mode::kAverage);

/// True when an ego box placed on any waypoint up to the horizon touches an
/// obstacle propagated to that waypoint's time.
bool collides(const Path& path, const Scenario& scenario, double horizon_s);

/// Percentage of scenarios whose path collides within the horizon.
double collision_rate(std::span<const Path> paths, std::span<const Scenario> scenarios, double horizon_s);
double collision_rate(const Path& path, const Scenario& scenario, double horizon_s);

struct EvalReport {
  double l2_1s = 0.0, l2_2s = 0.0, l2_3s = 0.0, l2_avg = 0.0;
  double coll_1s = 0.0, coll_2s = 0.0, coll_3s = 0.0, coll_avg = 0.0;  ///< percent
  std::size_t scenario_count = 0;
};

EvalReport make_report(std::span<const Path> paths, std::span<const Scenario> scenarios, L2Mode mode);

/// Denoiser that always predicts one fixed clean path; standardizes with the
/// identity so its outputs are already in data scale.
class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(Path target) : target_(std::move(target)) {}

  Path denoise(const Path&, const BevGrid&, const ContextEmbedding&, double) const override { return target_; }
  const Standardizer& standardizer() const override { return identity_; }

 private:
  Path target_;
  Standardizer identity_{};
};

struct EvalOptions {
  GridConfig grid;
  ReverseGridConfig reverse;
  std::uint64_t context_seed = 17;
  std::size_t d_model = 64;
  L2Mode l2_mode = L2Mode::kAverage;
  int jobs = 1;
};

struct EvalResult {
  EvalReport sampled;
  EvalReport proposal;
  std::vector<Path> sampled_paths;
};

/// Denoises every response's proposed path, conditioned on the scenario's
/// BEV grid and encoded response, and scores both the sampled and the raw
/// proposals. `model` null means an oracle that predicts the ground truth.
EvalResult run_eval(const Denoiser* model, std::span<const Scenario> scenarios,
                    std::span<const StructuredResponse> responses, const EvalOptions& options);

/// Mock proposer applied to every scenario with per-index derived seeds.
std::vector<StructuredResponse> mock_responses(std::span<const Scenario> scenarios, const NoiseModel& noise,
                                               std::uint64_t seed, int jobs);

/// Residual model fitted from the proposals' deviations from ground truth.
NoiseModel fit_noise_from_responses(std::span<const Scenario> scenarios,
                                    std::span<const StructuredResponse> responses);

/// Builds the noised training set from `config` and trains a fresh model.
TransformerDenoiser train_denoiser(const RunConfig& config, const DenoiserConfig& model_config,
                                   std::span<const Scenario> scenarios, std::span<const StructuredResponse> responses,
                                   const NoiseModel& noise, std::uint64_t seed, std::vector<LossRecord>* curve = nullptr);

/// More optimizer steps on an existing model; the standardizer is kept.
/// Adam moments restart from zero.
std::vector<LossRecord> resume_training(TransformerDenoiser& model, const RunConfig& config,
                                        std::span<const Scenario> scenarios,
                                        std::span<const StructuredResponse> responses, const NoiseModel& noise,
                                        std::uint64_t seed);

struct AblationFlags {
  std::string name;
  bool use_tse = true;
  bool use_caf = true;
  bool use_cap = true;
  bool use_bfc = true;
};

/// Names: "all", "no-tse", "no-caf", "no-cap", "no-bfc", or "none". Throws
/// ConfigError on anything else.
AblationFlags ablation_flags(const std::string& name);

struct AblationRow {
  AblationFlags flags;
  std::uint64_t seed = 0;
  double l2_avg = 0.0;
  double coll_avg = 0.0;
};

/// One trained-and-evaluated model per (flags, seed); the data is shared by
/// every row.
std::vector<AblationRow> ablation_run(const RunConfig& config, std::span<const AblationFlags> rows,
                                      std::span<const std::uint64_t> seeds, std::span<const Scenario> train_scenarios,
                                      std::span<const StructuredResponse> train_responses,
                                      std::span<const Scenario> test_scenarios,
                                      std::span<const StructuredResponse> test_responses, const NoiseModel& noise);

// CSV output.
inline constexpr const char* kReportHeader = "method,l2_1s,l2_2s,l2_3s,l2_avg,coll_1s,coll_2s,coll_3s,coll_avg,scenarios";
inline constexpr const char* kAblationHeader = "TSE,CAF,CAP,BFC,seed,Avg. L2,Avg. Collision Rate";

void write_report_csv(std::ostream& out, const EvalResult& result);
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

/// Top-down overlay: obstacles at t = 0, ground truth, proposal and sample.
std::string overlay_svg(const Scenario& scenario, const Path& proposal, const Path& sampled);

}  // namespace pathdiff
