#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "pathdiff/diffusion.hpp"
#include "pathdiff/nn.hpp"
#include "pathdiff/proposer.hpp"
#include "pathdiff/scene.hpp"

namespace pathdiff {

/// Architecture and ablation switches of the diffusion Transformer.
///
/// - use_tse: add a learned projection of the sinusoidal noise-time embedding
///   to every path token.
/// - use_caf: cross-attend path tokens to BEV + context tokens in every block;
///   when off, the mean conditioning token is added to the path tokens once.
/// - use_cap: mean-pool the context tokens into a single token.
/// - use_bfc: average-pool the BEV grid to bev_rows x bev_cols tokens; when
///   off every grid cell becomes a token.
struct DenoiserConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t bev_rows = 8;
  std::size_t bev_cols = 8;
  bool use_tse = true;
  bool use_caf = true;
  bool use_cap = true;
  bool use_bfc = true;
  std::size_t horizon = kDefaultHorizon;
  std::size_t bev_channels = 6;
  std::size_t ffn_multiplier = 4;

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// d_model must be a positive multiple of 4 (BEV position codes split it in
/// two sinusoidal halves) and divisible by heads.
void validate(const DenoiserConfig& config);

/// Sinusoidal code: [2k] = sin(t / 10000^(2k/d)), [2k+1] = cos(same).
std::vector<double> embed_timestep(double t, std::size_t d_model);

/// Scale applied to reverse/noise time before embed_timestep.
inline constexpr double kTimeEmbeddingScale = 100.0;

/// Parameter-free half of BEV feature compression: per-channel block
/// averages (or raw cells without BFC) and the ego-frame centre of each token.
struct PooledBev {
  std::size_t tokens = 0;
  std::size_t channels = 0;
  std::vector<double> values;  ///< tokens x channels
  std::vector<double> x;       ///< token centres, meters
  std::vector<double> y;
};

PooledBev pool_bev(const BevGrid& grid, const DenoiserConfig& config);

/// Mean over tokens with use_cap, identity otherwise.
ContextEmbedding pool_context(const ContextEmbedding& context, const DenoiserConfig& config);

struct LossBreakdown {
  double waypoint_mse = 0.0;
  double cumsum_mse = 0.0;
  double total = 0.0;
};

/// Mean squared coordinate error plus mean squared error of the per-prefix
/// cumulative waypoint sums.
LossBreakdown path_loss(const Path& prediction, const Path& target);

struct TrainingExample {
  std::shared_ptr<const PooledBev> bev;
  std::shared_ptr<const ContextEmbedding> context;
  Path noised_path;  ///< forward-noised gt divided by sqrt(alpha_bar); not standardized
  std::size_t timestep = 0;
  double time = 0.0;  ///< noise_time(schedule, timestep)
  Path target;        ///< ground truth, not standardized
};

class TransformerDenoiser final : public Denoiser {
 public:
  /// Fresh model with seeded scaled-normal weights.
  TransformerDenoiser(const DenoiserConfig& config, const Standardizer& standardizer, std::uint64_t init_seed);
  /// Model from an explicit parameter vector (size must match the layout).
  TransformerDenoiser(const DenoiserConfig& config, const Standardizer& standardizer, nn::FlatVector parameters);

  static std::size_t parameter_count(const DenoiserConfig& config);

  Path denoise(const Path& noisy, const BevGrid& bev, const ContextEmbedding& context, double t) const override;
  Path denoise_pooled(const Path& noisy, const PooledBev& bev, const ContextEmbedding& context, double t) const;

  /// BEV tokens after the learned projection and position code (tokens x d).
  nn::Matrix compress_bev(const BevGrid& grid) const;

  LossBreakdown loss(const TrainingExample& example) const;
  /// Adds d(total loss)/d(parameters) into `gradient` (sized parameter_count).
  LossBreakdown accumulate_gradient(const TrainingExample& example, nn::FlatVector& gradient) const;

  const DenoiserConfig& config() const { return config_; }
  const Standardizer& standardizer() const override { return standardizer_; }
  const nn::ParameterLayout& layout() const { return layout_; }
  const nn::FlatVector& parameters() const { return parameters_; }
  nn::FlatVector& parameters() { return parameters_; }

 private:
  struct Forward;

  void build_layout();
  nn::Matrix forward(const Path& noisy_standardized, const PooledBev& bev, const ContextEmbedding& context, double t,
                     Forward* record) const;
  void backward(const Forward& record, const nn::Matrix& d_output, nn::FlatVector& gradient) const;

  DenoiserConfig config_;
  Standardizer standardizer_;
  nn::ParameterLayout layout_;
  nn::FlatVector parameters_;

  struct AttentionSlots {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct BlockSlots {
    std::size_t ln1_gain, ln1_bias;
    AttentionSlots self;
    std::size_t ln2_gain = 0, ln2_bias = 0;
    AttentionSlots cross{};
    std::size_t ln3_gain, ln3_bias, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  std::size_t embed_w_ = 0, embed_b_ = 0, time_w_ = 0, time_b_ = 0, bev_w_ = 0, bev_b_ = 0;
  std::size_t head_w_ = 0, head_b_ = 0;
  std::vector<BlockSlots> blocks_;
  nn::Matrix path_position_;  // horizon x d
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct LossRecord {
  std::size_t step = 0;
  LossBreakdown loss;
};

/// Mini-batch Adam on the summed two-term loss. Shuffles with `seed`,
/// reduces per-example gradients in index order, so the result is
/// independent of `jobs`. Throws TrainingError on a non-finite loss.
std::vector<LossRecord> train(TransformerDenoiser& model, std::span<const TrainingExample> dataset,
                              const OptimizerConfig& optimizer);

/// Mean loss over the dataset and its gradient (full batch).
LossBreakdown full_batch_gradient(const TransformerDenoiser& model, std::span<const TrainingExample> dataset,
                                  nn::FlatVector& gradient);

/// Largest relative error between the analytic gradient and central finite
/// differences over `samples` random parameters of a randomly initialised
/// model on a random example. Relative error is |a - f| / max(|a|, |f|, 1e-6).
double grad_check(const DenoiserConfig& config, double eps, std::uint64_t seed = 1, std::size_t samples = 200);

/// Builds `per_scenario` forward-noised examples for every scenario.
/// `responses` supply detections/advice for the context tokens and must be
/// aligned with `scenarios` by index.
struct TrainingSetOptions {
  std::size_t per_scenario = 4;
  std::uint64_t context_seed = 17;
  std::uint64_t seed = 0;
  int jobs = 1;
};

std::vector<TrainingExample> build_training_set(std::span<const Scenario> scenarios,
                                                std::span<const StructuredResponse> responses,
                                                const NoiseModel& noise, const DiffusionSchedule& schedule,
                                                const GridConfig& grid, const DenoiserConfig& config,
                                                const TrainingSetOptions& options);

/// Dataset-level standardizer over the examples' noised paths.
Standardizer fit_standardizer(std::span<const TrainingExample> examples);

// Model artifact: "PDIFFMDL", u32 version, u64 header length, JSON header
// {config, standardizer}, u64 parameter count, parameters as IEEE-754
// binary64. All integers and doubles little-endian.
inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(std::ostream& out, const TransformerDenoiser& model);
TransformerDenoiser load_model(std::istream& in);
void save_model(const std::filesystem::path& path, const TransformerDenoiser& model);
TransformerDenoiser load_model(const std::filesystem::path& path);

}  // namespace pathdiff
