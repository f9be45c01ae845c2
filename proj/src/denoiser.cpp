#include "pathdiff/denoiser.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "pathdiff/config.hpp"
#include "pathdiff/error.hpp"
#include "pathdiff/parallel.hpp"
#include "pathdiff/rng.hpp"

namespace pathdiff {

using nn::ConstMatrixMap;
using nn::Matrix;
using nn::MatrixMap;

namespace {

constexpr double kBevPositionScale = 2.0;  // radians per meter at the fastest frequency

void write_sinusoid(double t, std::size_t d, double* out) {
  for (std::size_t k = 0; 2 * k < d; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * k) / static_cast<double>(d));
    out[2 * k] = std::sin(t * freq);
    if (2 * k + 1 < d) out[2 * k + 1] = std::cos(t * freq);
  }
}

Matrix path_matrix(const Path& path) {
  Matrix m(static_cast<Eigen::Index>(path.size()), 2);
  for (std::size_t j = 0; j < path.size(); ++j) {
    m(static_cast<Eigen::Index>(j), 0) = path.waypoints[j].x;
    m(static_cast<Eigen::Index>(j), 1) = path.waypoints[j].y;
  }
  return m;
}

Path matrix_path(const Matrix& m, double dt) {
  Path p;
  p.dt = dt;
  p.waypoints.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index j = 0; j < m.rows(); ++j) p.waypoints[static_cast<std::size_t>(j)] = {m(j, 0), m(j, 1)};
  return p;
}

}  // namespace

void validate(const DenoiserConfig& c) {
  if (c.d_model == 0 || c.d_model % 4 != 0) throw ConfigError("denoiser.d_model must be a positive multiple of 4");
  if (c.heads == 0 || c.d_model % c.heads != 0) throw ConfigError("denoiser.d_model must be divisible by heads");
  if (c.bev_rows == 0 || c.bev_cols == 0) throw ConfigError("denoiser.bev_rows/bev_cols must be positive");
  if (c.horizon == 0) throw ConfigError("denoiser.horizon must be positive");
  if (c.bev_channels == 0) throw ConfigError("denoiser.bev_channels must be positive");
  if (c.ffn_multiplier == 0) throw ConfigError("denoiser.ffn_multiplier must be positive");
}

std::vector<double> embed_timestep(double t, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) throw ConfigError("timestep embedding needs an even, positive d_model");
  std::vector<double> out(d_model);
  write_sinusoid(t, d_model, out.data());
  return out;
}

PooledBev pool_bev(const BevGrid& grid, const DenoiserConfig& config) {
  if (static_cast<std::size_t>(grid.channels) != config.bev_channels)
    throw AlignmentError("BEV grid has " + std::to_string(grid.channels) + " channels, model expects " +
                         std::to_string(config.bev_channels));
  PooledBev out;
  out.channels = config.bev_channels;
  const auto H = static_cast<std::size_t>(grid.height);
  const auto W = static_cast<std::size_t>(grid.width);
  std::size_t rows = H, cols = W;
  if (config.use_bfc) {
    if (config.bev_rows > H || config.bev_cols > W || H % config.bev_rows != 0 || W % config.bev_cols != 0)
      throw ConfigError("BEV compression needs bev_rows | height and bev_cols | width");
    rows = config.bev_rows;
    cols = config.bev_cols;
  }
  const std::size_t bh = H / rows, bw = W / cols;
  const double inv = 1.0 / static_cast<double>(bh * bw);
  out.tokens = rows * cols;
  out.values.assign(out.tokens * out.channels, 0.0);
  out.x.resize(out.tokens);
  out.y.resize(out.tokens);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t token = r * cols + c;
      out.x[token] = 0.5 * (grid.cell_x(static_cast<int>(r * bh)) + grid.cell_x(static_cast<int>((r + 1) * bh - 1)));
      out.y[token] = 0.5 * (grid.cell_y(static_cast<int>(c * bw)) + grid.cell_y(static_cast<int>((c + 1) * bw - 1)));
      for (std::size_t ch = 0; ch < out.channels; ++ch) {
        double sum = 0.0;
        for (std::size_t i = r * bh; i < (r + 1) * bh; ++i) {
          for (std::size_t j = c * bw; j < (c + 1) * bw; ++j) {
            sum += grid.at(static_cast<int>(ch), static_cast<int>(i), static_cast<int>(j));
          }
        }
        out.values[token * out.channels + ch] = sum * inv;
      }
    }
  }
  return out;
}

ContextEmbedding pool_context(const ContextEmbedding& context, const DenoiserConfig& config) {
  if (!config.use_cap || context.token_count() <= 1) return context;
  ContextEmbedding pooled;
  pooled.d_model = context.d_model;
  pooled.values.assign(context.d_model, 0.0);
  const std::size_t count = context.token_count();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = 0; k < context.d_model; ++k) pooled.values[k] += context.values[i * context.d_model + k];
  }
  for (double& v : pooled.values) v /= static_cast<double>(count);
  return pooled;
}

LossBreakdown path_loss(const Path& prediction, const Path& target) {
  if (prediction.size() != target.size()) throw AlignmentError("loss: path lengths differ");
  const double count = 2.0 * static_cast<double>(prediction.size());
  double point = 0.0, prefix = 0.0, ex = 0.0, ey = 0.0;
  for (std::size_t j = 0; j < prediction.size(); ++j) {
    const double dx = prediction.waypoints[j].x - target.waypoints[j].x;
    const double dy = prediction.waypoints[j].y - target.waypoints[j].y;
    point += dx * dx + dy * dy;
    ex += dx;
    ey += dy;
    prefix += ex * ex + ey * ey;
  }
  LossBreakdown out;
  out.waypoint_mse = point / count;
  out.cumsum_mse = prefix / count;
  out.total = out.waypoint_mse + out.cumsum_mse;
  return out;
}

// ---------------------------------------------------------------------------

struct TransformerDenoiser::Forward {
  struct Block {
    Matrix input;
    nn::NormCache norm1;
    Matrix normed1;
    nn::AttentionCache self;
    Matrix after_self;
    nn::NormCache norm2;
    Matrix normed2;
    nn::AttentionCache cross;
    Matrix after_cross;
    nn::NormCache norm3;
    Matrix normed3;
    Matrix hidden_pre;
    Matrix hidden;
  };

  Matrix input;          // n x 2, standardized
  Matrix pooled;         // P x C
  std::size_t bev_tokens = 0;
  Matrix conditioning;   // (P + m) x d
  nn::RowVector time_code;
  std::vector<Block> blocks;
  Matrix final_hidden;   // n x d
};

TransformerDenoiser::TransformerDenoiser(const DenoiserConfig& config, const Standardizer& standardizer,
                                         std::uint64_t init_seed)
    : config_(config), standardizer_(standardizer) {
  validate(config_);
  build_layout();
  parameters_.assign(layout_.size(), 0.0);
  Rng rng(init_seed);
  for (const auto& slot : layout_.slots()) {
    const auto& name = slot.name;
    const bool is_gain = name.ends_with("_gain");
    const bool is_bias = name.ends_with(".b") || name.ends_with("_bias") || name.ends_with(".bq") ||
                         name.ends_with(".bk") || name.ends_with(".bv") || name.ends_with(".bo") ||
                         name.ends_with(".b1") || name.ends_with(".b2");
    auto region = std::span(parameters_).subspan(slot.offset, slot.size());
    if (is_gain) {
      std::fill(region.begin(), region.end(), 1.0);
    } else if (name == "head.w") {
      // Zero head: a fresh model returns its input unchanged.
    } else if (!is_bias) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(slot.rows));
      for (double& v : region) v = scale * standard_normal(rng);
    }
  }
}

TransformerDenoiser::TransformerDenoiser(const DenoiserConfig& config, const Standardizer& standardizer,
                                         nn::FlatVector parameters)
    : config_(config), standardizer_(standardizer), parameters_(std::move(parameters)) {
  validate(config_);
  build_layout();
  if (parameters_.size() != layout_.size())
    throw ArtifactError("parameter vector has " + std::to_string(parameters_.size()) + " entries, config needs " +
                        std::to_string(layout_.size()));
}

void TransformerDenoiser::build_layout() {
  const std::size_t d = config_.d_model;
  const std::size_t f = d * config_.ffn_multiplier;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const std::size_t index = layout_.add(name, rows, cols);
    return layout_.at(index).offset;
  };
  auto add_attention = [&](const std::string& prefix) {
    AttentionSlots s{};
    s.wq = add(prefix + ".wq", d, d);
    s.bq = add(prefix + ".bq", 1, d);
    s.wk = add(prefix + ".wk", d, d);
    s.bk = add(prefix + ".bk", 1, d);
    s.wv = add(prefix + ".wv", d, d);
    s.bv = add(prefix + ".bv", 1, d);
    s.wo = add(prefix + ".wo", d, d);
    s.bo = add(prefix + ".bo", 1, d);
    return s;
  };

  embed_w_ = add("embed.w", 2, d);
  embed_b_ = add("embed.b", 1, d);
  if (config_.use_tse) {
    time_w_ = add("time.w", d, d);
    time_b_ = add("time.b", 1, d);
  }
  bev_w_ = add("bev.w", config_.bev_channels, d);
  bev_b_ = add("bev.b", 1, d);
  blocks_.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    BlockSlots b{};
    b.ln1_gain = add(p + ".ln1_gain", 1, d);
    b.ln1_bias = add(p + ".ln1_bias", 1, d);
    b.self = add_attention(p + ".self");
    if (config_.use_caf) {
      b.ln2_gain = add(p + ".ln2_gain", 1, d);
      b.ln2_bias = add(p + ".ln2_bias", 1, d);
      b.cross = add_attention(p + ".cross");
    }
    b.ln3_gain = add(p + ".ln3_gain", 1, d);
    b.ln3_bias = add(p + ".ln3_bias", 1, d);
    b.ffn_w1 = add(p + ".ffn.w1", d, f);
    b.ffn_b1 = add(p + ".ffn.b1", 1, f);
    b.ffn_w2 = add(p + ".ffn.w2", f, d);
    b.ffn_b2 = add(p + ".ffn.b2", 1, d);
    blocks_.push_back(b);
  }
  head_w_ = add("head.w", d, 2);
  head_b_ = add("head.b", 1, 2);

  path_position_.resize(static_cast<Eigen::Index>(config_.horizon), static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < config_.horizon; ++j) {
    write_sinusoid(static_cast<double>(j), d, path_position_.row(static_cast<Eigen::Index>(j)).data());
  }
}

std::size_t TransformerDenoiser::parameter_count(const DenoiserConfig& config) {
  const std::size_t d = config.d_model;
  const std::size_t f = d * config.ffn_multiplier;
  const std::size_t attention = 4 * (d * d + d);
  std::size_t block = 2 * d + attention + 2 * d + (d * f + f + f * d + d);
  if (config.use_caf) block += 2 * d + attention;
  std::size_t total = 3 * d + config.bev_channels * d + d + config.layers * block + 2 * d + 2;
  if (config.use_tse) total += d * d + d;
  return total;
}

Matrix TransformerDenoiser::forward(const Path& noisy, const PooledBev& bev, const ContextEmbedding& context,
                                    double t, Forward* record) const {
  const std::size_t d = config_.d_model;
  if (noisy.size() != config_.horizon)
    throw AlignmentError("denoiser expects " + std::to_string(config_.horizon) + " waypoints, got " +
                         std::to_string(noisy.size()));
  if (bev.channels != config_.bev_channels) throw AlignmentError("pooled BEV channel count does not match model");
  if (context.d_model != d) throw AlignmentError("context width does not match d_model");
  if (context.token_count() == 0) throw AlignmentError("context needs at least one token");

  const auto& P = parameters_;
  const auto& L = layout_;
  auto at = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(P.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  };
  (void)L;

  Forward local;
  Forward& f = record ? *record : local;

  f.input = path_matrix(noisy);
  Matrix h;
  nn::linear_forward(f.input, at(embed_w_, 2, d), at(embed_b_, 1, d), h);
  h += path_position_;

  if (config_.use_tse) {
    f.time_code.resize(static_cast<Eigen::Index>(d));
    write_sinusoid(t * kTimeEmbeddingScale, d, f.time_code.data());
    const nn::RowVector shift = f.time_code * at(time_w_, d, d) + at(time_b_, 1, d);
    h.rowwise() += shift;
  }

  // Conditioning tokens: projected BEV tokens followed by (pooled) context tokens.
  const ContextEmbedding ctx = pool_context(context, config_);
  f.bev_tokens = bev.tokens;
  f.pooled = ConstMatrixMap(bev.values.data(), static_cast<Eigen::Index>(bev.tokens),
                            static_cast<Eigen::Index>(bev.channels));
  const auto ctx_tokens = static_cast<Eigen::Index>(ctx.token_count());
  f.conditioning.resize(static_cast<Eigen::Index>(bev.tokens) + ctx_tokens, static_cast<Eigen::Index>(d));
  {
    Matrix projected;
    nn::linear_forward(f.pooled, at(bev_w_, config_.bev_channels, d), at(bev_b_, 1, d), projected);
    const std::size_t half = d / 2;
    for (std::size_t i = 0; i < bev.tokens; ++i) {
      auto row = projected.row(static_cast<Eigen::Index>(i));
      nn::RowVector code(static_cast<Eigen::Index>(d));
      write_sinusoid(bev.x[i] * kBevPositionScale, half, code.data());
      write_sinusoid(bev.y[i] * kBevPositionScale, half, code.data() + half);
      row += code;
    }
    f.conditioning.topRows(static_cast<Eigen::Index>(bev.tokens)) = projected;
    f.conditioning.bottomRows(ctx_tokens) =
        ConstMatrixMap(ctx.values.data(), ctx_tokens, static_cast<Eigen::Index>(d));
  }
  if (!config_.use_caf) h.rowwise() += f.conditioning.colwise().mean();

  const std::size_t ffn = d * config_.ffn_multiplier;
  f.blocks.resize(blocks_.size());
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const BlockSlots& s = blocks_[l];
    Forward::Block& b = f.blocks[l];
    b.input = h;

    Matrix out;
    nn::layer_norm_forward(h, at(s.ln1_gain, 1, d), at(s.ln1_bias, 1, d), b.normed1, b.norm1);
    const nn::AttentionWeights self{at(s.self.wq, d, d), at(s.self.bq, 1, d), at(s.self.wk, d, d),
                                    at(s.self.bk, 1, d), at(s.self.wv, d, d), at(s.self.bv, 1, d),
                                    at(s.self.wo, d, d), at(s.self.bo, 1, d)};
    nn::attention_forward(b.normed1, b.normed1, self, config_.heads, out, b.self);
    h += out;
    b.after_self = h;

    if (config_.use_caf) {
      nn::layer_norm_forward(h, at(s.ln2_gain, 1, d), at(s.ln2_bias, 1, d), b.normed2, b.norm2);
      const nn::AttentionWeights cross{at(s.cross.wq, d, d), at(s.cross.bq, 1, d), at(s.cross.wk, d, d),
                                       at(s.cross.bk, 1, d), at(s.cross.wv, d, d), at(s.cross.bv, 1, d),
                                       at(s.cross.wo, d, d), at(s.cross.bo, 1, d)};
      nn::attention_forward(b.normed2, f.conditioning, cross, config_.heads, out, b.cross);
      h += out;
    }
    b.after_cross = h;

    nn::layer_norm_forward(h, at(s.ln3_gain, 1, d), at(s.ln3_bias, 1, d), b.normed3, b.norm3);
    nn::linear_forward(b.normed3, at(s.ffn_w1, d, ffn), at(s.ffn_b1, 1, ffn), b.hidden_pre);
    nn::gelu_forward(b.hidden_pre, b.hidden);
    nn::linear_forward(b.hidden, at(s.ffn_w2, ffn, d), at(s.ffn_b2, 1, d), out);
    h += out;
  }
  f.final_hidden = h;

  // The head predicts a correction on top of the noisy input; the sum is the
  // clean-path estimate.
  Matrix output;
  nn::linear_forward(h, at(head_w_, d, 2), at(head_b_, 1, 2), output);
  output += f.input;
  return output;
}

void TransformerDenoiser::backward(const Forward& f, const Matrix& d_output, nn::FlatVector& gradient) const {
  const std::size_t d = config_.d_model;
  const std::size_t ffn = d * config_.ffn_multiplier;
  const auto& P = parameters_;
  auto at = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
    return ConstMatrixMap(P.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  };
  auto grad = [&](std::size_t offset, std::size_t rows, std::size_t cols) {
    return MatrixMap(gradient.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  };

  Matrix dh;
  nn::linear_backward(f.final_hidden, at(head_w_, d, 2), d_output, grad(head_w_, d, 2), grad(head_b_, 1, 2), &dh);

  Matrix d_conditioning = Matrix::Zero(f.conditioning.rows(), f.conditioning.cols());
  Matrix tmp, dx, dq, dkv;
  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const BlockSlots& s = blocks_[li];
    const Forward::Block& b = f.blocks[li];

    // feed-forward sublayer
    nn::linear_backward(b.hidden, at(s.ffn_w2, ffn, d), dh, grad(s.ffn_w2, ffn, d), grad(s.ffn_b2, 1, d), &tmp);
    Matrix d_pre;
    nn::gelu_backward(b.hidden_pre, tmp, d_pre);
    nn::linear_backward(b.normed3, at(s.ffn_w1, d, ffn), d_pre, grad(s.ffn_w1, d, ffn), grad(s.ffn_b1, 1, ffn),
                        &tmp);
    nn::layer_norm_backward(b.norm3, at(s.ln3_gain, 1, d), tmp, grad(s.ln3_gain, 1, d), grad(s.ln3_bias, 1, d), dx);
    dh += dx;

    if (config_.use_caf) {
      const nn::AttentionWeights w{at(s.cross.wq, d, d), at(s.cross.bq, 1, d), at(s.cross.wk, d, d),
                                   at(s.cross.bk, 1, d), at(s.cross.wv, d, d), at(s.cross.bv, 1, d),
                                   at(s.cross.wo, d, d), at(s.cross.bo, 1, d)};
      nn::AttentionGrads g{grad(s.cross.wq, d, d), grad(s.cross.bq, 1, d), grad(s.cross.wk, d, d),
                           grad(s.cross.bk, 1, d), grad(s.cross.wv, d, d), grad(s.cross.bv, 1, d),
                           grad(s.cross.wo, d, d), grad(s.cross.bo, 1, d)};
      nn::attention_backward(b.normed2, f.conditioning, w, config_.heads, b.cross, dh, g, dq, dkv);
      d_conditioning += dkv;
      nn::layer_norm_backward(b.norm2, at(s.ln2_gain, 1, d), dq, grad(s.ln2_gain, 1, d), grad(s.ln2_bias, 1, d),
                              dx);
      dh += dx;
    }

    const nn::AttentionWeights w{at(s.self.wq, d, d), at(s.self.bq, 1, d), at(s.self.wk, d, d),
                                 at(s.self.bk, 1, d), at(s.self.wv, d, d), at(s.self.bv, 1, d),
                                 at(s.self.wo, d, d), at(s.self.bo, 1, d)};
    nn::AttentionGrads g{grad(s.self.wq, d, d), grad(s.self.bq, 1, d), grad(s.self.wk, d, d),
                         grad(s.self.bk, 1, d), grad(s.self.wv, d, d), grad(s.self.bv, 1, d),
                         grad(s.self.wo, d, d), grad(s.self.bo, 1, d)};
    nn::attention_backward(b.normed1, b.normed1, w, config_.heads, b.self, dh, g, dq, dkv);
    dq += dkv;
    nn::layer_norm_backward(b.norm1, at(s.ln1_gain, 1, d), dq, grad(s.ln1_gain, 1, d), grad(s.ln1_bias, 1, d), dx);
    dh += dx;
  }

  const nn::RowVector dh_sum = dh.colwise().sum();
  if (!config_.use_caf) {
    d_conditioning.rowwise() += dh_sum / static_cast<double>(f.conditioning.rows());
  }
  if (config_.use_tse) {
    grad(time_w_, d, d).noalias() += f.time_code.transpose() * dh_sum;
    grad(time_b_, 1, d).row(0) += dh_sum;
  }
  nn::linear_backward(f.input, at(embed_w_, 2, d), dh, grad(embed_w_, 2, d), grad(embed_b_, 1, d), nullptr);

  const auto bev_rows = static_cast<Eigen::Index>(f.bev_tokens);
  const Matrix d_bev = d_conditioning.topRows(bev_rows);
  nn::linear_backward(f.pooled, at(bev_w_, config_.bev_channels, d), d_bev, grad(bev_w_, config_.bev_channels, d),
                      grad(bev_b_, 1, d), nullptr);
}

Path TransformerDenoiser::denoise_pooled(const Path& noisy, const PooledBev& bev, const ContextEmbedding& context,
                                         double t) const {
  return matrix_path(forward(noisy, bev, context, t, nullptr), noisy.dt);
}

Path TransformerDenoiser::denoise(const Path& noisy, const BevGrid& bev, const ContextEmbedding& context,
                                  double t) const {
  return denoise_pooled(noisy, pool_bev(bev, config_), context, t);
}

Matrix TransformerDenoiser::compress_bev(const BevGrid& grid) const {
  const PooledBev pooled = pool_bev(grid, config_);
  const std::size_t d = config_.d_model;
  Matrix values = ConstMatrixMap(pooled.values.data(), static_cast<Eigen::Index>(pooled.tokens),
                                 static_cast<Eigen::Index>(pooled.channels));
  Matrix tokens;
  nn::linear_forward(values, ConstMatrixMap(parameters_.data() + bev_w_, static_cast<Eigen::Index>(pooled.channels), static_cast<Eigen::Index>(d)),
                     ConstMatrixMap(parameters_.data() + bev_b_, 1, static_cast<Eigen::Index>(d)), tokens);
  for (std::size_t i = 0; i < pooled.tokens; ++i) {
    nn::RowVector code(static_cast<Eigen::Index>(d));
    write_sinusoid(pooled.x[i] * kBevPositionScale, d / 2, code.data());
    write_sinusoid(pooled.y[i] * kBevPositionScale, d / 2, code.data() + d / 2);
    tokens.row(static_cast<Eigen::Index>(i)) += code;
  }
  return tokens;
}

LossBreakdown TransformerDenoiser::loss(const TrainingExample& example) const {
  const Path input = standardize(example.noised_path, standardizer_);
  const Path target = standardize(example.target, standardizer_);
  return path_loss(denoise_pooled(input, *example.bev, *example.context, example.time), target);
}

LossBreakdown TransformerDenoiser::accumulate_gradient(const TrainingExample& example,
                                                       nn::FlatVector& gradient) const {
  if (gradient.size() != parameters_.size()) throw AlignmentError("gradient buffer size does not match model");
  const Path input = standardize(example.noised_path, standardizer_);
  const Path target = standardize(example.target, standardizer_);
  Forward record;
  const Matrix output = forward(input, *example.bev, *example.context, example.time, &record);
  const Path prediction = matrix_path(output, input.dt);
  const LossBreakdown result = path_loss(prediction, target);

  // d/d prediction of the two MSE terms.
  const auto n = static_cast<Eigen::Index>(prediction.size());
  const double count = 2.0 * static_cast<double>(n);
  Matrix error = output - path_matrix(target);
  Matrix d_output = (2.0 / count) * error;
  Matrix prefix = error;
  for (Eigen::Index j = 1; j < n; ++j) prefix.row(j) += prefix.row(j - 1);
  nn::RowVector suffix = nn::RowVector::Zero(2);
  for (Eigen::Index j = n; j-- > 0;) {
    suffix += prefix.row(j);
    d_output.row(j) += (2.0 / count) * suffix;
  }
  backward(record, d_output, gradient);
  return result;
}

// ---------------------------------------------------------------------------

LossBreakdown full_batch_gradient(const TransformerDenoiser& model, std::span<const TrainingExample> dataset,
                                  nn::FlatVector& gradient) {
  if (dataset.empty()) throw DomainError("empty dataset");
  gradient.assign(model.parameters().size(), 0.0);
  nn::FlatVector scratch(gradient.size());
  LossBreakdown sum;
  for (const auto& ex : dataset) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    const LossBreakdown l = model.accumulate_gradient(ex, scratch);
    for (std::size_t i = 0; i < gradient.size(); ++i) gradient[i] += scratch[i];
    sum.waypoint_mse += l.waypoint_mse;
    sum.cumsum_mse += l.cumsum_mse;
    sum.total += l.total;
  }
  const double inv = 1.0 / static_cast<double>(dataset.size());
  for (double& g : gradient) g *= inv;
  return {sum.waypoint_mse * inv, sum.cumsum_mse * inv, sum.total * inv};
}

std::vector<LossRecord> train(TransformerDenoiser& model, std::span<const TrainingExample> dataset,
                              const OptimizerConfig& opt) {
  if (dataset.empty()) throw DomainError("training needs a non-empty dataset");
  if (opt.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
  auto& params = model.parameters();
  const std::size_t count = params.size();
  std::vector<double> m(count, 0.0), v(count, 0.0);
  nn::FlatVector total(count, 0.0);
  const std::size_t batch = std::min(opt.batch_size, dataset.size());
  std::vector<nn::FlatVector> per_example(batch, nn::FlatVector(count));
  std::vector<LossBreakdown> losses(batch);

  Rng rng(opt.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<LossRecord> curve;
  curve.reserve(opt.steps);
  std::vector<std::size_t> picked(batch);
  double beta1_power = 1.0, beta2_power = 1.0;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picked[b] = order[cursor++];
    }
    parallel_for(batch, opt.jobs, [&](std::size_t b) {
      std::fill(per_example[b].begin(), per_example[b].end(), 0.0);
      losses[b] = model.accumulate_gradient(dataset[picked[b]], per_example[b]);
    });
    LossBreakdown mean;
    std::fill(total.begin(), total.end(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& g = per_example[b];
      for (std::size_t i = 0; i < count; ++i) total[i] += g[i];
      mean.waypoint_mse += losses[b].waypoint_mse;
      mean.cumsum_mse += losses[b].cumsum_mse;
      mean.total += losses[b].total;
    }
    const double inv = 1.0 / static_cast<double>(batch);
    mean.waypoint_mse *= inv;
    mean.cumsum_mse *= inv;
    mean.total *= inv;
    if (!std::isfinite(mean.total)) {
      std::string ids;
      for (std::size_t b = 0; b < batch; ++b) ids += (b ? "," : "") + std::to_string(picked[b]);
      throw TrainingError("non-finite loss at step " + std::to_string(step) + " (batch examples " + ids + ")");
    }
    curve.push_back({step, mean});

    beta1_power *= opt.beta1;
    beta2_power *= opt.beta2;
    const double correction1 = 1.0 - beta1_power;
    const double correction2 = 1.0 - beta2_power;
    for (std::size_t i = 0; i < count; ++i) {
      const double g = total[i] * inv;
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[i] -= opt.learning_rate * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
  }
  return curve;
}

double grad_check(const DenoiserConfig& config, double eps, std::uint64_t seed, std::size_t samples) {
  if (!(eps > 0.0)) throw DomainError("grad_check needs eps > 0");
  Rng rng(seed);
  const Standardizer standardizer{0.3, -0.2, 1.7, 0.9};
  TransformerDenoiser model(config, standardizer, derive_seed(seed, 1));
  // Nudge biases and gains off their initial constants so that every
  // parameter has a generic gradient.
  for (double& p : model.parameters()) p += 0.05 * standard_normal(rng);

  const std::size_t tokens = config.use_bfc ? config.bev_rows * config.bev_cols : 4 * config.bev_rows * config.bev_cols;
  auto bev = std::make_shared<PooledBev>();
  bev->tokens = tokens;
  bev->channels = config.bev_channels;
  for (std::size_t i = 0; i < tokens * config.bev_channels; ++i) bev->values.push_back(uniform(rng, 0.0, 1.0));
  for (std::size_t i = 0; i < tokens; ++i) {
    bev->x.push_back(uniform(rng, -16.0, 16.0));
    bev->y.push_back(uniform(rng, -16.0, 16.0));
  }
  auto context = std::make_shared<ContextEmbedding>();
  context->d_model = config.d_model;
  for (std::size_t i = 0; i < 3 * config.d_model; ++i) context->values.push_back(standard_normal(rng));

  TrainingExample example;
  example.bev = bev;
  example.context = context;
  example.time = uniform(rng, 0.0, 3.0);
  example.noised_path.dt = example.target.dt = kDefaultDt;
  for (std::size_t j = 0; j < config.horizon; ++j) {
    example.target.waypoints.push_back({2.0 * static_cast<double>(j + 1), 0.1 * static_cast<double>(j * j)});
    example.noised_path.waypoints.push_back(
        {example.target.waypoints[j].x + standard_normal(rng), example.target.waypoints[j].y + standard_normal(rng)});
  }

  nn::FlatVector analytic(model.parameters().size(), 0.0);
  model.accumulate_gradient(example, analytic);

  auto& params = model.parameters();
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t i = pick(rng);
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = model.loss(example).total;
    params[i] = saved - eps;
    const double down = model.loss(example).total;
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

std::vector<TrainingExample> build_training_set(std::span<const Scenario> scenarios,
                                                std::span<const StructuredResponse> responses,
                                                const NoiseModel& noise, const DiffusionSchedule& schedule,
                                                const GridConfig& grid, const DenoiserConfig& config,
                                                const TrainingSetOptions& options) {
  if (scenarios.size() != responses.size())
    throw AlignmentError("scenario and response counts differ (" + std::to_string(scenarios.size()) + " vs " +
                         std::to_string(responses.size()) + ")");
  const ContextEncoder encoder(options.context_seed, config.d_model);
  std::vector<TrainingExample> out(scenarios.size() * options.per_scenario);
  parallel_for(scenarios.size(), options.jobs, [&](std::size_t s) {
    const Scenario& scenario = scenarios[s];
    if (responses[s].scenario_id != scenario.id)
      throw AlignmentError("response " + std::to_string(s) + " refers to scenario \"" + responses[s].scenario_id +
                           "\", expected \"" + scenario.id + "\"");
    auto bev = std::make_shared<const PooledBev>(pool_bev(rasterize_bev(scenario, grid), config));
    auto context = std::make_shared<const ContextEmbedding>(encoder.encode(responses[s]));
    for (std::size_t e = 0; e < options.per_scenario; ++e) {
      const std::size_t index = s * options.per_scenario + e;
      Rng rng(derive_seed(options.seed, 0xd1ff, index));
      TrainingExample& ex = out[index];
      ex.bev = bev;
      ex.context = context;
      ex.timestep = std::uniform_int_distribution<std::size_t>(0, schedule.steps() - 1)(rng);
      ex.time = noise_time(schedule, ex.timestep);
      const Path noised = forward_noise(scenario.gt_path, ex.timestep, schedule, noise, rng());
      ex.noised_path = to_data_scale(noised, schedule.alpha_bar[ex.timestep]);
      ex.target = scenario.gt_path;
    }
  });
  return out;
}

Standardizer fit_standardizer(std::span<const TrainingExample> examples) {
  std::vector<Path> paths;
  paths.reserve(examples.size());
  for (const auto& ex : examples) paths.push_back(ex.noised_path);
  return fit_standardizer(std::span<const Path>(paths));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'D', 'I', 'F', 'F', 'M', 'D', 'L'};

void put_u64(std::ostream& out, std::uint64_t value) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ArtifactError("model artifact is truncated");
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void save_model(std::ostream& out, const TransformerDenoiser& model) {
  nlohmann::ordered_json header{{"config", to_json(model.config())},
                                {"standardizer", to_json(model.standardizer())}};
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kModelFormatVersion;
  char vbytes[4];
  for (int i = 0; i < 4; ++i) vbytes[i] = static_cast<char>((version >> (8 * i)) & 0xff);
  out.write(vbytes, 4);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u64(out, model.parameters().size());
  for (double p : model.parameters()) put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw ArtifactError("failed to write model artifact");
}

TransformerDenoiser load_model(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) throw ArtifactError("not a model artifact (bad magic)");
  unsigned char vbytes[4];
  if (!in.read(reinterpret_cast<char*>(vbytes), 4)) throw ArtifactError("model artifact is truncated");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(vbytes[i]) << (8 * i);
  if (version != kModelFormatVersion)
    throw ArtifactError("unsupported model artifact version " + std::to_string(version) + " (expected " +
                        std::to_string(kModelFormatVersion) + ")");
  const std::uint64_t length = get_u64(in);
  if (length > (1u << 24)) throw ArtifactError("model artifact header is implausibly large");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw ArtifactError("model artifact is truncated");
  DenoiserConfig config;
  Standardizer standardizer;
  try {
    const auto header = nlohmann::ordered_json::parse(text);
    config = denoiser_config_from_json(header.at("config"));
    standardizer = standardizer_from_json(header.at("standardizer"));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("model artifact header is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw ArtifactError(std::string("model artifact header is malformed: ") + e.what());
  }
  const std::uint64_t count = get_u64(in);
  if (count != TransformerDenoiser::parameter_count(config))
    throw ArtifactError("model artifact parameter count does not match its config");
  nn::FlatVector params(count);
  for (auto& p : params) p = std::bit_cast<double>(get_u64(in));
  return TransformerDenoiser(config, standardizer, std::move(params));
}

void save_model(const std::filesystem::path& path, const TransformerDenoiser& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot open " + path.string() + " for writing");
  save_model(out, model);
}

TransformerDenoiser load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open model artifact " + path.string());
  return load_model(in);
}

}  // namespace pathdiff
