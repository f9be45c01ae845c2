#include "pathdiff/nn.hpp"

#include <cmath>
#include <numbers>

namespace pathdiff::nn {

std::size_t ParameterLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  slots_.push_back({std::move(name), size_, rows, cols});
  size_ += rows * cols;
  return slots_.size() - 1;
}

void linear_forward(const Matrix& x, const ConstMatrixMap& w, const ConstMatrixMap& b, Matrix& y) {
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
}

void linear_backward(const Matrix& x, const ConstMatrixMap& w, const Matrix& dy, MatrixMap dw, MatrixMap db,
                     Matrix* dx) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  if (dx) dx->noalias() = dy * w.transpose();
}

void layer_norm_forward(const Matrix& x, const ConstMatrixMap& gain, const ConstMatrixMap& bias, Matrix& y,
                        NormCache& cache) {
  const Eigen::Index rows = x.rows();
  const double width = static_cast<double>(x.cols());
  cache.normalized.resize(rows, x.cols());
  cache.inv_std.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).sum() / width;
    const double var = (x.row(r).array() - mean).square().sum() / width;
    const double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
    cache.inv_std(r) = inv_std;
    cache.normalized.row(r) = (x.row(r).array() - mean) * inv_std;
  }
  y = cache.normalized.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
}

void layer_norm_backward(const NormCache& cache, const ConstMatrixMap& gain, const Matrix& dy, MatrixMap dgain,
                         MatrixMap dbias, Matrix& dx) {
  dgain.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const double width = static_cast<double>(dy.cols());
  Matrix dnorm = dy.array().rowwise() * gain.row(0).array();
  dx.resize(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dnorm.row(r).sum() / width;
    const double mean_dn = dnorm.row(r).dot(cache.normalized.row(r)) / width;
    dx.row(r) = cache.inv_std(r) *
                (dnorm.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dn).matrix();
  }
}

namespace {
constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

void gelu_forward(const Matrix& x, Matrix& y) {
  y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v))); });
}

void gelu_backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
  dx = x.binaryExpr(dy, [](double v, double g) {
    const double th = std::tanh(kGeluK * (v + kGeluC * v * v * v));
    const double deriv = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
    return g * deriv;
  });
}

void softmax_rows(Matrix& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double peak = scores.row(r).maxCoeff();
    scores.row(r) = (scores.row(r).array() - peak).exp();
    scores.row(r) /= scores.row(r).sum();
  }
}

void attention_forward(const Matrix& xq, const Matrix& xkv, const AttentionWeights& w, std::size_t heads,
                       Matrix& y, AttentionCache& cache) {
  linear_forward(xq, w.wq, w.bq, cache.q);
  linear_forward(xkv, w.wk, w.bk, cache.k);
  linear_forward(xkv, w.wv, w.bv, cache.v);
  const Eigen::Index width = cache.q.cols();
  const Eigen::Index dh = width / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.mixed.resize(xq.rows(), width);
  cache.probs.resize(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    Matrix& p = cache.probs[h];
    p.noalias() = cache.q.middleCols(c0, dh) * cache.k.middleCols(c0, dh).transpose();
    p *= scale;
    softmax_rows(p);
    cache.mixed.middleCols(c0, dh).noalias() = p * cache.v.middleCols(c0, dh);
  }
  linear_forward(cache.mixed, w.wo, w.bo, y);
}

void attention_backward(const Matrix& xq, const Matrix& xkv, const AttentionWeights& w, std::size_t heads,
                        const AttentionCache& cache, const Matrix& dy, AttentionGrads& g, Matrix& dxq,
                        Matrix& dxkv) {
  Matrix dmixed;
  linear_backward(cache.mixed, w.wo, dy, g.wo, g.bo, &dmixed);
  const Eigen::Index width = cache.q.cols();
  const Eigen::Index dh = width / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dq = Matrix::Zero(cache.q.rows(), width);
  Matrix dk = Matrix::Zero(cache.k.rows(), width);
  Matrix dv = Matrix::Zero(cache.v.rows(), width);
  Matrix dp, ds;
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    const Matrix& p = cache.probs[h];
    dp.noalias() = dmixed.middleCols(c0, dh) * cache.v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() = p.transpose() * dmixed.middleCols(c0, dh);
    const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
    ds = p.array() * (dp.array().colwise() - row_dot.array());
    ds *= scale;
    dq.middleCols(c0, dh).noalias() = ds * cache.k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() = ds.transpose() * cache.q.middleCols(c0, dh);
  }
  linear_backward(xq, w.wq, dq, g.wq, g.bq, &dxq);
  Matrix dx_from_v;
  linear_backward(xkv, w.wk, dk, g.wk, g.bk, &dxkv);
  linear_backward(xkv, w.wv, dv, g.wv, g.bv, &dx_from_v);
  dxkv += dx_from_v;
}

}  // namespace pathdiff::nn
