#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pathdiff::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
// Flat parameter and gradient storage. A fixed base alignment keeps Eigen's
// vectorized reductions over mapped slices in the same summation order
// across allocations, which makes training bit-reproducible.
using FlatVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

/// Named regions of one flat parameter vector, in insertion order.
class ParameterLayout {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::size_t size() const { return size_; }
  const ParamSlot& at(std::size_t index) const { return slots_.at(index); }

 private:
  std::vector<ParamSlot> slots_;
  std::size_t size_ = 0;
};

inline ConstMatrixMap view(const std::vector<double>& buffer, const ParamSlot& slot) {
  return {buffer.data() + slot.offset, static_cast<Eigen::Index>(slot.rows), static_cast<Eigen::Index>(slot.cols)};
}
inline MatrixMap view(std::vector<double>& buffer, const ParamSlot& slot) {
  return {buffer.data() + slot.offset, static_cast<Eigen::Index>(slot.rows), static_cast<Eigen::Index>(slot.cols)};
}

// y = x W + b (W is in x out, b is 1 x out).
void linear_forward(const Matrix& x, const ConstMatrixMap& w, const ConstMatrixMap& b, Matrix& y);
// Accumulates into dw/db; writes dx when non-null.
void linear_backward(const Matrix& x, const ConstMatrixMap& w, const Matrix& dy, MatrixMap dw, MatrixMap db,
                     Matrix* dx);

struct NormCache {
  Matrix normalized;
  Eigen::VectorXd inv_std;
};

inline constexpr double kNormEpsilon = 1e-5;

/// Row-wise layer normalization with gain and bias (1 x d each).
void layer_norm_forward(const Matrix& x, const ConstMatrixMap& gain, const ConstMatrixMap& bias, Matrix& y,
                        NormCache& cache);
void layer_norm_backward(const NormCache& cache, const ConstMatrixMap& gain, const Matrix& dy, MatrixMap dgain,
                         MatrixMap dbias, Matrix& dx);

/// tanh-approximated GELU.
void gelu_forward(const Matrix& x, Matrix& y);
void gelu_backward(const Matrix& x, const Matrix& dy, Matrix& dx);

/// Row-wise softmax, numerically shifted.
void softmax_rows(Matrix& scores);

struct AttentionWeights {
  ConstMatrixMap wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttentionGrads {
  MatrixMap wq, bq, wk, bk, wv, bv, wo, bo;
};

struct AttentionCache {
  Matrix q, k, v, mixed;
  std::vector<Matrix> probs;  ///< one (queries x keys) matrix per head
};

/// Multi-head scaled dot-product attention: queries from xq, keys and
/// values from xkv.
void attention_forward(const Matrix& xq, const Matrix& xkv, const AttentionWeights& w, std::size_t heads,
                       Matrix& y, AttentionCache& cache);
/// Writes dxq and dxkv (not accumulated).
void attention_backward(const Matrix& xq, const Matrix& xkv, const AttentionWeights& w, std::size_t heads,
                        const AttentionCache& cache, const Matrix& dy, AttentionGrads& g, Matrix& dxq,
                        Matrix& dxkv);

}  // namespace pathdiff::nn
