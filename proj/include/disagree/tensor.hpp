#pragma once

#include <Eigen/Dense>

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace disagree {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Dense row-major real array. Rank-1 data is stored as a single row; a
/// batch of n vectors of dimension d is an n x d tensor.
using Tensor = MatrixX<double>;
using RowVector = RowVectorX<double>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::vector<Index> shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << " x " << cols << "]";
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// Row-wise one-hot encoding of action indices.
inline Tensor one_hot(const std::vector<int>& indices, Index width) {
  Tensor out = Tensor::Zero(static_cast<Index>(indices.size()), width);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= width) {
      throw std::out_of_range("one_hot: index " + std::to_string(indices[i]) +
                              " outside [0, " + std::to_string(width) + ")");
    }
    out(static_cast<Index>(i), indices[i]) = 1.0;
  }
  return out;
}

}  // namespace disagree
