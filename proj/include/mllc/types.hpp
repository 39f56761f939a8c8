#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mllc {

// Dense storage is row-major throughout: pixel i lives in row i and the
// layout matches C-order NPY payloads byte for byte.
template <typename Scalar = double>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar = double>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrixd = Matrix<double>;
using Vectord = Vector<double>;
using Index = Eigen::Index;

/// Per-pixel embedding features, one row per pixel.
using FeatureMatrix = Matrixd;

/// Per-pixel class probabilities, rows on the simplex.
using ProbMatrix = Matrixd;

/// Per-pixel integer labels; kIgnoreLabel marks unscored pixels.
using LabelMap = Vector<std::int64_t>;

/// Sparse nonnegative affinity/consistency matrix, CSR layout.
using SparseAffinity = Eigen::SparseMatrix<double, Eigen::RowMajor>;

constexpr std::int64_t kIgnoreLabel = -1;

struct GridShape {
  Index rows = 0;     // H
  Index cols = 0;     // W
  Index classes = 0;  // C
  Index embed_dim = 0;  // m

  Index pixels() const { return rows * cols; }
};

// Error taxonomy. The CLI maps ParameterError/ValidationError/FormatError/
// UnsupportedError to exit code 2 and everything else to 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct ParameterError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

/// Row tolerance for the probability-simplex invariant.
constexpr double kSimplexTol = 1e-9;

void validate_features(const FeatureMatrix& features);
void validate_probs(const ProbMatrix& probs);
void validate_labels(const LabelMap& labels, Index num_classes);
void validate_grid(const GridShape& grid);

/// Row-wise argmax with ties broken toward the lowest class index.
Index argmax_row(const Matrixd& m, Index row);

}  // namespace mllc
