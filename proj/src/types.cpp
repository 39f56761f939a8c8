#include "mllc/types.hpp"

#include <cmath>

namespace mllc {

void validate_features(const FeatureMatrix& features) {
  for (Index i = 0; i < features.rows(); ++i) {
    for (Index j = 0; j < features.cols(); ++j) {
      if (!std::isfinite(features(i, j))) {
        throw ValidationError("feature matrix has non-finite entry at row " + std::to_string(i));
      }
    }
  }
}

void validate_probs(const ProbMatrix& probs) {
  for (Index i = 0; i < probs.rows(); ++i) {
    double sum = 0.0;
    for (Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
        throw ValidationError("probability out of [0,1] at row " + std::to_string(i));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSimplexTol) {
      throw ValidationError("probability row does not sum to 1 at row " + std::to_string(i));
    }
  }
}

void validate_labels(const LabelMap& labels, Index num_classes) {
  for (Index i = 0; i < labels.size(); ++i) {
    const std::int64_t y = labels[i];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || y >= num_classes) {
      throw ValidationError("label out of range at row " + std::to_string(i));
    }
  }
}

void validate_grid(const GridShape& grid) {
  if (grid.rows <= 0 || grid.cols <= 0 || grid.classes <= 0 || grid.embed_dim <= 0) {
    throw ValidationError("grid shape fields must be strictly positive");
  }
}

Index argmax_row(const Matrixd& m, Index row) {
  Index best = 0;
  double best_val = m(row, 0);
  for (Index j = 1; j < m.cols(); ++j) {
    if (m(row, j) > best_val) {
      best_val = m(row, j);
      best = j;
    }
  }
  return best;
}

}  // namespace mllc
