#pragma once

#include "mllc/types.hpp"

namespace mllc {

struct SlgParams {
  /// Neighbor count; kAllNeighbors connects every pair (fully connected
  /// ablation).
  Index k = 20;
  /// Scaling exponent applied to positive cosines.
  double gamma = 1.0;
  /// Worker threads for the row-parallel search.
  int threads = 1;

  static constexpr Index kAllNeighbors = -1;
};

/// Builds the semantic-level affinity matrix: for each node, the k nearest
/// neighbors by cosine similarity (ranked before clamping, ties to the lower
/// index), stored as max(0, cos)^gamma. Diagonal is absent.
SparseAffinity build_slg_affinity(const FeatureMatrix& features, const SlgParams& params);

/// Symmetric normalization D^{-1/2} (A + A^T) D^{-1/2}. Nodes whose summed
/// degree is zero keep an all-zero row/column; their count is reported via
/// isolated_count when non-null.
SparseAffinity normalize_symmetric(const SparseAffinity& raw, Index* isolated_count = nullptr);

}  // namespace mllc
