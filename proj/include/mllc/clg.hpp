#pragma once

#include "mllc/types.hpp"

#include <cstdint>

namespace mllc {

struct ClgParams {
  /// Nodes per class joining the dense block; larger classes are subsampled
  /// with a seeded uniform draw. <= 0 disables the cap.
  Index class_cap = 1024;
  std::uint64_t seed = 0;
  /// Optional node mask: entries equal to kIgnoreLabel keep only their
  /// self-loop and join no class block.
  const LabelMap* mask = nullptr;
};

/// Builds the class-level consistency matrix: unit diagonal, and the dot
/// product of probability rows between distinct nodes sharing an argmax
/// class (ties toward the lowest class index). Everything else is absent.
SparseAffinity build_clg_affinity(const ProbMatrix& probs, const ClgParams& params = {});

/// Symmetric normalization D^{-1/2} W D^{-1/2} without the transpose sum;
/// the unit diagonal guarantees positive degrees.
SparseAffinity normalize_clg(const SparseAffinity& raw);

}  // namespace mllc
