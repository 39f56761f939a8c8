#pragma once

#include "mllc/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mllc::gradcheck {

constexpr double kEpsilon = 1e-5;
constexpr double kRelTol = 1e-4;

struct FdSlot {
  double* data = nullptr;
  const double* grad = nullptr;
  Index size = 0;
};

/// Central finite differences over every coordinate of every slot against
/// the provided analytic gradients; returns the worst relative error.
double fd_max_rel_error(const std::function<double()>& value, const std::vector<FdSlot>& slots,
                        double eps = kEpsilon);

struct SuiteResult {
  std::string name;
  Index configs = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct Report {
  std::vector<SuiteResult> suites;

  bool all_passed() const {
    for (const auto& s : suites) {
      if (!s.passed) return false;
    }
    return true;
  }
};

/// Runs every finite-difference suite: layer backward over all activations,
/// the supervised and CLG cross-entropies (feedback weight detached), the
/// SLG contrastive loss in exhaustive and sampled modes, and the refinement
/// pipeline with frozen edges.
Report run_all(std::uint64_t seed, Index configs_per_op = 50);

}  // namespace mllc::gradcheck
