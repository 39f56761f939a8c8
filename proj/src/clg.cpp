#include "mllc/clg.hpp"

#include "mllc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mllc {

SparseAffinity build_clg_affinity(const ProbMatrix& probs, const ClgParams& params) {
  const Index n = probs.rows();
  const Index classes = probs.cols();
  if (params.mask != nullptr && params.mask->size() != n) {
    throw ContractError("mask length does not match node count");
  }

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(classes));
  for (Index i = 0; i < n; ++i) {
    if (params.mask != nullptr && (*params.mask)[i] == kIgnoreLabel) continue;
    members[static_cast<std::size_t>(argmax_row(probs, i))].push_back(i);
  }

  // Oversized classes are thinned to the cap with a seeded uniform draw so
  // the quadratic block stays tractable.
  Rng rng(Rng::mix(params.seed, 0x11c));
  if (params.class_cap > 0) {
    const auto cap = static_cast<std::size_t>(params.class_cap);
    for (auto& block : members) {
      if (block.size() <= cap) continue;
      for (std::size_t i = 0; i < cap; ++i) {  // partial Fisher-Yates
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(block.size() - i));
        std::swap(block[i], block[j]);
      }
      block.resize(cap);
      std::sort(block.begin(), block.end());
    }
  }

  std::vector<Eigen::Triplet<double>> triplets;
  std::size_t nnz = static_cast<std::size_t>(n);
  for (const auto& block : members) nnz += block.size() * (block.size() - 1);
  triplets.reserve(nnz);

  for (Index i = 0; i < n; ++i) triplets.emplace_back(i, i, 1.0);
  for (const auto& block : members) {
    for (std::size_t a = 0; a < block.size(); ++a) {
      for (std::size_t b = a + 1; b < block.size(); ++b) {
        const Index i = block[a];
        const Index j = block[b];
        const double w = probs.row(i).dot(probs.row(j));
        triplets.emplace_back(i, j, w);
        triplets.emplace_back(j, i, w);
      }
    }
  }

  SparseAffinity affinity(n, n);
  affinity.setFromTriplets(triplets.begin(), triplets.end());
  affinity.makeCompressed();
  return affinity;
}

SparseAffinity normalize_clg(const SparseAffinity& raw) {
  const Index n = raw.rows();
  Vectord degree = Vectord::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (SparseAffinity::InnerIterator it(raw, i); it; ++it) degree[i] += it.value();
  }

  Vectord inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    if (!(degree[i] > 0.0)) {
      throw ContractError("non-positive degree at node " + std::to_string(i) +
                          "; raw matrix must carry a unit diagonal");
    }
    inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
  }

  SparseAffinity out = raw;
  for (Index i = 0; i < n; ++i) {
    for (SparseAffinity::InnerIterator it(out, i); it; ++it) {
      it.valueRef() = it.value() * inv_sqrt[i] * inv_sqrt[it.col()];
    }
  }
  out.makeCompressed();
  return out;
}

}  // namespace mllc
