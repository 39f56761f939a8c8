#include "mllc/slg.hpp"

#include "mllc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mllc {

namespace {

constexpr double kNormFloor = 1e-300;

double clamp_pow(double cosine, double gamma) {
  if (cosine <= 0.0) return 0.0;  // [.]_+ first; 0^gamma defined as 0
  if (gamma == 1.0) return cosine;
  return std::pow(cosine, gamma);
}

}  // namespace

SparseAffinity build_slg_affinity(const FeatureMatrix& features, const SlgParams& params) {
  const Index n = features.rows();
  const bool all = params.k == SlgParams::kAllNeighbors;
  if (!all && params.k < 1) throw ParameterError("neighbor count k must be >= 1");
  if (!all && params.k >= n) {
    throw ParameterError("neighbor count k must be less than the node count");
  }
  if (params.gamma <= 0.0) throw ParameterError("gamma must be positive");

  FeatureMatrix unit = features;
  for (Index i = 0; i < n; ++i) {
    const double norm = unit.row(i).norm();
    if (!(norm > kNormFloor)) {
      throw ValidationError("degenerate feature: zero-norm row " + std::to_string(i));
    }
    unit.row(i) /= norm;
  }

  const Index per_row = all ? n - 1 : std::min(params.k, n - 1);
  std::vector<Index> cols(static_cast<std::size_t>(n * per_row));
  std::vector<double> vals(static_cast<std::size_t>(n * per_row));

  // Blockwise exhaustive search: one strip of the cosine Gram matrix at a
  // time keeps memory at O(block * n).
  const Index block = 256;
  const Index num_blocks = (n + block - 1) / block;
  parallel_for(num_blocks, params.threads, [&](Index b_begin, Index b_end) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index b = b_begin; b < b_end; ++b) {
      const Index row0 = b * block;
      const Index rows = std::min(block, n - row0);
      const Matrixd gram = unit.middleRows(row0, rows) * unit.transpose();
      for (Index r = 0; r < rows; ++r) {
        const Index i = row0 + r;
        Index count = 0;
        for (Index j = 0; j < n; ++j) {
          if (j != i) order[static_cast<std::size_t>(count++)] = j;
        }
        // Rank by raw cosine, ties to the lower index.
        const auto better = [&](Index a, Index c) {
          const double ga = gram(r, a);
          const double gc = gram(r, c);
          return ga > gc || (ga == gc && a < c);
        };
        if (per_row < count) {
          std::nth_element(order.begin(), order.begin() + per_row, order.begin() + count, better);
        }
        std::sort(order.begin(), order.begin() + per_row);  // CSR wants ascending columns
        for (Index e = 0; e < per_row; ++e) {
          const Index j = order[static_cast<std::size_t>(e)];
          cols[static_cast<std::size_t>(i * per_row + e)] = j;
          vals[static_cast<std::size_t>(i * per_row + e)] = clamp_pow(gram(r, j), params.gamma);
        }
      }
    }
  });

  SparseAffinity affinity(n, n);
  affinity.reserve(Eigen::VectorXi::Constant(static_cast<int>(n), static_cast<int>(per_row)));
  for (Index i = 0; i < n; ++i) {
    for (Index e = 0; e < per_row; ++e) {
      affinity.insert(i, cols[static_cast<std::size_t>(i * per_row + e)]) =
          vals[static_cast<std::size_t>(i * per_row + e)];
    }
  }
  affinity.makeCompressed();
  return affinity;
}

SparseAffinity normalize_symmetric(const SparseAffinity& raw, Index* isolated_count) {
  const Index n = raw.rows();
  SparseAffinity sym = raw;
  SparseAffinity raw_t = SparseAffinity(raw.transpose());
  sym += raw_t;

  Vectord degree = Vectord::Zero(n);
  for (Index i = 0; i < n; ++i) {
    for (SparseAffinity::InnerIterator it(sym, i); it; ++it) degree[i] += it.value();
  }

  Index isolated = 0;
  Vectord inv_sqrt = Vectord::Zero(n);
  for (Index i = 0; i < n; ++i) {
    if (degree[i] > 0.0) {
      inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
    } else {
      ++isolated;  // row and column stay all-zero; no self-loop is invented
    }
  }
  if (isolated_count != nullptr) *isolated_count = isolated;

  for (Index i = 0; i < n; ++i) {
    for (SparseAffinity::InnerIterator it(sym, i); it; ++it) {
      it.valueRef() = it.value() * inv_sqrt[i] * inv_sqrt[it.col()];
    }
  }
  sym.makeCompressed();
  return sym;
}

}  // namespace mllc
