#pragma once

#include "mllc/types.hpp"

#include <filesystem>
#include <variant>
#include <vector>

namespace mllc::npy {

// NPY v1.0 only: magic 0x93 "NUMPY", version 1.0, little-endian C-order
// payloads, dtype "<f8" or "<i8", rank 1 or 2.

struct Array {
  std::vector<Index> shape;  // 1 or 2 entries
  std::variant<std::vector<double>, std::vector<std::int64_t>> payload;

  bool is_float() const { return payload.index() == 0; }
  Index rows() const { return shape.empty() ? 0 : shape[0]; }
  Index cols() const { return shape.size() >= 2 ? shape[1] : 1; }
};

Array load(const std::filesystem::path& path);

/// Loads a rank-2 (or rank-1, treated as n x 1) float64 array.
Matrixd load_matrix(const std::filesystem::path& path);

/// Loads a rank-1 int64 array.
LabelMap load_labels(const std::filesystem::path& path);

void save(const Matrixd& matrix, const std::filesystem::path& path);
void save(const LabelMap& labels, const std::filesystem::path& path);
void save(const Vectord& vec, const std::filesystem::path& path);

}  // namespace mllc::npy
