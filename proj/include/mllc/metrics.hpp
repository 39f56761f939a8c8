#pragma once

#include "mllc/types.hpp"

#include <vector>

namespace mllc {

/// Pixel tally, rows = ground truth, cols = prediction. Pixels where either
/// side carries the IGNORE sentinel are not counted.
struct ConfusionMatrix {
  Matrix<std::int64_t> counts;

  Index classes() const { return counts.rows(); }
  std::int64_t total() const { return counts.sum(); }
};

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, Index num_classes);

struct MiouResult {
  double miou = 0.0;
  std::vector<double> per_class;  // NaN for classes with empty union
};

/// IoU_c = TP / (TP + FP + FN); classes with an empty union are excluded
/// from the mean rather than scored zero.
MiouResult miou(const ConfusionMatrix& cm);

struct PseudoAccuracy {
  double accuracy = 0.0;
  /// Fraction of the supplied flip list now matching ground truth; NaN when
  /// no flip list was given.
  double corrected_flip_fraction = 0.0;
  bool has_flips = false;
};

PseudoAccuracy pseudo_label_accuracy(const LabelMap& pseudo, const LabelMap& gt,
                                     const std::vector<Index>* flips = nullptr);

}  // namespace mllc
