#include "mllc/metrics.hpp"

#include <cmath>

namespace mllc {

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, Index num_classes) {
  if (pred.size() != gt.size()) throw ContractError("prediction/ground-truth length mismatch");
  ConfusionMatrix cm;
  cm.counts = Matrix<std::int64_t>::Zero(num_classes, num_classes);
  for (Index i = 0; i < pred.size(); ++i) {
    const std::int64_t g = gt[i];
    const std::int64_t p = pred[i];
    if (g == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes) {
      throw ValidationError("label out of range at row " + std::to_string(i));
    }
    ++cm.counts(g, p);
  }
  return cm;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const Index classes = cm.classes();
  MiouResult result;
  result.per_class.assign(static_cast<std::size_t>(classes),
                          std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  Index scored = 0;
  for (Index c = 0; c < classes; ++c) {
    const std::int64_t tp = cm.counts(c, c);
    const std::int64_t fn = cm.counts.row(c).sum() - tp;
    const std::int64_t fp = cm.counts.col(c).sum() - tp;
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent from both sides
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    result.per_class[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++scored;
  }
  if (scored == 0) throw ContractError("mIoU undefined: every class has an empty union");
  result.miou = sum / static_cast<double>(scored);
  return result;
}

PseudoAccuracy pseudo_label_accuracy(const LabelMap& pseudo, const LabelMap& gt,
                                     const std::vector<Index>* flips) {
  if (pseudo.size() != gt.size()) throw ContractError("pseudo/ground-truth length mismatch");
  PseudoAccuracy result;
  Index correct = 0;
  Index counted = 0;
  for (Index i = 0; i < pseudo.size(); ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    ++counted;
    if (pseudo[i] == gt[i]) ++correct;
  }
  result.accuracy = counted > 0 ? static_cast<double>(correct) / counted : 0.0;
  if (flips != nullptr) {
    result.has_flips = true;
    if (flips->empty()) {
      result.corrected_flip_fraction = 0.0;
    } else {
      Index fixed = 0;
      for (Index i : *flips) {
        if (pseudo[i] == gt[i]) ++fixed;
      }
      result.corrected_flip_fraction =
          static_cast<double>(fixed) / static_cast<double>(flips->size());
    }
  } else {
    result.corrected_flip_fraction = std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

}  // namespace mllc
