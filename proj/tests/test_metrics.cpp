#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mllc/metrics.hpp"
#include "mllc/rng.hpp"

using namespace mllc;

TEST_CASE("perfect predictions give a diagonal matrix and mIoU 1") {
  LabelMap gt(6);
  gt << 0, 1, 2, 0, 1, 2;
  const ConfusionMatrix cm = confusion(gt, gt, 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      CHECK(cm.counts(i, j) == (i == j ? 2 : 0));
    }
  }
  CHECK(miou(cm).miou == doctest::Approx(1.0));
}

TEST_CASE("fully ignored input yields a zero matrix") {
  LabelMap gt = LabelMap::Constant(5, kIgnoreLabel);
  LabelMap pred = LabelMap::Zero(5);
  const ConfusionMatrix cm = confusion(pred, gt, 3);
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(miou(cm), ContractError);
}

TEST_CASE("confusion matches a brute-force tally") {
  Rng rng(1);
  const Index n = 500;
  LabelMap gt(n), pred(n);
  for (Index i = 0; i < n; ++i) {
    gt[i] = rng.uniform_int(10) == 0 ? kIgnoreLabel
                                     : static_cast<std::int64_t>(rng.uniform_int(4));
    pred[i] = static_cast<std::int64_t>(rng.uniform_int(4));
  }
  const ConfusionMatrix cm = confusion(pred, gt, 4);
  Matrix<std::int64_t> tally = Matrix<std::int64_t>::Zero(4, 4);
  Index counted = 0;
  for (Index i = 0; i < n; ++i) {
    if (gt[i] == kIgnoreLabel) continue;
    ++tally(gt[i], pred[i]);
    ++counted;
  }
  CHECK(cm.counts == tally);
  CHECK(cm.total() == counted);  // counts conserve pixel totals
}

TEST_CASE("the 2-class hand count gives mIoU 0.6") {
  ConfusionMatrix cm;
  cm.counts = Matrix<std::int64_t>(2, 2);
  cm.counts << 3, 1, 1, 3;
  const MiouResult m = miou(cm);
  CHECK(m.per_class[0] == doctest::Approx(0.6));
  CHECK(m.per_class[1] == doctest::Approx(0.6));
  CHECK(m.miou == doctest::Approx(0.6));
}

TEST_CASE("classes with empty unions are excluded from the mean") {
  ConfusionMatrix cm;
  cm.counts = Matrix<std::int64_t>::Zero(3, 3);
  cm.counts(0, 0) = 4;
  cm.counts(1, 1) = 2;
  cm.counts(1, 0) = 2;
  const MiouResult m = miou(cm);
  CHECK(std::isnan(m.per_class[2]));
  CHECK(m.miou == doctest::Approx(0.5 * (4.0 / 6.0 + 0.5)));
}

TEST_CASE("mIoU is invariant under a shared class permutation") {
  Rng rng(2);
  const Index n = 300;
  LabelMap gt(n), pred(n);
  for (Index i = 0; i < n; ++i) {
    gt[i] = static_cast<std::int64_t>(rng.uniform_int(3));
    pred[i] = static_cast<std::int64_t>(rng.uniform_int(3));
  }
  const double base = miou(confusion(pred, gt, 3)).miou;

  const std::int64_t perm[3] = {2, 0, 1};
  LabelMap gt2(n), pred2(n);
  for (Index i = 0; i < n; ++i) {
    gt2[i] = perm[gt[i]];
    pred2[i] = perm[pred[i]];
  }
  CHECK(miou(confusion(pred2, gt2, 3)).miou == doctest::Approx(base).epsilon(1e-14));
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);
}

TEST_CASE("pseudo-label accuracy and corrected-flip accounting") {
  LabelMap gt(4);
  gt << 0, 1, 0, 1;
  CHECK(pseudo_label_accuracy(gt, gt).accuracy == doctest::Approx(1.0));

  LabelMap pseudo(4);
  pseudo << 0, 0, 0, 1;
  const std::vector<Index> flips = {1, 2};
  const PseudoAccuracy acc = pseudo_label_accuracy(pseudo, gt, &flips);
  CHECK(acc.accuracy == doctest::Approx(0.75));
  CHECK(acc.corrected_flip_fraction == doctest::Approx(0.5));

  LabelMap all_wrong(4);
  all_wrong << 1, 0, 1, 0;
  CHECK(pseudo_label_accuracy(all_wrong, gt, &flips).corrected_flip_fraction == 0.0);

  CHECK_THROWS_AS(pseudo_label_accuracy(LabelMap::Zero(3), gt), ContractError);
}

TEST_CASE("per-pixel comparison oracle over random instances") {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const Index n = 100;
    LabelMap gt(n), pseudo(n);
    for (Index i = 0; i < n; ++i) {
      gt[i] = static_cast<std::int64_t>(rng.uniform_int(3));
      pseudo[i] = static_cast<std::int64_t>(rng.uniform_int(3));
    }
    Index agree = 0;
    for (Index i = 0; i < n; ++i) agree += pseudo[i] == gt[i] ? 1 : 0;
    CHECK(pseudo_label_accuracy(pseudo, gt).accuracy ==
          doctest::Approx(static_cast<double>(agree) / n));
  }
}
