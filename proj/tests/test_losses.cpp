#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mllc/gradcheck.hpp"
#include "mllc/losses.hpp"
#include "mllc/rng.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace mllc;

namespace {

// Literal double-loop evaluation of the contrastive objective on normalized
// rows, independent of the library implementation.
double slg_oracle(const Matrixd& features, const LabelMap& pseudo, const PrototypeBank& bank,
                  double lambda, double tau) {
  const Index n = features.rows();
  Matrixd unit = features;
  for (Index i = 0; i < n; ++i) unit.row(i) /= unit.row(i).norm();

  double pair = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = unit.row(i).dot(unit.row(j));
      if (pseudo[i] == pseudo[j]) {
        pair += (d - 1.0) * (d - 1.0);
      } else {
        pair += d * d;
      }
    }
  }
  double proto = 0.0;
  for (Index i = 0; i < n; ++i) {
    double denom = 0.0;
    for (Index c = 0; c < bank.classes(); ++c) {
      if (!bank.initialized[static_cast<std::size_t>(c)]) continue;
      denom += std::exp(unit.row(i).dot(bank.protos.row(c)) / tau);
    }
    proto += std::log(std::exp(unit.row(i).dot(bank.protos.row(pseudo[i])) / tau) / denom);
  }
  return lambda * pair - (1.0 - lambda) * proto;
}

PrototypeBank random_bank(Rng& rng, Index classes, Index dim) {
  PrototypeBank bank = make_prototype_bank(classes, dim, 0.9);
  for (Index c = 0; c < classes; ++c) {
    Matrixd row = oracle::random_matrix(rng, 1, dim);
    bank.protos.row(c) = row.row(0) / row.row(0).norm();
    bank.initialized[static_cast<std::size_t>(c)] = true;
  }
  return bank;
}

}  // namespace

TEST_CASE("one-hot correct predictions give zero supervised loss") {
  ProbMatrix p(2, 3);
  p << 1, 0, 0, 0, 1, 0;
  LabelMap y(2);
  y << 0, 1;
  const CeResult ce = supervised_ce(p, y);
  CHECK(ce.value == doctest::Approx(0.0));
}

TEST_CASE("uniform predictions cost ln C per pixel") {
  ProbMatrix p = Matrixd::Constant(5, 4, 0.25);
  LabelMap y(5);
  y << 0, 1, 2, 3, 0;
  const CeResult ce = supervised_ce(p, y);
  CHECK(ce.value == doctest::Approx(std::log(4.0)));
}

TEST_CASE("ignored pixels do not contribute to the supervised loss") {
  ProbMatrix p(3, 2);
  p << 0.9, 0.1, 0.1, 0.9, 0.5, 0.5;
  LabelMap y(3);
  y << 0, kIgnoreLabel, 1;
  const CeResult ce = supervised_ce(p, y);
  CHECK(ce.value == doctest::Approx(-(std::log(0.9) + std::log(0.5)) / 2.0));
  CHECK(ce.grad.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("supervised gradient matches finite differences") {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    ProbMatrix p = oracle::random_probs(rng, 6, 3, 0.1);
    LabelMap y(6);
    for (Index i = 0; i < 6; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
    const CeResult ce = supervised_ce(p, y);
    const auto value = [&]() { return supervised_ce(p, y).value; };
    const double err =
        gradcheck::fd_max_rel_error(value, {{p.data(), ce.grad.data(), p.size()}});
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("prototypes: single pixel, symmetric pair, groupwise-mean oracle") {
  Matrixd f(2, 3);
  f << 1, 2, 3, -1, -2, -3;
  LabelMap y(2);
  y << 1, 1;
  const BatchPrototypes sym = compute_prototypes(f, y);
  CHECK(sym.protos.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(sym.present[0]);

  LabelMap single(2);
  single << 0, kIgnoreLabel;
  const BatchPrototypes one = compute_prototypes(f, single);
  CHECK((one.protos.row(0) - f.row(0)).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(2);
  const Matrixd rf = oracle::random_matrix(rng, 20, 4);
  LabelMap ry(20);
  for (Index i = 0; i < 20; ++i) ry[i] = static_cast<std::int64_t>(rng.uniform_int(3));
  const BatchPrototypes batch = compute_prototypes(rf, ry);
  for (Index c = 0; c < 3; ++c) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(4);
    Index count = 0;
    for (Index i = 0; i < 20; ++i) {
      if (ry[i] == c) {
        mean += rf.row(i);
        ++count;
      }
    }
    if (count > 0) {
      mean /= static_cast<double>(count);
      CHECK((batch.protos.row(c) - mean).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("prototype EMA: beta 0 copies, absent classes stay bit-identical") {
  Rng rng(3);
  PrototypeBank bank = make_prototype_bank(3, 4, 0.0);
  for (Index c = 0; c < 3; ++c) {
    bank.protos.row(c) = oracle::random_matrix(rng, 1, 4).row(0);
    bank.initialized[static_cast<std::size_t>(c)] = true;
  }
  BatchPrototypes batch;
  batch.protos = oracle::random_matrix(rng, 3, 4);
  batch.present = {true, false, true};
  const Matrixd before = bank.protos;
  ema_update_prototypes(bank, batch);
  CHECK(bank.protos.row(0) == batch.protos.row(0));  // beta = 0: no memory
  CHECK(bank.protos.row(1) == before.row(1));        // absent: untouched
  CHECK(bank.protos.row(2) == batch.protos.row(2));
}

TEST_CASE("prototype EMA converges geometrically to a constant target") {
  Rng rng(4);
  PrototypeBank bank = make_prototype_bank(1, 5, 0.9);
  bank.protos.row(0) = oracle::random_matrix(rng, 1, 5).row(0);
  bank.initialized[0] = true;
  BatchPrototypes batch;
  batch.protos = oracle::random_matrix(rng, 1, 5);
  batch.present = {true};
  const double gap0 = (bank.protos.row(0) - batch.protos.row(0)).norm();
  for (int t = 1; t <= 20; ++t) {
    ema_update_prototypes(bank, batch);
    const double gap = (bank.protos.row(0) - batch.protos.row(0)).norm();
    CHECK(gap <= std::pow(0.9, t) * gap0 + 1e-9);
  }
}

TEST_CASE("literal EMA direction weights the fresh batch by beta") {
  PrototypeBank bank = make_prototype_bank(1, 2, 0.99);
  bank.protos.row(0) << 1.0, 0.0;
  bank.initialized[0] = true;
  BatchPrototypes batch;
  batch.protos = Matrixd(1, 2);
  batch.protos << 0.0, 1.0;
  batch.present = {true};
  ema_update_prototypes(bank, batch, /*literal_direction=*/true);
  CHECK(bank.protos(0, 0) == doctest::Approx(0.01));
  CHECK(bank.protos(0, 1) == doctest::Approx(0.99));
}

TEST_CASE("perfectly aligned features with one class cost nothing") {
  Matrixd f(4, 3);
  for (Index i = 0; i < 4; ++i) f.row(i) << 2.0, 0.0, 0.0;
  LabelMap y = LabelMap::Zero(4);
  PrototypeBank bank = make_prototype_bank(1, 3, 0.9);
  bank.protos.row(0) << 1.0, 0.0, 0.0;
  bank.initialized[0] = true;
  LossConfig cfg;
  cfg.pair_cap = 0;
  const SlgLossResult loss = slg_contrastive_loss(f, y, bank, cfg);
  CHECK(loss.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("orthogonal negatives contribute nothing to the pair term") {
  Matrixd f(2, 2);
  f << 1, 0, 0, 1;
  LabelMap y(2);
  y << 0, 1;
  PrototypeBank bank = make_prototype_bank(2, 2, 0.9);
  bank.protos << 1, 0, 0, 1;
  bank.initialized = {true, true};
  LossConfig cfg;
  cfg.lambda_balance = 1.0;  // pair term only
  cfg.pair_cap = 0;
  const SlgLossResult loss = slg_contrastive_loss(f, y, bank, cfg);
  CHECK(loss.value == doctest::Approx(0.0));
}

TEST_CASE("contrastive value matches the double-loop oracle") {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const Matrixd f = oracle::random_matrix(rng, 16, 4);
    LabelMap y(16);
    for (Index i = 0; i < 16; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
    const PrototypeBank bank = random_bank(rng, 3, 4);
    LossConfig cfg;
    cfg.pair_cap = 0;
    const SlgLossResult loss = slg_contrastive_loss(f, y, bank, cfg);
    CHECK(loss.value ==
          doctest::Approx(slg_oracle(f, y, bank, cfg.lambda_balance, cfg.tau)).epsilon(1e-10));
  }
}

TEST_CASE("contrastive gradient matches finite differences") {
  Rng rng(6);
  Matrixd f = oracle::random_matrix(rng, 8, 3);
  LabelMap y(8);
  for (Index i = 0; i < 8; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(2));
  const PrototypeBank bank = random_bank(rng, 2, 3);
  LossConfig cfg;
  cfg.pair_cap = 0;
  const SlgLossResult loss = slg_contrastive_loss(f, y, bank, cfg);
  const auto value = [&]() { return slg_contrastive_loss(f, y, bank, cfg).value; };
  CHECK(gradcheck::fd_max_rel_error(value, {{f.data(), loss.grad.data(), f.size()}}) <= 1e-4);
}

TEST_CASE("contrastive loss is invariant under pixel permutation") {
  Rng rng(7);
  const Index n = 12;
  const Matrixd f = oracle::random_matrix(rng, n, 4);
  LabelMap y(n);
  for (Index i = 0; i < n; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
  const PrototypeBank bank = random_bank(rng, 3, 4);
  LossConfig cfg;
  cfg.pair_cap = 0;
  const double base = slg_contrastive_loss(f, y, bank, cfg).value;

  Matrixd f2(n, 4);
  LabelMap y2(n);
  for (Index i = 0; i < n; ++i) {
    f2.row((i + 5) % n) = f.row(i);
    y2[(i + 5) % n] = y[i];
  }
  CHECK(slg_contrastive_loss(f2, y2, bank, cfg).value == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("sampled pair term is deterministic for a fixed seed") {
  Rng rng(8);
  const Matrixd f = oracle::random_matrix(rng, 30, 4);
  LabelMap y(30);
  for (Index i = 0; i < 30; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
  const PrototypeBank bank = random_bank(rng, 3, 4);
  LossConfig cfg;
  cfg.pair_cap = 64;
  cfg.pair_seed = 17;
  const double a = slg_contrastive_loss(f, y, bank, cfg).value;
  const double b = slg_contrastive_loss(f, y, bank, cfg).value;
  CHECK(a == b);
  cfg.pair_seed = 18;
  CHECK(slg_contrastive_loss(f, y, bank, cfg).value != a);
}

TEST_CASE("rows with uninitialized prototype classes are skipped and counted") {
  Rng rng(9);
  const Matrixd f = oracle::random_matrix(rng, 4, 3);
  LabelMap y(4);
  y << 0, 1, 1, 0;
  PrototypeBank bank = make_prototype_bank(2, 3, 0.9);
  bank.protos.row(0) << 1, 0, 0;
  bank.initialized = {true, false};
  LossConfig cfg;
  cfg.pair_cap = 0;
  const SlgLossResult loss = slg_contrastive_loss(f, y, bank, cfg);
  CHECK(loss.skipped_rows == 2);  // the two label-1 rows skip the prototype term
}

TEST_CASE("one-hot agreement zeroes the weighted CE") {
  ProbMatrix p(3, 2);
  p << 1, 0, 0, 1, 1, 0;
  LabelMap y(3);
  y << 0, 1, 0;
  const ClgLossResult loss = clg_weighted_ce({p}, y);
  CHECK(loss.value == doctest::Approx(0.0));
}

TEST_CASE("uniform two-class round costs half ln 2 per pixel") {
  ProbMatrix p = Matrixd::Constant(4, 2, 0.5);
  LabelMap y(4);
  y << 0, 1, 0, 1;
  const ClgLossResult loss = clg_weighted_ce({p}, y);
  CHECK(loss.value == doctest::Approx(0.5 * std::log(2.0)));
}

TEST_CASE("weighted CE matches the direct formula over random rounds") {
  Rng rng(10);
  std::vector<ProbMatrix> rounds = {oracle::random_probs(rng, 7, 3),
                                    oracle::random_probs(rng, 7, 3)};
  LabelMap y(7);
  for (Index i = 0; i < 7; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
  const ClgLossResult loss = clg_weighted_ce(rounds, y);
  double expected = 0.0;
  for (const auto& p : rounds) {
    for (Index i = 0; i < 7; ++i) {
      expected -= p(i, y[i]) * std::log(p(i, y[i])) / 7.0;
    }
  }
  CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(loss.per_round.size() == 2);
}

TEST_CASE("disabling the dynamic weight reduces to plain CE") {
  Rng rng(11);
  const ProbMatrix p = oracle::random_probs(rng, 5, 2);
  LabelMap y(5);
  for (Index i = 0; i < 5; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(2));
  const ClgLossResult loss = clg_weighted_ce({p}, y, /*dynamic_weight=*/false);
  double expected = 0.0;
  for (Index i = 0; i < 5; ++i) expected -= std::log(p(i, y[i])) / 5.0;
  CHECK(loss.value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss assembly is the documented weighted sum") {
  LossConfig cfg;
  CHECK(total_unsup_loss({0, 0}, {0, 0}, cfg) == 0.0);

  cfg.lambda_slg = 0.0;
  cfg.lambda_clg = 2.0;
  CHECK(total_unsup_loss({5, 7}, {1, 2}, cfg) == doctest::Approx(6.0));

  Rng rng(12);
  cfg.lambda_slg = rng.uniform();
  cfg.lambda_clg = rng.uniform();
  const std::vector<double> slg = {rng.normal(), rng.normal()};
  const std::vector<double> clg = {rng.normal(), rng.normal()};
  CHECK(total_unsup_loss(slg, clg, cfg) ==
        doctest::Approx(cfg.lambda_slg * (slg[0] + slg[1]) + cfg.lambda_clg * (clg[0] + clg[1])));

  cfg.lambda_unsup = 0.0;
  CHECK(total_loss(3.5, 100.0, cfg) == 3.5);
  cfg.lambda_unsup = 1.0;
  CHECK(total_loss(1.0, 2.0, cfg) == 3.0);
}

TEST_CASE("losses are nonnegative up to rounding") {
  Rng rng(13);
  for (int t = 0; t < 20; ++t) {
    const ProbMatrix p = oracle::random_probs(rng, 6, 3);
    LabelMap y(6);
    for (Index i = 0; i < 6; ++i) y[i] = static_cast<std::int64_t>(rng.uniform_int(3));
    CHECK(supervised_ce(p, y).value >= -1e-12);
    CHECK(clg_weighted_ce({p}, y).value >= -1e-12);

    const Matrixd f = oracle::random_matrix(rng, 6, 4);
    const PrototypeBank bank = random_bank(rng, 3, 4);
    LossConfig cfg;
    cfg.pair_cap = 0;
    cfg.lambda_balance = 1.0;  // the pair term alone is a sum of squares
    CHECK(slg_contrastive_loss(f, y, bank, cfg).value >= -1e-12);
  }
}
