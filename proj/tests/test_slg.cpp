#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mllc/slg.hpp"
#include "mllc/rng.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>

using namespace mllc;

TEST_CASE("two identical unit vectors connect with weight one") {
  FeatureMatrix f(2, 3);
  f << 1, 0, 0, 1, 0, 0;
  SlgParams params;
  params.k = 1;
  const SparseAffinity a = build_slg_affinity(f, params);
  const Matrixd dense = oracle::to_dense(a);
  CHECK(dense(0, 1) == doctest::Approx(1.0));
  CHECK(dense(1, 0) == doctest::Approx(1.0));
  CHECK(dense(0, 0) == 0.0);
  CHECK(dense(1, 1) == 0.0);
}

TEST_CASE("orthogonal features store clamped zeros") {
  FeatureMatrix f = Matrixd::Identity(4, 4);
  SlgParams params;
  params.k = 2;
  const SparseAffinity a = build_slg_affinity(f, params);
  for (Index i = 0; i < a.rows(); ++i) {
    Index stored = 0;
    for (SparseAffinity::InnerIterator it(a, i); it; ++it) {
      CHECK(it.value() == 0.0);
      ++stored;
    }
    CHECK(stored == 2);  // pattern present even though values clamp to zero
  }
}

TEST_CASE("kNN selection matches the exhaustive oracle") {
  Rng rng(5);
  const FeatureMatrix f = oracle::random_matrix(rng, 5, 3);
  SlgParams params;
  params.k = 2;
  const SparseAffinity a = build_slg_affinity(f, params);
  const auto expected = oracle::dense_slg(f, 2, 1.0);
  CHECK(oracle::pattern_of(a) == expected.pattern);
  CHECK((oracle::to_dense(a) - expected.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("two-node normalization matches the hand computation") {
  SparseAffinity raw(2, 2);
  raw.insert(0, 1) = 1.0;
  raw.insert(1, 0) = 1.0;
  raw.makeCompressed();
  const SparseAffinity a = normalize_symmetric(raw);
  const Matrixd dense = oracle::to_dense(a);
  CHECK(dense(0, 1) == doctest::Approx(1.0));
  CHECK(dense(1, 0) == doctest::Approx(1.0));
  CHECK(dense(0, 0) == 0.0);
}

TEST_CASE("normalization satisfies the degree eigenvector identity") {
  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    const Index n = 4 + static_cast<Index>(rng.uniform_int(8));
    const FeatureMatrix f = oracle::random_matrix(rng, n, 4);
    SlgParams params;
    params.k = std::min<Index>(3, n - 1);
    const SparseAffinity raw = build_slg_affinity(f, params);
    const SparseAffinity a = normalize_symmetric(raw);

    const Matrixd raw_dense = oracle::to_dense(raw);
    const Matrixd sym = raw_dense + raw_dense.transpose();
    const Vectord degree = sym.rowwise().sum();
    const Vectord sqrt_d = degree.cwiseSqrt();
    const Vectord lhs = oracle::to_dense(a) * sqrt_d;
    CHECK((lhs - sqrt_d).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("random instances match the dense normalization oracle") {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const FeatureMatrix f = oracle::random_matrix(rng, 6, 3);
    SlgParams params;
    params.k = 2;
    const SparseAffinity raw = build_slg_affinity(f, params);
    const Matrixd expected = oracle::dense_normalize_sym(oracle::to_dense(raw));
    CHECK((oracle::to_dense(normalize_symmetric(raw)) - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("normalized output is symmetric with spectrum inside the unit disc") {
  Rng rng(31);
  for (int t = 0; t < 10; ++t) {
    const Index n = 8 + static_cast<Index>(rng.uniform_int(24));
    const FeatureMatrix f = oracle::random_matrix(rng, n, 5);
    SlgParams params;
    params.k = 4;
    const Matrixd a = oracle::to_dense(normalize_symmetric(build_slg_affinity(f, params)));
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrixd> eig(a);
    CHECK(eig.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
  }
}

TEST_CASE("cosine is scale-free") {
  Rng rng(41);
  FeatureMatrix f = oracle::random_matrix(rng, 6, 4);
  SlgParams params;
  params.k = 3;
  const Matrixd base = oracle::to_dense(build_slg_affinity(f, params));
  f.row(2) *= 37.5;
  f.row(4) *= 0.004;
  const Matrixd scaled = oracle::to_dense(build_slg_affinity(f, params));
  CHECK((base - scaled).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gamma reshapes values but not the pattern") {
  Rng rng(43);
  const FeatureMatrix f = oracle::random_matrix(rng, 7, 3);
  SlgParams p1;
  p1.k = 3;
  p1.gamma = 1.0;
  SlgParams p2 = p1;
  p2.gamma = 0.3;
  const SparseAffinity a1 = build_slg_affinity(f, p1);
  const SparseAffinity a2 = build_slg_affinity(f, p2);
  CHECK(oracle::pattern_of(a1) == oracle::pattern_of(a2));
  // 0^gamma stays exactly zero.
  for (Index i = 0; i < a2.rows(); ++i) {
    for (SparseAffinity::InnerIterator it(a2, i); it; ++it) {
      CHECK(it.value() >= 0.0);
      CHECK(std::isfinite(it.value()));
    }
  }
}

TEST_CASE("every row stores at most k entries") {
  Rng rng(47);
  const FeatureMatrix f = oracle::random_matrix(rng, 12, 4);
  SlgParams params;
  params.k = 5;
  const SparseAffinity a = build_slg_affinity(f, params);
  for (Index i = 0; i < a.rows(); ++i) {
    Index stored = 0;
    for (SparseAffinity::InnerIterator it(a, i); it; ++it) ++stored;
    CHECK(stored <= 5);
  }
}

TEST_CASE("all-neighbors mode yields a dense off-diagonal pattern") {
  Rng rng(53);
  const FeatureMatrix f = oracle::random_matrix(rng, 6, 3);
  SlgParams params;
  params.k = SlgParams::kAllNeighbors;
  const SparseAffinity a = build_slg_affinity(f, params);
  const auto expected = oracle::dense_slg(f, SlgParams::kAllNeighbors, 1.0);
  CHECK(oracle::pattern_of(a) == expected.pattern);
  CHECK((oracle::to_dense(a) - expected.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zero-norm rows and oversized k are rejected") {
  FeatureMatrix f = Matrixd::Ones(3, 2);
  f.row(1).setZero();
  SlgParams params;
  params.k = 1;
  CHECK_THROWS_WITH_AS(build_slg_affinity(f, params), doctest::Contains("row 1"),
                       ValidationError);

  FeatureMatrix ok = Matrixd::Ones(3, 2);
  SlgParams bad;
  bad.k = 3;
  CHECK_THROWS_AS(build_slg_affinity(ok, bad), ParameterError);
}

TEST_CASE("isolated nodes keep zero rows and are counted") {
  // A node whose edges all clamp to zero in both directions has degree zero.
  FeatureMatrix f(3, 2);
  f << 1, 0, 1, 0.001, -1, 0;  // node 2 anti-aligned with both others
  SlgParams params;
  params.k = 1;
  const SparseAffinity raw = build_slg_affinity(f, params);
  Index isolated = -1;
  const SparseAffinity a = normalize_symmetric(raw, &isolated);
  const Matrixd dense = oracle::to_dense(a);
  CHECK(isolated == 1);
  CHECK(dense.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(dense.col(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("row-parallel construction matches single-threaded output") {
  Rng rng(61);
  const FeatureMatrix f = oracle::random_matrix(rng, 300, 6);
  SlgParams single;
  single.k = 7;
  single.threads = 1;
  SlgParams multi = single;
  multi.threads = 4;
  const Matrixd a1 = oracle::to_dense(build_slg_affinity(f, single));
  const Matrixd a2 = oracle::to_dense(build_slg_affinity(f, multi));
  CHECK(a1 == a2);  // bitwise: disjoint row writes
}
