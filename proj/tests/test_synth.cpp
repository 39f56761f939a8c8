#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mllc/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace mllc;

namespace {

SynthSpec small_spec() {
  SynthSpec spec;
  spec.grid = {8, 8, 2, 4};
  spec.raw_dim = 4;
  spec.num_images = 3;
  spec.cluster_separation = 4.0;
  spec.seed = 5;
  return spec;
}

}  // namespace

TEST_CASE("a single class labels every pixel identically") {
  SynthSpec spec = small_spec();
  spec.grid.classes = 1;
  const auto batches = generate(spec);
  for (const auto& b : batches) {
    CHECK((b.gt.array() == 0).all());
  }
}

TEST_CASE("zero separation collapses all class centers") {
  SynthSpec spec = small_spec();
  spec.cluster_separation = 0.0;
  const Matrixd centers = class_centers(spec);
  CHECK(centers.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("separated clusters are nearest-centroid classifiable") {
  SynthSpec spec = small_spec();
  spec.grid = {20, 20, 2, 4};
  spec.num_images = 1;
  spec.cluster_separation = 4.0;
  const auto batches = generate(spec);
  const Matrixd centers = class_centers(spec);

  Index correct = 0;
  const auto& b = batches[0];
  for (Index i = 0; i < b.pixels.rows(); ++i) {
    Index best = 0;
    double best_d = (b.pixels.row(i) - centers.row(0)).squaredNorm();
    for (Index c = 1; c < spec.grid.classes; ++c) {
      const double d = (b.pixels.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (best == b.gt[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(b.pixels.rows()) >= 0.99);
}

TEST_CASE("generation is a pure function of the spec") {
  const SynthSpec spec = small_spec();
  const auto a = generate(spec);
  const auto b = generate(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pixels == b[i].pixels);  // bitwise
    CHECK(a[i].gt == b[i].gt);
    CHECK(a[i].labeled == b[i].labeled);
  }
}

TEST_CASE("class regions are spatially contiguous enough to have few boundary pixels") {
  SynthSpec spec = small_spec();
  spec.grid = {16, 16, 3, 4};
  spec.raw_dim = 4;
  const auto batches = generate(spec);
  const auto& b = batches[0];
  // Voronoi cells: most pixels agree with their right-hand neighbor.
  Index agree = 0, total = 0;
  for (Index r = 0; r < 16; ++r) {
    for (Index c = 0; c + 1 < 16; ++c) {
      ++total;
      if (b.gt[r * 16 + c] == b.gt[r * 16 + c + 1]) ++agree;
    }
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(total) > 0.8);
}

TEST_CASE("null weak augmentation is the identity") {
  const SynthSpec spec = small_spec();
  const auto batches = generate(spec);
  Rng rng(1);
  AugmentParams params;
  params.noise_scale = 0.0;
  params.flip = false;
  const SynthBatch out = weak_augment(batches[0], spec.grid, rng, params);
  CHECK(out.pixels == batches[0].pixels);
  CHECK(out.gt == batches[0].gt);
}

TEST_CASE("flipping twice restores the original grid") {
  const SynthSpec spec = small_spec();
  auto batches = generate(spec);
  SynthBatch twice = batches[0];
  flip_grid(twice, spec.grid);
  flip_grid(twice, spec.grid);
  CHECK(twice.pixels == batches[0].pixels);
  CHECK(twice.gt == batches[0].gt);
}

TEST_CASE("augmentation is reproducible from the seed") {
  const SynthSpec spec = small_spec();
  const auto batches = generate(spec);
  Rng a(9);
  Rng b(9);
  const SynthBatch out_a = weak_augment(batches[0], spec.grid, a);
  const SynthBatch out_b = weak_augment(batches[0], spec.grid, b);
  CHECK(out_a.pixels == out_b.pixels);
  CHECK(out_a.gt == out_b.gt);
}

TEST_CASE("strong augmentation displaces features more than weak") {
  const SynthSpec spec = small_spec();
  const auto batches = generate(spec);
  double weak_sum = 0.0, strong_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng wa(seed);
    Rng sa(seed);
    AugmentParams params;
    params.flip = false;  // keep rows aligned for the displacement measure
    const SynthBatch w = weak_augment(batches[0], spec.grid, wa, params);
    const SynthBatch s = strong_augment(batches[0], spec.grid, sa, params);
    weak_sum += (w.pixels - batches[0].pixels).rowwise().norm().mean();
    strong_sum += (s.pixels - batches[0].pixels).rowwise().norm().mean();
  }
  CHECK(strong_sum > weak_sum);
}

TEST_CASE("cutout zeroes exactly the drawn rectangle") {
  const SynthSpec spec = small_spec();
  const auto batches = generate(spec);
  Rng rng(3);
  AugmentParams params;
  params.noise_scale = 0.0;
  params.flip = false;
  params.channel_scale_lo = 1.0;
  params.channel_scale_hi = 1.0;
  const SynthBatch out = strong_augment(batches[0], spec.grid, rng, params);
  Index zeroed = 0;
  for (Index i = 0; i < out.pixels.rows(); ++i) {
    if (out.pixels.row(i).cwiseAbs().maxCoeff() == 0.0) {
      ++zeroed;
    } else {
      CHECK(out.pixels.row(i) == batches[0].pixels.row(i));
    }
  }
  CHECK(zeroed >= 1);
  CHECK(zeroed <= spec.grid.pixels() / 4 + spec.grid.rows);  // bounded rectangle
}

TEST_CASE("label noise flips exactly the requested count to wrong classes") {
  const SynthSpec spec = small_spec();
  LabelMap labels(200);
  for (Index i = 0; i < 200; ++i) labels[i] = i % 3;
  Rng rng(7);
  const NoiseResult noisy = inject_label_noise(labels, 0.1, 3, rng);
  CHECK(noisy.flipped.size() == 20);
  for (Index i : noisy.flipped) {
    CHECK(noisy.labels[i] != labels[i]);
    CHECK(noisy.labels[i] >= 0);
    CHECK(noisy.labels[i] < 3);
  }
  // Diffing input and output recovers exactly the reported flip list.
  std::vector<Index> diff;
  for (Index i = 0; i < 200; ++i) {
    if (noisy.labels[i] != labels[i]) diff.push_back(i);
  }
  CHECK(diff == noisy.flipped);
}

TEST_CASE("zero noise rate is the identity with an empty flip list") {
  LabelMap labels(50);
  for (Index i = 0; i < 50; ++i) labels[i] = i % 2;
  Rng rng(7);
  const NoiseResult noisy = inject_label_noise(labels, 0.0, 2, rng);
  CHECK(noisy.labels == labels);
  CHECK(noisy.flipped.empty());
}

TEST_CASE("noise rate bounds are enforced") {
  LabelMap labels = LabelMap::Zero(10);
  Rng rng(1);
  CHECK_THROWS_AS(inject_label_noise(labels, 0.5, 2, rng), ParameterError);
  CHECK_THROWS_AS(inject_label_noise(labels, -0.1, 2, rng), ParameterError);
}

TEST_CASE("bundles round-trip and reruns are byte-identical") {
  const SynthSpec spec = small_spec();
  const auto batches = generate(spec);
  const auto dir_a = std::filesystem::temp_directory_path() / "mllc_bundle_a";
  const auto dir_b = std::filesystem::temp_directory_path() / "mllc_bundle_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  save_bundle(batches, spec, dir_a);
  save_bundle(generate(spec), spec, dir_b);

  for (const auto& entry : std::filesystem::directory_iterator(dir_a)) {
    const auto name = entry.path().filename();
    std::ifstream fa(entry.path(), std::ios::binary);
    std::ifstream fb(dir_b / name, std::ios::binary);
    std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
  }

  const Bundle loaded = load_bundle(dir_a);
  REQUIRE(loaded.batches.size() == batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    CHECK(loaded.batches[i].pixels == batches[i].pixels);
    CHECK(loaded.batches[i].gt == batches[i].gt);
    CHECK(loaded.batches[i].labeled == batches[i].labeled);
  }
  CHECK(loaded.spec.seed == spec.seed);
}

TEST_CASE("impossible geometry is rejected") {
  SynthSpec spec = small_spec();
  spec.grid = {2, 2, 5, 4};
  spec.raw_dim = 5;
  CHECK_THROWS_AS(generate(spec), ParameterError);

  SynthSpec narrow = small_spec();
  narrow.raw_dim = 1;
  CHECK_THROWS_AS(generate(narrow), ParameterError);
}
