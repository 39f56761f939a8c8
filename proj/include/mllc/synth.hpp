#pragma once

#include "mllc/rng.hpp"
#include "mllc/types.hpp"

#include <filesystem>
#include <vector>

namespace mllc {

struct SynthSpec {
  GridShape grid{8, 8, 3, 8};  // H, W, classes, embedding dim
  Index raw_dim = 8;           // per-pixel input feature width
  Index num_images = 12;
  /// Distance scale between class centers, in cluster widths.
  double cluster_separation = 4.0;
  /// Fraction of pixels harnesses flip via inject_label_noise.
  double noise_rate = 0.1;
  double labeled_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  Index labeled_images() const;
};

struct SynthBatch {
  Matrixd pixels;  // n x raw_dim raw input features
  LabelMap gt;     // n ground-truth labels
  bool labeled = false;
};

/// Class centers used by the generator: axis-aligned, pairwise distance
/// cluster_separation * sqrt(2) with unit cluster width.
Matrixd class_centers(const SynthSpec& spec);

/// Seeded dataset of spatially contiguous class regions (grid Voronoi cells
/// of per-image sites) with Gaussian features around per-class centers.
std::vector<SynthBatch> generate(const SynthSpec& spec);

struct AugmentParams {
  double noise_scale = 0.05;
  bool flip = true;
  double channel_scale_lo = 0.7;
  double channel_scale_hi = 1.3;
  /// Cutout rectangle covers at most this fraction of the grid.
  double cutout_fraction = 0.25;
};

/// Mirrors the grid left-right in place, moving labels with their pixels.
void flip_grid(SynthBatch& batch, const GridShape& grid);

/// Isotropic feature noise plus a random horizontal flip of the grid.
SynthBatch weak_augment(const SynthBatch& batch, const GridShape& grid, Rng& rng,
                        const AugmentParams& params = {});

/// weak_augment plus per-channel scaling and a zeroed rectangular cutout.
SynthBatch strong_augment(const SynthBatch& batch, const GridShape& grid, Rng& rng,
                          const AugmentParams& params = {});

struct NoiseResult {
  LabelMap labels;
  std::vector<Index> flipped;  // ascending pixel indices
};

/// Flips exactly floor(rate * n) uniformly chosen pixels to a uniformly
/// chosen wrong class and reports which.
NoiseResult inject_label_noise(const LabelMap& labels, double rate, Index num_classes, Rng& rng);

// NPY bundle + JSON manifest on disk.
void save_bundle(const std::vector<SynthBatch>& batches, const SynthSpec& spec,
                 const std::filesystem::path& dir);

struct Bundle {
  SynthSpec spec;
  std::vector<SynthBatch> batches;
};

Bundle load_bundle(const std::filesystem::path& dir);

}  // namespace mllc
