#include "mllc/synth.hpp"

#include "mllc/npy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mllc {

void SynthSpec::validate() const {
  validate_grid(grid);
  if (raw_dim < grid.classes) {
    throw ParameterError("raw_dim must be >= classes so class centers can be separated");
  }
  if (num_images < 1) throw ParameterError("num_images must be >= 1");
  if (grid.classes > grid.pixels()) {
    throw ParameterError("more class regions than pixels");
  }
  if (cluster_separation < 0.0) throw ParameterError("cluster_separation must be >= 0");
  if (noise_rate < 0.0 || noise_rate >= 0.5) {
    throw ParameterError("noise_rate must lie in [0, 0.5)");
  }
  if (labeled_fraction <= 0.0 || labeled_fraction > 1.0) {
    throw ParameterError("labeled_fraction must lie in (0, 1]");
  }
}

Index SynthSpec::labeled_images() const {
  const auto count = static_cast<Index>(std::floor(labeled_fraction * num_images + 0.5));
  return std::max<Index>(1, std::min(count, num_images));
}

Matrixd class_centers(const SynthSpec& spec) {
  Matrixd centers = Matrixd::Zero(spec.grid.classes, spec.raw_dim);
  for (Index c = 0; c < spec.grid.classes; ++c) {
    centers(c, c) = spec.cluster_separation;
  }
  return centers;
}

std::vector<SynthBatch> generate(const SynthSpec& spec) {
  spec.validate();
  const Index n = spec.grid.pixels();
  const Index classes = spec.grid.classes;
  const Matrixd centers = class_centers(spec);
  const Index labeled = spec.labeled_images();
  Rng root(Rng::mix(spec.seed, 0xda7a));

  std::vector<SynthBatch> batches;
  batches.reserve(static_cast<std::size_t>(spec.num_images));
  for (Index img = 0; img < spec.num_images; ++img) {
    Rng rng = root.fork(static_cast<std::uint64_t>(img));
    SynthBatch batch;
    batch.labeled = img < labeled;
    batch.gt.resize(n);
    batch.pixels.resize(n, spec.raw_dim);

    // Distinct site pixels; Voronoi cells on grid coordinates give
    // contiguous class regions. Ties go to the lower class index.
    std::vector<Index> sites;
    while (static_cast<Index>(sites.size()) < classes) {
      const Index cand = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      if (std::find(sites.begin(), sites.end(), cand) == sites.end()) sites.push_back(cand);
    }
    for (Index i = 0; i < n; ++i) {
      const double r = static_cast<double>(i / spec.grid.cols);
      const double c = static_cast<double>(i % spec.grid.cols);
      Index best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (Index s = 0; s < classes; ++s) {
        const double sr = static_cast<double>(sites[static_cast<std::size_t>(s)] / spec.grid.cols);
        const double sc = static_cast<double>(sites[static_cast<std::size_t>(s)] % spec.grid.cols);
        const double d2 = (r - sr) * (r - sr) + (c - sc) * (c - sc);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = s;
        }
      }
      batch.gt[i] = best;
    }
    for (Index i = 0; i < n; ++i) {
      for (Index d = 0; d < spec.raw_dim; ++d) {
        batch.pixels(i, d) = centers(batch.gt[i], d) + rng.normal();
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

void flip_grid(SynthBatch& batch, const GridShape& grid) {
  for (Index r = 0; r < grid.rows; ++r) {
    for (Index c = 0; c < grid.cols / 2; ++c) {
      const Index a = r * grid.cols + c;
      const Index b = r * grid.cols + (grid.cols - 1 - c);
      batch.pixels.row(a).swap(batch.pixels.row(b));
      std::swap(batch.gt[a], batch.gt[b]);
    }
  }
}

namespace {

void add_noise(SynthBatch& batch, Rng& rng, double scale) {
  for (Index i = 0; i < batch.pixels.rows(); ++i) {
    for (Index d = 0; d < batch.pixels.cols(); ++d) {
      batch.pixels(i, d) += scale * rng.normal();
    }
  }
}

}  // namespace

SynthBatch weak_augment(const SynthBatch& batch, const GridShape& grid, Rng& rng,
                        const AugmentParams& params) {
  if (batch.pixels.rows() != grid.pixels()) throw ContractError("batch does not match grid");
  SynthBatch out = batch;
  if (params.noise_scale > 0.0) add_noise(out, rng, params.noise_scale);
  if (params.flip && rng.uniform() < 0.5) flip_grid(out, grid);
  return out;
}

SynthBatch strong_augment(const SynthBatch& batch, const GridShape& grid, Rng& rng,
                          const AugmentParams& params) {
  SynthBatch out = weak_augment(batch, grid, rng, params);
  for (Index d = 0; d < out.pixels.cols(); ++d) {
    out.pixels.col(d) *= rng.uniform(params.channel_scale_lo, params.channel_scale_hi);
  }
  if (params.cutout_fraction > 0.0) {
    // Rectangle bounded by cutout_fraction of the area, at least one pixel.
    const double side = std::sqrt(params.cutout_fraction);
    const Index max_h = std::max<Index>(1, static_cast<Index>(side * grid.rows));
    const Index max_w = std::max<Index>(1, static_cast<Index>(side * grid.cols));
    const Index h = 1 + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(max_h)));
    const Index w = 1 + static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(max_w)));
    const Index top = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(grid.rows - h + 1)));
    const Index left = static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(grid.cols - w + 1)));
    for (Index r = top; r < top + h; ++r) {
      for (Index c = left; c < left + w; ++c) {
        out.pixels.row(r * grid.cols + c).setZero();
      }
    }
  }
  return out;
}

NoiseResult inject_label_noise(const LabelMap& labels, double rate, Index num_classes, Rng& rng) {
  if (rate < 0.0 || rate >= 0.5) throw ParameterError("noise rate must lie in [0, 0.5)");
  if (num_classes < 2 && rate > 0.0) throw ParameterError("need >= 2 classes to flip labels");

  NoiseResult result;
  result.labels = labels;
  const Index n = labels.size();
  const auto flips = static_cast<Index>(std::floor(rate * static_cast<double>(n)));

  std::vector<Index> candidates;
  candidates.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (labels[i] != kIgnoreLabel) candidates.push_back(i);
  }
  if (flips > static_cast<Index>(candidates.size())) {
    throw ParameterError("not enough valid labels to flip");
  }

  for (Index f = 0; f < flips; ++f) {  // partial Fisher-Yates
    const std::size_t j = static_cast<std::size_t>(f) +
                          static_cast<std::size_t>(rng.uniform_int(candidates.size() - f));
    std::swap(candidates[static_cast<std::size_t>(f)], candidates[j]);
  }
  candidates.resize(static_cast<std::size_t>(flips));
  std::sort(candidates.begin(), candidates.end());

  for (Index i : candidates) {
    const std::int64_t offset =
        1 + static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(num_classes - 1)));
    result.labels[i] = (labels[i] + offset) % num_classes;
  }
  result.flipped = std::move(candidates);
  return result;
}

namespace {

nlohmann::json spec_to_json(const SynthSpec& spec) {
  return {{"rows", spec.grid.rows},
          {"cols", spec.grid.cols},
          {"classes", spec.grid.classes},
          {"embed_dim", spec.grid.embed_dim},
          {"raw_dim", spec.raw_dim},
          {"num_images", spec.num_images},
          {"cluster_separation", spec.cluster_separation},
          {"noise_rate", spec.noise_rate},
          {"labeled_fraction", spec.labeled_fraction},
          {"seed", spec.seed}};
}

SynthSpec spec_from_json(const nlohmann::json& j) {
  SynthSpec spec;
  spec.grid.rows = j.at("rows").get<Index>();
  spec.grid.cols = j.at("cols").get<Index>();
  spec.grid.classes = j.at("classes").get<Index>();
  spec.grid.embed_dim = j.at("embed_dim").get<Index>();
  spec.raw_dim = j.at("raw_dim").get<Index>();
  spec.num_images = j.at("num_images").get<Index>();
  spec.cluster_separation = j.at("cluster_separation").get<double>();
  spec.noise_rate = j.at("noise_rate").get<double>();
  spec.labeled_fraction = j.at("labeled_fraction").get<double>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

std::string image_stem(Index i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img_%03lld", static_cast<long long>(i));
  return buf;
}

}  // namespace

void save_bundle(const std::vector<SynthBatch>& batches, const SynthSpec& spec,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["spec"] = spec_to_json(spec);
  manifest["images"] = nlohmann::json::array();
  Rng noise_root(Rng::mix(spec.seed, 0xf11b));
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const std::string stem = image_stem(static_cast<Index>(i));
    npy::save(batches[i].pixels, dir / (stem + ".x.npy"));
    npy::save(batches[i].gt, dir / (stem + ".y.npy"));
    nlohmann::json entry = {
        {"x", stem + ".x.npy"}, {"y", stem + ".y.npy"}, {"labeled", batches[i].labeled}};

    if (spec.noise_rate > 0.0) {
      // Noise harness: flipped pseudo-labels, the confidence-0.9 probability
      // rows built from them, and the flip list for accuracy accounting.
      Rng rng = noise_root.fork(static_cast<std::uint64_t>(i));
      const NoiseResult noisy =
          inject_label_noise(batches[i].gt, spec.noise_rate, spec.grid.classes, rng);
      Matrixd probs(batches[i].gt.size(), spec.grid.classes);
      const double off = 0.1 / static_cast<double>(std::max<Index>(1, spec.grid.classes - 1));
      probs.setConstant(off);
      for (Index px = 0; px < noisy.labels.size(); ++px) probs(px, noisy.labels[px]) = 0.9;
      LabelMap flips(static_cast<Index>(noisy.flipped.size()));
      for (std::size_t f = 0; f < noisy.flipped.size(); ++f) {
        flips[static_cast<Index>(f)] = noisy.flipped[f];
      }
      npy::save(noisy.labels, dir / (stem + ".noisy.npy"));
      npy::save(probs, dir / (stem + ".probs.npy"));
      npy::save(flips, dir / (stem + ".flips.npy"));
      entry["noisy"] = stem + ".noisy.npy";
      entry["probs"] = stem + ".probs.npy";
      entry["flips"] = stem + ".flips.npy";
    }
    manifest["images"].push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

Bundle load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);

  Bundle bundle;
  bundle.spec = spec_from_json(manifest.at("spec"));
  for (const auto& entry : manifest.at("images")) {
    SynthBatch batch;
    batch.pixels = npy::load_matrix(dir / entry.at("x").get<std::string>());
    batch.gt = npy::load_labels(dir / entry.at("y").get<std::string>());
    batch.labeled = entry.at("labeled").get<bool>();
    if (batch.pixels.rows() != bundle.spec.grid.pixels()) {
      throw ValidationError("bundle image does not match the declared grid");
    }
    bundle.batches.push_back(std::move(batch));
  }
  return bundle;
}

}  // namespace mllc
