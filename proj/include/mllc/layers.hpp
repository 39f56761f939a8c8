#pragma once

#include "mllc/rng.hpp"
#include "mllc/types.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mllc {

enum class Activation { identity, leaky_relu, softmax_rows, renorm_rows };

constexpr double kLeakySlope = 0.01;

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

/// One affine layer with a fixed activation. Graph-propagation layers take
/// concatenated [own, aggregated] rows, so in_dim = 2 * out_dim there.
struct MlpParams {
  Matrixd weight;  // out_dim x in_dim
  Vectord bias;    // out_dim
  Activation act = Activation::identity;
  std::uint64_t revision = 0;  // bumped by every parameter update

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
};

struct MlpCache {
  Matrixd input;
  Matrixd pre;     // affine output, before activation
  Matrixd output;  // after activation
  std::uint64_t revision = 0;
};

struct MlpGrads {
  Matrixd weight;
  Vectord bias;
};

/// Affine map plus activation, rows treated as independent samples. Pass a
/// cache to enable a later backward pass.
Matrixd mlp_forward(const MlpParams& params, const Matrixd& input, MlpCache* cache = nullptr);

struct MlpBackwardResult {
  MlpGrads grads;
  Matrixd input_grad;
};

/// Exact gradients of mlp_forward. The cache must come from a forward pass
/// against the current parameter revision.
MlpBackwardResult mlp_backward(const MlpParams& params, const MlpCache& cache,
                               const Matrixd& upstream_grad);

/// Identity-averaging initialization: weight [I | I] / 2, zero bias. With
/// dim-preserving activations the layer averages a node row with its
/// aggregated neighborhood, which reduces the untrained refinement loop to
/// classical label/feature propagation.
MlpParams make_identity_averaging(Index dim, Activation act);

MlpParams make_random_mlp(Index in_dim, Index out_dim, Activation act, Rng& rng,
                          double weight_scale, double bias_scale = 0.0);

// ---------------------------------------------------------------------------
// SGD with polynomial decay

struct OptimizerState {
  double base_lr = 0.1;
  Index iter = 0;
  Index total_iter = 1;
  double momentum = 0.9;
};

/// base_lr * (1 - iter/total_iter)^0.9, valid for 0 <= iter <= total_iter.
double poly_lr(const OptimizerState& opt);

/// One momentum-SGD update over a parameter group; increments iter once.
/// Velocity buffers are created on first use and must stay paired with the
/// same group afterwards.
void sgd_step(OptimizerState& opt, const std::vector<MlpParams*>& params,
              const std::vector<const MlpGrads*>& grads, std::vector<MlpGrads>& velocity);

// ---------------------------------------------------------------------------
// Teacher EMA

/// shadow <- decay * shadow + (1 - decay) * student, elementwise over every
/// tensor in the group.
void teacher_update(const std::vector<MlpParams*>& teacher,
                    const std::vector<const MlpParams*>& student, double decay);

// ---------------------------------------------------------------------------
// Checkpoints: a directory of NPY tensors plus a JSON manifest.

using NamedParams = std::vector<std::pair<std::string, MlpParams*>>;

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<std::pair<std::string, const MlpParams*>>& params,
                     Index step);

/// Restores tensors into the given group; shapes must match. Returns the
/// stored step counter.
Index load_checkpoint(const std::filesystem::path& dir, const NamedParams& params);

}  // namespace mllc
