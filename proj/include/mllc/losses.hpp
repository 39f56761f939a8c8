#pragma once

#include "mllc/types.hpp"

#include <cstdint>
#include <vector>

namespace mllc {

struct LossConfig {
  double lambda_balance = 0.5;  // balance between the pair and prototype terms
  double tau = 0.1;             // prototype softmax temperature
  double lambda_slg = 0.1;
  double lambda_clg = 1.0;
  double lambda_unsup = 1.0;
  /// Ordered pairs entering the pair term: exhaustive up to the cap, then a
  /// seeded uniform sample rescaled to an unbiased estimate of the full sum.
  /// <= 0 means always exhaustive.
  Index pair_cap = 4096;
  std::uint64_t pair_seed = 0;
  /// Eq-style confidence feedback weight; false pins the weight to 1.
  bool dynamic_weight = true;
  /// Printed EMA direction (weight on the fresh batch value) instead of the
  /// conventional slow-moving form.
  bool literal_prototype_ema = false;

  void validate() const;
};

/// Per-class feature centroids with EMA state. Rows stay unit-norm after
/// renormalize_prototypes; classes never observed stay flagged out.
struct PrototypeBank {
  Matrixd protos;  // C x m
  std::vector<bool> initialized;
  double beta = 0.99;

  Index classes() const { return protos.rows(); }
  Index any_initialized() const;
};

PrototypeBank make_prototype_bank(Index classes, Index embed_dim, double beta);

struct BatchPrototypes {
  Matrixd protos;  // C x m, zero rows for absent classes
  std::vector<bool> present;
};

/// Per-class means of the feature rows; IGNORE rows do not contribute.
BatchPrototypes compute_prototypes(const FeatureMatrix& features, const LabelMap& labels);

/// p_c <- beta * p_c + (1 - beta) * batch_c for classes present in the
/// batch; first observation initializes directly; absent classes are
/// untouched.
void ema_update_prototypes(PrototypeBank& bank, const BatchPrototypes& batch,
                           bool literal_direction = false);

/// Scales every initialized prototype back to unit norm.
void renormalize_prototypes(PrototypeBank& bank);

struct CeResult {
  double value = 0.0;
  Matrixd grad;          // d value / d probs
  Index clamped = 0;     // probabilities floored at 1e-12
};

/// Mean negative log-likelihood over non-IGNORE pixels.
CeResult supervised_ce(const ProbMatrix& probs, const LabelMap& labels);

struct SlgLossResult {
  double value = 0.0;
  Matrixd grad;           // d value / d features (pre-normalization)
  Index skipped_rows = 0; // zero-norm, IGNORE, or uninitialized-prototype rows
  Index sampled_pairs = 0;
};

/// Contrastive SLG loss: squared-error pair term over same/different
/// pseudo-label pairs plus a prototype softmax term, both on row-normalized
/// features. Gradients chain through the normalization.
SlgLossResult slg_contrastive_loss(const FeatureMatrix& features, const LabelMap& pseudo_labels,
                                   const PrototypeBank& bank, const LossConfig& cfg);

struct ClgLossResult {
  double value = 0.0;
  std::vector<double> per_round;
  std::vector<Matrixd> grads;  // per round, d value / d P_k
  Index clamped = 0;
};

/// Dynamic-weighted cross-entropy against aggregated pseudo-labels, summed
/// over rounds. The per-pixel weight is the predicted probability of the
/// pseudo-class, treated as a constant in the gradient.
ClgLossResult clg_weighted_ce(const std::vector<ProbMatrix>& per_round_probs,
                              const LabelMap& pseudo, bool dynamic_weight = true);

double total_unsup_loss(const std::vector<double>& slg_losses,
                        const std::vector<double>& clg_losses, const LossConfig& cfg);

double total_loss(double sup, double unsup, const LossConfig& cfg);

}  // namespace mllc
