#pragma once

#include "mllc/clg.hpp"
#include "mllc/layers.hpp"
#include "mllc/slg.hpp"
#include "mllc/types.hpp"

#include <vector>

namespace mllc {

enum class StageOrder { clg_first, slg_first, simultaneous };

std::string to_string(StageOrder order);
StageOrder stage_order_from_string(const std::string& name);

struct RefineConfig {
  Index rounds = 2;      // K graph-convolution rounds
  Index neighbors = 20;  // k of the SLG kNN search
  double gamma = 1.0;
  double alpha = 0.8;
  double sigma = 0.95;
  StageOrder order = StageOrder::clg_first;
  /// Eq-style per-class dynamic thresholds; false pins every class to sigma.
  bool class_thresholds = true;
  Index clg_class_cap = 1024;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Per-class confidence cutoffs scaled by relative learning progress.
struct ThresholdState {
  double sigma = 0.95;
  Vector<std::int64_t> counts;  // confident-pixel count per class
  Vectord eta;
};

ThresholdState dynamic_thresholds(const ProbMatrix& probs, double sigma);

/// Ablation variant: every class threshold pinned at sigma.
ThresholdState flat_thresholds(const ProbMatrix& probs, double sigma);

struct GraphState {
  FeatureMatrix slg_features;  // V^(S,k)
  ProbMatrix clg_probs;        // V^(C,k)
  SparseAffinity slg_edges;    // A^(k)
  SparseAffinity clg_edges;    // W^(k)
  Index round = 0;
};

/// V-hat_i = f_C([X_i, sum_j A_ij X_j]) over the CLG node matrix.
ProbMatrix propagate_clg(const GraphState& state, const MlpParams& f_c,
                         MlpCache* cache = nullptr);

/// V_i = f_S([X_i, sum_j W_ij X_j]) over the SLG node matrix.
FeatureMatrix propagate_slg(const GraphState& state, const MlpParams& f_s,
                            MlpCache* cache = nullptr);

/// Confidence-gated convex mix of the propagated rows with the previous
/// rows, renormalized onto the simplex. The gate reads the original
/// segmentation-head probabilities. Optional outputs capture the per-row
/// weight on v_hat and the renormalization sums for a backward pass.
ProbMatrix mix_update(const ProbMatrix& v_hat, const ProbMatrix& v_prev,
                      const ThresholdState& thresholds, const ProbMatrix& gate_probs,
                      double alpha, Vectord* mix_weights = nullptr, Vectord* row_sums = nullptr);

/// Per-round propagation layers: f_c[k] maps 2C -> C, f_s[k] maps 2m -> m.
struct RefineLayers {
  std::vector<MlpParams> f_c;
  std::vector<MlpParams> f_s;
};

/// Identity-averaging layers for running refinement without training.
/// `calibrated` selects the row-renormalizing CLG head, which makes the loop
/// exactly classical label propagation; otherwise f_c uses softmax as in
/// training.
RefineLayers make_identity_refine_layers(Index rounds, Index classes, Index embed_dim,
                                         bool calibrated = true);

struct RefineRoundTape {
  SparseAffinity slg_edges;
  SparseAffinity clg_edges;
  MlpCache f_c_cache;
  MlpCache f_s_cache;
  Vectord mix_weights;  // weight on v_hat per row
  Vectord mix_sums;     // renormalization denominators
  ProbMatrix mix_output;
};

struct RefineTape {
  ThresholdState thresholds;
  std::vector<RefineRoundTape> rounds;
};

struct RefineResult {
  GraphState state;
  std::vector<ProbMatrix> clg_per_round;      // X^(C,k), k = 1..K
  std::vector<FeatureMatrix> slg_per_round;   // X^(S,k), k = 1..K
};

/// Runs the K-round alternating update. Edges are rebuilt from the evolving
/// state each round per the configured stage order. A tape enables
/// refine_backward.
RefineResult refine(const FeatureMatrix& features, const ProbMatrix& probs,
                    const ProbMatrix& seg_head_probs, const RefineConfig& cfg,
                    const RefineLayers& layers, RefineTape* tape = nullptr);

/// Same stage sequence with the per-round edges replayed from a previous
/// tape instead of rebuilt. Gradient checks use this: edges are constants of
/// the step, so the differentiated function must hold them fixed.
RefineResult refine_with_edges(const FeatureMatrix& features, const ProbMatrix& probs,
                               const ProbMatrix& seg_head_probs, const RefineConfig& cfg,
                               const RefineLayers& layers, const RefineTape& edges,
                               RefineTape* tape = nullptr);

struct RefineGrads {
  std::vector<MlpGrads> f_c;
  std::vector<MlpGrads> f_s;
  Matrixd features;  // d loss / d X^(S,0)
  Matrixd probs;     // d loss / d X^(C,0)
};

/// Reverse pass through the recorded rounds. Upstream gradients are given
/// per round (entries may be empty for rounds without a loss term). Edge
/// matrices are treated as constants.
RefineGrads refine_backward(const RefineLayers& layers, const RefineTape& tape,
                            const std::vector<Matrixd>& d_clg_per_round,
                            const std::vector<Matrixd>& d_slg_per_round);

/// argmax of the elementwise sum across rounds, ties to the lowest class.
LabelMap aggregate_pseudo_labels(const std::vector<ProbMatrix>& per_round_probs);

}  // namespace mllc
