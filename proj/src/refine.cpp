#include "mllc/refine.hpp"

#include <cmath>

namespace mllc {

namespace {

Matrixd concat_with_aggregate(const Matrixd& nodes, const SparseAffinity& edges) {
  if (edges.rows() != nodes.rows() || edges.cols() != nodes.rows()) {
    throw ContractError("edge matrix does not match node count");
  }
  Matrixd joined(nodes.rows(), 2 * nodes.cols());
  joined.leftCols(nodes.cols()) = nodes;
  joined.rightCols(nodes.cols()) = edges * nodes;
  return joined;
}

SlgParams slg_params_of(const RefineConfig& cfg) {
  SlgParams p;
  p.k = cfg.neighbors;
  p.gamma = cfg.gamma;
  p.threads = cfg.threads;
  return p;
}

ClgParams clg_params_of(const RefineConfig& cfg, Index round) {
  ClgParams p;
  p.class_cap = cfg.clg_class_cap;
  p.seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(round));
  return p;
}

ThresholdState make_thresholds(const RefineConfig& cfg, const ProbMatrix& seg_head_probs) {
  return cfg.class_thresholds ? dynamic_thresholds(seg_head_probs, cfg.sigma)
                              : flat_thresholds(seg_head_probs, cfg.sigma);
}

}  // namespace

std::string to_string(StageOrder order) {
  switch (order) {
    case StageOrder::clg_first: return "clg_first";
    case StageOrder::slg_first: return "slg_first";
    case StageOrder::simultaneous: return "simultaneous";
  }
  throw ContractError("unknown stage order");
}

StageOrder stage_order_from_string(const std::string& name) {
  if (name == "clg_first") return StageOrder::clg_first;
  if (name == "slg_first") return StageOrder::slg_first;
  if (name == "simultaneous") return StageOrder::simultaneous;
  throw ParameterError("unknown stage order '" + name + "'");
}

void RefineConfig::validate() const {
  if (rounds < 1) throw ParameterError("rounds K must be >= 1");
  if (neighbors != SlgParams::kAllNeighbors && neighbors < 1) {
    throw ParameterError("neighbors k must be >= 1 (or the all-neighbors sentinel)");
  }
  if (alpha < 0.0 || alpha > 1.0) throw ParameterError("alpha must lie in [0, 1]");
  if (sigma <= 0.0 || sigma > 1.0) throw ParameterError("sigma must lie in (0, 1]");
  if (gamma <= 0.0) throw ParameterError("gamma must be positive");
}

ThresholdState dynamic_thresholds(const ProbMatrix& probs, double sigma) {
  const Index classes = probs.cols();
  ThresholdState state;
  state.sigma = sigma;
  state.counts = Vector<std::int64_t>::Zero(classes);
  for (Index i = 0; i < probs.rows(); ++i) {
    const Index c = argmax_row(probs, i);
    if (probs(i, c) > sigma) ++state.counts[c];
  }
  const std::int64_t max_count = state.counts.maxCoeff();
  state.eta = Vectord::Zero(classes);
  if (max_count == 0) {
    // No pixel clears sigma: every threshold is zero and the gate comparison
    // (max p >= 0) routes every row through the first mix branch.
    return state;
  }
  for (Index c = 0; c < classes; ++c) {
    state.eta[c] =
        static_cast<double>(state.counts[c]) / static_cast<double>(max_count) * sigma;
  }
  return state;
}

ThresholdState flat_thresholds(const ProbMatrix& probs, double sigma) {
  ThresholdState state = dynamic_thresholds(probs, sigma);
  state.eta = Vectord::Constant(probs.cols(), sigma);
  return state;
}

ProbMatrix propagate_clg(const GraphState& state, const MlpParams& f_c, MlpCache* cache) {
  if (f_c.in_dim() != 2 * state.clg_probs.cols() || f_c.out_dim() != state.clg_probs.cols()) {
    throw ContractError("f_C layer dimensions do not match the CLG node width");
  }
  return mlp_forward(f_c, concat_with_aggregate(state.clg_probs, state.slg_edges), cache);
}

FeatureMatrix propagate_slg(const GraphState& state, const MlpParams& f_s, MlpCache* cache) {
  if (f_s.in_dim() != 2 * state.slg_features.cols() ||
      f_s.out_dim() != state.slg_features.cols()) {
    throw ContractError("f_S layer dimensions do not match the SLG node width");
  }
  return mlp_forward(f_s, concat_with_aggregate(state.slg_features, state.clg_edges), cache);
}

ProbMatrix mix_update(const ProbMatrix& v_hat, const ProbMatrix& v_prev,
                      const ThresholdState& thresholds, const ProbMatrix& gate_probs,
                      double alpha, Vectord* mix_weights, Vectord* row_sums) {
  const Index n = v_hat.rows();
  if (v_prev.rows() != n || v_prev.cols() != v_hat.cols() || gate_probs.rows() != n) {
    throw ContractError("mix_update shape mismatch");
  }
  ProbMatrix out(n, v_hat.cols());
  Vectord weights(n);
  Vectord sums(n);
  for (Index i = 0; i < n; ++i) {
    const Index c = argmax_row(gate_probs, i);
    const bool confident = gate_probs(i, c) >= thresholds.eta[c];
    const double g = confident ? alpha : 1.0 - alpha;
    Eigen::RowVectorXd mixed = g * v_hat.row(i) + (1.0 - g) * v_prev.row(i);
    const double sum = std::max(mixed.sum(), 1e-12);
    out.row(i) = mixed / sum;
    weights[i] = g;
    sums[i] = sum;
  }
  if (mix_weights != nullptr) *mix_weights = std::move(weights);
  if (row_sums != nullptr) *row_sums = std::move(sums);
  return out;
}

RefineLayers make_identity_refine_layers(Index rounds, Index classes, Index embed_dim,
                                         bool calibrated) {
  RefineLayers layers;
  const Activation head = calibrated ? Activation::renorm_rows : Activation::softmax_rows;
  for (Index k = 0; k < rounds; ++k) {
    layers.f_c.push_back(make_identity_averaging(classes, head));
    layers.f_s.push_back(make_identity_averaging(embed_dim, Activation::leaky_relu));
  }
  return layers;
}

namespace {

RefineResult run_refine(const FeatureMatrix& features, const ProbMatrix& probs,
                        const ProbMatrix& seg_head_probs, const RefineConfig& cfg,
                        const RefineLayers& layers, const RefineTape* fixed_edges,
                        RefineTape* tape) {
  cfg.validate();
  if (features.rows() != probs.rows() || seg_head_probs.rows() != probs.rows() ||
      seg_head_probs.cols() != probs.cols()) {
    throw ContractError("refine inputs disagree on node count or class count");
  }
  if (static_cast<Index>(layers.f_c.size()) != cfg.rounds ||
      static_cast<Index>(layers.f_s.size()) != cfg.rounds) {
    throw ContractError("layer count does not match the round count");
  }
  validate_probs(probs);

  const ThresholdState thresholds = make_thresholds(cfg, seg_head_probs);
  if (tape != nullptr) {
    tape->thresholds = thresholds;
    tape->rounds.assign(static_cast<std::size_t>(cfg.rounds), RefineRoundTape{});
  }

  RefineResult result;
  GraphState state;
  state.slg_features = features;
  state.clg_probs = probs;

  for (Index k = 1; k <= cfg.rounds; ++k) {
    const std::size_t idx = static_cast<std::size_t>(k - 1);
    const MlpParams& f_c = layers.f_c[idx];
    const MlpParams& f_s = layers.f_s[idx];
    RefineRoundTape* round_tape = tape != nullptr ? &tape->rounds[idx] : nullptr;
    MlpCache local_c, local_s;
    MlpCache* cache_c = round_tape != nullptr ? &round_tape->f_c_cache : &local_c;
    MlpCache* cache_s = round_tape != nullptr ? &round_tape->f_s_cache : &local_s;
    Vectord* weights = round_tape != nullptr ? &round_tape->mix_weights : nullptr;
    Vectord* sums = round_tape != nullptr ? &round_tape->mix_sums : nullptr;

    const auto build_slg = [&]() {
      if (fixed_edges != nullptr) {
        state.slg_edges = fixed_edges->rounds[idx].slg_edges;
      } else {
        state.slg_edges =
            normalize_symmetric(build_slg_affinity(state.slg_features, slg_params_of(cfg)));
      }
    };
    const auto build_clg = [&]() {
      if (fixed_edges != nullptr) {
        state.clg_edges = fixed_edges->rounds[idx].clg_edges;
      } else {
        state.clg_edges = normalize_clg(build_clg_affinity(state.clg_probs, clg_params_of(cfg, k)));
      }
    };
    const auto update_clg = [&]() {
      const ProbMatrix v_hat = propagate_clg(state, f_c, cache_c);
      state.clg_probs =
          mix_update(v_hat, state.clg_probs, thresholds, seg_head_probs, cfg.alpha, weights, sums);
    };
    const auto update_slg = [&]() { state.slg_features = propagate_slg(state, f_s, cache_s); };

    switch (cfg.order) {
      case StageOrder::clg_first:
        build_slg();    // Stage I
        update_clg();   // Stage II
        build_clg();    // Stage III
        update_slg();   // Stage IV
        break;
      case StageOrder::slg_first:
        build_clg();
        update_slg();
        build_slg();
        update_clg();
        break;
      case StageOrder::simultaneous: {
        build_slg();
        build_clg();
        const ProbMatrix v_hat = propagate_clg(state, f_c, cache_c);
        const FeatureMatrix new_features = propagate_slg(state, f_s, cache_s);
        state.clg_probs =
            mix_update(v_hat, state.clg_probs, thresholds, seg_head_probs, cfg.alpha, weights, sums);
        state.slg_features = new_features;
        break;
      }
    }

    state.round = k;
    if (round_tape != nullptr) {
      round_tape->slg_edges = state.slg_edges;
      round_tape->clg_edges = state.clg_edges;
      round_tape->mix_output = state.clg_probs;
    }
    result.clg_per_round.push_back(state.clg_probs);
    result.slg_per_round.push_back(state.slg_features);
  }

  result.state = std::move(state);
  return result;
}

}  // namespace

RefineResult refine(const FeatureMatrix& features, const ProbMatrix& probs,
                    const ProbMatrix& seg_head_probs, const RefineConfig& cfg,
                    const RefineLayers& layers, RefineTape* tape) {
  return run_refine(features, probs, seg_head_probs, cfg, layers, nullptr, tape);
}

RefineResult refine_with_edges(const FeatureMatrix& features, const ProbMatrix& probs,
                               const ProbMatrix& seg_head_probs, const RefineConfig& cfg,
                               const RefineLayers& layers, const RefineTape& edges,
                               RefineTape* tape) {
  if (static_cast<Index>(edges.rounds.size()) != cfg.rounds) {
    throw ContractError("edge tape does not cover every round");
  }
  return run_refine(features, probs, seg_head_probs, cfg, layers, &edges, tape);
}

RefineGrads refine_backward(const RefineLayers& layers, const RefineTape& tape,
                            const std::vector<Matrixd>& d_clg_per_round,
                            const std::vector<Matrixd>& d_slg_per_round) {
  const auto rounds = tape.rounds.size();
  if (rounds == 0) throw ContractError("empty refine tape");
  if (d_clg_per_round.size() != rounds || d_slg_per_round.size() != rounds) {
    throw ContractError("upstream gradients must cover every round");
  }

  const Index n = tape.rounds[0].mix_output.rows();
  const Index classes = tape.rounds[0].mix_output.cols();
  const Index embed_dim = layers.f_s[0].out_dim();

  RefineGrads grads;
  grads.f_c.resize(rounds);
  grads.f_s.resize(rounds);

  Matrixd d_clg = Matrixd::Zero(n, classes);
  Matrixd d_slg = Matrixd::Zero(n, embed_dim);

  for (std::size_t idx = rounds; idx-- > 0;) {
    const RefineRoundTape& rt = tape.rounds[idx];
    if (d_clg_per_round[idx].size() > 0) d_clg += d_clg_per_round[idx];
    if (d_slg_per_round[idx].size() > 0) d_slg += d_slg_per_round[idx];

    // SLG node update: X_S_k = f_S([X_S_{k-1} | W_k X_S_{k-1}]).
    {
      MlpBackwardResult bw = mlp_backward(layers.f_s[idx], rt.f_s_cache, d_slg);
      grads.f_s[idx] = std::move(bw.grads);
      d_slg = bw.input_grad.leftCols(embed_dim) +
              SparseAffinity(rt.clg_edges.transpose()) * bw.input_grad.rightCols(embed_dim);
    }

    // Mix + renormalization: y = u / s with u = g*v_hat + (1-g)*X_C_{k-1}.
    Matrixd du(n, classes);
    for (Index i = 0; i < n; ++i) {
      const double dot = d_clg.row(i).dot(rt.mix_output.row(i));
      du.row(i) = ((d_clg.row(i).array() - dot) / rt.mix_sums[i]).matrix();
    }
    Matrixd dv_hat = (du.array().colwise() * rt.mix_weights.array()).matrix();
    Matrixd d_prev = (du.array().colwise() * (1.0 - rt.mix_weights.array())).matrix();

    // CLG propagation: v_hat = f_C([X_C_{k-1} | A_k X_C_{k-1}]).
    {
      MlpBackwardResult bw = mlp_backward(layers.f_c[idx], rt.f_c_cache, dv_hat);
      grads.f_c[idx] = std::move(bw.grads);
      d_prev += bw.input_grad.leftCols(classes) +
                SparseAffinity(rt.slg_edges.transpose()) * bw.input_grad.rightCols(classes);
    }
    d_clg = std::move(d_prev);
  }

  grads.probs = std::move(d_clg);
  grads.features = std::move(d_slg);
  return grads;
}

LabelMap aggregate_pseudo_labels(const std::vector<ProbMatrix>& per_round_probs) {
  if (per_round_probs.empty()) throw ContractError("no per-round probabilities to aggregate");
  const Index n = per_round_probs[0].rows();
  const Index classes = per_round_probs[0].cols();
  Matrixd total = Matrixd::Zero(n, classes);
  for (const auto& p : per_round_probs) {
    if (p.rows() != n || p.cols() != classes) {
      throw ContractError("per-round probability shapes disagree");
    }
    total += p;
  }
  LabelMap labels(n);
  for (Index i = 0; i < n; ++i) labels[i] = argmax_row(total, i);
  return labels;
}

}  // namespace mllc
