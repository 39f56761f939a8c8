#include "mllc/losses.hpp"

#include "mllc/rng.hpp"

#include <cmath>

namespace mllc {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormFloor = 1e-12;

}  // namespace

void LossConfig::validate() const {
  if (tau <= 0.0) throw ParameterError("temperature tau must be positive");
  if (lambda_balance < 0.0 || lambda_balance > 1.0) {
    throw ParameterError("lambda_balance must lie in [0, 1]");
  }
}

Index PrototypeBank::any_initialized() const {
  Index count = 0;
  for (bool f : initialized) count += f ? 1 : 0;
  return count;
}

PrototypeBank make_prototype_bank(Index classes, Index embed_dim, double beta) {
  if (beta < 0.0 || beta >= 1.0) throw ParameterError("prototype beta must lie in [0, 1)");
  PrototypeBank bank;
  bank.protos = Matrixd::Zero(classes, embed_dim);
  bank.initialized.assign(static_cast<std::size_t>(classes), false);
  bank.beta = beta;
  return bank;
}

BatchPrototypes compute_prototypes(const FeatureMatrix& features, const LabelMap& labels) {
  if (labels.size() != features.rows()) throw ContractError("label/feature length mismatch");
  Index max_class = -1;
  for (Index i = 0; i < labels.size(); ++i) max_class = std::max(max_class, Index(labels[i]));
  if (max_class < 0) throw ContractError("no labeled pixel to average");

  BatchPrototypes batch;
  batch.protos = Matrixd::Zero(max_class + 1, features.cols());
  batch.present.assign(static_cast<std::size_t>(max_class + 1), false);
  Vector<std::int64_t> counts = Vector<std::int64_t>::Zero(max_class + 1);
  for (Index i = 0; i < labels.size(); ++i) {
    const std::int64_t y = labels[i];
    if (y == kIgnoreLabel) continue;
    batch.protos.row(y) += features.row(i);
    ++counts[y];
  }
  for (Index c = 0; c <= max_class; ++c) {
    if (counts[c] > 0) {
      batch.protos.row(c) /= static_cast<double>(counts[c]);
      batch.present[static_cast<std::size_t>(c)] = true;
    }
  }
  return batch;
}

void ema_update_prototypes(PrototypeBank& bank, const BatchPrototypes& batch,
                           bool literal_direction) {
  if (batch.protos.cols() != bank.protos.cols() || batch.protos.rows() > bank.protos.rows()) {
    throw ContractError("batch prototype shape exceeds the bank");
  }
  for (Index c = 0; c < batch.protos.rows(); ++c) {
    if (!batch.present[static_cast<std::size_t>(c)]) continue;
    if (!bank.initialized[static_cast<std::size_t>(c)]) {
      bank.protos.row(c) = batch.protos.row(c);
      bank.initialized[static_cast<std::size_t>(c)] = true;
    } else if (literal_direction) {
      bank.protos.row(c) = bank.beta * batch.protos.row(c) + (1.0 - bank.beta) * bank.protos.row(c);
    } else {
      bank.protos.row(c) = bank.beta * bank.protos.row(c) + (1.0 - bank.beta) * batch.protos.row(c);
    }
  }
}

void renormalize_prototypes(PrototypeBank& bank) {
  for (Index c = 0; c < bank.protos.rows(); ++c) {
    if (!bank.initialized[static_cast<std::size_t>(c)]) continue;
    const double norm = bank.protos.row(c).norm();
    if (norm > kNormFloor) bank.protos.row(c) /= norm;
  }
}

CeResult supervised_ce(const ProbMatrix& probs, const LabelMap& labels) {
  if (labels.size() != probs.rows()) throw ContractError("label/probability length mismatch");
  Index valid = 0;
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels[i] != kIgnoreLabel) ++valid;
  }
  if (valid == 0) throw ContractError("no valid label for the supervised loss");

  CeResult result;
  result.grad = Matrixd::Zero(probs.rows(), probs.cols());
  const double inv = 1.0 / static_cast<double>(valid);
  for (Index i = 0; i < labels.size(); ++i) {
    const std::int64_t y = labels[i];
    if (y == kIgnoreLabel) continue;
    if (y < 0 || y >= probs.cols()) {
      throw ValidationError("label out of range at row " + std::to_string(i));
    }
    double p = probs(i, y);
    if (p < kProbFloor) {
      p = kProbFloor;
      ++result.clamped;
    }
    result.value -= inv * std::log(p);
    result.grad(i, y) = -inv / p;
  }
  return result;
}

SlgLossResult slg_contrastive_loss(const FeatureMatrix& features, const LabelMap& pseudo_labels,
                                   const PrototypeBank& bank, const LossConfig& cfg) {
  cfg.validate();
  const Index n = features.rows();
  if (pseudo_labels.size() != n) throw ContractError("pseudo-label/feature length mismatch");
  if (bank.protos.cols() != features.cols()) {
    throw ContractError("prototype dimension does not match features");
  }
  if (bank.any_initialized() == 0) {
    throw ContractError("prototype bank has no initialized class");
  }

  SlgLossResult result;
  result.grad = Matrixd::Zero(n, features.cols());

  // Row-normalized view; gradients are pulled back through v = x / |x|.
  Matrixd unit = Matrixd::Zero(n, features.cols());
  Vectord norms = Vectord::Zero(n);
  std::vector<Index> eligible;
  eligible.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double norm = features.row(i).norm();
    if (norm <= kNormFloor || pseudo_labels[i] == kIgnoreLabel) {
      ++result.skipped_rows;
      continue;
    }
    norms[i] = norm;
    unit.row(i) = features.row(i) / norm;
    eligible.push_back(i);
  }

  Matrixd d_unit = Matrixd::Zero(n, features.cols());
  const double lambda = cfg.lambda_balance;

  // Pair term over ordered pairs of eligible rows.
  const auto num_eligible = static_cast<std::uint64_t>(eligible.size());
  if (num_eligible >= 2 && lambda > 0.0) {
    const std::uint64_t total_pairs = num_eligible * (num_eligible - 1);
    const bool exhaustive =
        cfg.pair_cap <= 0 || total_pairs <= static_cast<std::uint64_t>(cfg.pair_cap);

    const auto add_pair = [&](Index i, Index j, double weight) {
      const double d = unit.row(i).dot(unit.row(j));
      const bool same = pseudo_labels[i] == pseudo_labels[j];
      const double residual = same ? d - 1.0 : d;
      result.value += weight * lambda * residual * residual;
      const double coeff = weight * lambda * 2.0 * residual;
      d_unit.row(i) += coeff * unit.row(j);
      d_unit.row(j) += coeff * unit.row(i);
    };

    if (exhaustive) {
      for (std::uint64_t a = 0; a < num_eligible; ++a) {
        for (std::uint64_t b = 0; b < num_eligible; ++b) {
          if (a == b) continue;
          add_pair(eligible[a], eligible[b], 1.0);
        }
      }
      result.sampled_pairs = static_cast<Index>(total_pairs);
    } else {
      // Uniform with replacement; rescaling keeps the full-sum expectation.
      Rng rng(Rng::mix(cfg.pair_seed, 0x5147));
      const double scale =
          static_cast<double>(total_pairs) / static_cast<double>(cfg.pair_cap);
      for (Index s = 0; s < cfg.pair_cap; ++s) {
        const std::uint64_t q = rng.uniform_int(total_pairs);
        const std::uint64_t a = q / (num_eligible - 1);
        std::uint64_t b = q % (num_eligible - 1);
        if (b >= a) ++b;
        add_pair(eligible[a], eligible[b], scale);
      }
      result.sampled_pairs = cfg.pair_cap;
    }
  }

  // Prototype term: softmax over initialized classes only.
  if (lambda < 1.0) {
    std::vector<Index> classes;
    for (Index c = 0; c < bank.classes(); ++c) {
      if (bank.initialized[static_cast<std::size_t>(c)]) classes.push_back(c);
    }
    for (const Index i : eligible) {
      const std::int64_t target = pseudo_labels[i];
      if (target >= bank.classes() || !bank.initialized[static_cast<std::size_t>(target)]) {
        ++result.skipped_rows;
        continue;
      }
      Vectord logits(static_cast<Index>(classes.size()));
      double target_logit = 0.0;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        logits[static_cast<Index>(c)] = unit.row(i).dot(bank.protos.row(classes[c])) / cfg.tau;
        if (classes[c] == target) target_logit = logits[static_cast<Index>(c)];
      }
      const double shift = logits.maxCoeff();
      Vectord soft = (logits.array() - shift).exp();
      const double lse = shift + std::log(soft.sum());
      soft /= soft.sum();

      result.value -= (1.0 - lambda) * (target_logit - lse);

      // d/dv of -(1-lambda) * (logit_target - lse)
      Eigen::RowVectorXd dv = Eigen::RowVectorXd::Zero(features.cols());
      for (std::size_t c = 0; c < classes.size(); ++c) {
        dv += soft[static_cast<Index>(c)] * bank.protos.row(classes[c]);
      }
      dv -= bank.protos.row(target);
      d_unit.row(i) += (1.0 - lambda) / cfg.tau * dv;
    }
  }

  // Pull gradients back through the row normalization.
  for (const Index i : eligible) {
    const double dot = d_unit.row(i).dot(unit.row(i));
    result.grad.row(i) = (d_unit.row(i) - dot * unit.row(i)) / norms[i];
  }
  return result;
}

ClgLossResult clg_weighted_ce(const std::vector<ProbMatrix>& per_round_probs,
                              const LabelMap& pseudo, bool dynamic_weight) {
  if (per_round_probs.empty()) throw ContractError("no per-round probabilities");
  const Index n = per_round_probs[0].rows();
  if (pseudo.size() != n) throw ContractError("pseudo-label length mismatch");

  ClgLossResult result;
  const double inv = 1.0 / static_cast<double>(n);
  for (const auto& probs : per_round_probs) {
    if (probs.rows() != n) throw ContractError("per-round shapes disagree");
    double round_value = 0.0;
    Matrixd grad = Matrixd::Zero(n, probs.cols());
    for (Index i = 0; i < n; ++i) {
      const std::int64_t y = pseudo[i];
      if (y == kIgnoreLabel) continue;
      double p = probs(i, y);
      const double omega = dynamic_weight ? p : 1.0;  // detached feedback weight
      if (p < kProbFloor) {
        p = kProbFloor;
        ++result.clamped;
      }
      round_value -= inv * omega * std::log(p);
      grad(i, y) = -inv * omega / p;
    }
    result.per_round.push_back(round_value);
    result.value += round_value;
    result.grads.push_back(std::move(grad));
  }
  return result;
}

double total_unsup_loss(const std::vector<double>& slg_losses,
                        const std::vector<double>& clg_losses, const LossConfig& cfg) {
  double slg = 0.0;
  for (double v : slg_losses) slg += v;
  double clg = 0.0;
  for (double v : clg_losses) clg += v;
  return cfg.lambda_slg * slg + cfg.lambda_clg * clg;
}

double total_loss(double sup, double unsup, const LossConfig& cfg) {
  return sup + cfg.lambda_unsup * unsup;
}

}  // namespace mllc
