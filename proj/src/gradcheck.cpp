#include "mllc/gradcheck.hpp"

#include "mllc/layers.hpp"
#include "mllc/losses.hpp"
#include "mllc/refine.hpp"
#include "mllc/rng.hpp"

#include <cmath>

namespace mllc::gradcheck {

namespace {

FdSlot slot(Matrixd& tensor, const Matrixd& grad) {
  return FdSlot{tensor.data(), grad.data(), tensor.size()};
}

FdSlot slot(Vectord& tensor, const Vectord& grad) {
  return FdSlot{tensor.data(), grad.data(), tensor.size()};
}

Matrixd random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrixd m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

ProbMatrix random_probs(Rng& rng, Index rows, Index classes, double floor = 0.05) {
  ProbMatrix p(rows, classes);
  for (Index i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (Index c = 0; c < classes; ++c) {
      p(i, c) = floor + rng.uniform();
      sum += p(i, c);
    }
    p.row(i) /= sum;
  }
  return p;
}

LabelMap random_labels(Rng& rng, Index rows, Index classes) {
  LabelMap labels(rows);
  for (Index i = 0; i < rows; ++i) {
    labels[i] = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(classes)));
  }
  return labels;
}

SuiteResult check_mlp_backward(std::uint64_t seed, Index configs) {
  SuiteResult result{"mlp_backward", 0, 0.0, false};
  const Activation acts[] = {Activation::identity, Activation::leaky_relu,
                             Activation::softmax_rows, Activation::renorm_rows};
  Rng rng(Rng::mix(seed, 0x01));
  Index done = 0;
  while (done < configs) {
    const Activation act = acts[done % 4];
    const Index in = 1 + static_cast<Index>(rng.uniform_int(6));
    const Index out = 1 + static_cast<Index>(rng.uniform_int(5));
    const Index n = 1 + static_cast<Index>(rng.uniform_int(4));

    MlpParams params;
    params.act = act;
    Matrixd input;
    if (act == Activation::renorm_rows) {
      // Positive regime keeps the row sums well away from the clamp.
      params.weight = (random_matrix(rng, out, in).array().abs() + 0.2).matrix();
      params.bias = (random_matrix(rng, out, 1).array().abs() + 0.2).matrix().col(0);
      input = (random_matrix(rng, n, in).array().abs() + 0.2).matrix();
    } else {
      params.weight = random_matrix(rng, out, in);
      params.bias = random_matrix(rng, out, 1).col(0);
      input = random_matrix(rng, n, in);
    }

    MlpCache cache;
    mlp_forward(params, input, &cache);
    if (act == Activation::leaky_relu && cache.pre.cwiseAbs().minCoeff() < 1e-3) {
      continue;  // too close to the kink for central differences
    }

    const Matrixd projection = random_matrix(rng, n, out);
    const auto value = [&]() {
      return (mlp_forward(params, input).array() * projection.array()).sum();
    };
    MlpCache fresh;
    mlp_forward(params, input, &fresh);
    const MlpBackwardResult bw = mlp_backward(params, fresh, projection);

    const double err = fd_max_rel_error(
        value, {slot(params.weight, bw.grads.weight), slot(params.bias, bw.grads.bias),
                slot(input, bw.input_grad)});
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++done;
  }
  result.configs = configs;
  result.passed = result.max_rel_error <= kRelTol;
  return result;
}

SuiteResult check_supervised_ce(std::uint64_t seed, Index configs) {
  SuiteResult result{"supervised_ce", configs, 0.0, false};
  Rng rng(Rng::mix(seed, 0x02));
  for (Index t = 0; t < configs; ++t) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(6));
    const Index classes = 2 + static_cast<Index>(rng.uniform_int(4));
    ProbMatrix probs = random_probs(rng, n, classes);
    LabelMap labels = random_labels(rng, n, classes);
    if (n > 2) labels[0] = kIgnoreLabel;  // exercise the mask

    const CeResult ce = supervised_ce(probs, labels);
    const auto value = [&]() { return supervised_ce(probs, labels).value; };
    const double err = fd_max_rel_error(value, {slot(probs, ce.grad)});
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  result.passed = result.max_rel_error <= kRelTol;
  return result;
}

SuiteResult check_slg_contrastive(std::uint64_t seed, Index configs) {
  SuiteResult result{"slg_contrastive_loss", configs, 0.0, false};
  Rng rng(Rng::mix(seed, 0x03));
  for (Index t = 0; t < configs; ++t) {
    const Index n = 3 + static_cast<Index>(rng.uniform_int(6));
    const Index m = 2 + static_cast<Index>(rng.uniform_int(5));
    const Index classes = 2 + static_cast<Index>(rng.uniform_int(3));

    Matrixd features = random_matrix(rng, n, m);
    for (Index i = 0; i < n; ++i) {
      if (features.row(i).norm() < 0.3) features(i, 0) += 1.0;
    }
    LabelMap pseudo = random_labels(rng, n, classes);

    PrototypeBank bank = make_prototype_bank(classes, m, 0.9);
    for (Index c = 0; c < classes; ++c) {
      Matrixd p = random_matrix(rng, 1, m);
      bank.protos.row(c) = p.row(0) / p.row(0).norm();
      bank.initialized[static_cast<std::size_t>(c)] = true;
    }

    LossConfig cfg;
    cfg.lambda_balance = 0.5;
    cfg.tau = 0.1;
    // Alternate between exhaustive and seeded-sampled pair terms.
    cfg.pair_cap = (t % 2 == 0) ? 0 : std::max<Index>(2, n);
    cfg.pair_seed = Rng::mix(seed, static_cast<std::uint64_t>(t));

    const SlgLossResult loss = slg_contrastive_loss(features, pseudo, bank, cfg);
    const auto value = [&]() { return slg_contrastive_loss(features, pseudo, bank, cfg).value; };
    const double err = fd_max_rel_error(value, {slot(features, loss.grad)});
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  result.passed = result.max_rel_error <= kRelTol;
  return result;
}

SuiteResult check_clg_weighted_ce(std::uint64_t seed, Index configs) {
  SuiteResult result{"clg_weighted_ce", configs, 0.0, false};
  Rng rng(Rng::mix(seed, 0x04));
  for (Index t = 0; t < configs; ++t) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(5));
    const Index classes = 2 + static_cast<Index>(rng.uniform_int(4));
    const Index rounds = 1 + static_cast<Index>(rng.uniform_int(3));
    const bool dynamic = t % 2 == 0;

    std::vector<ProbMatrix> per_round;
    for (Index k = 0; k < rounds; ++k) per_round.push_back(random_probs(rng, n, classes));
    const LabelMap pseudo = random_labels(rng, n, classes);

    const ClgLossResult loss = clg_weighted_ce(per_round, pseudo, dynamic);

    // The feedback weight is detached: differencing evaluates the objective
    // with the weights frozen at their baseline values.
    std::vector<Matrixd> frozen;
    for (Index k = 0; k < rounds; ++k) {
      Matrixd w = Matrixd::Ones(n, 1);
      if (dynamic) {
        for (Index i = 0; i < n; ++i) w(i, 0) = per_round[static_cast<std::size_t>(k)](i, pseudo[i]);
      }
      frozen.push_back(std::move(w));
    }
    const auto value = [&]() {
      double total = 0.0;
      for (Index k = 0; k < rounds; ++k) {
        const auto& p = per_round[static_cast<std::size_t>(k)];
        for (Index i = 0; i < n; ++i) {
          total -= frozen[static_cast<std::size_t>(k)](i, 0) *
                   std::log(std::max(p(i, pseudo[i]), 1e-12)) / static_cast<double>(n);
        }
      }
      return total;
    };

    std::vector<FdSlot> slots;
    for (Index k = 0; k < rounds; ++k) {
      slots.push_back(slot(per_round[static_cast<std::size_t>(k)],
                           loss.grads[static_cast<std::size_t>(k)]));
    }
    result.max_rel_error = std::max(result.max_rel_error, fd_max_rel_error(value, slots));
  }
  result.passed = result.max_rel_error <= kRelTol;
  return result;
}

SuiteResult check_refine_pipeline(std::uint64_t seed, Index configs) {
  SuiteResult result{"refine_pipeline", 0, 0.0, false};
  Rng rng(Rng::mix(seed, 0x05));
  Index done = 0;
  while (done < configs) {
    const Index n = 6 + static_cast<Index>(rng.uniform_int(5));
    const Index m = 3 + static_cast<Index>(rng.uniform_int(3));
    const Index classes = 2 + static_cast<Index>(rng.uniform_int(3));
    const Index rounds = 1 + static_cast<Index>(rng.uniform_int(2));

    RefineConfig cfg;
    cfg.rounds = rounds;
    cfg.neighbors = std::min<Index>(3, n - 1);
    cfg.alpha = 0.2 + 0.6 * rng.uniform();
    cfg.sigma = 0.5 + 0.4 * rng.uniform();
    cfg.clg_class_cap = 0;
    cfg.seed = Rng::mix(seed, static_cast<std::uint64_t>(done));
    const StageOrder orders[] = {StageOrder::clg_first, StageOrder::slg_first,
                                 StageOrder::simultaneous};
    cfg.order = orders[done % 3];

    // The class head output feeds the CLG, so probabilities are produced by
    // a softmax layer and perturbations happen upstream of it.
    MlpParams cls = make_random_mlp(m, classes, Activation::softmax_rows, rng, 0.8);
    Matrixd hidden = random_matrix(rng, n, m);
    FeatureMatrix features = (random_matrix(rng, n, m).array() + 0.1).matrix();

    RefineLayers layers;
    for (Index k = 0; k < rounds; ++k) {
      layers.f_c.push_back(make_random_mlp(2 * classes, classes, Activation::softmax_rows, rng, 0.7));
      layers.f_s.push_back(make_random_mlp(2 * m, m, Activation::leaky_relu, rng, 0.7));
    }

    MlpCache cls_cache;
    const ProbMatrix seg = mlp_forward(cls, hidden, &cls_cache);
    RefineTape base_tape;
    const RefineResult base = refine(features, seg, seg, cfg, layers, &base_tape);

    bool near_kink = false;
    for (const auto& rt : base_tape.rounds) {
      if (rt.f_s_cache.pre.cwiseAbs().minCoeff() < 1e-3) near_kink = true;
    }
    if (near_kink) continue;

    std::vector<Matrixd> proj_c;
    std::vector<Matrixd> proj_s;
    for (Index k = 0; k < rounds; ++k) {
      proj_c.push_back(random_matrix(rng, n, classes));
      proj_s.push_back(random_matrix(rng, n, m));
    }

    // Value with edges, thresholds, and gates frozen at the baseline.
    const auto value = [&]() {
      const ProbMatrix probs = mlp_forward(cls, hidden);
      const RefineResult res = refine_with_edges(features, probs, seg, cfg, layers, base_tape);
      double total = 0.0;
      for (Index k = 0; k < rounds; ++k) {
        total += (res.clg_per_round[static_cast<std::size_t>(k)].array() *
                  proj_c[static_cast<std::size_t>(k)].array())
                     .sum();
        total += (res.slg_per_round[static_cast<std::size_t>(k)].array() *
                  proj_s[static_cast<std::size_t>(k)].array())
                     .sum();
      }
      return total;
    };

    MlpCache fresh_cls;
    const ProbMatrix probs0 = mlp_forward(cls, hidden, &fresh_cls);
    RefineTape tape;
    refine_with_edges(features, probs0, seg, cfg, layers, base_tape, &tape);
    const RefineGrads rg = refine_backward(layers, tape, proj_c, proj_s);
    const MlpBackwardResult cls_bw = mlp_backward(cls, fresh_cls, rg.probs);

    std::vector<FdSlot> slots;
    slots.push_back(slot(features, rg.features));
    slots.push_back(slot(hidden, cls_bw.input_grad));
    slots.push_back(slot(cls.weight, cls_bw.grads.weight));
    for (Index k = 0; k < rounds; ++k) {
      slots.push_back(slot(layers.f_c[static_cast<std::size_t>(k)].weight,
                           rg.f_c[static_cast<std::size_t>(k)].weight));
      slots.push_back(slot(layers.f_c[static_cast<std::size_t>(k)].bias,
                           rg.f_c[static_cast<std::size_t>(k)].bias));
      slots.push_back(slot(layers.f_s[static_cast<std::size_t>(k)].weight,
                           rg.f_s[static_cast<std::size_t>(k)].weight));
      slots.push_back(slot(layers.f_s[static_cast<std::size_t>(k)].bias,
                           rg.f_s[static_cast<std::size_t>(k)].bias));
    }
    const double err = fd_max_rel_error(value, slots);
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++done;
  }
  result.configs = configs;
  result.passed = result.max_rel_error <= kRelTol;
  return result;
}

}  // namespace

double fd_max_rel_error(const std::function<double()>& value, const std::vector<FdSlot>& slots,
                        double eps) {
  double worst = 0.0;
  for (const auto& s : slots) {
    for (Index i = 0; i < s.size; ++i) {
      const double saved = s.data[i];
      s.data[i] = saved + eps;
      const double plus = value();
      s.data[i] = saved - eps;
      const double minus = value();
      s.data[i] = saved;
      const double fd = (plus - minus) / (2.0 * eps);
      const double analytic = s.grad[i];
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic) / denom);
    }
  }
  return worst;
}

Report run_all(std::uint64_t seed, Index configs_per_op) {
  Report report;
  report.suites.push_back(check_mlp_backward(seed, configs_per_op));
  report.suites.push_back(check_supervised_ce(seed, configs_per_op));
  report.suites.push_back(check_slg_contrastive(seed, configs_per_op));
  report.suites.push_back(check_clg_weighted_ce(seed, configs_per_op));
  report.suites.push_back(check_refine_pipeline(seed, configs_per_op));
  return report;
}

}  // namespace mllc::gradcheck
