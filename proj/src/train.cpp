#include "mllc/train.hpp"

#include <cmath>

namespace mllc {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::mllc: return "mllc";
    case TrainMode::supervised_only: return "supervised_only";
    case TrainMode::self_training: return "self_training";
  }
  throw ContractError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "mllc") return TrainMode::mllc;
  if (name == "supervised_only") return TrainMode::supervised_only;
  if (name == "self_training") return TrainMode::self_training;
  throw ParameterError("unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ParameterError("batch_size must be even and >= 2 (equal labeled/unlabeled halves)");
  }
  if (base_lr < 0.0) throw ParameterError("base_lr must be nonnegative");
  if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("momentum must lie in [0, 1)");
  if (teacher_decay < 0.0 || teacher_decay > 1.0) {
    throw ParameterError("teacher_decay must lie in [0, 1]");
  }
  refine.validate();
  loss.validate();
}

Model make_model(const SynthSpec& spec, Index rounds, Rng& rng) {
  const Index m = spec.grid.embed_dim;
  const Index classes = spec.grid.classes;
  Model model;
  model.heads.backbone = make_random_mlp(spec.raw_dim, m, Activation::leaky_relu, rng,
                                         1.0 / std::sqrt(static_cast<double>(spec.raw_dim)),
                                         /*bias_scale=*/0.1);
  model.heads.cls = make_random_mlp(m, classes, Activation::softmax_rows, rng,
                                    1.0 / std::sqrt(static_cast<double>(m)));
  model.heads.emb = MlpParams{Matrixd::Identity(m, m), Vectord::Zero(m), Activation::identity, 0};
  model.layers = make_identity_refine_layers(rounds, classes, m, /*calibrated=*/false);
  return model;
}

std::vector<std::pair<std::string, MlpParams*>> named_params(Model& model) {
  std::vector<std::pair<std::string, MlpParams*>> out;
  out.emplace_back("backbone", &model.heads.backbone);
  out.emplace_back("cls_head", &model.heads.cls);
  out.emplace_back("emb_head", &model.heads.emb);
  for (std::size_t k = 0; k < model.layers.f_c.size(); ++k) {
    out.emplace_back("f_c." + std::to_string(k), &model.layers.f_c[k]);
  }
  for (std::size_t k = 0; k < model.layers.f_s.size(); ++k) {
    out.emplace_back("f_s." + std::to_string(k), &model.layers.f_s[k]);
  }
  return out;
}

std::vector<std::pair<std::string, const MlpParams*>> named_params(const Model& model) {
  auto mutable_view = named_params(const_cast<Model&>(model));
  std::vector<std::pair<std::string, const MlpParams*>> out;
  out.reserve(mutable_view.size());
  for (auto& [name, p] : mutable_view) out.emplace_back(name, p);
  return out;
}

HeadOutputs heads_forward(const Heads& heads, const Matrixd& pixels, HeadCaches* caches) {
  HeadOutputs out;
  out.hidden = mlp_forward(heads.backbone, pixels, caches != nullptr ? &caches->backbone : nullptr);
  out.probs = mlp_forward(heads.cls, out.hidden, caches != nullptr ? &caches->cls : nullptr);
  out.features = mlp_forward(heads.emb, out.hidden, caches != nullptr ? &caches->emb : nullptr);
  return out;
}

namespace {

struct GradAccumulator {
  // Order matches named_params: backbone, cls, emb, f_c..., f_s...
  std::vector<MlpGrads> grads;
  std::size_t rounds = 0;

  explicit GradAccumulator(Model& model) : rounds(model.layers.f_c.size()) {
    for (auto& [name, p] : named_params(model)) {
      MlpGrads g;
      g.weight = Matrixd::Zero(p->weight.rows(), p->weight.cols());
      g.bias = Vectord::Zero(p->bias.size());
      grads.push_back(std::move(g));
    }
  }

  MlpGrads& backbone() { return grads[0]; }
  MlpGrads& cls() { return grads[1]; }
  MlpGrads& emb() { return grads[2]; }
  MlpGrads& f_c(std::size_t k) { return grads[3 + k]; }
  MlpGrads& f_s(std::size_t k) { return grads[3 + rounds + k]; }
};

void add_grads(MlpGrads& into, const MlpGrads& from) {
  into.weight += from.weight;
  into.bias += from.bias;
}

struct Dataset {
  std::vector<SynthBatch> images;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

Matrixd concat_pixels(const std::vector<SynthBatch>& batches) {
  Index total = 0;
  for (const auto& b : batches) total += b.pixels.rows();
  Matrixd out(total, batches.front().pixels.cols());
  Index at = 0;
  for (const auto& b : batches) {
    out.middleRows(at, b.pixels.rows()) = b.pixels;
    at += b.pixels.rows();
  }
  return out;
}

LabelMap concat_labels(const std::vector<SynthBatch>& batches) {
  Index total = 0;
  for (const auto& b : batches) total += b.gt.size();
  LabelMap out(total);
  Index at = 0;
  for (const auto& b : batches) {
    out.segment(at, b.gt.size()) = b.gt;
    at += b.gt.size();
  }
  return out;
}

Matrixd normalized_rows(const Matrixd& m) {
  Matrixd out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 1e-12) out.row(i) /= norm;
  }
  return out;
}

LabelMap threshold_pseudo_labels(const ProbMatrix& probs, double sigma) {
  LabelMap labels(probs.rows());
  for (Index i = 0; i < probs.rows(); ++i) {
    const Index c = argmax_row(probs, i);
    labels[i] = probs(i, c) > sigma ? c : kIgnoreLabel;
  }
  return labels;
}

LabelMap plain_argmax(const ProbMatrix& probs) {
  LabelMap labels(probs.rows());
  for (Index i = 0; i < probs.rows(); ++i) labels[i] = argmax_row(probs, i);
  return labels;
}

struct TrainContext {
  SynthSpec spec;
  TrainConfig cfg;
  Dataset data;
  std::vector<SynthBatch> val;
  Model student;
  Model teacher;
  std::vector<PrototypeBank> banks;
  OptimizerState opt;
  std::vector<MlpGrads> velocity;
};

StepRecord train_step(TrainContext& ctx, Index step) {
  const TrainConfig& cfg = ctx.cfg;
  const GridShape& grid = ctx.spec.grid;
  const Index half = cfg.batch_size / 2;
  const std::uint64_t step_seed = Rng::mix(Rng::mix(cfg.seed, 0x57e0), static_cast<std::uint64_t>(step));
  Rng step_rng(step_seed);
  Rng data_rng = step_rng.fork(0);

  // Equal labeled/unlabeled sampling, with replacement.
  std::vector<SynthBatch> lab_batches;
  std::vector<SynthBatch> unl_teacher;
  std::vector<SynthBatch> unl_student;
  for (Index slot = 0; slot < half; ++slot) {
    const auto pick = ctx.data.labeled[data_rng.uniform_int(ctx.data.labeled.size())];
    const SynthBatch& img = ctx.data.images[pick];
    Rng geo = step_rng.fork(100 + static_cast<std::uint64_t>(slot));
    const bool flip = cfg.weak_aug.flip && geo.uniform() < 0.5;
    Rng aug_rng = step_rng.fork(200 + static_cast<std::uint64_t>(slot));
    AugmentParams params = cfg.weak_aug;
    params.flip = false;
    SynthBatch aug = weak_augment(img, grid, aug_rng, params);
    if (flip) flip_grid(aug, grid);
    lab_batches.push_back(std::move(aug));
  }
  for (Index slot = 0; slot < half; ++slot) {
    const auto pick = ctx.data.unlabeled[data_rng.uniform_int(ctx.data.unlabeled.size())];
    const SynthBatch& img = ctx.data.images[pick];
    // The flip is shared between the streams so pseudo-labels stay aligned
    // pixel for pixel; photometric perturbations stay stream-specific.
    Rng geo = step_rng.fork(300 + static_cast<std::uint64_t>(slot));
    const bool flip = cfg.weak_aug.flip && geo.uniform() < 0.5;
    Rng weak_rng = step_rng.fork(400 + static_cast<std::uint64_t>(slot));
    Rng strong_rng = step_rng.fork(500 + static_cast<std::uint64_t>(slot));
    AugmentParams weak = cfg.weak_aug;
    weak.flip = false;
    AugmentParams strong = cfg.strong_aug;
    strong.flip = false;
    SynthBatch t = weak_augment(img, grid, weak_rng, weak);
    SynthBatch s = strong_augment(img, grid, strong_rng, strong);
    if (flip) {
      flip_grid(t, grid);
      flip_grid(s, grid);
    }
    unl_teacher.push_back(std::move(t));
    unl_student.push_back(std::move(s));
  }

  const Matrixd lab_pixels = concat_pixels(lab_batches);
  const LabelMap lab_gt = concat_labels(lab_batches);

  StepRecord record;
  record.step = step;
  record.lr = poly_lr(ctx.opt);

  GradAccumulator acc(ctx.student);
  const std::size_t rounds = ctx.student.layers.f_c.size();

  // Supervised path through the student.
  HeadCaches lab_caches;
  const HeadOutputs lab_out = heads_forward(ctx.student.heads, lab_pixels, &lab_caches);
  const CeResult sup = supervised_ce(lab_out.probs, lab_gt);
  record.loss_sup = sup.value;
  {
    MlpBackwardResult cls_bw = mlp_backward(ctx.student.heads.cls, lab_caches.cls, sup.grad);
    add_grads(acc.cls(), cls_bw.grads);
    MlpBackwardResult bb_bw =
        mlp_backward(ctx.student.heads.backbone, lab_caches.backbone, cls_bw.input_grad);
    add_grads(acc.backbone(), bb_bw.grads);
  }

  // Unsupervised path.
  if (cfg.mode == TrainMode::mllc) {
    const Matrixd teach_pixels = concat_pixels(unl_teacher);
    const Matrixd stud_pixels = concat_pixels(unl_student);

    const HeadOutputs t_out = heads_forward(ctx.teacher.heads, teach_pixels);
    RefineConfig t_refine = cfg.refine;
    t_refine.seed = Rng::mix(step_seed, 1);
    const RefineResult t_res =
        refine(t_out.features, t_out.probs, t_out.probs, t_refine, ctx.teacher.layers);
    const LabelMap pseudo = aggregate_pseudo_labels(t_res.clg_per_round);

    // Prototype banks advance on the teacher stream before the student loss
    // reads them; labeled pixels contribute raw embedding features under
    // their ground truth.
    const HeadOutputs t_lab = heads_forward(ctx.teacher.heads, lab_pixels);
    for (std::size_t k = 0; k < rounds; ++k) {
      Matrixd feats(lab_pixels.rows() + stud_pixels.rows(), grid.embed_dim);
      feats.topRows(lab_pixels.rows()) = t_lab.features;
      feats.bottomRows(stud_pixels.rows()) = t_res.slg_per_round[k];
      LabelMap labels(feats.rows());
      labels.head(lab_gt.size()) = lab_gt;
      labels.tail(pseudo.size()) = pseudo;
      const BatchPrototypes batch = compute_prototypes(normalized_rows(feats), labels);
      ema_update_prototypes(ctx.banks[k], batch, cfg.loss.literal_prototype_ema);
      renormalize_prototypes(ctx.banks[k]);
    }

    HeadCaches u_caches;
    const HeadOutputs u_out = heads_forward(ctx.student.heads, stud_pixels, &u_caches);
    RefineConfig s_refine = cfg.refine;
    s_refine.seed = Rng::mix(step_seed, 2);
    RefineTape tape;
    const RefineResult s_res =
        refine(u_out.features, u_out.probs, u_out.probs, s_refine, ctx.student.layers, &tape);

    std::vector<double> slg_values;
    std::vector<Matrixd> d_slg(rounds);
    for (std::size_t k = 0; k < rounds; ++k) {
      LossConfig lcfg = cfg.loss;
      lcfg.pair_seed = Rng::mix(step_seed, 0x9a00 + k);
      const SlgLossResult slg =
          slg_contrastive_loss(s_res.slg_per_round[k], pseudo, ctx.banks[k], lcfg);
      slg_values.push_back(slg.value);
      d_slg[k] = slg.grad;
    }
    const ClgLossResult clg =
        clg_weighted_ce(s_res.clg_per_round, pseudo, cfg.loss.dynamic_weight);

    for (double v : slg_values) record.loss_slg += v;
    record.loss_clg = clg.value;
    record.loss_unsup = total_unsup_loss(slg_values, clg.per_round, cfg.loss);

    if (cfg.loss.lambda_unsup != 0.0) {
      std::vector<Matrixd> d_clg(rounds);
      for (std::size_t k = 0; k < rounds; ++k) {
        d_clg[k] = cfg.loss.lambda_unsup * cfg.loss.lambda_clg * clg.grads[k];
        d_slg[k] *= cfg.loss.lambda_unsup * cfg.loss.lambda_slg;
      }
      const RefineGrads rg = refine_backward(ctx.student.layers, tape, d_clg, d_slg);
      for (std::size_t k = 0; k < rounds; ++k) {
        add_grads(acc.f_c(k), rg.f_c[k]);
        add_grads(acc.f_s(k), rg.f_s[k]);
      }
      MlpBackwardResult cls_bw = mlp_backward(ctx.student.heads.cls, u_caches.cls, rg.probs);
      add_grads(acc.cls(), cls_bw.grads);
      MlpBackwardResult emb_bw = mlp_backward(ctx.student.heads.emb, u_caches.emb, rg.features);
      add_grads(acc.emb(), emb_bw.grads);
      MlpBackwardResult bb_bw = mlp_backward(ctx.student.heads.backbone, u_caches.backbone,
                                             cls_bw.input_grad + emb_bw.input_grad);
      add_grads(acc.backbone(), bb_bw.grads);
    }
  } else if (cfg.mode == TrainMode::self_training) {
    const Matrixd teach_pixels = concat_pixels(unl_teacher);
    const Matrixd stud_pixels = concat_pixels(unl_student);
    const HeadOutputs t_out = heads_forward(ctx.teacher.heads, teach_pixels);
    const LabelMap pseudo = threshold_pseudo_labels(t_out.probs, cfg.refine.sigma);

    Index retained = 0;
    for (Index i = 0; i < pseudo.size(); ++i) retained += pseudo[i] != kIgnoreLabel ? 1 : 0;
    if (retained > 0) {
      HeadCaches u_caches;
      const HeadOutputs u_out = heads_forward(ctx.student.heads, stud_pixels, &u_caches);
      const CeResult unsup_ce = supervised_ce(u_out.probs, pseudo);
      record.loss_unsup = unsup_ce.value;
      record.loss_clg = unsup_ce.value;
      if (cfg.loss.lambda_unsup != 0.0) {
        const Matrixd upstream = cfg.loss.lambda_unsup * unsup_ce.grad;
        MlpBackwardResult cls_bw = mlp_backward(ctx.student.heads.cls, u_caches.cls, upstream);
        add_grads(acc.cls(), cls_bw.grads);
        MlpBackwardResult bb_bw =
            mlp_backward(ctx.student.heads.backbone, u_caches.backbone, cls_bw.input_grad);
        add_grads(acc.backbone(), bb_bw.grads);
      }
    }
  }

  record.loss_total = total_loss(record.loss_sup, record.loss_unsup, cfg.loss);
  if (!std::isfinite(record.loss_total)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                          " (batch seed " + std::to_string(step_seed) + ")");
  }

  auto params = named_params(ctx.student);
  std::vector<MlpParams*> param_ptrs;
  std::vector<const MlpGrads*> grad_ptrs;
  for (std::size_t p = 0; p < params.size(); ++p) {
    param_ptrs.push_back(params[p].second);
    grad_ptrs.push_back(&acc.grads[p]);
  }
  sgd_step(ctx.opt, param_ptrs, grad_ptrs, ctx.velocity);

  auto teacher_view = named_params(ctx.teacher);
  const Model& student_const = ctx.student;
  auto student_view = named_params(student_const);
  std::vector<MlpParams*> t_ptrs;
  std::vector<const MlpParams*> s_ptrs;
  for (std::size_t p = 0; p < teacher_view.size(); ++p) {
    t_ptrs.push_back(teacher_view[p].second);
    s_ptrs.push_back(student_view[p].second);
  }
  teacher_update(t_ptrs, s_ptrs, cfg.teacher_decay);

  return record;
}

}  // namespace

EvalRecord evaluate(const Model& student, const Model& teacher, const TrainConfig& cfg,
                    const std::vector<SynthBatch>& val,
                    const std::vector<SynthBatch>& unlabeled, Index step) {
  EvalRecord record;
  record.step = step;

  const Matrixd val_pixels = concat_pixels(val);
  const LabelMap val_gt = concat_labels(val);
  const HeadOutputs val_out = heads_forward(student.heads, val_pixels);
  const LabelMap pred = plain_argmax(val_out.probs);
  const Index classes = val_out.probs.cols();
  const MiouResult m = miou(confusion(pred, val_gt, classes));
  record.miou = m.miou;
  record.per_class = m.per_class;

  if (!unlabeled.empty()) {
    const Matrixd unl_pixels = concat_pixels(unlabeled);
    const LabelMap unl_gt = concat_labels(unlabeled);
    const HeadOutputs t_out = heads_forward(teacher.heads, unl_pixels);
    LabelMap pseudo;
    if (cfg.mode == TrainMode::mllc) {
      RefineConfig rcfg = cfg.refine;
      rcfg.seed = Rng::mix(cfg.seed, 0xe7a1);
      const RefineResult res =
          refine(t_out.features, t_out.probs, t_out.probs, rcfg, teacher.layers);
      pseudo = aggregate_pseudo_labels(res.clg_per_round);
    } else {
      pseudo = plain_argmax(t_out.probs);
    }
    record.pseudo_accuracy = pseudo_label_accuracy(pseudo, unl_gt).accuracy;
  }
  return record;
}

TrainResult train(const SynthSpec& data_spec, const TrainConfig& cfg) {
  cfg.validate();
  data_spec.validate();

  TrainContext ctx;
  ctx.spec = data_spec;
  ctx.cfg = cfg;

  ctx.data.images = generate(data_spec);
  for (std::size_t i = 0; i < ctx.data.images.size(); ++i) {
    (ctx.data.images[i].labeled ? ctx.data.labeled : ctx.data.unlabeled).push_back(i);
  }
  if (ctx.data.labeled.empty()) throw ParameterError("dataset has no labeled image");
  if (ctx.data.unlabeled.empty()) throw ParameterError("dataset has no unlabeled image");

  SynthSpec val_spec = data_spec;
  val_spec.num_images = std::max<Index>(1, cfg.val_images);
  val_spec.labeled_fraction = 1.0;
  val_spec.seed = Rng::mix(data_spec.seed, 0x0a11);
  ctx.val = generate(val_spec);

  Rng init_rng(Rng::mix(cfg.seed, 1));
  ctx.student = make_model(data_spec, cfg.refine.rounds, init_rng);
  ctx.teacher = ctx.student;

  for (Index k = 0; k < cfg.refine.rounds; ++k) {
    ctx.banks.push_back(
        make_prototype_bank(data_spec.grid.classes, data_spec.grid.embed_dim, cfg.proto_beta));
  }

  const Index half = cfg.batch_size / 2;
  const Index steps_per_epoch = std::max<Index>(
      1, (static_cast<Index>(ctx.data.unlabeled.size()) + half - 1) / half);
  ctx.opt.base_lr = cfg.base_lr;
  ctx.opt.momentum = cfg.momentum;
  ctx.opt.iter = 0;
  ctx.opt.total_iter = cfg.epochs * steps_per_epoch;

  std::vector<SynthBatch> unlabeled_clean;
  for (std::size_t i : ctx.data.unlabeled) unlabeled_clean.push_back(ctx.data.images[i]);

  TrainResult result;
  for (Index step = 0; step < ctx.opt.total_iter; ++step) {
    result.steps.push_back(train_step(ctx, step));
    if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0 &&
        step + 1 < ctx.opt.total_iter) {
      result.evals.push_back(
          evaluate(ctx.student, ctx.teacher, cfg, ctx.val, unlabeled_clean, step + 1));
    }
  }
  result.final_eval =
      evaluate(ctx.student, ctx.teacher, cfg, ctx.val, unlabeled_clean, ctx.opt.total_iter);
  result.evals.push_back(result.final_eval);
  result.student = std::move(ctx.student);
  result.teacher = std::move(ctx.teacher);
  result.banks = std::move(ctx.banks);
  return result;
}

}  // namespace mllc
