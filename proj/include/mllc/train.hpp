#pragma once

#include "mllc/losses.hpp"
#include "mllc/metrics.hpp"
#include "mllc/refine.hpp"
#include "mllc/synth.hpp"

#include <string>
#include <vector>

namespace mllc {

enum class TrainMode { mllc, supervised_only, self_training };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  Index epochs = 30;
  /// Images per step, split equally between labeled and unlabeled.
  Index batch_size = 16;
  double base_lr = 0.2;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double teacher_decay = 0.99;
  double proto_beta = 0.99;
  /// Steps between evaluations; 0 evaluates only at the end.
  Index eval_interval = 0;
  Index val_images = 8;
  TrainMode mode = TrainMode::mllc;
  RefineConfig refine;
  LossConfig loss;
  AugmentParams weak_aug;
  AugmentParams strong_aug;

  void validate() const;
};

/// Backbone stand-in plus the two decoder heads: raw pixels -> hidden
/// embedding (leaky), class probabilities (softmax), SLG features
/// (identity).
struct Heads {
  MlpParams backbone;
  MlpParams cls;
  MlpParams emb;
};

struct Model {
  Heads heads;
  RefineLayers layers;
};

Model make_model(const SynthSpec& spec, Index rounds, Rng& rng);

std::vector<std::pair<std::string, MlpParams*>> named_params(Model& model);
std::vector<std::pair<std::string, const MlpParams*>> named_params(const Model& model);

struct HeadOutputs {
  Matrixd hidden;
  ProbMatrix probs;
  FeatureMatrix features;
};

struct HeadCaches {
  MlpCache backbone;
  MlpCache cls;
  MlpCache emb;
};

HeadOutputs heads_forward(const Heads& heads, const Matrixd& pixels, HeadCaches* caches = nullptr);

struct StepRecord {
  Index step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double loss_slg = 0.0;
  double loss_clg = 0.0;
};

struct EvalRecord {
  Index step = 0;
  double miou = 0.0;
  std::vector<double> per_class;
  double pseudo_accuracy = 0.0;
};

struct TrainResult {
  Model student;
  Model teacher;
  std::vector<PrototypeBank> banks;  // one per refinement round
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  EvalRecord final_eval;
};

/// Runs the full desk-scale semi-supervised loop on a generated dataset.
TrainResult train(const SynthSpec& data_spec, const TrainConfig& cfg);

/// mIoU of the student head on clean validation images plus the quality of
/// the pseudo-labels the configured mode would emit on the unlabeled split
/// (refined and aggregated for mllc, plain teacher argmax otherwise).
EvalRecord evaluate(const Model& student, const Model& teacher, const TrainConfig& cfg,
                    const std::vector<SynthBatch>& val,
                    const std::vector<SynthBatch>& unlabeled, Index step);

}  // namespace mllc
