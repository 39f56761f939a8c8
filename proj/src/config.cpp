#include "mllc/config.hpp"

#include <fstream>
#include <set>

namespace mllc {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (known.find(key) == known.end()) {
      throw ParameterError("unknown config key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

void parse_synth(const json& j, SynthSpec& spec) {
  reject_unknown(j,
                 {"rows", "cols", "classes", "embed_dim", "raw_dim", "num_images",
                  "cluster_separation", "noise_rate", "labeled_fraction", "seed"},
                 "synth");
  read(j, "rows", spec.grid.rows);
  read(j, "cols", spec.grid.cols);
  read(j, "classes", spec.grid.classes);
  read(j, "embed_dim", spec.grid.embed_dim);
  read(j, "raw_dim", spec.raw_dim);
  read(j, "num_images", spec.num_images);
  read(j, "cluster_separation", spec.cluster_separation);
  read(j, "noise_rate", spec.noise_rate);
  read(j, "labeled_fraction", spec.labeled_fraction);
  read(j, "seed", spec.seed);
}

void parse_refine(const json& j, RefineConfig& cfg) {
  reject_unknown(j,
                 {"rounds", "neighbors", "gamma", "alpha", "sigma", "order", "class_thresholds",
                  "clg_class_cap", "seed"},
                 "refine");
  read(j, "rounds", cfg.rounds);
  read(j, "neighbors", cfg.neighbors);
  read(j, "gamma", cfg.gamma);
  read(j, "alpha", cfg.alpha);
  read(j, "sigma", cfg.sigma);
  if (j.contains("order")) cfg.order = stage_order_from_string(j.at("order").get<std::string>());
  read(j, "class_thresholds", cfg.class_thresholds);
  read(j, "clg_class_cap", cfg.clg_class_cap);
  read(j, "seed", cfg.seed);
}

void parse_loss(const json& j, LossConfig& cfg) {
  reject_unknown(j,
                 {"lambda_balance", "tau", "lambda_slg", "lambda_clg", "lambda_unsup", "pair_cap",
                  "dynamic_weight", "literal_prototype_ema"},
                 "loss");
  read(j, "lambda_balance", cfg.lambda_balance);
  read(j, "tau", cfg.tau);
  read(j, "lambda_slg", cfg.lambda_slg);
  read(j, "lambda_clg", cfg.lambda_clg);
  read(j, "lambda_unsup", cfg.lambda_unsup);
  read(j, "pair_cap", cfg.pair_cap);
  read(j, "dynamic_weight", cfg.dynamic_weight);
  read(j, "literal_prototype_ema", cfg.literal_prototype_ema);
}

void parse_augment(const json& j, TrainConfig& cfg) {
  reject_unknown(j,
                 {"weak_noise", "strong_noise", "flip", "channel_scale_lo", "channel_scale_hi",
                  "cutout_fraction"},
                 "augment");
  read(j, "weak_noise", cfg.weak_aug.noise_scale);
  read(j, "strong_noise", cfg.strong_aug.noise_scale);
  if (j.contains("flip")) {
    const bool flip = j.at("flip").get<bool>();
    cfg.weak_aug.flip = flip;
    cfg.strong_aug.flip = flip;
  }
  read(j, "channel_scale_lo", cfg.strong_aug.channel_scale_lo);
  read(j, "channel_scale_hi", cfg.strong_aug.channel_scale_hi);
  read(j, "cutout_fraction", cfg.strong_aug.cutout_fraction);
}

void parse_train(const json& j, TrainConfig& cfg) {
  reject_unknown(j,
                 {"epochs", "batch_size", "base_lr", "momentum", "seed", "teacher_decay",
                  "proto_beta", "eval_interval", "val_images", "mode"},
                 "train");
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "base_lr", cfg.base_lr);
  read(j, "momentum", cfg.momentum);
  read(j, "seed", cfg.seed);
  read(j, "teacher_decay", cfg.teacher_decay);
  read(j, "proto_beta", cfg.proto_beta);
  read(j, "eval_interval", cfg.eval_interval);
  read(j, "val_images", cfg.val_images);
  if (j.contains("mode")) cfg.mode = train_mode_from_string(j.at("mode").get<std::string>());
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"out_dir", "threads", "synth", "train", "refine", "loss", "augment"},
                 "top level");
  ExperimentConfig cfg;
  read(j, "out_dir", cfg.out_dir);
  read(j, "threads", cfg.threads);
  if (j.contains("synth")) parse_synth(j.at("synth"), cfg.synth);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("refine")) parse_refine(j.at("refine"), cfg.train.refine);
  if (j.contains("loss")) parse_loss(j.at("loss"), cfg.train.loss);
  if (j.contains("augment")) parse_augment(j.at("augment"), cfg.train);
  return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["out_dir"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  j["synth"] = {{"rows", cfg.synth.grid.rows},
                {"cols", cfg.synth.grid.cols},
                {"classes", cfg.synth.grid.classes},
                {"embed_dim", cfg.synth.grid.embed_dim},
                {"raw_dim", cfg.synth.raw_dim},
                {"num_images", cfg.synth.num_images},
                {"cluster_separation", cfg.synth.cluster_separation},
                {"noise_rate", cfg.synth.noise_rate},
                {"labeled_fraction", cfg.synth.labeled_fraction},
                {"seed", cfg.synth.seed}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"base_lr", cfg.train.base_lr},
                {"momentum", cfg.train.momentum},
                {"seed", cfg.train.seed},
                {"teacher_decay", cfg.train.teacher_decay},
                {"proto_beta", cfg.train.proto_beta},
                {"eval_interval", cfg.train.eval_interval},
                {"val_images", cfg.train.val_images},
                {"mode", to_string(cfg.train.mode)}};
  j["refine"] = {{"rounds", cfg.train.refine.rounds},
                 {"neighbors", cfg.train.refine.neighbors},
                 {"gamma", cfg.train.refine.gamma},
                 {"alpha", cfg.train.refine.alpha},
                 {"sigma", cfg.train.refine.sigma},
                 {"order", to_string(cfg.train.refine.order)},
                 {"class_thresholds", cfg.train.refine.class_thresholds},
                 {"clg_class_cap", cfg.train.refine.clg_class_cap},
                 {"seed", cfg.train.refine.seed}};
  j["loss"] = {{"lambda_balance", cfg.train.loss.lambda_balance},
               {"tau", cfg.train.loss.tau},
               {"lambda_slg", cfg.train.loss.lambda_slg},
               {"lambda_clg", cfg.train.loss.lambda_clg},
               {"lambda_unsup", cfg.train.loss.lambda_unsup},
               {"pair_cap", cfg.train.loss.pair_cap},
               {"dynamic_weight", cfg.train.loss.dynamic_weight},
               {"literal_prototype_ema", cfg.train.loss.literal_prototype_ema}};
  j["augment"] = {{"weak_noise", cfg.train.weak_aug.noise_scale},
                  {"strong_noise", cfg.train.strong_aug.noise_scale},
                  {"flip", cfg.train.weak_aug.flip},
                  {"channel_scale_lo", cfg.train.strong_aug.channel_scale_lo},
                  {"channel_scale_hi", cfg.train.strong_aug.channel_scale_hi},
                  {"cutout_fraction", cfg.train.strong_aug.cutout_fraction}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("config parse error: " + std::string(e.what()));
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config: " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

}  // namespace mllc
