#include "mllc/config.hpp"
#include "mllc/gradcheck.hpp"
#include "mllc/npy.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using mllc::Index;
using nlohmann::json;

int default_threads() {
  if (const char* env = std::getenv("MLLC_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  int threads = 0;  // 0 = take config/env value
};

mllc::ExperimentConfig resolve_config(const CommonOpts& opts) {
  mllc::ExperimentConfig cfg;
  cfg.threads = default_threads();
  if (!opts.config_path.empty()) cfg = mllc::load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.threads > 0) cfg.threads = opts.threads;
  cfg.train.refine.threads = cfg.threads;
  return cfg;
}

void echo_config(const mllc::ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  mllc::save_config(cfg, std::filesystem::path(cfg.out_dir) / "config.json");
}

int cmd_synth(const CommonOpts& opts) {
  mllc::ExperimentConfig cfg = resolve_config(opts);
  cfg.synth.validate();
  echo_config(cfg);
  const auto batches = mllc::generate(cfg.synth);
  mllc::save_bundle(batches, cfg.synth, std::filesystem::path(cfg.out_dir) / "data");
  json summary = {{"images", batches.size()},
                  {"labeled", cfg.synth.labeled_images()},
                  {"pixels_per_image", cfg.synth.grid.pixels()},
                  {"out", (std::filesystem::path(cfg.out_dir) / "data").string()}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct RefineOpts {
  std::string features_path;
  std::string probs_path;
  std::string seg_probs_path;
  std::string checkpoint;
  std::string gt_path;
  std::string flips_path;
};

int cmd_refine(const CommonOpts& opts, const RefineOpts& ropts, mllc::RefineConfig refine_over,
               const std::vector<bool>& overridden) {
  mllc::ExperimentConfig cfg = resolve_config(opts);
  mllc::RefineConfig rcfg = cfg.train.refine;
  // Flag overrides win over the config file.
  if (overridden[0]) rcfg.rounds = refine_over.rounds;
  if (overridden[1]) rcfg.neighbors = refine_over.neighbors;
  if (overridden[2]) rcfg.alpha = refine_over.alpha;
  if (overridden[3]) rcfg.sigma = refine_over.sigma;
  if (overridden[4]) rcfg.gamma = refine_over.gamma;
  if (overridden[5]) rcfg.order = refine_over.order;
  if (overridden[6]) rcfg.seed = refine_over.seed;
  rcfg.threads = cfg.threads;
  rcfg.validate();

  const mllc::FeatureMatrix features = mllc::npy::load_matrix(ropts.features_path);
  const mllc::ProbMatrix probs = mllc::npy::load_matrix(ropts.probs_path);
  const mllc::ProbMatrix seg = ropts.seg_probs_path.empty()
                                   ? probs
                                   : mllc::npy::load_matrix(ropts.seg_probs_path);
  if (features.rows() != probs.rows()) {
    throw mllc::ValidationError("features and probs disagree on the pixel count");
  }
  mllc::validate_probs(probs);

  mllc::RefineLayers layers = mllc::make_identity_refine_layers(
      rcfg.rounds, probs.cols(), features.cols(), /*calibrated=*/true);
  if (!ropts.checkpoint.empty()) {
    mllc::NamedParams named;
    for (Index k = 0; k < rcfg.rounds; ++k) {
      named.emplace_back("f_c." + std::to_string(k), &layers.f_c[static_cast<std::size_t>(k)]);
      named.emplace_back("f_s." + std::to_string(k), &layers.f_s[static_cast<std::size_t>(k)]);
    }
    mllc::load_checkpoint(ropts.checkpoint, named);
    // Trained CLG heads run under softmax, as during training.
    for (Index k = 0; k < rcfg.rounds; ++k) {
      layers.f_c[static_cast<std::size_t>(k)].act = mllc::Activation::softmax_rows;
    }
  }

  const auto start = std::chrono::steady_clock::now();
  const mllc::RefineResult result = mllc::refine(features, probs, seg, rcfg, layers);
  const double ms = elapsed_ms(start);
  const mllc::LabelMap pseudo = mllc::aggregate_pseudo_labels(result.clg_per_round);

  std::filesystem::create_directories(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);
  mllc::npy::save(result.state.clg_probs, out / "refined_probs.npy");
  mllc::npy::save(pseudo, out / "pseudo_labels.npy");
  echo_config(cfg);

  Index changed = 0;
  for (Index i = 0; i < pseudo.size(); ++i) {
    if (pseudo[i] != mllc::argmax_row(probs, i)) ++changed;
  }
  json summary = {{"pixels", pseudo.size()},
                  {"classes", probs.cols()},
                  {"rounds", rcfg.rounds},
                  {"changed_labels", changed},
                  {"wall_ms", ms}};

  if (!ropts.gt_path.empty()) {
    const mllc::LabelMap gt = mllc::npy::load_labels(ropts.gt_path);
    mllc::LabelMap before(probs.rows());
    for (Index i = 0; i < probs.rows(); ++i) before[i] = mllc::argmax_row(probs, i);
    std::vector<Index> flips;
    if (!ropts.flips_path.empty()) {
      const mllc::LabelMap flip_idx = mllc::npy::load_labels(ropts.flips_path);
      for (Index i = 0; i < flip_idx.size(); ++i) flips.push_back(flip_idx[i]);
    }
    const auto* flips_ptr = ropts.flips_path.empty() ? nullptr : &flips;
    const auto before_acc = mllc::pseudo_label_accuracy(before, gt, flips_ptr);
    const auto after_acc = mllc::pseudo_label_accuracy(pseudo, gt, flips_ptr);
    summary["accuracy_before"] = before_acc.accuracy;
    summary["accuracy_after"] = after_acc.accuracy;
    if (flips_ptr != nullptr) {
      summary["corrected_flip_fraction"] = after_acc.corrected_flip_fraction;
    }
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

void write_metrics(const mllc::TrainResult& result, const std::filesystem::path& out) {
  std::ofstream metrics(out / "metrics.jsonl");
  for (const auto& s : result.steps) {
    json row = {{"type", "step"},       {"step", s.step},
                {"lr", s.lr},           {"loss_total", s.loss_total},
                {"loss_sup", s.loss_sup}, {"loss_unsup", s.loss_unsup},
                {"loss_slg", s.loss_slg}, {"loss_clg", s.loss_clg}};
    metrics << row.dump() << "\n";
  }
  for (const auto& e : result.evals) {
    json row = {{"type", "eval"},
                {"step", e.step},
                {"miou", e.miou},
                {"pseudo_accuracy", e.pseudo_accuracy}};
    json per_class = json::array();
    for (double v : e.per_class) {
      if (std::isnan(v)) {
        per_class.push_back(nullptr);
      } else {
        per_class.push_back(v);
      }
    }
    row["per_class_iou"] = per_class;
    metrics << row.dump() << "\n";
  }
}

int cmd_train(const CommonOpts& opts, const std::string& mode_override,
              std::int64_t seed_override) {
  mllc::ExperimentConfig cfg = resolve_config(opts);
  if (!mode_override.empty()) cfg.train.mode = mllc::train_mode_from_string(mode_override);
  if (seed_override >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(seed_override);
    cfg.synth.seed = static_cast<std::uint64_t>(seed_override);
  }
  echo_config(cfg);

  const auto start = std::chrono::steady_clock::now();
  mllc::TrainResult result = mllc::train(cfg.synth, cfg.train);
  const double ms = elapsed_ms(start);

  const std::filesystem::path out(cfg.out_dir);
  write_metrics(result, out);

  std::vector<std::pair<std::string, const mllc::MlpParams*>> named;
  for (auto& [name, p] : mllc::named_params(result.student)) named.emplace_back(name, p);
  mllc::save_checkpoint(out / "checkpoint", named, result.steps.empty() ? 0 : result.steps.back().step + 1);

  json summary = {{"mode", to_string(cfg.train.mode)},
                  {"steps", result.steps.size()},
                  {"final_miou", result.final_eval.miou},
                  {"final_pseudo_accuracy", result.final_eval.pseudo_accuracy},
                  {"wall_ms", ms}};
  std::ofstream(out / "final_metrics.json") << json({{"miou", result.final_eval.miou},
                                                     {"pseudo_accuracy",
                                                      result.final_eval.pseudo_accuracy}})
                                                   .dump(2)
                                            << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
  mllc::ExperimentConfig cfg = resolve_config(opts);
  if (checkpoint.empty() || !std::filesystem::exists(std::filesystem::path(checkpoint) / "manifest.json")) {
    throw mllc::ParameterError("--checkpoint must name a directory with a manifest");
  }

  echo_config(cfg);
  mllc::Rng init_rng(mllc::Rng::mix(cfg.train.seed, 1));
  mllc::Model model = mllc::make_model(cfg.synth, cfg.train.refine.rounds, init_rng);
  mllc::load_checkpoint(checkpoint, mllc::named_params(model));

  mllc::SynthSpec val_spec = cfg.synth;
  val_spec.num_images = std::max<Index>(1, cfg.train.val_images);
  val_spec.labeled_fraction = 1.0;
  val_spec.seed = mllc::Rng::mix(cfg.synth.seed, 0x0a11);
  const auto val = mllc::generate(val_spec);

  const mllc::EvalRecord record =
      mllc::evaluate(model, model, cfg.train, val, {}, /*step=*/0);
  json per_class = json::array();
  for (double v : record.per_class) {
    if (std::isnan(v)) {
      per_class.push_back(nullptr);
    } else {
      per_class.push_back(v);
    }
  }
  json summary = {{"miou", record.miou}, {"per_class_iou", per_class}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, Index configs) {
  const auto report = mllc::gradcheck::run_all(seed, configs);
  for (const auto& suite : report.suites) {
    std::cout << (suite.passed ? "[PASS] " : "[FAIL] ") << suite.name << ": max rel error "
              << suite.max_rel_error << " over " << suite.configs << " configs\n";
  }
  return report.all_passed() ? 0 : 1;
}

int cmd_bench(Index n, Index neighbors, Index rounds, Index embed_dim, Index classes,
              int threads) {
  mllc::Rng rng(7);
  mllc::FeatureMatrix features(n, embed_dim);
  for (Index i = 0; i < n; ++i) {
    for (Index d = 0; d < embed_dim; ++d) features(i, d) = rng.normal();
  }
  mllc::ProbMatrix probs(n, classes);
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Index c = 0; c < classes; ++c) {
      probs(i, c) = 0.05 + rng.uniform();
      sum += probs(i, c);
    }
    probs.row(i) /= sum;
  }

  mllc::RefineConfig cfg;
  cfg.rounds = rounds;
  cfg.neighbors = neighbors;
  cfg.threads = threads;
  const mllc::RefineLayers layers =
      mllc::make_identity_refine_layers(rounds, classes, embed_dim, /*calibrated=*/true);

  const auto start = std::chrono::steady_clock::now();
  const mllc::RefineResult result = mllc::refine(features, probs, probs, cfg, layers);
  const double ms = elapsed_ms(start);

  json summary = {{"n", n},
                  {"neighbors", neighbors},
                  {"rounds", rounds},
                  {"embed_dim", embed_dim},
                  {"classes", classes},
                  {"threads", threads},
                  {"wall_ms", ms},
                  {"pixels_per_second", ms > 0.0 ? 1000.0 * static_cast<double>(n) / ms : 0.0}};
  (void)result;
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level label correction experiments"};
  app.require_subcommand(1);

  CommonOpts common;

  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON experiment config");
    sub->add_option("--out", common.out_dir, "output directory (overrides config)");
    sub->add_option("--threads", common.threads, "worker threads (1 = bit-exact)");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a dataset bundle");
  add_common(synth);

  CLI::App* refine = app.add_subcommand("refine", "refine pseudo-labels for one instance");
  add_common(refine);
  RefineOpts ropts;
  refine->add_option("--features", ropts.features_path, "NPY feature matrix")->required();
  refine->add_option("--probs", ropts.probs_path, "NPY probability matrix")->required();
  refine->add_option("--seg-probs", ropts.seg_probs_path,
                     "NPY gate probabilities (defaults to --probs)");
  refine->add_option("--checkpoint", ropts.checkpoint, "trained propagation layers");
  refine->add_option("--gt", ropts.gt_path, "NPY ground-truth labels for the summary");
  refine->add_option("--flips", ropts.flips_path, "NPY flipped-pixel indices for the summary");
  mllc::RefineConfig refine_over;
  std::string order_name;
  std::int64_t refine_seed = -1;
  auto* o0 = refine->add_option("--rounds", refine_over.rounds, "refinement rounds K");
  auto* o1 = refine->add_option("--neighbors", refine_over.neighbors, "kNN neighbor count");
  auto* o2 = refine->add_option("--alpha", refine_over.alpha, "propagation mix weight");
  auto* o3 = refine->add_option("--sigma", refine_over.sigma, "confidence threshold");
  auto* o4 = refine->add_option("--gamma", refine_over.gamma, "cosine exponent");
  auto* o5 = refine->add_option("--order", order_name, "clg_first|slg_first|simultaneous");
  auto* o6 = refine->add_option("--seed", refine_seed, "subsampling seed");

  CLI::App* train = app.add_subcommand("train", "run the training loop");
  add_common(train);
  std::string mode_override;
  std::int64_t train_seed = -1;
  train->add_option("--mode", mode_override, "mllc|supervised_only|self_training");
  train->add_option("--seed", train_seed, "override data + training seed");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::uint64_t gc_seed = 20240501;
  Index gc_configs = 50;
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck->add_option("--configs", gc_configs, "configurations per operation");

  CLI::App* bench = app.add_subcommand("bench", "time one refine call");
  Index b_n = 4096, b_k = 20, b_rounds = 2, b_m = 32, b_c = 8;
  int b_threads = default_threads();
  bench->add_option("--n", b_n, "node count");
  bench->add_option("--neighbors", b_k, "kNN neighbor count");
  bench->add_option("--rounds", b_rounds, "refinement rounds");
  bench->add_option("--embed-dim", b_m, "feature dimension");
  bench->add_option("--classes", b_c, "class count");
  bench->add_option("--threads", b_threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(common);
    if (refine->parsed()) {
      if (!order_name.empty()) refine_over.order = mllc::stage_order_from_string(order_name);
      if (refine_seed >= 0) refine_over.seed = static_cast<std::uint64_t>(refine_seed);
      const std::vector<bool> overridden = {o0->count() > 0, o1->count() > 0, o2->count() > 0,
                                            o3->count() > 0, o4->count() > 0, o5->count() > 0,
                                            o6->count() > 0};
      return cmd_refine(common, ropts, refine_over, overridden);
    }
    if (train->parsed()) return cmd_train(common, mode_override, train_seed);
    if (eval->parsed()) return cmd_eval(common, checkpoint);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_configs);
    if (bench->parsed()) return cmd_bench(b_n, b_k, b_rounds, b_m, b_c, b_threads);
  } catch (const mllc::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mllc::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mllc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mllc::UnsupportedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
