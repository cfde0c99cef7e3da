// Command-line front end: dataset prep, training in each modality,
// cross-validation, feature extraction, evaluation and report emission.
//
// Exit codes: 0 success, 1 configuration error, 2 data/checkpoint error,
// 3 training aborted (nonfinite loss).

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "scnn/architectures.hpp"
#include "scnn/cliconfig.hpp"
#include "scnn/data.hpp"
#include "scnn/evaluation.hpp"
#include "scnn/modelio.hpp"
#include "scnn/training.hpp"

namespace fs = std::filesystem;
using namespace scnn;

namespace {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::bad_config:
      return 1;
    case ErrorCode::nonfinite_loss:
      return 3;
    default:
      return 2;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
  f << text;
}

struct LoadedRun {
  ExperimentConfig cfg;
  LabeledDataset ds;
  fs::path out;
};

LoadedRun load_run(const std::string& config_path, int cli_jobs = 0) {
  LoadedRun run;
  run.cfg = parse_experiment_config(config_path);
  set_num_threads(cli_jobs > 0 ? cli_jobs : run.cfg.jobs);
  if (run.cfg.dataset_root.empty())
    throw Error(ErrorCode::bad_config, "config: data.root is required");
  run.ds = load_dataset(run.cfg.dataset_root);
  run.out = resolve_output_dir(run.cfg.output_dir);
  fs::create_directories(run.out);
  return run;
}

Shape4 net_input(const LabeledDataset& ds, const TrainingConfig& tcfg) {
  std::size_t side = effective_input_side(ds, tcfg);
  return Shape4{1, ds.samples.at(0).image.shape4().channels, side, side};
}

std::vector<std::pair<std::string, std::string>> multiplier_lines(
    const TrainingConfig& tcfg) {
  std::vector<std::pair<std::string, std::string>> lines;
  for (auto& [layer, mult] : tcfg.lr_multipliers)
    lines.push_back({"lr_multiplier." + layer, std::to_string(mult)});
  for (auto& layer : tcfg.frozen) lines.push_back({"frozen." + layer, "true"});
  return lines;
}

int cmd_train(const std::string& config_path, int jobs) {
  LoadedRun run = load_run(config_path, jobs);
  if (run.cfg.modality != "from_scratch")
    throw Error(ErrorCode::bad_config,
                "train: modality must be from_scratch (use `adapt` for "
                "fine_tuning / feature_vector)");
  TrainingConfig tcfg = to_training_config(run.cfg);
  NetworkGraph<float> net = build_architecture(
      run.cfg, net_input(run.ds, tcfg), run.ds.num_classes(), run.cfg.seed);
  TrainingConfig resolved =
      configure_modality(net, Modality::from_scratch, tcfg.base_lr);
  tcfg.lr_multipliers = resolved.lr_multipliers;

  TrainRecord record = train(net, run.ds, tcfg);
  save_model(net, run.out / "model.scnn");
  write_record_csv(run.out / "train_record.csv", record);
  write_text(run.out / "config.resolved.ini",
             render_experiment_config(run.cfg, multiplier_lines(tcfg)));
  std::cout << "trained " << run.cfg.architecture << " for "
            << tcfg.iterations << " iterations; final loss "
            << (record.losses.empty() ? 0.0 : record.losses.back()) << "\n";
  return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& checkpoint,
              const std::string& modality_name, int jobs) {
  LoadedRun run = load_run(config_path, jobs);
  Modality modality = modality_from_string(
      modality_name.empty() ? run.cfg.modality : modality_name);
  if (modality == Modality::from_scratch)
    throw Error(ErrorCode::bad_config,
                "adapt: modality must be fine_tuning or feature_vector");
  NetworkGraph<float> net = load_model(checkpoint);
  net = replace_head(net, run.ds.num_classes(), run.cfg.seed);

  TrainingConfig tcfg = to_training_config(run.cfg);
  TrainingConfig protocol = configure_modality(net, modality, tcfg.base_lr);
  tcfg.modality = modality;
  tcfg.lr_multipliers = protocol.lr_multipliers;
  tcfg.frozen = protocol.frozen;

  TrainRecord record = train(net, run.ds, tcfg);
  save_model(net, run.out / "model.scnn");
  write_record_csv(run.out / "train_record.csv", record);
  ExperimentConfig resolved_cfg = run.cfg;
  resolved_cfg.modality = to_string(modality);
  write_text(run.out / "config.resolved.ini",
             render_experiment_config(resolved_cfg, multiplier_lines(tcfg)));
  std::cout << "adapted checkpoint to " << run.ds.num_classes()
            << " classes (" << to_string(modality) << ")\n";
  return 0;
}

int cmd_crossval(const std::string& config_path,
                 const std::string& checkpoint, int jobs) {
  LoadedRun run = load_run(config_path, jobs);
  TrainingConfig base_tcfg = to_training_config(run.cfg);

  std::vector<std::string> modalities;
  {
    std::istringstream ms(run.cfg.modality);
    std::string m;
    while (std::getline(ms, m, ',')) modalities.push_back(m);
  }

  FoldSplit folds = make_folds(run.ds, run.cfg.k_folds, run.cfg.seed);
  save_folds(run.out / "folds.csv", folds);

  std::vector<SummaryRow> summary;
  for (const std::string& mname : modalities) {
    Modality modality = modality_from_string(mname);
    if (modality != Modality::from_scratch && checkpoint.empty())
      throw Error(ErrorCode::bad_config,
                  "crossval: modality " + mname + " needs --checkpoint");
    TrainingConfig tcfg = base_tcfg;

    auto make_net = [&](std::uint64_t seed) {
      NetworkGraph<float> net;
      if (modality == Modality::from_scratch) {
        net = build_architecture(run.cfg, net_input(run.ds, tcfg),
                                 run.ds.num_classes(), seed);
      } else {
        net = load_model(checkpoint);
        net = replace_head(net, run.ds.num_classes(), seed);
      }
      TrainingConfig protocol =
          configure_modality(net, modality, tcfg.base_lr);
      tcfg.lr_multipliers = protocol.lr_multipliers;
      tcfg.frozen = protocol.frozen;
      return net;
    };

    CrossValResult cv =
        cross_validate(make_net, run.ds, run.cfg.k_folds, tcfg);
    fs::path mdir = run.out / mname;
    fs::create_directories(mdir);
    std::ostringstream accs;
    accs << "fold,accuracy\n";
    for (std::size_t i = 0; i < cv.fold_reports.size(); ++i) {
      const MetricsReport& r = cv.fold_reports[i];
      accs << i << "," << std::fixed << std::setprecision(6)
           << r.overall_accuracy << "\n";
      write_text(mdir / ("fold_" + std::to_string(i) + "_per_class.csv"),
                 render_per_class_csv(r, run.ds.class_names));
      write_text(mdir / ("fold_" + std::to_string(i) + "_errors.csv"),
                 render_error_listing(r, run.ds.class_names));
    }
    accs << "mean," << std::fixed << std::setprecision(6) << cv.mean_accuracy
         << "\n";
    accs << "stddev," << cv.stddev_accuracy << "\n";
    write_text(mdir / "fold_accuracies.csv", accs.str());
    summary.push_back({run.cfg.architecture, mname, run.cfg.iterations,
                       cv.mean_accuracy});
  }
  std::string table = render_summary_table(summary);
  write_text(run.out / "summary.txt", table);
  write_text(run.out / "config.resolved.ini",
             render_experiment_config(run.cfg));
  std::cout << table;
  return 0;
}

int cmd_extract_features(const std::string& checkpoint,
                         const std::string& dataset_root,
                         const std::string& out_csv) {
  NetworkGraph<float> net = load_model(checkpoint);
  LabeledDataset ds = load_dataset(dataset_root);
  std::size_t side = net.input_shape().size() == 4 ? net.input_shape()[2]
                                                   : 0;
  std::ofstream f(out_csv);
  if (!f) throw Error(ErrorCode::io_failure, "cannot write " + out_csv);
  bool wrote_header = false;
  for (const Sample& s : ds.samples) {
    Tensor<float> img = s.image;
    if (side && (img.shape4().height != side || img.shape4().width != side))
      img = center_crop(img, side);
    img = preprocess(img, ds.channel_means);
    Tensor<float> feat = penultimate_features(net, img);
    if (!wrote_header) {
      f << "sample_id,label";
      for (std::size_t i = 0; i < feat.size(); ++i) f << ",f" << i;
      f << "\n";
      wrote_header = true;
    }
    f << s.id << "," << s.label;
    for (std::size_t i = 0; i < feat.size(); ++i) f << "," << feat[i];
    f << "\n";
  }
  std::cout << "wrote features for " << ds.samples.size() << " samples\n";
  return 0;
}

int cmd_synth(std::size_t classes, std::size_t per_class, std::size_t size,
              std::size_t channels, double noise, std::uint64_t seed,
              std::size_t offset, const std::string& out) {
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.samples_per_class = per_class;
  spec.image_size = size;
  spec.channels = channels;
  spec.noise_level = noise;
  spec.seed = seed;
  spec.class_offset = offset;
  LabeledDataset ds = generate_synthetic(spec);
  write_dataset(ds, resolve_output_dir(out));
  std::cout << "wrote " << ds.samples.size() << " samples in " << classes
            << " classes to " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& dataset_root,
                 const std::string& out_dir) {
  NetworkGraph<float> net = load_model(checkpoint);
  LabeledDataset ds = load_dataset(dataset_root);
  std::vector<std::size_t> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  MetricsReport report = evaluate(net, ds, all, ds.channel_means);
  std::cout << "overall accuracy " << std::fixed << std::setprecision(2)
            << report.overall_accuracy * 100.0 << "% (" << report.errors.size()
            << " errors / " << ds.samples.size() << " samples)\n";
  if (!out_dir.empty()) {
    fs::path out = resolve_output_dir(out_dir);
    fs::create_directories(out);
    write_text(out / "per_class.csv",
               render_per_class_csv(report, ds.class_names));
    write_text(out / "errors.csv",
               render_error_listing(report, ds.class_names));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scnn: desk-scale CNN training and transfer experiments"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, modality, dataset_root, out_csv,
      out_dir;
  int jobs = 0;

  auto* train_cmd = app.add_subcommand("train", "train a network from scratch");
  train_cmd->add_option("config", config_path, "experiment config file")
      ->required();
  train_cmd->add_option("--jobs", jobs, "worker threads");

  auto* adapt_cmd =
      app.add_subcommand("adapt", "adapt a pretrained checkpoint");
  adapt_cmd->add_option("config", config_path)->required();
  adapt_cmd->add_option("--checkpoint", checkpoint, "pretrained model")
      ->required();
  adapt_cmd->add_option("--modality", modality,
                        "fine_tuning or feature_vector");
  adapt_cmd->add_option("--jobs", jobs);

  auto* cv_cmd = app.add_subcommand("crossval", "k-fold cross-validation");
  cv_cmd->add_option("config", config_path)->required();
  cv_cmd->add_option("--checkpoint", checkpoint,
                     "pretrained model for adaptation modalities");
  cv_cmd->add_option("--jobs", jobs);

  auto* feat_cmd = app.add_subcommand("extract-features",
                                      "penultimate-layer features to CSV");
  feat_cmd->add_option("checkpoint", checkpoint)->required();
  feat_cmd->add_option("dataset", dataset_root)->required();
  feat_cmd->add_option("out", out_csv)->required();
  feat_cmd->add_option("--jobs", jobs);

  std::size_t classes = 4, per_class = 20, size = 32, channels = 3,
              offset = 0;
  double noise = 0.05;
  std::uint64_t seed = 1;
  std::string synth_out = "synthetic";
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--classes", classes);
  synth_cmd->add_option("--per-class", per_class);
  synth_cmd->add_option("--size", size);
  synth_cmd->add_option("--channels", channels);
  synth_cmd->add_option("--noise", noise);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--class-offset", offset);
  synth_cmd->add_option("--out", synth_out)->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint)->required();
  eval_cmd->add_option("dataset", dataset_root)->required();
  eval_cmd->add_option("--out", out_dir, "report output directory");
  eval_cmd->add_option("--jobs", jobs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (jobs > 0) set_num_threads(jobs);
    if (train_cmd->parsed()) return cmd_train(config_path, jobs);
    if (adapt_cmd->parsed())
      return cmd_adapt(config_path, checkpoint, modality, jobs);
    if (cv_cmd->parsed()) return cmd_crossval(config_path, checkpoint, jobs);
    if (feat_cmd->parsed())
      return cmd_extract_features(checkpoint, dataset_root, out_csv);
    if (synth_cmd->parsed())
      return cmd_synth(classes, per_class, size, channels, noise, seed, offset,
                       synth_out);
    if (eval_cmd->parsed())
      return cmd_evaluate(checkpoint, dataset_root, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
