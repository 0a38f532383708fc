// Command-line front end: synthetic data generation, training, evaluation,
// single-event prediction, and the gradient-check harness. Every command is
// deterministic given its flags and seed; every output artifact gets a
// RunManifest written next to it.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqant/dataset.hpp"
#include "seqant/evaluation.hpp"
#include "seqant/manifest.hpp"
#include "seqant/network.hpp"
#include "seqant/training.hpp"

namespace {

using namespace seqant;

struct CommonOut {
  std::string started_at;

  RunManifest manifest(const std::string& command, const nlohmann::json& config,
                       std::uint64_t seed, const std::string& dataset_checksum) {
    RunManifest m;
    m.command = command;
    m.config = config;
    m.seed = seed;
    m.dataset_checksum = dataset_checksum;
    m.started_at = started_at;
    m.finished_at = iso8601_utc_now();
    return m;
  }
};

int run_gen_data(const SyntheticConfig& cfg, const std::string& output) {
  CommonOut run{iso8601_utc_now()};
  const Dataset d = generate_synthetic(cfg);
  save_events(d, output);
  nlohmann::json config = {
      {"events_per_class", cfg.events_per_class}, {"t_min", cfg.t_min},
      {"t_max", cfg.t_max},                       {"onset_min", cfg.onset_min},
      {"onset_max", cfg.onset_max},               {"signal_gain", cfg.signal_gain},
      {"noise_std", cfg.noise_std},               {"seed", cfg.seed},
      {"output", output}};
  write_manifest(run.manifest("gen-data", config, cfg.seed, file_checksum(output)),
                 output);
  std::cout << "wrote " << d.events.size() << " events to " << output << "\n";
  return 0;
}

nlohmann::json net_config_json(const NetConfig& cfg) {
  return {{"variant", to_string(cfg.variant)},
          {"inside_dim", cfg.inside_dim},
          {"outside_dim", cfg.outside_dim},
          {"hidden_dim", cfg.hidden_dim},
          {"fusion_dim", cfg.fusion_dim},
          {"num_classes", cfg.num_classes},
          {"loss_scheme", to_string(cfg.loss_scheme)},
          {"peephole", to_string(cfg.peephole)}};
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"rmsprop_decay", cfg.rmsprop_decay},
          {"rmsprop_epsilon", cfg.rmsprop_epsilon},
          {"seed", cfg.seed},
          {"augmentation_factor", cfg.augmentation_factor},
          {"min_subseq_len", cfg.min_subseq_len},
          {"loss_scheme", to_string(cfg.loss_scheme)},
          {"shuffle", cfg.shuffle}};
}

struct ModelFlags {
  std::string variant = "fusion";
  std::string loss = "exponential";
  std::string peephole = "full";
  std::size_t hidden_dim = 64;
  std::size_t fusion_dim = 64;

  void attach(CLI::App* cmd) {
    cmd->add_option("--variant", variant, "Architecture variant")
        ->check(CLI::IsMember({"fusion", "simple"}))
        ->capture_default_str();
    cmd->add_option("--loss", loss, "Loss scheme")
        ->check(CLI::IsMember({"exponential", "exp", "uniform"}))
        ->capture_default_str();
    cmd->add_option("--peephole", peephole, "Peephole weight style")
        ->check(CLI::IsMember({"full", "diagonal"}))
        ->capture_default_str();
    cmd->add_option("--hidden", hidden_dim, "Hidden units per stream")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--fusion-dim", fusion_dim, "Fusion layer width")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }

  NetConfig net_config(const Dataset& d) const {
    NetConfig cfg;
    cfg.variant = variant_from_string(variant);
    cfg.loss_scheme = loss_scheme_from_string(loss);
    cfg.peephole = peephole_from_string(peephole);
    cfg.hidden_dim = hidden_dim;
    cfg.fusion_dim = fusion_dim;
    cfg.inside_dim = d.inside_dim;
    cfg.outside_dim = d.outside_dim;
    cfg.num_classes = d.class_names.size();
    return cfg;
  }
};

struct TrainFlags {
  TrainConfig cfg;
  std::size_t checkpoint_every = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", cfg.learning_rate, "RMSprop step size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")
        ->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Sequences per update")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--rmsprop-decay", cfg.rmsprop_decay, "Accumulator decay")
        ->check(CLI::Range(1e-9, 0.999999999))
        ->capture_default_str();
    cmd->add_option("--rmsprop-eps", cfg.rmsprop_epsilon, "Accumulator epsilon")
        ->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
    cmd->add_option("--aug-factor", cfg.augmentation_factor,
                    "Target dataset growth factor")
        ->check(CLI::Range(1.0, 1e6))
        ->capture_default_str();
    cmd->add_option("--min-subseq-len", cfg.min_subseq_len,
                    "Shortest augmented sub-sequence")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000000}))
        ->capture_default_str();
    cmd->add_flag("!--no-shuffle", cfg.shuffle, "Disable per-epoch shuffling");
    cmd->add_option("--checkpoint-every", checkpoint_every,
                    "Write a checkpoint every N epochs (0 = off)")
        ->capture_default_str();
  }
};

int run_train(const std::string& data_path, const std::string& output,
              const ModelFlags& mf, TrainFlags tf, const std::string& setting,
              double seconds_per_step) {
  CommonOut run{iso8601_utc_now()};
  Dataset d = load_events(data_path, seconds_per_step);
  if (setting != "all") d = filter_classes(d, setting_class_names(setting));
  const NetConfig net_cfg = mf.net_config(d);
  tf.cfg.loss_scheme = net_cfg.loss_scheme;

  const Dataset augmented = augment(d, tf.cfg);
  std::cerr << "training on " << augmented.events.size() << " sequences ("
            << d.events.size() << " original)\n";

  nlohmann::json config = {{"data", data_path},
                           {"output", output},
                           {"setting", setting},
                           {"seconds_per_step", seconds_per_step},
                           {"net", net_config_json(net_cfg)},
                           {"train", train_config_json(tf.cfg)}};
  const std::string data_checksum = file_checksum(data_path);

  EpochCallback on_epoch;
  if (tf.checkpoint_every > 0) {
    on_epoch = [&](std::size_t epoch, const NetParams& params) {
      if (epoch % tf.checkpoint_every != 0) return;
      const std::string path = output + ".epoch" + std::to_string(epoch) + ".json";
      save_model(Model{net_cfg, params, d.class_names}, path);
      write_manifest(run.manifest("train", config, tf.cfg.seed, data_checksum),
                     path);
    };
  }

  auto [params, history] = train(augmented, net_cfg, tf.cfg, on_epoch);
  const Model model{net_cfg, std::move(params), d.class_names};
  save_model(model, output);
  write_manifest(run.manifest("train", config, tf.cfg.seed, data_checksum),
                 output);

  const std::string history_path = output + ".history.json";
  write_text_atomic(history_path, train_history_to_json(history) + "\n");
  write_manifest(run.manifest("train", config, tf.cfg.seed, data_checksum),
                 history_path);

  if (!history.epochs.empty()) {
    std::cout << "final mean loss " << history.epochs.back().mean_loss << " after "
              << history.epochs.size() << " epochs\n";
  }
  std::cout << "checkpoint written to " << output << "\n";
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path,
             const std::string& output, double p_th, bool sweep,
             const std::string& sweep_csv, std::size_t cv_k,
             const ModelFlags& mf, TrainFlags tf, std::size_t jobs,
             const std::string& setting, double seconds_per_step) {
  CommonOut run{iso8601_utc_now()};
  Dataset d = load_events(data_path, seconds_per_step);
  if (setting != "all") d = filter_classes(d, setting_class_names(setting));
  const std::string data_checksum = file_checksum(data_path);
  const std::vector<double> grid = default_threshold_grid();

  if (cv_k > 0) {
    const NetConfig net_cfg = mf.net_config(d);
    tf.cfg.loss_scheme = net_cfg.loss_scheme;
    const CvReport report =
        cross_validate(d, net_cfg, tf.cfg, cv_k, grid, jobs);
    const std::string text = cv_report_to_json(report) + "\n";
    nlohmann::json config = {{"data", data_path},
                             {"cv", cv_k},
                             {"jobs", jobs},
                             {"setting", setting},
                             {"seconds_per_step", seconds_per_step},
                             {"net", net_config_json(net_cfg)},
                             {"train", train_config_json(tf.cfg)}};
    if (!output.empty()) {
      write_text_atomic(output, text);
      write_manifest(run.manifest("eval", config, tf.cfg.seed, data_checksum),
                     output);
    }
    std::cout << text;
    std::cout << "cv precision " << report.precision.mean << " +- "
              << report.precision.std_error << ", recall " << report.recall.mean
              << " +- " << report.recall.std_error << "\n";
    return 0;
  }

  const Model model = load_model(model_path);
  nlohmann::json config = {{"model", model_path},
                           {"data", data_path},
                           {"setting", setting},
                           {"seconds_per_step", seconds_per_step}};

  double used_p_th = p_th;
  if (sweep || !sweep_csv.empty()) {
    const SweepResult sw = threshold_sweep(model, d.events, grid);
    if (!sweep_csv.empty()) {
      write_text_atomic(sweep_csv, sweep_to_csv(sw));
      write_manifest(run.manifest("eval", config, 0, data_checksum), sweep_csv);
    }
    used_p_th = sw.best_p_th;
    std::cout << "sweep best p_th " << sw.best_p_th << "\n";
  }
  config["p_th"] = used_p_th;

  const std::vector<AnticipationResult> results =
      anticipate_all(model, d.events, used_p_th);
  std::vector<std::size_t> truths;
  truths.reserve(d.events.size());
  for (const Event& ev : d.events) truths.push_back(d.label_index(ev.label));
  const MetricsReport report =
      compute_metrics(results, truths, model.class_names, used_p_th);

  const std::string text = metrics_to_json(report) + "\n";
  if (!output.empty()) {
    write_text_atomic(output, text);
    write_manifest(run.manifest("eval", config, 0, data_checksum), output);
  }
  std::cout << text;
  std::cout << confusion_table(report);
  return 0;
}

int run_predict(const std::string& model_path, const std::string& data_path,
                const std::string& event_id, double p_th, bool show_trace,
                double seconds_per_step) {
  const Model model = load_model(model_path);
  const Dataset d = load_events(data_path, seconds_per_step);
  const Event* event = nullptr;
  if (event_id.empty()) {
    if (d.events.size() != 1) {
      throw std::runtime_error("dataset has " + std::to_string(d.events.size()) +
                               " events; pass --event-id");
    }
    event = &d.events.front();
  } else {
    for (const Event& ev : d.events) {
      if (ev.event_id == event_id) {
        event = &ev;
        break;
      }
    }
    if (!event) throw std::runtime_error("unknown event id '" + event_id + "'");
  }

  const AnticipationResult res = anticipate(model, *event, p_th);
  std::cout << "event: " << event->event_id << "\n";
  std::cout << "predicted: " << model.class_names[res.predicted] << "\n";
  if (res.fired_at) {
    std::cout << "fired_at_step: " << *res.fired_at << "\n";
    std::cout << "t_before_steps: " << *res.t_before_steps << "\n";
    std::cout << "t_before_seconds: " << *res.t_before_seconds << "\n";
  }
  if (show_trace) {
    std::cout << "trace:\n";
    for (std::size_t t = 0; t < res.trace.size(); ++t) {
      std::cout << "  step " << t + 1 << ":";
      for (double p : res.trace[t]) std::cout << " " << p;
      std::cout << "\n";
    }
  }
  return 0;
}

int run_gradcheck(std::size_t seeds, std::uint64_t base_seed,
                  const std::string& peephole, bool corrupt) {
  constexpr double kTolerance = 1e-5;
  bool all_ok = true;
  GradCheckReport worst;
  std::string worst_combo;
  for (const Variant variant : {Variant::Fusion, Variant::Simple}) {
    for (const LossScheme scheme :
         {LossScheme::Exponential, LossScheme::Uniform}) {
      NetConfig cfg;
      cfg.variant = variant;
      cfg.loss_scheme = scheme;
      cfg.peephole = peephole_from_string(peephole);
      GradCheckReport combo_worst;
      for (std::size_t s = 0; s < seeds; ++s) {
        const GradCheckReport rep =
            gradient_check_report(cfg, base_seed + s, corrupt);
        if (rep.max_rel_error > combo_worst.max_rel_error) combo_worst = rep;
      }
      const bool ok = combo_worst.max_rel_error < kTolerance;
      all_ok = all_ok && ok;
      std::cout << to_string(variant) << " " << to_string(scheme)
                << ": max-rel-err " << combo_worst.max_rel_error << " ("
                << combo_worst.worst_param << ") "
                << (ok ? "[ok]" : "[FAIL]") << "\n";
      if (combo_worst.max_rel_error > worst.max_rel_error) {
        worst = combo_worst;
        worst_combo = to_string(variant) + " " + to_string(scheme);
      }
    }
  }
  std::cout << "worst: " << worst_combo << " " << worst.worst_param << "["
            << worst.worst_index << "] analytic " << worst.analytic
            << " numeric " << worst.numeric << " rel " << worst.max_rel_error
            << "\n";
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stream recurrent sequence anticipation"};
  app.set_config("--config");
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  SyntheticConfig syn;
  std::string gen_output;
  gen->add_option("--events-per-class", syn.events_per_class,
                  "Events per maneuver class")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--t-min", syn.t_min, "Shortest event, feature steps")
      ->capture_default_str();
  gen->add_option("--t-max", syn.t_max, "Longest event, feature steps")
      ->capture_default_str();
  gen->add_option("--onset-min", syn.onset_min, "Earliest onset fraction")
      ->capture_default_str();
  gen->add_option("--onset-max", syn.onset_max, "Latest onset fraction")
      ->capture_default_str();
  gen->add_option("--gain", syn.signal_gain, "Signal gain")->capture_default_str();
  gen->add_option("--noise", syn.noise_std, "Noise standard deviation")
      ->capture_default_str();
  gen->add_option("--seed", syn.seed, "RNG seed")->capture_default_str();
  gen->add_option("-o,--output", gen_output, "Output JSON-lines file")
      ->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a model");
  std::string train_data, train_output, train_setting = "all";
  double train_sps = 0.8;
  ModelFlags train_mf;
  TrainFlags train_tf;
  tr->add_option("data", train_data, "Input JSON-lines dataset")->required();
  tr->add_option("-o,--output", train_output, "Checkpoint path")->required();
  train_mf.attach(tr);
  train_tf.attach(tr);
  tr->add_option("--setting", train_setting, "Maneuver setting")
      ->check(CLI::IsMember({"all", "lane", "turns"}))
      ->capture_default_str();
  tr->add_option("--seconds-per-step", train_sps, "Seconds per feature step")
      ->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a model or run cross-validation");
  std::string eval_model, eval_data, eval_output, eval_csv, eval_setting = "all";
  double eval_p_th = 0.5, eval_sps = 0.8;
  bool eval_sweep = false;
  std::size_t eval_cv = 0, eval_jobs = 1;
  ModelFlags eval_mf;
  TrainFlags eval_tf;
  ev->add_option("data", eval_data, "Input JSON-lines dataset")->required();
  ev->add_option("--model", eval_model, "Checkpoint to evaluate");
  ev->add_option("--p-th", eval_p_th, "Prediction threshold")
      ->check(CLI::Range(1e-12, 1.0))
      ->capture_default_str();
  ev->add_flag("--sweep", eval_sweep,
               "Sweep thresholds and evaluate at the best F1");
  ev->add_option("--sweep-csv", eval_csv, "Write sweep results as CSV");
  ev->add_option("--cv", eval_cv, "Run k-fold cross-validation end to end");
  ev->add_option("--jobs", eval_jobs, "Parallel folds for --cv")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ev->add_option("-o,--output", eval_output, "Report path");
  eval_mf.attach(ev);
  eval_tf.attach(ev);
  ev->add_option("--setting", eval_setting, "Maneuver setting")
      ->check(CLI::IsMember({"all", "lane", "turns"}))
      ->capture_default_str();
  ev->add_option("--seconds-per-step", eval_sps, "Seconds per feature step")
      ->capture_default_str();

  // predict
  auto* pr = app.add_subcommand("predict", "Run streaming inference on one event");
  std::string pred_model, pred_data, pred_event;
  double pred_p_th = 0.5, pred_sps = 0.8;
  bool pred_trace = false;
  pr->add_option("--model", pred_model, "Checkpoint")->required();
  pr->add_option("data", pred_data, "Dataset holding the event")->required();
  pr->add_option("--event-id", pred_event, "Event to predict");
  pr->add_option("--p-th", pred_p_th, "Prediction threshold")
      ->check(CLI::Range(1e-12, 1.0))
      ->capture_default_str();
  pr->add_flag("--trace", pred_trace, "Print the full probability trace");
  pr->add_option("--seconds-per-step", pred_sps, "Seconds per feature step")
      ->capture_default_str();

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "Check analytic gradients against finite differences");
  std::size_t gc_seeds = 10;
  std::uint64_t gc_seed = 1;
  std::string gc_peephole = "full";
  bool gc_corrupt = false;
  gc->add_option("--seeds", gc_seeds, "Random nets per combination")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gc->add_option("--seed", gc_seed, "Base RNG seed")->capture_default_str();
  gc->add_option("--peephole", gc_peephole, "Peephole weight style")
      ->check(CLI::IsMember({"full", "diagonal"}))
      ->capture_default_str();
  gc->add_flag("--corrupt-gradient", gc_corrupt,
               "Deliberately corrupt one analytic entry (harness self-check)")
      ->group("");  // hidden test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(syn, gen_output);
    if (tr->parsed()) {
      return run_train(train_data, train_output, train_mf, train_tf,
                       train_setting, train_sps);
    }
    if (ev->parsed()) {
      if (eval_cv == 0 && eval_model.empty()) {
        std::cerr << "eval: --model is required unless --cv is given\n";
        return 2;
      }
      return run_eval(eval_model, eval_data, eval_output, eval_p_th, eval_sweep,
                      eval_csv, eval_cv, eval_mf, eval_tf, eval_jobs,
                      eval_setting, eval_sps);
    }
    if (pr->parsed()) {
      return run_predict(pred_model, pred_data, pred_event, pred_p_th,
                         pred_trace, pred_sps);
    }
    if (gc->parsed()) {
      return run_gradcheck(gc_seeds, gc_seed, gc_peephole, gc_corrupt);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
