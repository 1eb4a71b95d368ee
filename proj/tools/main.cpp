#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stepqa/data.hpp"
#include "stepqa/eval.hpp"
#include "stepqa/gradcheck.hpp"
#include "stepqa/model.hpp"
#include "stepqa/training.hpp"

namespace {

using namespace stepqa;
using nlohmann::json;

struct TrainFlags {
  TrainConfig cfg;
  std::string schedule = "linear_decay";
  std::string text_ground = "combined";
  std::string video_ground = "soft";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--lr", cfg.learning_rate, "learning rate")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "samples per optimizer step")
        ->capture_default_str();
    cmd->add_option("--max-epochs", cfg.max_epochs, "epoch cap")->capture_default_str();
    cmd->add_option("--patience", cfg.patience, "early-stopping patience (epochs)")
        ->capture_default_str();
    cmd->add_option("--schedule", schedule, "linear_decay|teacher_forcing|autoregressive")
        ->capture_default_str();
    cmd->add_option("--decay-rate", cfg.decay_rate, "teacher-forcing decay per epoch")
        ->capture_default_str();
    cmd->add_option("--val-fraction", cfg.val_fraction, "validation split fraction")
        ->capture_default_str();
    cmd->add_option("--ssl-threshold", cfg.ssl_threshold, "pseudo-label admission threshold")
        ->capture_default_str();
    add_grounding(cmd);
  }

  void add_grounding(CLI::App* cmd) {
    cmd->add_option("--text-ground", text_ground, "soft|hard|combined")->capture_default_str();
    cmd->add_option("--video-ground", video_ground, "soft|hard|combined")->capture_default_str();
  }

  GroundingConfig grounding() const {
    return {ground_mode_from_string(text_ground), ground_mode_from_string(video_ground)};
  }

  TrainConfig config() const {
    TrainConfig out = cfg;
    out.schedule = schedule_from_string(schedule);
    return out;
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw IoError("failed writing '" + path + "'");
}

json report_to_json(const MetricsReport& rep) {
  json breakdown = json::array();
  for (const auto& o : rep.breakdown) {
    breakdown.push_back({{"sample", o.sample_index}, {"step", o.step_index}, {"rank", o.rank}});
  }
  return json{{"r_at_1", rep.r_at_1},
              {"r_at_3", rep.r_at_3},
              {"per_step_count", rep.per_step_count},
              {"breakdown", std::move(breakdown)}};
}

void print_report(const MetricsReport& rep) {
  std::cout << "steps evaluated: " << rep.per_step_count << "\n"
            << "R@1: " << rep.r_at_1 << "\n"
            << "R@3: " << rep.r_at_3 << "\n";
}

Dataset strip_labels(Dataset ds) {
  for (auto& s : ds.samples) {
    for (auto& st : s.steps) st.ground_truth.reset();
  }
  return ds;
}

int cmd_generate(const SyntheticConfig& cfg, const std::string& out_path) {
  const Dataset ds = generate_synthetic(cfg);
  write_dataset(ds, out_path);
  std::cout << "wrote " << ds.samples.size() << " samples over " << ds.videos.size()
            << " videos (dim " << ds.dim << ") to " << out_path << "\n";
  return 0;
}

int cmd_train(const TrainFlags& flags, const std::string& data_path, const std::string& out_prefix,
              bool use_ssl, const std::string& unlabeled_path) {
  const TrainConfig cfg = flags.config();
  const GroundingConfig gcfg = flags.grounding();
  const Dataset ds = load_dataset(data_path);
  auto [train_ds, val_ds] = split_train_val(ds, cfg.val_fraction, cfg.seed);
  const ModelParams init = ModelParams::init(ds.dim, cfg.seed);

  TrainResult result;
  if (use_ssl) {
    // paper-style pool: an explicit unlabeled file, or the held-out validation
    // samples with labels stripped
    const Dataset pool =
        unlabeled_path.empty() ? strip_labels(val_ds) : load_dataset(unlabeled_path);
    result = train_with_ssl(cfg, gcfg, train_ds, val_ds, pool, init);
  } else {
    result = train(cfg, gcfg, train_ds, val_ds, init);
  }

  const std::string ckpt_path = out_prefix + ".checkpoint.json";
  const std::string log_path = out_prefix + ".trainlog.jsonl";
  save_params(result.params, ckpt_path);
  write_text(log_path, result.log.to_jsonl());

  double best_r1 = 0.0, best_r3 = 0.0;
  for (const auto& e : result.log.entries) {
    if (e.val_r1 > best_r1) {
      best_r1 = e.val_r1;
      best_r3 = e.val_r3;
    }
  }
  std::cout << "trained " << result.log.entries.size() << " epochs (train " << train_ds.samples.size()
            << " / val " << val_ds.samples.size() << " samples)\n"
            << "best validation R@1 " << best_r1 << " (R@3 " << best_r3 << ")\n"
            << "checkpoint: " << ckpt_path << "\ntrain log:  " << log_path << "\n";
  return 0;
}

int cmd_eval(const TrainFlags& flags, const std::string& data_path,
             const std::vector<std::string>& checkpoints, const std::string& out_path) {
  const Dataset ds = load_dataset(data_path);
  std::vector<ModelParams> members;
  members.reserve(checkpoints.size());
  for (const auto& path : checkpoints) members.push_back(load_params(path));

  const GroundingConfig gcfg = flags.grounding();
  const MetricsReport rep = members.size() == 1 ? evaluate(members[0], gcfg, ds)
                                                : evaluate_ensemble(members, gcfg, ds);
  print_report(rep);
  if (!out_path.empty()) write_text(out_path, report_to_json(rep).dump() + "\n");
  return 0;
}

int cmd_pseudo_label(const TrainFlags& flags, const std::string& data_path,
                     const std::string& checkpoint, const std::string& out_path) {
  const Dataset pool = load_dataset(data_path);
  const ModelParams params = load_params(checkpoint);
  const Dataset admitted = pseudo_label(params, flags.config(), flags.grounding(), pool);
  write_dataset(admitted, out_path);
  std::cout << "admitted " << admitted.samples.size() << " of " << pool.samples.size()
            << " samples at threshold " << flags.cfg.ssl_threshold << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, bool corrupt) {
  const GradCheckReport rep = run_gradcheck(seed, corrupt);
  std::cout << rep.to_text();
  return rep.pass ? 0 : 1;
}

int cmd_ablate(const TrainFlags& flags, const std::string& data_path,
               const std::string& out_path) {
  const TrainConfig base_cfg = flags.config();
  const Dataset ds = load_dataset(data_path);
  auto [train_ds, val_ds] = split_train_val(ds, base_cfg.val_fraction, base_cfg.seed);
  const ModelParams init = ModelParams::init(ds.dim, base_cfg.seed);

  struct Cell {
    GroundingConfig grounding;
    Schedule schedule;
  };
  // grounding grid rows followed by the inference-strategy rows
  const std::vector<Cell> cells = {
      {{GroundMode::combined, GroundMode::soft}, Schedule::linear_decay},
      {{GroundMode::hard, GroundMode::soft}, Schedule::linear_decay},
      {{GroundMode::soft, GroundMode::soft}, Schedule::linear_decay},
      {{GroundMode::combined, GroundMode::combined}, Schedule::linear_decay},
      {{GroundMode::combined, GroundMode::hard}, Schedule::linear_decay},
      {{GroundMode::combined, GroundMode::soft}, Schedule::linear_decay},
      {{GroundMode::combined, GroundMode::soft}, Schedule::autoregressive},
      {{GroundMode::combined, GroundMode::soft}, Schedule::teacher_forcing},
  };

  std::string lines;
  for (const auto& cell : cells) {
    TrainConfig cfg = base_cfg;
    cfg.schedule = cell.schedule;
    const TrainResult res = train(cfg, cell.grounding, train_ds, val_ds, init);
    const MetricsReport rep = evaluate(res.params, cell.grounding, val_ds);
    const json record{{"text_ground", to_string(cell.grounding.text_mode)},
                      {"video_ground", to_string(cell.grounding.video_mode)},
                      {"schedule", to_string(cell.schedule)},
                      {"epochs", res.log.entries.size()},
                      {"r_at_1", rep.r_at_1},
                      {"r_at_3", rep.r_at_3}};
    lines += record.dump() + "\n";
    std::cout << "text=" << to_string(cell.grounding.text_mode)
              << " video=" << to_string(cell.grounding.video_mode)
              << " schedule=" << to_string(cell.schedule) << " -> R@1 " << rep.r_at_1 << " R@3 "
              << rep.r_at_3 << "\n";
  }
  if (!out_path.empty()) write_text(out_path, lines);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"question-grounded multi-step answer inference over instructional-video features"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value file supplying any flag (command line wins)");

  // generate
  auto* generate = app.add_subcommand("generate", "write a synthetic dataset file");
  SyntheticConfig gen_cfg;
  std::string gen_out;
  generate->add_option("--out", gen_out, "output dataset path")->required();
  generate->add_option("--seed", gen_cfg.seed, "generator seed")->required();
  generate->add_option("--dim", gen_cfg.dim, "feature dimensionality")->capture_default_str();
  generate->add_option("--num-videos", gen_cfg.num_videos, "instructional videos")
      ->capture_default_str();
  generate->add_option("--functions-per-video", gen_cfg.functions_per_video, "clips per video")
      ->capture_default_str();
  generate->add_option("--samples-per-video", gen_cfg.samples_per_video, "questions per video")
      ->capture_default_str();
  generate->add_option("--steps-per-sample", gen_cfg.steps_per_sample, "steps per question")
      ->capture_default_str();
  generate->add_option("--candidates", gen_cfg.n_candidates, "answer candidates per step")
      ->capture_default_str();
  generate->add_option("--noise-sigma", gen_cfg.noise_sigma, "feature noise level")
      ->capture_default_str();
  generate->add_option("--vocab-per-function", gen_cfg.vocab_per_function,
                       "tokens in each function's vocabulary")
      ->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + log");
  TrainFlags train_flags;
  std::string train_data, train_out, train_unlabeled;
  bool train_ssl = false;
  train_cmd->add_option("--data", train_data, "dataset file")->required();
  train_cmd->add_option("--out", train_out, "output prefix")->required();
  train_cmd->add_option("--seed", train_flags.cfg.seed, "training seed")->required();
  train_cmd->add_flag("--ssl", train_ssl, "pseudo-label an unlabeled pool and retrain");
  train_cmd->add_option("--unlabeled", train_unlabeled,
                        "unlabeled pool for --ssl (defaults to the validation split)");
  train_flags.add_to(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoint(s) on a labeled dataset");
  TrainFlags eval_flags;
  std::string eval_data, eval_out;
  std::vector<std::string> eval_ckpts;
  eval_cmd->add_option("--data", eval_data, "dataset file")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpts, "checkpoint file (repeat for an ensemble)")
      ->required();
  eval_cmd->add_option("--out", eval_out, "machine-readable report path");
  eval_flags.add_grounding(eval_cmd);

  // pseudo-label
  auto* pl_cmd = app.add_subcommand("pseudo-label", "label a pool with confident predictions");
  TrainFlags pl_flags;
  std::string pl_data, pl_ckpt, pl_out;
  pl_cmd->add_option("--data", pl_data, "unlabeled dataset file")->required();
  pl_cmd->add_option("--checkpoint", pl_ckpt, "model checkpoint")->required();
  pl_cmd->add_option("--out", pl_out, "output dataset path")->required();
  pl_cmd->add_option("--ssl-threshold", pl_flags.cfg.ssl_threshold, "admission threshold")
      ->capture_default_str();
  pl_flags.add_grounding(pl_cmd);

  // gradcheck
  auto* gc_cmd = app.add_subcommand("gradcheck", "verify gradients against finite differences");
  std::uint64_t gc_seed = 0;
  bool gc_corrupt = false;
  gc_cmd->add_option("--seed", gc_seed, "probe seed")->capture_default_str();
  gc_cmd->add_flag("--corrupt", gc_corrupt, "testing hook: inject an analytic error");

  // ablate
  auto* ab_cmd = app.add_subcommand("ablate", "grounding grid and schedule comparison");
  TrainFlags ab_flags;
  std::string ab_data, ab_out;
  ab_cmd->add_option("--data", ab_data, "dataset file")->required();
  ab_cmd->add_option("--out", ab_out, "grid report path (jsonl)");
  ab_cmd->add_option("--seed", ab_flags.cfg.seed, "training seed")->required();
  ab_flags.add_to(ab_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(gen_cfg, gen_out);
    if (train_cmd->parsed()) {
      return cmd_train(train_flags, train_data, train_out, train_ssl, train_unlabeled);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_flags, eval_data, eval_ckpts, eval_out);
    if (pl_cmd->parsed()) return cmd_pseudo_label(pl_flags, pl_data, pl_ckpt, pl_out);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_corrupt);
    if (ab_cmd->parsed()) return cmd_ablate(ab_flags, ab_data, ab_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
