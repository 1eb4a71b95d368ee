#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepqa/data.hpp"
#include "stepqa/eval.hpp"
#include "stepqa/model.hpp"
#include "stepqa/rng.hpp"

namespace stepqa {

enum class Schedule { linear_decay, teacher_forcing, autoregressive };

Schedule schedule_from_string(const std::string& s);
std::string to_string(Schedule s);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  double val_fraction = 0.05;
  std::size_t patience = 10;
  Schedule schedule = Schedule::linear_decay;
  double decay_rate = 0.05;
  double ssl_threshold = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_r1 = 0.0;
  double val_r3 = 0.0;
  double tf_prob = 0.0;  // teacher-forcing probability used this epoch
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  bool operator==(const TrainLog&) const;
  std::string to_jsonl() const;
};

// Mean over steps of -ln(probs[gt]), probabilities clamped below at 1e-12.
double cross_entropy_loss(std::span<const std::vector<double>> probs_per_step,
                          std::span<const std::size_t> ground_truths);

// In-graph variant used by the trainer; same formula.
Tensor cross_entropy_loss(Graph& g, std::span<const Tensor> probs_per_step,
                          std::span<const std::size_t> ground_truths);

// Adam moments per parameter tensor, aligned with ModelParams::for_each order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long long step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_params(const ModelParams& params);
};

// One bias-corrected Adam update; grads entries may be empty (treated as zero).
void adam_update(ModelParams& params, std::span<const std::vector<double>> grads,
                 AdamState& state, double lr);

// Core update over one flat buffer; step_count is the already-incremented step.
void adam_step(std::span<double> values, std::span<const double> grad, std::span<double> m,
               std::span<double> v, long long step_count, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double epsilon = 1e-8);

// max(0, 1 - decay_rate * epoch)
double tf_probability(std::size_t epoch, double decay_rate);

double schedule_tf_probability(Schedule schedule, std::size_t epoch, double decay_rate);

// One epoch of shuffled mini-batch training; exposed so schedule equivalences
// can be checked at the epoch level. Copyable: cloning freezes the full
// trainer state (parameters, optimizer moments, RNG stream).
class Trainer {
 public:
  Trainer(TrainConfig cfg, GroundingConfig gcfg, Dataset train_ds, Dataset val_ds,
          ModelParams init);

  // Runs one epoch at the given teacher-forcing probability and returns the
  // mean per-sample loss.
  double run_epoch(double tf_prob);

  MetricsReport validate() const;

  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  GroundingConfig gcfg_;
  Dataset train_;
  Dataset val_;
  ModelParams params_;
  AdamState adam_;
  Rng rng_;
  std::vector<std::vector<double>> train_tfidf_;
};

struct TrainResult {
  ModelParams params;  // parameters of the best validation epoch
  TrainLog log;
};

TrainResult train(const TrainConfig& cfg, const GroundingConfig& gcfg, const Dataset& train_ds,
                  const Dataset& val_ds, const ModelParams& init);

// Pure admission rule: a sample is admitted only when every step's top
// probability strictly exceeds the threshold; labels are the per-step argmax.
std::optional<std::vector<std::size_t>> admit_pseudo_labels(
    std::span<const std::vector<double>> step_probs, double threshold);

// Runs the model autoregressively over the pool and keeps only samples
// admitted by admit_pseudo_labels, with predicted labels attached.
Dataset pseudo_label(const ModelParams& params, const TrainConfig& cfg,
                     const GroundingConfig& gcfg, const Dataset& unlabeled_ds);

// Round 1 trains on the labeled data; round 2 merges admitted pseudo-labeled
// samples and retrains from the round-1 parameters with the schedule restarted.
TrainResult train_with_ssl(const TrainConfig& cfg, const GroundingConfig& gcfg,
                           const Dataset& train_ds, const Dataset& val_ds,
                           const Dataset& unlabeled_ds, const ModelParams& init);

// Mean of member probabilities per step, renormalized; members run their own
// autoregressive histories.
std::vector<std::vector<double>> ensemble_predict(std::span<const ModelParams> members,
                                                  const GroundingConfig& gcfg,
                                                  const QuestionSample& sample,
                                                  std::span<const FunctionClip> clips);

}  // namespace stepqa
