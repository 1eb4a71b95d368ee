#include "stepqa/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace stepqa {

using nlohmann::json;

Schedule schedule_from_string(const std::string& s) {
  if (s == "linear_decay") return Schedule::linear_decay;
  if (s == "teacher_forcing") return Schedule::teacher_forcing;
  if (s == "autoregressive") return Schedule::autoregressive;
  throw ConfigError("unknown schedule '" + s +
                    "' (expected linear_decay|teacher_forcing|autoregressive)");
}

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::linear_decay: return "linear_decay";
    case Schedule::teacher_forcing: return "teacher_forcing";
    case Schedule::autoregressive: return "autoregressive";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must be in (0, 1)");
  }
  if (!(ssl_threshold > 0.0 && ssl_threshold < 1.0)) {
    throw ConfigError("ssl_threshold must be in (0, 1)");
  }
  if (decay_rate < 0.0) throw ConfigError("decay_rate must be >= 0");
}

bool TrainLog::operator==(const TrainLog& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& a = entries[i];
    const auto& b = other.entries[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.val_r1 != b.val_r1 ||
        a.val_r3 != b.val_r3 || a.tf_prob != b.tf_prob) {
      return false;
    }
  }
  return true;
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << json{{"epoch", e.epoch},
                {"train_loss", e.train_loss},
                {"val_r1", e.val_r1},
                {"val_r3", e.val_r3},
                {"tf_prob", e.tf_prob}}
               .dump()
        << '\n';
  }
  return out.str();
}

double cross_entropy_loss(std::span<const std::vector<double>> probs_per_step,
                          std::span<const std::size_t> ground_truths) {
  if (probs_per_step.size() != ground_truths.size()) {
    throw ShapeError("cross_entropy_loss: step/label count mismatch",
                     Shape{probs_per_step.size()}, Shape{ground_truths.size()});
  }
  if (probs_per_step.empty()) throw EmptySequenceError("cross_entropy_loss: no steps");
  double total = 0.0;
  for (std::size_t i = 0; i < probs_per_step.size(); ++i) {
    if (ground_truths[i] >= probs_per_step[i].size()) {
      throw IndexError("cross_entropy_loss: ground truth out of range on step " +
                       std::to_string(i));
    }
    total += -std::log(std::max(probs_per_step[i][ground_truths[i]], 1e-12));
  }
  return total / static_cast<double>(probs_per_step.size());
}

Tensor cross_entropy_loss(Graph& g, std::span<const Tensor> probs_per_step,
                          std::span<const std::size_t> ground_truths) {
  if (probs_per_step.size() != ground_truths.size()) {
    throw ShapeError("cross_entropy_loss: step/label count mismatch",
                     Shape{probs_per_step.size()}, Shape{ground_truths.size()});
  }
  if (probs_per_step.empty()) throw EmptySequenceError("cross_entropy_loss: no steps");
  std::vector<Tensor> terms;
  terms.reserve(probs_per_step.size());
  for (std::size_t i = 0; i < probs_per_step.size(); ++i) {
    if (ground_truths[i] >= probs_per_step[i].numel()) {
      throw IndexError("cross_entropy_loss: ground truth out of range on step " +
                       std::to_string(i));
    }
    const Tensor picked = g.slice(probs_per_step[i], 0, ground_truths[i], 1);
    terms.push_back(g.negate(g.log(g.clamp_min(picked, 1e-12))));
  }
  return g.mean(g.concat(terms, 0), 0);
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState st;
  params.for_each([&st](const std::string&, const Tensor& t) {
    st.m.emplace_back(t.numel(), 0.0);
    st.v.emplace_back(t.numel(), 0.0);
  });
  return st;
}

void adam_step(std::span<double> values, std::span<const double> grad, std::span<double> m,
               std::span<double> v, long long step_count, double lr, double beta1, double beta2,
               double epsilon) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t j = 0; j < values.size(); ++j) {
    const double gj = grad.empty() ? 0.0 : grad[j];
    m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
    v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
    const double m_hat = m[j] / bc1;
    const double v_hat = v[j] / bc2;
    values[j] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

void adam_update(ModelParams& params, std::span<const std::vector<double>> grads,
                 AdamState& state, double lr) {
  state.step_count += 1;
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (i >= grads.size() || i >= state.m.size()) {
      throw ShapeError("adam_update: state/gradient list too short", Shape{i}, Shape{grads.size()});
    }
    const std::vector<double>& grad = grads[i];
    if (!grad.empty() && grad.size() != t.numel()) {
      throw ShapeError("adam_update: gradient size mismatch for " + name, Shape{t.numel()},
                       Shape{grad.size()});
    }
    std::vector<double> vals = t.values();
    adam_step(vals, grad, state.m[i], state.v[i], state.step_count, lr, state.beta1, state.beta2,
              state.epsilon);
    t = Tensor(t.shape(), std::move(vals));
    ++i;
  });
}

double tf_probability(std::size_t epoch, double decay_rate) {
  return std::max(0.0, 1.0 - decay_rate * static_cast<double>(epoch));
}

double schedule_tf_probability(Schedule schedule, std::size_t epoch, double decay_rate) {
  switch (schedule) {
    case Schedule::linear_decay: return tf_probability(epoch, decay_rate);
    case Schedule::teacher_forcing: return 1.0;
    case Schedule::autoregressive: return 0.0;
  }
  return 0.0;
}

Trainer::Trainer(TrainConfig cfg, GroundingConfig gcfg, Dataset train_ds, Dataset val_ds,
                 ModelParams init)
    : cfg_(cfg),
      gcfg_(gcfg),
      train_(std::move(train_ds)),
      val_(std::move(val_ds)),
      params_(std::move(init)),
      adam_(AdamState::for_params(params_)),
      rng_(cfg.seed) {
  cfg_.validate();
  if (train_.samples.empty()) throw EmptyDatasetError("train: empty training set");
  if (params_.dim != train_.dim) {
    throw DimError("train: model dim " + std::to_string(params_.dim) + " != dataset dim " +
                   std::to_string(train_.dim));
  }
  train_tfidf_ = hard_weights_for_dataset(train_);
}

double Trainer::run_epoch(double tf_prob) {
  const std::size_t n = train_.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng_.shuffle(order);

  double loss_total = 0.0;
  for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
    const std::size_t stop = std::min(n, start + cfg_.batch_size);
    Graph g;
    ModelParams bound = bind(g, params_);
    std::vector<Tensor> sample_losses;
    sample_losses.reserve(stop - start);

    for (std::size_t pos = start; pos < stop; ++pos) {
      const std::size_t idx = order[pos];
      const QuestionSample& s = train_.samples[idx];
      // sample-level scheduled sampling draw, taken regardless of schedule so
      // that fixed schedules consume the identical random stream
      const double u = rng_.uniform01();
      const HistoryMode mode =
          u < tf_prob ? HistoryMode::teacher_forced : HistoryMode::autoregressive;

      std::vector<std::size_t> gts;
      gts.reserve(s.steps.size());
      for (std::size_t st = 0; st < s.steps.size(); ++st) {
        if (!s.steps[st].ground_truth) {
          throw MissingLabelError("train: unlabeled step " + std::to_string(st));
        }
        gts.push_back(*s.steps[st].ground_truth);
      }
      const auto probs =
          forward_question(g, bound, gcfg_, s, train_.clips_for(s), mode, &train_tfidf_[idx]);
      const Tensor loss = cross_entropy_loss(g, probs, gts);
      loss_total += loss.item();
      sample_losses.push_back(loss);
    }

    const Tensor batch_loss = g.mean(g.concat(sample_losses, 0), 0);
    const GradMap grad_map = g.backward(batch_loss);

    std::vector<std::vector<double>> grads;
    bound.for_each([&grads, &grad_map](const std::string&, Tensor& t) {
      auto it = grad_map.find(t.node_id());
      grads.push_back(it != grad_map.end() ? it->second.values() : std::vector<double>());
    });
    adam_update(params_, grads, adam_, cfg_.learning_rate);
  }
  return loss_total / static_cast<double>(n);
}

MetricsReport Trainer::validate() const { return evaluate(params_, gcfg_, val_); }

TrainResult train(const TrainConfig& cfg, const GroundingConfig& gcfg, const Dataset& train_ds,
                  const Dataset& val_ds, const ModelParams& init) {
  Trainer trainer(cfg, gcfg, train_ds, val_ds, init);
  TrainResult result;
  result.params = init;
  double best_r1 = -1.0;
  std::size_t epochs_since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double p = schedule_tf_probability(cfg.schedule, epoch, cfg.decay_rate);
    const double loss = trainer.run_epoch(p);
    const MetricsReport rep = trainer.validate();
    result.log.entries.push_back({epoch, loss, rep.r_at_1, rep.r_at_3, p});
    if (rep.r_at_1 > best_r1) {  // ties keep the earlier epoch
      best_r1 = rep.r_at_1;
      result.params = trainer.params();
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

std::optional<std::vector<std::size_t>> admit_pseudo_labels(
    std::span<const std::vector<double>> step_probs, double threshold) {
  std::vector<std::size_t> labels;
  labels.reserve(step_probs.size());
  for (const auto& probs : step_probs) {
    const std::size_t top = argmax_lowest_index(probs);
    if (!(probs[top] > threshold)) return std::nullopt;  // strict: exactly-at-threshold rejects
    labels.push_back(top);
  }
  return labels;
}

Dataset pseudo_label(const ModelParams& params, const TrainConfig& cfg,
                     const GroundingConfig& gcfg, const Dataset& unlabeled_ds) {
  if (!unlabeled_ds.samples.empty() && params.dim != unlabeled_ds.dim) {
    throw DimError("pseudo_label: model dim != dataset dim");
  }
  Dataset out;
  out.dim = unlabeled_ds.dim;
  out.videos = unlabeled_ds.videos;
  const auto tfidf = hard_weights_for_dataset(unlabeled_ds);
  for (std::size_t i = 0; i < unlabeled_ds.samples.size(); ++i) {
    const QuestionSample& s = unlabeled_ds.samples[i];
    const auto probs = forward_question_values(params, gcfg, s, unlabeled_ds.clips_for(s),
                                               HistoryMode::autoregressive, &tfidf[i]);
    if (auto labels = admit_pseudo_labels(probs, cfg.ssl_threshold)) {
      QuestionSample labeled = s;
      for (std::size_t st = 0; st < labeled.steps.size(); ++st) {
        labeled.steps[st].ground_truth = (*labels)[st];
      }
      out.samples.push_back(std::move(labeled));
    }
  }
  return out;
}

TrainResult train_with_ssl(const TrainConfig& cfg, const GroundingConfig& gcfg,
                           const Dataset& train_ds, const Dataset& val_ds,
                           const Dataset& unlabeled_ds, const ModelParams& init) {
  TrainResult round1 = train(cfg, gcfg, train_ds, val_ds, init);
  const Dataset admitted = pseudo_label(round1.params, cfg, gcfg, unlabeled_ds);
  if (admitted.samples.empty()) return round1;

  Dataset merged = train_ds;
  for (const auto& [id, clips] : admitted.videos) merged.videos.emplace(id, clips);
  merged.samples.insert(merged.samples.end(), admitted.samples.begin(), admitted.samples.end());

  TrainConfig round2_cfg = cfg;
  round2_cfg.seed = cfg.seed + 1;  // fresh stream; the schedule restarts at epoch 0
  TrainResult round2 = train(round2_cfg, gcfg, merged, val_ds, round1.params);

  TrainResult out;
  out.params = std::move(round2.params);
  out.log.entries = std::move(round1.log.entries);
  out.log.entries.insert(out.log.entries.end(), round2.log.entries.begin(),
                         round2.log.entries.end());
  return out;
}

std::vector<std::vector<double>> ensemble_predict(std::span<const ModelParams> members,
                                                  const GroundingConfig& gcfg,
                                                  const QuestionSample& sample,
                                                  std::span<const FunctionClip> clips) {
  if (members.empty()) throw ConfigError("ensemble_predict: no members");
  const std::size_t d = members.front().dim;
  for (const auto& m : members) {
    if (m.dim != d) throw DimError("ensemble_predict: member dimensionality mismatch");
  }
  if (sample.question_feature.size() != d) {
    throw DimError("ensemble_predict: sample dimensionality mismatch");
  }

  std::vector<std::vector<double>> mean;
  for (const auto& member : members) {
    const auto probs =
        forward_question_values(member, gcfg, sample, clips, HistoryMode::autoregressive);
    if (mean.empty()) {
      mean = probs;
    } else {
      for (std::size_t st = 0; st < mean.size(); ++st) {
        for (std::size_t j = 0; j < mean[st].size(); ++j) mean[st][j] += probs[st][j];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& step : mean) {
    double total = 0.0;
    for (auto& x : step) {
      x *= inv;
      total += x;
    }
    for (auto& x : step) x /= total;  // renormalize away accumulated rounding
  }
  return mean;
}

}  // namespace stepqa
