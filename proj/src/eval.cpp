#include "stepqa/eval.hpp"

#include "stepqa/training.hpp"

namespace stepqa {

bool recall_at_k(std::span<const double> probs, std::size_t gt, std::size_t k) {
  if (k == 0) throw ConfigError("recall_at_k: k must be >= 1");
  if (gt >= probs.size()) throw IndexError("recall_at_k: ground truth index out of range");
  std::size_t rank = 1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > probs[gt]) ++rank;
    if (j < gt && probs[j] == probs[gt]) ++rank;  // ties rank by lowest index
  }
  return rank <= k;
}

namespace {

std::size_t rank_of(std::span<const double> probs, std::size_t gt) {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > probs[gt]) ++rank;
    if (j < gt && probs[j] == probs[gt]) ++rank;
  }
  return rank;
}

}  // namespace

MetricsReport evaluate_predictions(
    std::span<const std::vector<std::vector<double>>> predictions, const Dataset& ds) {
  if (predictions.size() != ds.samples.size()) {
    throw DimError("evaluate_predictions: prediction/sample count mismatch");
  }
  MetricsReport report;
  std::size_t hits1 = 0, hits3 = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const QuestionSample& s = ds.samples[i];
    if (predictions[i].size() != s.steps.size()) {
      throw DimError("evaluate_predictions: step count mismatch on sample " + std::to_string(i));
    }
    for (std::size_t st = 0; st < s.steps.size(); ++st) {
      if (!s.steps[st].ground_truth) {
        throw MissingLabelError("evaluate: unlabeled step " + std::to_string(st) + " in sample " +
                                std::to_string(i));
      }
      const std::size_t gt = *s.steps[st].ground_truth;
      const std::size_t rank = rank_of(predictions[i][st], gt);
      report.breakdown.push_back({i, st, rank});
      ++report.per_step_count;
      if (rank <= 1) ++hits1;
      if (rank <= 3) ++hits3;
    }
  }
  if (report.per_step_count > 0) {
    report.r_at_1 = static_cast<double>(hits1) / static_cast<double>(report.per_step_count);
    report.r_at_3 = static_cast<double>(hits3) / static_cast<double>(report.per_step_count);
  }
  return report;
}

MetricsReport evaluate(const ModelParams& params, const GroundingConfig& cfg, const Dataset& ds) {
  const auto tfidf = hard_weights_for_dataset(ds);
  std::vector<std::vector<std::vector<double>>> predictions;
  predictions.reserve(ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const QuestionSample& s = ds.samples[i];
    predictions.push_back(forward_question_values(params, cfg, s, ds.clips_for(s),
                                                  HistoryMode::autoregressive, &tfidf[i]));
  }
  return evaluate_predictions(predictions, ds);
}

MetricsReport evaluate_ensemble(std::span<const ModelParams> members, const GroundingConfig& cfg,
                                const Dataset& ds) {
  if (members.empty()) throw ConfigError("evaluate_ensemble: no members");
  std::vector<std::vector<std::vector<double>>> predictions;
  predictions.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    predictions.push_back(ensemble_predict(members, cfg, s, ds.clips_for(s)));
  }
  return evaluate_predictions(predictions, ds);
}

}  // namespace stepqa
