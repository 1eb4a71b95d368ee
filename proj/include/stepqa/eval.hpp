#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "stepqa/data.hpp"
#include "stepqa/model.hpp"

namespace stepqa {

// True iff the labeled candidate ranks within the top k. Equal probabilities
// rank by lowest index.
bool recall_at_k(std::span<const double> probs, std::size_t gt, std::size_t k);

struct StepOutcome {
  std::size_t sample_index = 0;
  std::size_t step_index = 0;
  std::size_t rank = 0;  // 1-based rank of the ground-truth candidate
};

struct MetricsReport {
  double r_at_1 = 0.0;
  double r_at_3 = 0.0;
  std::size_t per_step_count = 0;
  std::vector<StepOutcome> breakdown;
};

// Aggregates per-step hits over precomputed predictions (one probability
// vector per step per sample, aligned with ds.samples).
MetricsReport evaluate_predictions(
    std::span<const std::vector<std::vector<double>>> predictions, const Dataset& ds);

// Autoregressive single-model evaluation.
MetricsReport evaluate(const ModelParams& params, const GroundingConfig& cfg, const Dataset& ds);

// Autoregressive ensemble evaluation (mean of member probabilities).
MetricsReport evaluate_ensemble(std::span<const ModelParams> members, const GroundingConfig& cfg,
                                const Dataset& ds);

}  // namespace stepqa
