#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stepqa/data.hpp"
#include "stepqa/eval.hpp"
#include "stepqa/rng.hpp"
#include "stepqa/training.hpp"

using namespace stepqa;

namespace {

// One-step samples with the label planted at each candidate position in turn.
Dataset positional_dataset(std::size_t n_candidates) {
  Dataset ds;
  ds.dim = 4;
  ds.videos["v"] = {{{1, 0, 0, 0}, "token one", {1, 0, 0, 0}},
                    {{0, 1, 0, 0}, "token two", {0, 1, 0, 0}}};
  for (std::size_t gt = 0; gt < n_candidates; ++gt) {
    QuestionSample s;
    s.functions_ref = "v";
    s.question_text = "token";
    s.question_feature = {0.5, 0.5, 0.0, 0.0};
    Step step;
    for (std::size_t j = 0; j < n_candidates; ++j) {
      step.candidates.push_back({"c" + std::to_string(j),
                                 {0.1 * static_cast<double>(j), 0, 0, 1},
                                 {0, 0.1 * static_cast<double>(j), 1, 0}});
    }
    step.ground_truth = gt;
    s.steps = {step};
    ds.samples.push_back(s);
  }
  return ds;
}

}  // namespace

TEST_CASE("recall_at_k basics") {
  std::vector<double> p1{0.5, 0.3, 0.2};
  CHECK(recall_at_k(p1, 0, 1));

  std::vector<double> p2{0.2, 0.5, 0.3};
  CHECK(recall_at_k(p2, 0, 3));  // k >= n is always a hit
  CHECK(recall_at_k(p2, 1, 3));
  CHECK(recall_at_k(p2, 2, 3));

  std::vector<double> p3{0.6, 0.1, 0.3};
  CHECK_FALSE(recall_at_k(p3, 1, 1));

  CHECK_THROWS_AS(recall_at_k(p3, 7, 1), IndexError);
  CHECK_THROWS_AS(recall_at_k(p3, 0, 0), ConfigError);
}

TEST_CASE("ties rank by lowest index") {
  std::vector<double> tied{0.25, 0.25, 0.25, 0.25};
  CHECK(recall_at_k(tied, 0, 1));
  CHECK_FALSE(recall_at_k(tied, 1, 1));
  CHECK(recall_at_k(tied, 2, 3));
  CHECK_FALSE(recall_at_k(tied, 3, 3));
}

TEST_CASE("uniform model over four candidates scores exactly 0.75 at R@3") {
  Dataset ds = positional_dataset(4);
  ModelParams uniform_model = ModelParams::zeros(4);
  MetricsReport rep = evaluate(uniform_model, GroundingConfig{}, ds);
  CHECK(rep.per_step_count == 4);
  CHECK(rep.r_at_3 == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rep.r_at_1 == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("oracle predictions reach perfect recall") {
  Dataset ds = positional_dataset(3);
  std::vector<std::vector<std::vector<double>>> predictions;
  for (const auto& s : ds.samples) {
    std::vector<std::vector<double>> per_step;
    for (const auto& st : s.steps) {
      std::vector<double> probs(st.candidates.size(), 0.0);
      probs[*st.ground_truth] = 1.0;
      per_step.push_back(probs);
    }
    predictions.push_back(per_step);
  }
  MetricsReport rep = evaluate_predictions(predictions, ds);
  CHECK(rep.r_at_1 == 1.0);
  CHECK(rep.r_at_3 == 1.0);
}

TEST_CASE("recall is monotone in k on random predictions") {
  Rng rng(60);
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng.uniform_below(6);
    std::vector<double> probs(n);
    double total = 0.0;
    for (auto& p : probs) {
      p = rng.uniform01() + 1e-9;
      total += p;
    }
    for (auto& p : probs) p /= total;
    const std::size_t gt = rng.uniform_below(n);
    bool prev = false;
    for (std::size_t k = 1; k <= n; ++k) {
      const bool hit = recall_at_k(probs, gt, k);
      CHECK((!prev || hit));  // once a hit, always a hit for larger k
      prev = prev || hit;
    }
    CHECK(recall_at_k(probs, gt, n));
  }
}

TEST_CASE("dataset evaluation properties") {
  SyntheticConfig cfg;
  cfg.num_videos = 2;
  cfg.functions_per_video = 3;
  cfg.dim = 8;
  cfg.samples_per_video = 4;
  cfg.steps_per_sample = 2;
  cfg.n_candidates = 4;
  cfg.noise_sigma = 0.1;
  cfg.seed = 61;
  Dataset ds = generate_synthetic(cfg);
  ModelParams p = ModelParams::init(8, 62);
  GroundingConfig gcfg;

  MetricsReport rep = evaluate(p, gcfg, ds);
  CHECK(rep.r_at_1 <= rep.r_at_3);
  std::size_t steps = 0;
  for (const auto& s : ds.samples) steps += s.steps.size();
  CHECK(rep.per_step_count == steps);
  CHECK(rep.breakdown.size() == steps);

  SUBCASE("single-member ensemble equals the member") {
    std::vector<ModelParams> one{p};
    MetricsReport ens = evaluate_ensemble(one, gcfg, ds);
    CHECK(ens.r_at_1 == rep.r_at_1);
    CHECK(ens.r_at_3 == rep.r_at_3);
  }

  SUBCASE("identical members equal one member") {
    std::vector<ModelParams> dup{p, p, p};
    MetricsReport ens = evaluate_ensemble(dup, gcfg, ds);
    CHECK(ens.r_at_1 == rep.r_at_1);
    CHECK(ens.r_at_3 == rep.r_at_3);
  }

  SUBCASE("unlabeled steps are rejected") {
    Dataset missing = ds;
    missing.samples[0].steps[0].ground_truth.reset();
    CHECK_THROWS_AS(evaluate(p, gcfg, missing), MissingLabelError);
  }
}
