#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stepqa/data.hpp"
#include "stepqa/training.hpp"

using namespace stepqa;

namespace {

SyntheticConfig small_cfg(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_videos = 2;
  cfg.functions_per_video = 3;
  cfg.dim = 8;
  cfg.samples_per_video = 5;
  cfg.steps_per_sample = 2;
  cfg.n_candidates = 3;
  cfg.noise_sigma = 0.05;
  cfg.vocab_per_function = 3;
  cfg.seed = seed;
  return cfg;
}

TrainConfig quick_train_cfg(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.patience = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("cross entropy analytic values") {
  std::vector<std::vector<double>> uniform{{0.25, 0.25, 0.25, 0.25}};
  std::vector<std::size_t> gt{2};
  CHECK(cross_entropy_loss(uniform, gt) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::vector<std::vector<double>> sure{{0.0, 1.0}};
  std::vector<std::size_t> gt0{1};
  CHECK(cross_entropy_loss(sure, gt0) == doctest::Approx(0.0));

  std::vector<std::vector<double>> two{{0.5, 0.5}, {0.25, 0.75}};
  std::vector<std::size_t> gts{0, 0};
  CHECK(cross_entropy_loss(two, gts) ==
        doctest::Approx(0.5 * (std::log(2.0) + std::log(4.0))).epsilon(1e-12));

  std::vector<std::size_t> bad{5};
  CHECK_THROWS_AS(cross_entropy_loss(uniform, bad), IndexError);
}

TEST_CASE("graph cross entropy agrees with the value form") {
  std::vector<std::vector<double>> probs{{0.1, 0.7, 0.2}, {0.6, 0.15, 0.25}};
  std::vector<std::size_t> gts{1, 2};
  Graph g;
  std::vector<Tensor> tensors;
  for (const auto& p : probs) tensors.push_back(Tensor::from_vector(p));
  const Tensor loss = cross_entropy_loss(g, tensors, gts);
  CHECK(loss.item() == doctest::Approx(cross_entropy_loss(probs, gts)).epsilon(1e-12));
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  ModelParams p = ModelParams::init(4, 1);
  const std::string before = params_to_string(p);
  AdamState st = AdamState::for_params(p);
  std::vector<std::vector<double>> zero_grads(st.m.size());
  adam_update(p, zero_grads, st, 1e-2);
  CHECK(params_to_string(p) == before);
  CHECK(st.step_count == 1);
}

TEST_CASE("first adam step moves by roughly lr times sign") {
  std::vector<double> x{1.0, -2.0, 3.0};
  std::vector<double> g{0.3, -0.7, 2.0};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  const double lr = 1e-2;
  adam_step(x, g, m, v, 1, lr);
  CHECK(x[0] == doctest::Approx(1.0 - lr).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(-2.0 + lr).epsilon(1e-6));
  CHECK(x[2] == doctest::Approx(3.0 - lr).epsilon(1e-6));
}

TEST_CASE("adam drives a quadratic bowl to the origin") {
  std::vector<double> x{1.5, -2.0, 0.75, 3.0};
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);
  for (long long t = 1; t <= 2000; ++t) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i];
    adam_step(x, g, m, v, t, 1e-2);
  }
  double norm = 0.0;
  for (double xi : x) norm += xi * xi;
  CHECK(std::sqrt(norm) < 1e-3);
}

TEST_CASE("teacher forcing probability schedule") {
  CHECK(tf_probability(0, 0.05) == 1.0);
  CHECK(tf_probability(10, 0.05) == 0.5);
  CHECK(tf_probability(25, 0.05) == 0.0);

  double prev = 2.0;
  for (std::size_t e = 0; e <= 100; ++e) {
    const double p = tf_probability(e, 0.05);
    CHECK(p <= prev);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    prev = p;
  }
  const std::size_t zero_from = static_cast<std::size_t>(std::ceil(1.0 / 0.05));
  for (std::size_t e = zero_from; e < zero_from + 10; ++e) CHECK(tf_probability(e, 0.05) == 0.0);

  CHECK(schedule_tf_probability(Schedule::teacher_forcing, 50, 0.05) == 1.0);
  CHECK(schedule_tf_probability(Schedule::autoregressive, 0, 0.05) == 0.0);
}

TEST_CASE("training is deterministic for a fixed config and seed") {
  Dataset ds = generate_synthetic(small_cfg(41));
  auto [tr, val] = split_train_val(ds, 0.2, 5);
  ModelParams init = ModelParams::init(8, 7);
  GroundingConfig gcfg;
  TrainConfig cfg = quick_train_cfg(11);

  TrainResult a = train(cfg, gcfg, tr, val, init);
  TrainResult b = train(cfg, gcfg, tr, val, init);
  CHECK(a.log == b.log);
  CHECK(params_to_string(a.params) == params_to_string(b.params));
  CHECK(a.log.entries.size() == 3);
  CHECK(a.log.entries[0].tf_prob == 1.0);
}

TEST_CASE("epoch zero of linear decay matches pure teacher forcing bit for bit") {
  Dataset ds = generate_synthetic(small_cfg(42));
  auto [tr, val] = split_train_val(ds, 0.2, 6);
  ModelParams init = ModelParams::init(8, 8);
  GroundingConfig gcfg;

  TrainConfig decay = quick_train_cfg(12);
  decay.max_epochs = 1;
  decay.schedule = Schedule::linear_decay;
  TrainConfig forced = decay;
  forced.schedule = Schedule::teacher_forcing;

  TrainResult a = train(decay, gcfg, tr, val, init);
  TrainResult b = train(forced, gcfg, tr, val, init);
  CHECK(params_to_string(a.params) == params_to_string(b.params));
  CHECK(a.log == b.log);
}

TEST_CASE("fully decayed epochs match the autoregressive schedule bit for bit") {
  Dataset ds = generate_synthetic(small_cfg(43));
  auto [tr, val] = split_train_val(ds, 0.2, 7);
  ModelParams init = ModelParams::init(8, 9);
  GroundingConfig gcfg;
  TrainConfig cfg = quick_train_cfg(13);

  // Shared warm state reached through the linear-decay schedule.
  Trainer warm(cfg, gcfg, tr, val, init);
  for (std::size_t e = 0; e < 3; ++e) {
    warm.run_epoch(schedule_tf_probability(Schedule::linear_decay, e, cfg.decay_rate));
  }

  for (std::size_t epoch : {20u, 21u, 30u}) {
    Trainer decayed = warm;
    Trainer autoreg = warm;
    decayed.run_epoch(schedule_tf_probability(Schedule::linear_decay, epoch, cfg.decay_rate));
    autoreg.run_epoch(schedule_tf_probability(Schedule::autoregressive, epoch, cfg.decay_rate));
    CHECK(params_to_string(decayed.params()) == params_to_string(autoreg.params()));
  }
}

TEST_CASE("training rejects an empty training set") {
  Dataset ds = generate_synthetic(small_cfg(44));
  Dataset empty = ds;
  empty.samples.clear();
  CHECK_THROWS_AS(train(quick_train_cfg(1), GroundingConfig{}, empty, ds, ModelParams::init(8, 1)),
                  EmptyDatasetError);
}

TEST_CASE("pseudo-label admission rule") {
  SUBCASE("uniform outputs admit nothing") {
    std::vector<std::vector<double>> steps{{0.25, 0.25, 0.25, 0.25}};
    CHECK_FALSE(admit_pseudo_labels(steps, 0.9).has_value());
  }

  SUBCASE("exactly at the threshold is rejected") {
    std::vector<std::vector<double>> steps{{0.9, 0.1}};
    CHECK_FALSE(admit_pseudo_labels(steps, 0.9).has_value());
  }

  SUBCASE("every step must clear the threshold") {
    std::vector<std::vector<double>> steps{{0.95, 0.05}, {0.89, 0.11}};
    CHECK_FALSE(admit_pseudo_labels(steps, 0.9).has_value());
    std::vector<std::vector<double>> good{{0.95, 0.05}, {0.08, 0.92}};
    auto labels = admit_pseudo_labels(good, 0.9);
    REQUIRE(labels.has_value());
    CHECK(*labels == std::vector<std::size_t>{0, 1});
  }
}

TEST_CASE("pseudo_label on a uniform model admits nothing") {
  Dataset ds = generate_synthetic(small_cfg(45));
  ModelParams uniform_model = ModelParams::zeros(8);
  TrainConfig cfg = quick_train_cfg(1);
  Dataset admitted = pseudo_label(uniform_model, cfg, GroundingConfig{}, ds);
  CHECK(admitted.samples.empty());
  CHECK(admitted.videos == ds.videos);
}

TEST_CASE("pseudo_label never admits more than the pool") {
  Dataset ds = generate_synthetic(small_cfg(46));
  ModelParams p = ModelParams::init(8, 3);
  TrainConfig cfg = quick_train_cfg(1);
  cfg.ssl_threshold = 0.34;  // permissive threshold for an untrained model
  Dataset admitted = pseudo_label(p, cfg, GroundingConfig{}, ds);
  CHECK(admitted.samples.size() <= ds.samples.size());
}

TEST_CASE("ssl with an empty pool degenerates to plain training") {
  Dataset ds = generate_synthetic(small_cfg(47));
  auto [tr, val] = split_train_val(ds, 0.2, 8);
  Dataset empty_pool = ds;
  empty_pool.samples.clear();
  ModelParams init = ModelParams::init(8, 4);
  GroundingConfig gcfg;
  TrainConfig cfg = quick_train_cfg(14);

  TrainResult plain = train(cfg, gcfg, tr, val, init);
  TrainResult ssl = train_with_ssl(cfg, gcfg, tr, val, empty_pool, init);
  CHECK(params_to_string(plain.params) == params_to_string(ssl.params));
  CHECK(plain.log == ssl.log);
}

TEST_CASE("ssl merge never more than doubles a mirrored pool") {
  Dataset ds = generate_synthetic(small_cfg(48));
  auto [tr, val] = split_train_val(ds, 0.2, 9);
  Dataset pool = tr;
  for (auto& s : pool.samples) {
    for (auto& st : s.steps) st.ground_truth.reset();
  }
  ModelParams init = ModelParams::init(8, 5);
  TrainConfig cfg = quick_train_cfg(15);
  cfg.max_epochs = 2;

  TrainResult res = train_with_ssl(cfg, GroundingConfig{}, tr, val, pool, init);
  // round-2 log entries (if any) cover at most the merged set: <= 2x samples
  CHECK(res.log.entries.size() <= 2 * cfg.max_epochs);
}

TEST_CASE("ensemble prediction rules") {
  Dataset ds = generate_synthetic(small_cfg(49));
  const QuestionSample& s = ds.samples[0];
  const auto& clips = ds.clips_for(s);
  GroundingConfig gcfg;
  ModelParams a = ModelParams::init(8, 21);
  ModelParams b = ModelParams::init(8, 22);

  SUBCASE("a single member is just that member") {
    std::vector<ModelParams> one{a};
    auto ens = ensemble_predict(one, gcfg, s, clips);
    auto solo = forward_question_values(a, gcfg, s, clips, HistoryMode::autoregressive);
    REQUIRE(ens.size() == solo.size());
    for (std::size_t st = 0; st < ens.size(); ++st) {
      for (std::size_t j = 0; j < ens[st].size(); ++j) {
        CHECK(ens[st][j] == doctest::Approx(solo[st][j]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("identical members collapse to one") {
    std::vector<ModelParams> three{a, a, a};
    auto ens = ensemble_predict(three, gcfg, s, clips);
    std::vector<ModelParams> one{a};
    auto single = ensemble_predict(one, gcfg, s, clips);
    for (std::size_t st = 0; st < ens.size(); ++st) {
      for (std::size_t j = 0; j < ens[st].size(); ++j) {
        CHECK(ens[st][j] == doctest::Approx(single[st][j]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("two members average their probabilities") {
    std::vector<ModelParams> both{a, b};
    auto ens = ensemble_predict(both, gcfg, s, clips);
    auto pa = forward_question_values(a, gcfg, s, clips, HistoryMode::autoregressive);
    auto pb = forward_question_values(b, gcfg, s, clips, HistoryMode::autoregressive);
    for (std::size_t st = 0; st < ens.size(); ++st) {
      for (std::size_t j = 0; j < ens[st].size(); ++j) {
        CHECK(ens[st][j] == doctest::Approx(0.5 * (pa[st][j] + pb[st][j])).epsilon(1e-9));
      }
    }
  }

  SUBCASE("dimension mismatches are rejected") {
    std::vector<ModelParams> bad{a, ModelParams::init(4, 1)};
    CHECK_THROWS_AS(ensemble_predict(bad, gcfg, s, clips), DimError);
  }
}

TEST_CASE("ssl round does not degrade validation accuracy on an easy task") {
  SyntheticConfig scfg;
  scfg.num_videos = 3;
  scfg.functions_per_video = 2;
  scfg.dim = 16;
  scfg.samples_per_video = 8;
  scfg.steps_per_sample = 2;
  scfg.n_candidates = 3;
  scfg.noise_sigma = 0.0;
  scfg.vocab_per_function = 3;
  scfg.seed = 50;
  Dataset ds = generate_synthetic(scfg);
  auto [tr, val] = split_train_val(ds, 0.2, 10);

  Dataset pool = tr;
  for (auto& s : pool.samples) {
    for (auto& st : s.steps) st.ground_truth.reset();
  }

  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.seed = 16;
  GroundingConfig gcfg;
  ModelParams init = ModelParams::init(16, 6);

  TrainResult round1 = train(cfg, gcfg, tr, val, init);
  const double r1_before = evaluate(round1.params, gcfg, val).r_at_1;

  TrainResult ssl = train_with_ssl(cfg, gcfg, tr, val, pool, init);
  const double r1_after = evaluate(ssl.params, gcfg, val).r_at_1;
  CHECK(r1_after >= r1_before - 0.02);
}
