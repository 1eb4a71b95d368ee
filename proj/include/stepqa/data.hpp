#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stepqa/errors.hpp"

namespace stepqa {

// One device function: pooled video feature, the clip's script, pooled script
// feature. Both vectors share the dataset dimensionality d.
struct FunctionClip {
  std::vector<double> video_feature;
  std::string script_text;
  std::vector<double> script_feature;

  bool operator==(const FunctionClip&) const = default;
};

struct Candidate {
  std::string answer_text;
  std::vector<double> answer_feature;
  std::vector<double> button_feature;

  bool operator==(const Candidate&) const = default;
};

struct Step {
  std::vector<Candidate> candidates;  // n >= 2
  std::optional<std::size_t> ground_truth;

  bool operator==(const Step&) const = default;
};

struct QuestionSample {
  std::string question_text;
  std::vector<double> question_feature;
  std::vector<Step> steps;
  std::string functions_ref;  // id of the owning instructional video

  bool operator==(const QuestionSample&) const = default;
};

struct Dataset {
  std::size_t dim = 0;
  std::map<std::string, std::vector<FunctionClip>> videos;
  std::vector<QuestionSample> samples;

  bool operator==(const Dataset&) const = default;

  const std::vector<FunctionClip>& clips_for(const QuestionSample& s) const;
};

// Elementwise arithmetic mean over a non-empty uniform-length sequence.
std::vector<double> pool_sequence(std::span<const std::vector<double>> seq);

Dataset load_dataset(const std::string& path);
void write_dataset(const Dataset& ds, const std::string& path);
std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);

struct SyntheticConfig {
  std::size_t num_videos = 4;
  std::size_t functions_per_video = 4;  // m
  std::size_t dim = 64;                 // d
  std::size_t samples_per_video = 4;
  std::size_t steps_per_sample = 2;
  std::size_t n_candidates = 4;
  double noise_sigma = 0.1;
  std::size_t vocab_per_function = 6;
  std::uint64_t seed = 0;
};

// Planted-structure generator. Questions point at one function per sample; the
// correct candidate of step i sits at unit_norm(V_f* + s_i) with a per-step
// offset s_i shared across the whole dataset, so solving it requires both
// grounding and step history.
Dataset generate_synthetic(const SyntheticConfig& cfg);

// Sample-level partition (train, validation). Validation size is
// round(val_fraction * n), at least 1. Videos are shared by both outputs.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed);

std::vector<double> unit_normalized(std::vector<double> v);
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace stepqa
