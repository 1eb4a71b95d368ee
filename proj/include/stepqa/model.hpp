#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stepqa/data.hpp"
#include "stepqa/tensor.hpp"

namespace stepqa {

// Bahdanau-style scorer: score(q, k) = w^T tanh(W_q q + W_k k).
struct AdditiveAttention {
  Tensor query_weight;  // [d, d]
  Tensor key_weight;    // [d, d]
  Tensor score_weight;  // [d]
};

struct GateFusion {
  Tensor weight;  // [d, 2d]
  Tensor bias;    // [d]
};

// Two-layer perceptron with ReLU after the first layer.
struct Mlp {
  Tensor w1, b1;  // [h, d], [h]
  Tensor w2, b2;  // [out, h], [out]
};

struct GruCell {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;
};

struct ModelParams {
  std::size_t dim = 0;
  AdditiveAttention video_ground;
  AdditiveAttention text_ground;
  GateFusion gate;
  AdditiveAttention reweight;
  Tensor reweight_query;  // learned query u, [d]
  Mlp context_mlp;        // d -> d -> d
  GruCell gru;
  Mlp score_mlp;          // d -> d -> 1

  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero.
  static ModelParams init(std::size_t dim, std::uint64_t seed);
  static ModelParams zeros(std::size_t dim);

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
};

// Registers every parameter as a requires-grad leaf of the graph.
ModelParams bind(Graph& g, const ModelParams& params);

enum class GroundMode { soft, hard, combined };

GroundMode ground_mode_from_string(const std::string& s);
std::string to_string(GroundMode m);

struct GroundingConfig {
  GroundMode text_mode = GroundMode::combined;
  GroundMode video_mode = GroundMode::soft;
};

struct SoftGroundResult {
  Tensor weights;  // [m]
  Tensor pooled;   // [d]
};

SoftGroundResult soft_ground(Graph& g, const AdditiveAttention& attn, const Tensor& question,
                             std::span<const Tensor> seq);

// Plain weighted averages of both modality sequences under shared weights.
std::pair<std::vector<double>, std::vector<double>> hard_ground(
    std::span<const double> weights, std::span<const std::vector<double>> video_seq,
    std::span<const std::vector<double>> text_seq);

struct GroundedContext {
  Tensor video;  // V, [d]
  Tensor text;   // T, [d]
};

GroundedContext ground(Graph& g, const ModelParams& params, const GroundingConfig& cfg,
                       const Tensor& question, std::span<const std::vector<double>> video_seq,
                       std::span<const std::vector<double>> text_seq,
                       const std::vector<double>* tfidf_weights);

// g = sigmoid(W_g [A;B] + b_g); fused = g * A + (1 - g) * B.
Tensor fuse_answer_button(Graph& g, const ModelParams& params, const Tensor& answer,
                          const Tensor& button);

struct ReweightResult {
  Tensor weights;  // [4]
  Tensor fused;    // [d]
};

// Attention over the context sequence [V, T, Q, fused_answer] with the
// learned query.
ReweightResult reweight_fused(Graph& g, const ModelParams& params, const Tensor& video,
                              const Tensor& text, const Tensor& question, const Tensor& answer);

Tensor reweight_context(Graph& g, const ModelParams& params, const Tensor& video,
                        const Tensor& text, const Tensor& question, const Tensor& answer);

Tensor gru_step(Graph& g, const ModelParams& params, const Tensor& hidden_prev,
                const Tensor& context);

// Shared-weight per-candidate scoring followed by softmax across candidates.
Tensor score_step(Graph& g, const ModelParams& params, std::span<const Tensor> hidden_states);

enum class HistoryMode { teacher_forced, autoregressive };

// Whole-question forward pass; one probability tensor per step.
std::vector<Tensor> forward_question(Graph& g, const ModelParams& params,
                                     const GroundingConfig& cfg, const QuestionSample& sample,
                                     std::span<const FunctionClip> clips, HistoryMode mode,
                                     const std::vector<double>* tfidf_weights = nullptr);

// Evaluation-only convenience: plain probability values per step.
std::vector<std::vector<double>> forward_question_values(
    const ModelParams& params, const GroundingConfig& cfg, const QuestionSample& sample,
    std::span<const FunctionClip> clips, HistoryMode mode,
    const std::vector<double>* tfidf_weights = nullptr);

// TF-IDF hard-grounding weights for every sample, aligned with ds.samples.
std::vector<std::vector<double>> hard_weights_for_dataset(const Dataset& ds);

std::size_t argmax_lowest_index(std::span<const double> values);

// Checkpoint: self-describing record of d and every named parameter tensor;
// round-trips bit-identically.
std::string params_to_string(const ModelParams& params);
ModelParams params_from_string(const std::string& text);
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace stepqa
