#include "stepqa/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stepqa/rng.hpp"
#include "stepqa/tfidf.hpp"

namespace stepqa {

using nlohmann::json;

namespace {

Tensor glorot(Rng& rng, std::size_t fan_out, std::size_t fan_in, const Shape& shape) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor(shape, std::move(v));
}

AdditiveAttention init_attention(Rng& rng, std::size_t d) {
  AdditiveAttention attn;
  attn.query_weight = glorot(rng, d, d, Shape{d, d});
  attn.key_weight = glorot(rng, d, d, Shape{d, d});
  attn.score_weight = glorot(rng, 1, d, Shape{d});
  return attn;
}

Mlp init_mlp(Rng& rng, std::size_t d, std::size_t out) {
  Mlp mlp;
  mlp.w1 = glorot(rng, d, d, Shape{d, d});
  mlp.b1 = Tensor::zeros(Shape{d});
  mlp.w2 = glorot(rng, out, d, Shape{out, d});
  mlp.b2 = Tensor::zeros(Shape{out});
  return mlp;
}

}  // namespace

ModelParams ModelParams::init(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("ModelParams::init: dim must be positive");
  Rng rng(seed);
  ModelParams p;
  p.dim = dim;
  p.video_ground = init_attention(rng, dim);
  p.text_ground = init_attention(rng, dim);
  p.gate.weight = glorot(rng, dim, 2 * dim, Shape{dim, 2 * dim});
  p.gate.bias = Tensor::zeros(Shape{dim});
  p.reweight = init_attention(rng, dim);
  p.reweight_query = glorot(rng, 1, dim, Shape{dim});
  p.context_mlp = init_mlp(rng, dim, dim);
  p.gru.w_update = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.u_update = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.b_update = Tensor::zeros(Shape{dim});
  p.gru.w_reset = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.u_reset = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.b_reset = Tensor::zeros(Shape{dim});
  p.gru.w_cand = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.u_cand = glorot(rng, dim, dim, Shape{dim, dim});
  p.gru.b_cand = Tensor::zeros(Shape{dim});
  p.score_mlp = init_mlp(rng, dim, 1);
  return p;
}

ModelParams ModelParams::zeros(std::size_t dim) {
  ModelParams p = init(dim, 0);
  p.for_each([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("video_ground.query_weight", p.video_ground.query_weight);
  fn("video_ground.key_weight", p.video_ground.key_weight);
  fn("video_ground.score_weight", p.video_ground.score_weight);
  fn("text_ground.query_weight", p.text_ground.query_weight);
  fn("text_ground.key_weight", p.text_ground.key_weight);
  fn("text_ground.score_weight", p.text_ground.score_weight);
  fn("gate.weight", p.gate.weight);
  fn("gate.bias", p.gate.bias);
  fn("reweight.query_weight", p.reweight.query_weight);
  fn("reweight.key_weight", p.reweight.key_weight);
  fn("reweight.score_weight", p.reweight.score_weight);
  fn("reweight_query", p.reweight_query);
  fn("context_mlp.w1", p.context_mlp.w1);
  fn("context_mlp.b1", p.context_mlp.b1);
  fn("context_mlp.w2", p.context_mlp.w2);
  fn("context_mlp.b2", p.context_mlp.b2);
  fn("gru.w_update", p.gru.w_update);
  fn("gru.u_update", p.gru.u_update);
  fn("gru.b_update", p.gru.b_update);
  fn("gru.w_reset", p.gru.w_reset);
  fn("gru.u_reset", p.gru.u_reset);
  fn("gru.b_reset", p.gru.b_reset);
  fn("gru.w_cand", p.gru.w_cand);
  fn("gru.u_cand", p.gru.u_cand);
  fn("gru.b_cand", p.gru.b_cand);
  fn("score_mlp.w1", p.score_mlp.w1);
  fn("score_mlp.b1", p.score_mlp.b1);
  fn("score_mlp.w2", p.score_mlp.w2);
  fn("score_mlp.b2", p.score_mlp.b2);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams bind(Graph& g, const ModelParams& params) {
  ModelParams bound = params;
  bound.for_each([&g](const std::string&, Tensor& t) { t = g.leaf(t.with_requires_grad(true)); });
  return bound;
}

GroundMode ground_mode_from_string(const std::string& s) {
  if (s == "soft") return GroundMode::soft;
  if (s == "hard") return GroundMode::hard;
  if (s == "combined") return GroundMode::combined;
  throw ConfigError("unknown grounding mode '" + s + "' (expected soft|hard|combined)");
}

std::string to_string(GroundMode m) {
  switch (m) {
    case GroundMode::soft: return "soft";
    case GroundMode::hard: return "hard";
    case GroundMode::combined: return "combined";
  }
  return "?";
}

namespace {

Tensor attention_score(Graph& g, const AdditiveAttention& attn, const Tensor& query,
                       const Tensor& key) {
  const Tensor pre = g.add(g.matmul(attn.query_weight, query), g.matmul(attn.key_weight, key));
  return g.matmul(attn.score_weight, g.tanh(pre));  // [1]
}

Tensor mlp_forward(Graph& g, const Mlp& mlp, const Tensor& x) {
  const Tensor h = g.relu(g.add(g.matmul(mlp.w1, x), mlp.b1));
  return g.add(g.matmul(mlp.w2, h), mlp.b2);
}

}  // namespace

SoftGroundResult soft_ground(Graph& g, const AdditiveAttention& attn, const Tensor& question,
                             std::span<const Tensor> seq) {
  if (seq.empty()) throw EmptySequenceError("soft_ground: empty sequence");
  std::vector<Tensor> scores;
  scores.reserve(seq.size());
  for (const auto& item : seq) scores.push_back(attention_score(g, attn, question, item));
  const Tensor weights = g.softmax(g.concat(scores, 0), 0);
  const Tensor pooled = g.matmul(weights, g.stack_rows(seq));
  return {weights, pooled};
}

std::pair<std::vector<double>, std::vector<double>> hard_ground(
    std::span<const double> weights, std::span<const std::vector<double>> video_seq,
    std::span<const std::vector<double>> text_seq) {
  if (weights.size() != video_seq.size() || weights.size() != text_seq.size()) {
    throw ShapeError("hard_ground: weight/sequence length mismatch", Shape{weights.size()},
                     Shape{video_seq.size(), text_seq.size()});
  }
  if (weights.empty()) throw EmptySequenceError("hard_ground: empty sequence");
  const std::size_t d = video_seq.front().size();
  std::vector<double> video(d, 0.0), text(d, 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      video[k] += weights[i] * video_seq[i][k];
      text[k] += weights[i] * text_seq[i][k];
    }
  }
  return {std::move(video), std::move(text)};
}

GroundedContext ground(Graph& g, const ModelParams& params, const GroundingConfig& cfg,
                       const Tensor& question, std::span<const std::vector<double>> video_seq,
                       std::span<const std::vector<double>> text_seq,
                       const std::vector<double>* tfidf_weights) {
  const bool needs_hard =
      cfg.text_mode != GroundMode::soft || cfg.video_mode != GroundMode::soft;
  if (needs_hard && tfidf_weights == nullptr) {
    throw ConfigError("ground: hard/combined grounding requires TF-IDF weights");
  }

  std::vector<Tensor> video_tensors, text_tensors;
  video_tensors.reserve(video_seq.size());
  text_tensors.reserve(text_seq.size());
  for (const auto& v : video_seq) video_tensors.push_back(Tensor::from_vector(v));
  for (const auto& t : text_seq) text_tensors.push_back(Tensor::from_vector(t));

  std::pair<std::vector<double>, std::vector<double>> hard;
  if (needs_hard) hard = hard_ground(*tfidf_weights, video_seq, text_seq);

  auto for_modality = [&](GroundMode mode, const AdditiveAttention& attn,
                          std::span<const Tensor> seq, const std::vector<double>& hard_vec) {
    switch (mode) {
      case GroundMode::soft:
        return soft_ground(g, attn, question, seq).pooled;
      case GroundMode::hard:
        return Tensor::from_vector(hard_vec);
      case GroundMode::combined: {
        const Tensor soft = soft_ground(g, attn, question, seq).pooled;
        return g.scale(g.add(soft, Tensor::from_vector(hard_vec)), 0.5);
      }
    }
    throw ConfigError("ground: invalid mode");
  };

  GroundedContext out;
  out.video = for_modality(cfg.video_mode, params.video_ground, video_tensors, hard.first);
  out.text = for_modality(cfg.text_mode, params.text_ground, text_tensors, hard.second);
  return out;
}

Tensor fuse_answer_button(Graph& g, const ModelParams& params, const Tensor& answer,
                          const Tensor& button) {
  std::vector<Tensor> both{answer, button};
  const Tensor gate_in = g.concat(both, 0);  // [2d]
  const Tensor gate = g.sigmoid(g.add(g.matmul(params.gate.weight, gate_in), params.gate.bias));
  const Tensor inverse = g.sub(Tensor::full(gate.shape(), 1.0), gate);
  return g.add(g.mul(gate, answer), g.mul(inverse, button));
}

ReweightResult reweight_fused(Graph& g, const ModelParams& params, const Tensor& video,
                              const Tensor& text, const Tensor& question, const Tensor& answer) {
  const Tensor context[] = {video, text, question, answer};
  std::vector<Tensor> scores;
  scores.reserve(4);
  for (const auto& item : context) {
    scores.push_back(attention_score(g, params.reweight, params.reweight_query, item));
  }
  const Tensor weights = g.softmax(g.concat(scores, 0), 0);
  const Tensor fused = g.matmul(weights, g.stack_rows(context));
  return {weights, fused};
}

Tensor reweight_context(Graph& g, const ModelParams& params, const Tensor& video,
                        const Tensor& text, const Tensor& question, const Tensor& answer) {
  return mlp_forward(g, params.context_mlp, reweight_fused(g, params, video, text, question, answer).fused);
}

Tensor gru_step(Graph& g, const ModelParams& params, const Tensor& hidden_prev,
                const Tensor& context) {
  const GruCell& c = params.gru;
  const Tensor update = g.sigmoid(
      g.add(g.add(g.matmul(c.w_update, context), g.matmul(c.u_update, hidden_prev)), c.b_update));
  const Tensor reset = g.sigmoid(
      g.add(g.add(g.matmul(c.w_reset, context), g.matmul(c.u_reset, hidden_prev)), c.b_reset));
  const Tensor cand = g.tanh(g.add(
      g.add(g.matmul(c.w_cand, context), g.matmul(c.u_cand, g.mul(reset, hidden_prev))), c.b_cand));
  const Tensor keep = g.sub(Tensor::full(update.shape(), 1.0), update);
  return g.add(g.mul(keep, hidden_prev), g.mul(update, cand));
}

Tensor score_step(Graph& g, const ModelParams& params, std::span<const Tensor> hidden_states) {
  if (hidden_states.size() < 2) {
    throw DegenerateStepError("score_step: need at least 2 candidates, got " +
                              std::to_string(hidden_states.size()));
  }
  std::vector<Tensor> logits;
  logits.reserve(hidden_states.size());
  for (const auto& h : hidden_states) logits.push_back(mlp_forward(g, params.score_mlp, h));
  return g.softmax(g.concat(logits, 0), 0);
}

std::size_t argmax_lowest_index(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<Tensor> forward_question(Graph& g, const ModelParams& params,
                                     const GroundingConfig& cfg, const QuestionSample& sample,
                                     std::span<const FunctionClip> clips, HistoryMode mode,
                                     const std::vector<double>* tfidf_weights) {
  std::vector<std::vector<double>> video_seq, text_seq;
  video_seq.reserve(clips.size());
  text_seq.reserve(clips.size());
  for (const auto& c : clips) {
    video_seq.push_back(c.video_feature);
    text_seq.push_back(c.script_feature);
  }

  std::vector<double> local_weights;
  const bool needs_hard =
      cfg.text_mode != GroundMode::soft || cfg.video_mode != GroundMode::soft;
  if (needs_hard && tfidf_weights == nullptr) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(clips.size());
    for (const auto& c : clips) docs.push_back(tokenize(c.script_text));
    local_weights = hard_ground_weights(build_tfidf(docs), tokenize(sample.question_text));
    tfidf_weights = &local_weights;
  }

  const Tensor question = Tensor::from_vector(sample.question_feature);
  // Grounding depends only on the question and the video, so it is shared by
  // every step and candidate.
  const GroundedContext ctx = ground(g, params, cfg, question, video_seq, text_seq, tfidf_weights);

  std::vector<Tensor> per_step;
  per_step.reserve(sample.steps.size());
  Tensor hidden_prev = Tensor::zeros(Shape{params.dim});

  for (std::size_t si = 0; si < sample.steps.size(); ++si) {
    const Step& step = sample.steps[si];
    std::vector<Tensor> hidden_states;
    hidden_states.reserve(step.candidates.size());
    for (const auto& cand : step.candidates) {
      const Tensor answer = Tensor::from_vector(cand.answer_feature);
      const Tensor button = Tensor::from_vector(cand.button_feature);
      const Tensor fused = fuse_answer_button(g, params, answer, button);
      const Tensor context = reweight_context(g, params, ctx.video, ctx.text, question, fused);
      hidden_states.push_back(gru_step(g, params, hidden_prev, context));
    }
    const Tensor probs = score_step(g, params, hidden_states);
    per_step.push_back(probs);

    std::size_t next;
    if (mode == HistoryMode::teacher_forced) {
      if (!step.ground_truth) {
        throw MissingLabelError("forward_question: teacher forcing requires a label on step " +
                                std::to_string(si));
      }
      next = *step.ground_truth;
    } else {
      next = argmax_lowest_index(probs.values());
    }
    hidden_prev = hidden_states[next];
  }
  return per_step;
}

std::vector<std::vector<double>> forward_question_values(
    const ModelParams& params, const GroundingConfig& cfg, const QuestionSample& sample,
    std::span<const FunctionClip> clips, HistoryMode mode,
    const std::vector<double>* tfidf_weights) {
  Graph g;
  const auto tensors = forward_question(g, params, cfg, sample, clips, mode, tfidf_weights);
  std::vector<std::vector<double>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(t.values());
  return out;
}

std::vector<std::vector<double>> hard_weights_for_dataset(const Dataset& ds) {
  std::map<std::string, TfidfModel> models;
  for (const auto& [id, clips] : ds.videos) {
    std::vector<std::vector<std::string>> docs;
    docs.reserve(clips.size());
    for (const auto& c : clips) docs.push_back(tokenize(c.script_text));
    models.emplace(id, build_tfidf(docs));
  }
  std::vector<std::vector<double>> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    out.push_back(hard_ground_weights(models.at(s.functions_ref), tokenize(s.question_text)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

std::string params_to_string(const ModelParams& params) {
  json tensors = json::object();
  params.for_each([&tensors](const std::string& name, const Tensor& t) {
    tensors[name] = {{"shape", t.shape()}, {"values", t.values()}};
  });
  return json{{"dim", params.dim}, {"tensors", std::move(tensors)}}.dump();
}

ModelParams params_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("invalid checkpoint: ") + e.what());
  }
  if (!j.contains("dim") || !j.at("dim").is_number_unsigned()) {
    throw ParseError(1, "checkpoint needs an unsigned 'dim'");
  }
  ModelParams p = ModelParams::zeros(j.at("dim").get<std::size_t>());
  const json& tensors = j.at("tensors");
  p.for_each([&tensors](const std::string& name, Tensor& t) {
    if (!tensors.contains(name)) throw ParseError(1, "checkpoint missing tensor '" + name + "'");
    const json& jt = tensors.at(name);
    const Shape shape = jt.at("shape").get<Shape>();
    auto values = jt.at("values").get<std::vector<double>>();
    if (shape != t.shape()) {
      throw DimError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                     ", expected " + shape_str(t.shape()));
    }
    t = Tensor(shape, std::move(values));
  });
  return p;
}

void save_params(const ModelParams& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << params_to_string(params) << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

ModelParams load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << f.rdbuf();
  return params_from_string(buf.str());
}

}  // namespace stepqa
