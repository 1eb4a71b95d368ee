#include "stepqa/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stepqa/rng.hpp"

namespace stepqa {

using nlohmann::json;

const std::vector<FunctionClip>& Dataset::clips_for(const QuestionSample& s) const {
  auto it = videos.find(s.functions_ref);
  if (it == videos.end()) {
    throw RefError("sample references unknown video id '" + s.functions_ref + "'");
  }
  return it->second;
}

std::vector<double> pool_sequence(std::span<const std::vector<double>> seq) {
  if (seq.empty()) throw EmptySequenceError("pool_sequence: empty sequence");
  const std::size_t d = seq.front().size();
  std::vector<double> out(d, 0.0);
  for (const auto& v : seq) {
    if (v.size() != d) {
      throw ShapeError("pool_sequence: ragged sequence", Shape{d}, Shape{v.size()});
    }
    for (std::size_t i = 0; i < d; ++i) out[i] += v[i];
  }
  for (auto& x : out) x /= static_cast<double>(seq.size());
  return out;
}

std::vector<double> unit_normalized(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
  return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------
// serialization: UTF-8 line-delimited JSON records of kind "video" / "sample"
// ---------------------------------------------------------------------------

namespace {

json vector_to_json(const std::vector<double>& v) { return json(v); }

std::vector<double> json_to_vector(const json& j, std::size_t line, const char* field) {
  if (!j.is_array()) throw ParseError(line, std::string(field) + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(line, std::string(field) + " must contain numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

void check_dim(std::size_t& dim, std::size_t got, std::size_t line, const char* field) {
  if (got == 0) throw ParseError(line, std::string(field) + " must be non-empty");
  if (dim == 0) {
    dim = got;
  } else if (dim != got) {
    throw DimError("line " + std::to_string(line) + ": " + field + " has dimension " +
                   std::to_string(got) + ", expected " + std::to_string(dim));
  }
}

// Feature field that is either a single vector or a sequence of vectors;
// sequences are average-pooled on load.
std::vector<double> read_feature(const json& obj, const char* single, const char* seq,
                                 std::size_t line) {
  const bool has_single = obj.contains(single);
  const bool has_seq = obj.contains(seq);
  if (has_single == has_seq) {
    throw ParseError(line, std::string("expected exactly one of '") + single + "' or '" + seq + "'");
  }
  if (has_single) return json_to_vector(obj.at(single), line, single);

  const json& arr = obj.at(seq);
  if (!arr.is_array() || arr.empty()) {
    throw ParseError(line, std::string(seq) + " must be a non-empty array of vectors");
  }
  std::vector<std::vector<double>> vecs;
  vecs.reserve(arr.size());
  for (const auto& item : arr) vecs.push_back(json_to_vector(item, line, seq));
  try {
    return pool_sequence(vecs);
  } catch (const ShapeError&) {
    throw ParseError(line, std::string(seq) + " has vectors of differing lengths");
  }
}

json sample_to_json(const QuestionSample& s) {
  json steps = json::array();
  for (const auto& step : s.steps) {
    json cands = json::array();
    for (const auto& c : step.candidates) {
      cands.push_back({{"answer_text", c.answer_text},
                       {"answer_feature", vector_to_json(c.answer_feature)},
                       {"button_feature", vector_to_json(c.button_feature)}});
    }
    json js{{"candidates", std::move(cands)}};
    if (step.ground_truth) js["ground_truth"] = *step.ground_truth;
    steps.push_back(std::move(js));
  }
  return json{{"kind", "sample"},
              {"functions_ref", s.functions_ref},
              {"question_text", s.question_text},
              {"question_feature", vector_to_json(s.question_feature)},
              {"steps", std::move(steps)}};
}

}  // namespace

std::string dataset_to_string(const Dataset& ds) {
  std::ostringstream out;
  for (const auto& [id, clips] : ds.videos) {
    json jclips = json::array();
    for (const auto& c : clips) {
      jclips.push_back({{"video_feature", vector_to_json(c.video_feature)},
                        {"script_text", c.script_text},
                        {"script_feature", vector_to_json(c.script_feature)}});
    }
    out << json{{"kind", "video"}, {"id", id}, {"clips", std::move(jclips)}}.dump() << '\n';
  }
  for (const auto& s : ds.samples) out << sample_to_json(s).dump() << '\n';
  return out.str();
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << dataset_to_string(ds);
  if (!f) throw IoError("failed writing '" + path + "'");
}

Dataset dataset_from_string(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object() || !rec.contains("kind") || !rec.at("kind").is_string()) {
      throw ParseError(line_no, "record must be an object with a string 'kind'");
    }
    const std::string kind = rec.at("kind").get<std::string>();

    if (kind == "video") {
      if (!rec.contains("id") || !rec.at("id").is_string()) {
        throw ParseError(line_no, "video record needs a string 'id'");
      }
      const std::string id = rec.at("id").get<std::string>();
      if (ds.videos.count(id)) throw ParseError(line_no, "duplicate video id '" + id + "'");
      if (!rec.contains("clips") || !rec.at("clips").is_array() || rec.at("clips").empty()) {
        throw ParseError(line_no, "video record needs a non-empty 'clips' array");
      }
      std::vector<FunctionClip> clips;
      for (const auto& jc : rec.at("clips")) {
        FunctionClip clip;
        clip.video_feature = read_feature(jc, "video_feature", "video_feature_seq", line_no);
        clip.script_feature = read_feature(jc, "script_feature", "script_feature_seq", line_no);
        if (!jc.contains("script_text") || !jc.at("script_text").is_string()) {
          throw ParseError(line_no, "clip needs a string 'script_text'");
        }
        clip.script_text = jc.at("script_text").get<std::string>();
        if (clip.script_text.empty()) throw ParseError(line_no, "script_text must be non-empty");
        check_dim(ds.dim, clip.video_feature.size(), line_no, "video_feature");
        check_dim(ds.dim, clip.script_feature.size(), line_no, "script_feature");
        clips.push_back(std::move(clip));
      }
      ds.videos.emplace(id, std::move(clips));
    } else if (kind == "sample") {
      QuestionSample s;
      if (!rec.contains("functions_ref") || !rec.at("functions_ref").is_string()) {
        throw ParseError(line_no, "sample record needs a string 'functions_ref'");
      }
      s.functions_ref = rec.at("functions_ref").get<std::string>();
      if (!rec.contains("question_text") || !rec.at("question_text").is_string()) {
        throw ParseError(line_no, "sample record needs a string 'question_text'");
      }
      s.question_text = rec.at("question_text").get<std::string>();
      s.question_feature = json_to_vector(rec.at("question_feature"), line_no, "question_feature");
      check_dim(ds.dim, s.question_feature.size(), line_no, "question_feature");
      if (!rec.contains("steps") || !rec.at("steps").is_array() || rec.at("steps").empty()) {
        throw ParseError(line_no, "sample record needs a non-empty 'steps' array");
      }
      for (const auto& js : rec.at("steps")) {
        Step step;
        if (!js.contains("candidates") || !js.at("candidates").is_array()) {
          throw ParseError(line_no, "step needs a 'candidates' array");
        }
        for (const auto& jc : js.at("candidates")) {
          Candidate c;
          if (!jc.contains("answer_text") || !jc.at("answer_text").is_string()) {
            throw ParseError(line_no, "candidate needs a string 'answer_text'");
          }
          c.answer_text = jc.at("answer_text").get<std::string>();
          c.answer_feature = json_to_vector(jc.at("answer_feature"), line_no, "answer_feature");
          c.button_feature = json_to_vector(jc.at("button_feature"), line_no, "button_feature");
          check_dim(ds.dim, c.answer_feature.size(), line_no, "answer_feature");
          check_dim(ds.dim, c.button_feature.size(), line_no, "button_feature");
          step.candidates.push_back(std::move(c));
        }
        if (step.candidates.size() < 2) {
          throw ParseError(line_no, "step needs at least 2 candidates");
        }
        if (js.contains("ground_truth")) {
          if (!js.at("ground_truth").is_number_unsigned()) {
            throw ParseError(line_no, "ground_truth must be a non-negative integer");
          }
          const auto gt = js.at("ground_truth").get<std::size_t>();
          if (gt >= step.candidates.size()) {
            throw ParseError(line_no, "ground_truth index out of range");
          }
          step.ground_truth = gt;
        }
        s.steps.push_back(std::move(step));
      }
      ds.samples.push_back(std::move(s));
    } else {
      throw ParseError(line_no, "unknown record kind '" + kind + "'");
    }
  }

  for (const auto& s : ds.samples) {
    if (!ds.videos.count(s.functions_ref)) {
      throw RefError("sample references unknown video id '" + s.functions_ref + "'");
    }
  }
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream buf;
  buf << f.rdbuf();
  return dataset_from_string(buf.str());
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

namespace {

void validate(const SyntheticConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("generate_synthetic: ") + name + " must be positive");
  };
  positive(cfg.num_videos, "num_videos");
  positive(cfg.functions_per_video, "functions_per_video");
  positive(cfg.dim, "dim");
  positive(cfg.samples_per_video, "samples_per_video");
  positive(cfg.steps_per_sample, "steps_per_sample");
  positive(cfg.vocab_per_function, "vocab_per_function");
  if (cfg.n_candidates < 2) throw ConfigError("generate_synthetic: n_candidates must be >= 2");
  if (cfg.noise_sigma < 0.0) throw ConfigError("generate_synthetic: noise_sigma must be >= 0");
}

std::string draw_tokens(Rng& rng, const std::vector<std::string>& vocab, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += vocab[rng.uniform_below(vocab.size())];
  }
  return out;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  Dataset ds;
  ds.dim = cfg.dim;

  // Per-step-index offsets shared by every sample in the dataset.
  std::vector<std::vector<double>> step_offsets;
  step_offsets.reserve(cfg.steps_per_sample);
  for (std::size_t i = 0; i < cfg.steps_per_sample; ++i) {
    step_offsets.push_back(unit_normalized(rng.gaussian_vector(cfg.dim)));
  }

  struct FunctionInfo {
    std::vector<double> video_feature;
    std::vector<double> script_feature;
    std::vector<std::string> vocab;
  };
  std::vector<std::vector<FunctionInfo>> functions(cfg.num_videos);

  for (std::size_t v = 0; v < cfg.num_videos; ++v) {
    const std::string id = "video" + std::to_string(v);
    std::vector<FunctionClip> clips;
    for (std::size_t f = 0; f < cfg.functions_per_video; ++f) {
      FunctionInfo info;
      info.video_feature = unit_normalized(rng.gaussian_vector(cfg.dim));
      info.script_feature = info.video_feature;
      const auto noise = rng.gaussian_vector(cfg.dim, cfg.noise_sigma);
      for (std::size_t i = 0; i < cfg.dim; ++i) info.script_feature[i] += noise[i];
      info.vocab.reserve(cfg.vocab_per_function);
      for (std::size_t t = 0; t < cfg.vocab_per_function; ++t) {
        info.vocab.push_back("v" + std::to_string(v) + "f" + std::to_string(f) + "t" +
                             std::to_string(t));
      }
      FunctionClip clip;
      clip.video_feature = info.video_feature;
      clip.script_feature = info.script_feature;
      clip.script_text = draw_tokens(rng, info.vocab, cfg.vocab_per_function);
      clips.push_back(std::move(clip));
      functions[v].push_back(std::move(info));
    }
    ds.videos.emplace(id, std::move(clips));
  }

  for (std::size_t v = 0; v < cfg.num_videos; ++v) {
    const std::string id = "video" + std::to_string(v);
    for (std::size_t k = 0; k < cfg.samples_per_video; ++k) {
      const std::size_t target = rng.uniform_below(cfg.functions_per_video);
      const FunctionInfo& fn = functions[v][target];

      QuestionSample s;
      s.functions_ref = id;
      std::vector<double> q = fn.video_feature;
      const auto qnoise = rng.gaussian_vector(cfg.dim, cfg.noise_sigma);
      for (std::size_t i = 0; i < cfg.dim; ++i) q[i] += qnoise[i];
      s.question_feature = unit_normalized(std::move(q));
      s.question_text = draw_tokens(rng, fn.vocab, 4);

      for (std::size_t st = 0; st < cfg.steps_per_sample; ++st) {
        Step step;
        const std::size_t gt = rng.uniform_below(cfg.n_candidates);
        for (std::size_t j = 0; j < cfg.n_candidates; ++j) {
          Candidate c;
          c.answer_text = "candidate " + std::to_string(j);
          if (j == gt) {
            std::vector<double> a = fn.video_feature;
            std::vector<double> b = fn.script_feature;
            for (std::size_t i = 0; i < cfg.dim; ++i) {
              a[i] += step_offsets[st][i];
              b[i] += step_offsets[st][i];
            }
            c.answer_feature = unit_normalized(std::move(a));
            c.button_feature = unit_normalized(std::move(b));
          } else {
            c.answer_feature = unit_normalized(rng.gaussian_vector(cfg.dim));
            c.button_feature = unit_normalized(rng.gaussian_vector(cfg.dim));
          }
          step.candidates.push_back(std::move(c));
        }
        step.ground_truth = gt;
        s.steps.push_back(std::move(step));
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("split_train_val: val_fraction must be in (0, 1)");
  }
  const std::size_t n = ds.samples.size();
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(n)));
  n_val = std::max<std::size_t>(1, std::min(n_val, n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<bool> in_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) in_val[order[i]] = true;

  Dataset train, val;
  train.dim = val.dim = ds.dim;
  train.videos = val.videos = ds.videos;
  for (std::size_t i = 0; i < n; ++i) {
    (in_val[i] ? val : train).samples.push_back(ds.samples[i]);
  }
  return {std::move(train), std::move(val)};
}

}  // namespace stepqa
