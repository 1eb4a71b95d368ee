#include "stepqa/tfidf.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace stepqa {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      current += static_cast<char>(std::tolower(ch));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

TfidfModel build_tfidf(const std::vector<std::vector<std::string>>& docs) {
  if (docs.empty()) throw std::invalid_argument("build_tfidf: need at least one document");

  TfidfModel model;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) model.vocabulary.emplace(tok, 0);
  }
  std::size_t col = 0;
  for (auto& [tok, idx] : model.vocabulary) idx = col++;

  const std::size_t vocab = model.vocabulary.size();
  const double n_docs = static_cast<double>(docs.size());

  std::vector<std::size_t> df(vocab, 0);
  std::vector<std::vector<double>> tf(docs.size(), std::vector<double>(vocab, 0.0));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (const auto& tok : docs[d]) tf[d][model.vocabulary.at(tok)] += 1.0;
    for (std::size_t t = 0; t < vocab; ++t) {
      if (tf[d][t] > 0.0) ++df[t];
    }
  }

  model.idf.resize(vocab);
  for (std::size_t t = 0; t < vocab; ++t) {
    model.idf[t] = std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df[t]))) + 1.0;
  }

  model.doc_vectors.resize(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    auto& vec = model.doc_vectors[d];
    vec.resize(vocab);
    double norm = 0.0;
    for (std::size_t t = 0; t < vocab; ++t) {
      vec[t] = tf[d][t] * model.idf[t];
      norm += vec[t] * vec[t];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (auto& x : vec) x /= norm;
    }
  }
  return model;
}

std::vector<double> hard_ground_weights(const TfidfModel& model,
                                        const std::vector<std::string>& question_tokens) {
  const std::size_t m = model.doc_vectors.size();
  const std::size_t vocab = model.idf.size();

  std::vector<double> q(vocab, 0.0);
  for (const auto& tok : question_tokens) {
    auto it = model.vocabulary.find(tok);
    if (it != model.vocabulary.end()) q[it->second] += 1.0;  // out-of-vocabulary tokens drop out
  }
  double qnorm = 0.0;
  for (std::size_t t = 0; t < vocab; ++t) {
    q[t] *= model.idf[t];
    qnorm += q[t] * q[t];
  }
  qnorm = std::sqrt(qnorm);

  std::vector<double> weights(m, 0.0);
  double total = 0.0;
  if (qnorm > 0.0) {
    for (std::size_t d = 0; d < m; ++d) {
      double dot = 0.0;
      for (std::size_t t = 0; t < vocab; ++t) dot += q[t] * model.doc_vectors[d][t];
      weights[d] = std::max(0.0, dot / qnorm);  // doc vectors are already unit norm
      total += weights[d];
    }
  }
  if (total < 1e-12) {
    const double uniform = 1.0 / static_cast<double>(m);
    for (auto& w : weights) w = uniform;
  } else {
    for (auto& w : weights) w /= total;
  }
  return weights;
}

}  // namespace stepqa
