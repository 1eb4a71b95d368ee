#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace stepqa {

// Bag-of-words retrieval model over the m scripts of one video. Conventions:
// tf is the raw in-document count, idf(t) = ln((1+N)/(1+df(t))) + 1, and each
// non-empty document vector is L2-normalized.
struct TfidfModel {
  std::map<std::string, std::size_t> vocabulary;  // token -> column
  std::vector<double> idf;
  std::vector<std::vector<double>> doc_vectors;
};

// Lowercases and splits on runs of non-alphanumeric bytes.
std::vector<std::string> tokenize(const std::string& text);

TfidfModel build_tfidf(const std::vector<std::vector<std::string>>& docs);

// Cosine similarity of the question against each document, clamped at zero and
// normalized to sum to one; uniform when nothing matches.
std::vector<double> hard_ground_weights(const TfidfModel& model,
                                        const std::vector<std::string>& question_tokens);

}  // namespace stepqa
