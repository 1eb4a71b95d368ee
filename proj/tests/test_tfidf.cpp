#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stepqa/rng.hpp"
#include "stepqa/tfidf.hpp"

using namespace stepqa;

namespace {

// Independent brute-force tf-idf/cosine reference built on token-count maps;
// deliberately shares no code with the production path.
std::vector<double> brute_force_weights(const std::vector<std::vector<std::string>>& docs,
                                        const std::vector<std::string>& question) {
  const double n = static_cast<double>(docs.size());
  std::map<std::string, double> df;
  std::vector<std::map<std::string, double>> counts(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (const auto& t : docs[d]) counts[d][t] += 1.0;
    for (const auto& [t, c] : counts[d]) df[t] += 1.0;
  }
  auto idf = [&](const std::string& t) {
    return std::log((1.0 + n) / (1.0 + df[t])) + 1.0;
  };

  std::map<std::string, double> qcount;
  for (const auto& t : question) {
    if (df.count(t)) qcount[t] += 1.0;
  }

  std::vector<double> sims(docs.size(), 0.0);
  double total = 0.0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    double dot = 0.0, dnorm = 0.0, qnorm = 0.0;
    for (const auto& [t, c] : counts[d]) {
      const double w = c * idf(t);
      dnorm += w * w;
      auto it = qcount.find(t);
      if (it != qcount.end()) dot += w * it->second * idf(t);
    }
    for (const auto& [t, c] : qcount) {
      const double w = c * idf(t);
      qnorm += w * w;
    }
    if (dnorm > 0.0 && qnorm > 0.0) sims[d] = std::max(0.0, dot / std::sqrt(dnorm * qnorm));
    total += sims[d];
  }
  if (total < 1e-12) {
    for (auto& s : sims) s = 1.0 / static_cast<double>(docs.size());
  } else {
    for (auto& s : sims) s /= total;
  }
  return sims;
}

std::vector<std::string> random_doc(Rng& rng, std::size_t vocab_size, std::size_t len) {
  std::vector<std::string> doc;
  for (std::size_t i = 0; i < len; ++i) {
    doc.push_back("w" + std::to_string(rng.uniform_below(vocab_size)));
  }
  return doc;
}

}  // namespace

TEST_CASE("tokenize lowers case and splits on non-alphanumeric runs") {
  CHECK(tokenize("Press the POWER button.") ==
        std::vector<std::string>{"press", "the", "power", "button"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("a--b  C") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("idf conventions") {
  TfidfModel single = build_tfidf({{"power"}});
  CHECK(single.idf.size() == 1);
  CHECK(single.idf[0] == doctest::Approx(1.0).epsilon(1e-12));  // ln(2/2)+1
  CHECK(single.doc_vectors[0][0] == doctest::Approx(1.0).epsilon(1e-12));

  // token present in all docs: idf = ln(1)+1 = 1 regardless of N
  for (std::size_t n : {2u, 5u, 9u}) {
    std::vector<std::vector<std::string>> docs(n, {"shared"});
    TfidfModel m = build_tfidf(docs);
    CHECK(m.idf[m.vocabulary.at("shared")] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("disjoint documents are orthogonal") {
  TfidfModel m = build_tfidf({{"alpha", "beta"}, {"gamma", "delta"}});
  double dot = 0.0;
  for (std::size_t t = 0; t < m.idf.size(); ++t) {
    dot += m.doc_vectors[0][t] * m.doc_vectors[1][t];
  }
  CHECK(dot == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("doc vectors have unit norm") {
  TfidfModel m = build_tfidf({{"a", "b", "a"}, {"b", "c"}, {"d"}});
  for (const auto& vec : m.doc_vectors) {
    double norm = 0.0;
    for (double x : vec) norm += x * x;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-9);
  }
}

TEST_CASE("question matching one script exactly takes all the weight") {
  std::vector<std::vector<std::string>> docs{
      {"one", "two"}, {"three", "four"}, {"five", "six"}};
  TfidfModel m = build_tfidf(docs);
  auto w = hard_ground_weights(m, {"three", "four"});
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("out-of-vocabulary questions fall back to uniform") {
  TfidfModel m = build_tfidf({{"one"}, {"two"}, {"three"}, {"four"}});
  auto w = hard_ground_weights(m, {"zzz", "yyy"});
  for (double x : w) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("single document model returns weight one") {
  TfidfModel m = build_tfidf({{"only", "doc"}});
  auto w = hard_ground_weights(m, {"only"});
  REQUIRE(w.size() == 1);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weights are a probability vector") {
  Rng rng(2);
  for (int it = 0; it < 100; ++it) {
    std::vector<std::vector<std::string>> docs;
    const std::size_t m = 1 + rng.uniform_below(6);
    for (std::size_t d = 0; d < m; ++d) docs.push_back(random_doc(rng, 12, 1 + rng.uniform_below(10)));
    TfidfModel model = build_tfidf(docs);
    auto w = hard_ground_weights(model, random_doc(rng, 16, 4));
    double total = 0.0;
    for (double x : w) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("weights are invariant to duplicating every document k times over") {
  std::vector<std::vector<std::string>> docs{
      {"press", "power", "button"}, {"open", "tray"}, {"set", "clock", "time", "clock"}};
  std::vector<std::string> q{"power", "clock"};
  auto base = hard_ground_weights(build_tfidf(docs), q);
  for (std::size_t k : {2u, 3u}) {
    std::vector<std::vector<std::string>> dup;
    for (const auto& d : docs) {
      std::vector<std::string> big;
      for (std::size_t i = 0; i < k; ++i) big.insert(big.end(), d.begin(), d.end());
      dup.push_back(big);
    }
    auto w = hard_ground_weights(build_tfidf(dup), q);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(w[i] - base[i]) < 1e-12);
  }
}

TEST_CASE("matches the brute-force reference on random corpora") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(100 + seed);
    std::vector<std::vector<std::string>> docs;
    for (int d = 0; d < 5; ++d) docs.push_back(random_doc(rng, 10, 2 + rng.uniform_below(8)));
    auto question = random_doc(rng, 14, 3);

    auto ours = hard_ground_weights(build_tfidf(docs), question);
    auto ref = brute_force_weights(docs, question);
    REQUIRE(ours.size() == ref.size());
    for (std::size_t i = 0; i < ours.size(); ++i) {
      CHECK(std::abs(ours[i] - ref[i]) < 1e-9);
    }
  }
}
