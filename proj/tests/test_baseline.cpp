#include <algorithm>
#include <cmath>
#include <filesystem>

#include "aspectminer/baseline.hpp"
#include "aspectminer/errors.hpp"
#include "doctest.h"
#include "generators.hpp"

using namespace aspectminer;

namespace {

std::vector<CleanSentence> sentences(std::initializer_list<const char*> texts) {
  std::vector<CleanSentence> out;
  for (const char* t : texts) out.push_back(make_clean_sentence(t));
  return out;
}

BinaryView separable_view(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BinaryView view;
  view.target = Aspect::kBug;
  for (std::size_t i = 0; i < n; ++i) {
    std::string text = testing::random_words(rng, 4 + uniform_index(rng, 6));
    if (i % 4 == 0) {
      view.positives.push_back({make_clean_sentence(text + " bugword"), {Aspect::kBug}, "p"});
    } else {
      view.negatives.push_back({make_clean_sentence(text), {Aspect::kOthers}, "n"});
    }
  }
  return view;
}

VocabularyModel vocab_for(const BinaryView& view, VocabularyConfig cfg) {
  std::vector<CleanSentence> all;
  for (const auto& s : view.positives) all.push_back(s.sentence);
  for (const auto& s : view.negatives) all.push_back(s.sentence);
  return fit_vocabulary(all, cfg);
}

}  // namespace

TEST_CASE("analyze keeps 2+ char lower-cased words and bigrams") {
  const auto terms = analyze("Use CODETERM_GEN1, I said!", {1, 2, 1});
  const std::vector<std::string> expected = {"use", "codeterm_gen1", "said", "use codeterm_gen1", "codeterm_gen1 said"};
  CHECK(terms == expected);
}

TEST_CASE("fit_vocabulary") {
  const auto corpus = sentences({"fast api", "fast code"});
  const auto v1 = fit_vocabulary(corpus, {1, 1, 1});
  CHECK(v1.size() == 3);
  CHECK(v1.terms == std::vector<std::string>{"api", "code", "fast"});
  CHECK(v1.term_index.at("fast") == 2);

  const auto v2 = fit_vocabulary(corpus, {1, 1, 2});
  CHECK(v2.terms == std::vector<std::string>{"fast"});

  CHECK_THROWS_AS(fit_vocabulary(sentences({"", "a ! ?"}), {1, 1, 1}), FitError);
  CHECK_THROWS_AS(fit_vocabulary(std::vector<CleanSentence>{}, {1, 1, 1}), FitError);
}

TEST_CASE("vectorize") {
  const auto vocab = fit_vocabulary(sentences({"fast api", "fast code"}), {1, 1, 1});

  CHECK(vectorize(make_clean_sentence("nothing known here"), vocab).empty());

  const auto one = vectorize(make_clean_sentence("code"), vocab);
  REQUIRE(one.indices.size() == 1);
  CHECK(one.values[0] == doctest::Approx(1.0).epsilon(1e-15));

  // Hand computation: n = 2 documents, df(fast) = 2, df(api) = 1.
  const double idf_fast = std::log(3.0 / 3.0) + 1.0;
  const double idf_api = std::log(3.0 / 2.0) + 1.0;
  const double raw_fast = 2.0 * idf_fast;
  const double raw_api = 1.0 * idf_api;
  const double norm = std::sqrt(raw_fast * raw_fast + raw_api * raw_api);
  const auto v = vectorize(make_clean_sentence("fast fast api"), vocab);
  REQUIRE(v.indices == std::vector<std::uint32_t>{0, 2});
  CHECK(v.values[0] == doctest::Approx(raw_api / norm).epsilon(1e-14));
  CHECK(v.values[1] == doctest::Approx(raw_fast / norm).epsilon(1e-14));
}

TEST_CASE("vectorize is invariant to scaling the counts (property)") {
  Rng rng(5);
  std::vector<CleanSentence> corpus;
  for (int i = 0; i < 50; ++i) corpus.push_back(make_clean_sentence(testing::random_words(rng, 8)));
  const auto vocab = fit_vocabulary(corpus, {1, 1, 1});
  for (int trial = 0; trial < 50; ++trial) {
    const std::string text = testing::random_words(rng, 1 + uniform_index(rng, 10));
    const auto base = vectorize(make_clean_sentence(text), vocab);
    std::string repeated = text;
    const auto times = 1 + uniform_index(rng, 4);
    for (std::size_t k = 0; k < times; ++k) repeated += " " + text;
    const auto scaled = vectorize(make_clean_sentence(repeated), vocab);
    REQUIRE(scaled.indices == base.indices);
    for (std::size_t k = 0; k < base.values.size(); ++k) CHECK(scaled.values[k] == doctest::Approx(base.values[k]).epsilon(1e-12));
  }
}

TEST_CASE("train_svm on a separable view") {
  const BinaryView view = separable_view(120, 1);
  const auto vocab = vocab_for(view, {1, 2, 1});
  const auto model = train_svm(view, vocab);
  CHECK(model.weights.size() == vocab.size());
  for (const auto& s : view.positives) CHECK(predict_svm(model, s.sentence).positive);
  for (const auto& s : view.negatives) CHECK_FALSE(predict_svm(model, s.sentence).positive);
  CHECK(model.weights[vocab.term_index.at("bugword")] > 0.0);
}

TEST_CASE("train_svm rejects single-class views") {
  BinaryView view = separable_view(40, 2);
  view.positives.clear();
  const auto vocab = vocab_for(view, {1, 1, 1});
  CHECK_THROWS_WITH_AS(train_svm(view, vocab), doctest::Contains("Bug"), TrainError);
}

TEST_CASE("predict_svm on the zero vector follows the bias") {
  const BinaryView view = separable_view(60, 3);
  auto model = train_svm(view, vocab_for(view, {1, 1, 1}));
  const CleanSentence unknown = make_clean_sentence("zzz qqq");
  model.bias = 0.25;
  CHECK(predict_svm(model, unknown).positive);
  CHECK(predict_svm(model, unknown).margin == doctest::Approx(0.25));
  model.bias = -0.25;
  CHECK_FALSE(predict_svm(model, unknown).positive);
}

TEST_CASE("train_svm is deterministic and serialization round-trips exactly") {
  const BinaryView view = separable_view(150, 4);
  const auto vocab = vocab_for(view, {1, 2, 2});
  const auto a = train_svm(view, vocab, {.seed = 9});
  const auto b = train_svm(view, vocab, {.seed = 9});
  CHECK(svm_to_json(a).dump() == svm_to_json(b).dump());

  const auto path = std::filesystem::temp_directory_path() / "aspectminer_svm.json";
  save_svm(a, path);
  const auto loaded = load_svm(path);
  CHECK(loaded == a);
  CHECK(svm_to_json(loaded).dump() == svm_to_json(a).dump());
  CHECK_THROWS_AS(load_svm("/nonexistent/svm.json"), LoadError);
}

TEST_CASE("adding a positively weighted token raises a non-positive score (property)") {
  // With L2 normalisation the margin is only guaranteed to rise when the
  // sentence's feature score w.x is not already positive.
  const BinaryView view = separable_view(200, 6);
  const auto vocab = vocab_for(view, {1, 1, 1});
  const auto model = train_svm(view, vocab);
  Rng rng(8);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::string text = testing::random_words(rng, 1 + uniform_index(rng, 8));
    const CleanSentence s = make_clean_sentence(text);
    const double score = vectorize(s, vocab).dot(model.weights);
    if (score > 0.0) continue;
    const auto& term = vocab.terms[uniform_index(rng, vocab.size())];
    const auto present = analyze(text, vocab.config);
    if (model.weights[vocab.term_index.at(term)] <= 0.0 ||
        std::find(present.begin(), present.end(), term) != present.end()) {
      continue;
    }
    CHECK(predict_svm(model, make_clean_sentence(text + " " + term)).margin > predict_svm(model, s).margin);
    ++checked;
  }
  CHECK(checked > 20);
}
