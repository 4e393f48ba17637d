#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "aspectminer/aspect.hpp"
#include "aspectminer/corpus.hpp"

namespace aspectminer {

struct VocabularyConfig {
  int ngram_min = 1;
  int ngram_max = 2;
  int min_df = 2;

  bool operator==(const VocabularyConfig&) const = default;
};

// TF-IDF vocabulary. Terms are sorted lexicographically, so ids are dense
// and independent of corpus order. idf(t) = ln((1 + n) / (1 + df(t))) + 1.
struct VocabularyModel {
  VocabularyConfig config;
  std::size_t document_count = 0;
  std::vector<std::string> terms;
  std::vector<double> idf;
  std::unordered_map<std::string, std::uint32_t> term_index;

  std::size_t size() const { return terms.size(); }
  bool operator==(const VocabularyModel& other) const {
    return config == other.config && document_count == other.document_count && terms == other.terms &&
           idf == other.idf;
  }
};

// Lower-cased word tokens of two or more word characters, expanded to the
// configured n-gram range (n-grams joined with a single space).
std::vector<std::string> analyze(std::string_view text, const VocabularyConfig& config);

// Throws FitError when no sentence yields a token.
VocabularyModel fit_vocabulary(std::span<const CleanSentence> sentences, const VocabularyConfig& config);

struct SparseVector {
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> values;

  bool empty() const { return indices.empty(); }
  double dot(std::span<const double> dense) const;
  double squared_norm() const;
};

// Raw term counts -> TF-IDF -> L2 normalised. Out-of-vocabulary terms are
// ignored; a sentence with no known term maps to the zero vector.
SparseVector vectorize(const CleanSentence& sentence, const VocabularyModel& vocab);

struct SvmHyper {
  double c = 1.0;
  bool balanced_class_weights = true;
  int max_epochs = 1000;
  double tolerance = 1e-2;
  std::uint64_t seed = 1;

  bool operator==(const SvmHyper&) const = default;
};

struct SvmBinaryClassifier {
  Aspect target = Aspect::kOthers;
  VocabularyModel vocab;
  std::vector<double> weights;  // length vocab.size()
  double bias = 0.0;
  SvmHyper hyper;

  bool operator==(const SvmBinaryClassifier&) const = default;
};

struct SvmDecision {
  bool positive = false;
  double margin = 0.0;
};

// L2-regularised hinge-loss linear SVM trained by dual coordinate descent
// (bias folded in as a constant feature). Throws TrainError for a
// single-class view.
SvmBinaryClassifier train_svm(const BinaryView& view, const VocabularyModel& vocab, const SvmHyper& hyper = {});

// Positive iff margin > 0.
SvmDecision predict_svm(const SvmBinaryClassifier& model, const CleanSentence& sentence);

nlohmann::json svm_to_json(const SvmBinaryClassifier& model);
SvmBinaryClassifier svm_from_json(const nlohmann::json& j);
void save_svm(const SvmBinaryClassifier& model, const std::filesystem::path& path);
SvmBinaryClassifier load_svm(const std::filesystem::path& path);

}  // namespace aspectminer
