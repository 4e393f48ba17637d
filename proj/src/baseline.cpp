#include "aspectminer/baseline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "aspectminer/errors.hpp"
#include "aspectminer/random.hpp"

namespace aspectminer {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::map<std::uint32_t, double> count_terms(const CleanSentence& sentence, const VocabularyModel& vocab) {
  std::map<std::uint32_t, double> counts;
  for (const auto& term : analyze(sentence.text, vocab.config)) {
    const auto it = vocab.term_index.find(term);
    if (it != vocab.term_index.end()) counts[it->second] += 1.0;
  }
  return counts;
}

}  // namespace

std::vector<std::string> analyze(std::string_view text, const VocabularyConfig& config) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t begin = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i - begin >= 2) {
      std::string w(text.substr(begin, i - begin));
      for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      words.push_back(std::move(w));
    }
  }
  std::vector<std::string> terms;
  for (int n = std::max(1, config.ngram_min); n <= config.ngram_max; ++n) {
    const auto len = static_cast<std::size_t>(n);
    for (std::size_t s = 0; s + len <= words.size(); ++s) {
      std::string gram = words[s];
      for (std::size_t k = 1; k < len; ++k) gram += ' ' + words[s + k];
      terms.push_back(std::move(gram));
    }
  }
  return terms;
}

VocabularyModel fit_vocabulary(std::span<const CleanSentence> sentences, const VocabularyConfig& config) {
  std::map<std::string, std::size_t> df;
  bool any_token = false;
  for (const auto& s : sentences) {
    const auto terms = analyze(s.text, config);
    any_token = any_token || !terms.empty();
    for (const auto& t : std::set<std::string>(terms.begin(), terms.end())) ++df[t];
  }
  if (!any_token) throw FitError("fit_vocabulary: corpus has no tokens");

  VocabularyModel vocab;
  vocab.config = config;
  vocab.document_count = sentences.size();
  const double n = static_cast<double>(sentences.size());
  for (const auto& [term, freq] : df) {  // std::map iterates in lexicographic order
    if (static_cast<int>(freq) < config.min_df) continue;
    vocab.term_index.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
    vocab.terms.push_back(term);
    vocab.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(freq))) + 1.0);
  }
  return vocab;
}

double SparseVector::dot(std::span<const double> dense) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) sum += values[k] * dense[indices[k]];
  return sum;
}

double SparseVector::squared_norm() const {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return sum;
}

SparseVector vectorize(const CleanSentence& sentence, const VocabularyModel& vocab) {
  SparseVector v;
  double norm = 0.0;
  for (const auto& [id, count] : count_terms(sentence, vocab)) {
    const double w = count * vocab.idf[id];
    v.indices.push_back(id);
    v.values.push_back(w);
    norm += w * w;
  }
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
  }
  return v;
}

SvmBinaryClassifier train_svm(const BinaryView& view, const VocabularyModel& vocab, const SvmHyper& hyper) {
  if (view.positives.empty() || view.negatives.empty()) {
    throw TrainError("train_svm: aspect " + std::string(aspect_name(view.target)) + " has " +
                     std::to_string(view.positives.size()) + " positives and " +
                     std::to_string(view.negatives.size()) + " negatives; both classes are required");
  }
  if (!(hyper.c > 0.0)) throw UsageError("train_svm: C must be positive");

  std::vector<SparseVector> xs;
  std::vector<double> ys;
  for (const auto& s : view.positives) {
    xs.push_back(vectorize(s.sentence, vocab));
    ys.push_back(1.0);
  }
  for (const auto& s : view.negatives) {
    xs.push_back(vectorize(s.sentence, vocab));
    ys.push_back(-1.0);
  }
  const double n = static_cast<double>(xs.size());
  double c_pos = hyper.c;
  double c_neg = hyper.c;
  if (hyper.balanced_class_weights) {
    c_pos = hyper.c * n / (2.0 * static_cast<double>(view.positives.size()));
    c_neg = hyper.c * n / (2.0 * static_cast<double>(view.negatives.size()));
  }

  SvmBinaryClassifier model;
  model.target = view.target;
  model.vocab = vocab;
  model.hyper = hyper;
  model.weights.assign(vocab.size(), 0.0);
  double& bias = model.bias;

  std::vector<double> alpha(xs.size(), 0.0);
  std::vector<double> qii(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) qii[i] = xs[i].squared_norm() + 1.0;  // +1: bias feature
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hyper.seed);

  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    shuffle(std::span(order), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      const double upper = ys[i] > 0 ? c_pos : c_neg;
      const double g = ys[i] * (xs[i].dot(model.weights) + bias) - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) {
        pg = std::min(g, 0.0);
      } else if (alpha[i] == upper) {
        pg = std::max(g, 0.0);
      }
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::clamp(alpha[i] - g / qii[i], 0.0, upper);
        const double step = (alpha[i] - old) * ys[i];
        for (std::size_t k = 0; k < xs[i].indices.size(); ++k) {
          model.weights[xs[i].indices[k]] += step * xs[i].values[k];
        }
        bias += step;
      }
    }
    if (pg_max - pg_min <= hyper.tolerance) break;
  }
  return model;
}

SvmDecision predict_svm(const SvmBinaryClassifier& model, const CleanSentence& sentence) {
  const double margin = vectorize(sentence, model.vocab).dot(model.weights) + model.bias;
  return {margin > 0.0, margin};
}

nlohmann::json svm_to_json(const SvmBinaryClassifier& model) {
  nlohmann::json j;
  j["format"] = "aspectminer-svm";
  j["version"] = 1;
  j["target"] = std::string(aspect_name(model.target));
  j["vocabulary"] = {{"ngram_min", model.vocab.config.ngram_min},
                     {"ngram_max", model.vocab.config.ngram_max},
                     {"min_df", model.vocab.config.min_df},
                     {"document_count", model.vocab.document_count},
                     {"terms", model.vocab.terms},
                     {"idf", model.vocab.idf}};
  j["hyper"] = {{"c", model.hyper.c},
                {"balanced_class_weights", model.hyper.balanced_class_weights},
                {"max_epochs", model.hyper.max_epochs},
                {"tolerance", model.hyper.tolerance},
                {"seed", model.hyper.seed}};
  j["weights"] = model.weights;
  j["bias"] = model.bias;
  return j;
}

SvmBinaryClassifier svm_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "aspectminer-svm") throw FormatError("svm model: unexpected format tag");
    SvmBinaryClassifier m;
    const auto target = parse_aspect(j.at("target").get<std::string>());
    if (!target) throw FormatError("svm model: unknown target aspect");
    m.target = *target;
    const auto& v = j.at("vocabulary");
    m.vocab.config = {v.at("ngram_min").get<int>(), v.at("ngram_max").get<int>(), v.at("min_df").get<int>()};
    m.vocab.document_count = v.at("document_count").get<std::size_t>();
    m.vocab.terms = v.at("terms").get<std::vector<std::string>>();
    m.vocab.idf = v.at("idf").get<std::vector<double>>();
    for (std::size_t i = 0; i < m.vocab.terms.size(); ++i) {
      m.vocab.term_index.emplace(m.vocab.terms[i], static_cast<std::uint32_t>(i));
    }
    const auto& h = j.at("hyper");
    m.hyper = {h.at("c").get<double>(), h.at("balanced_class_weights").get<bool>(), h.at("max_epochs").get<int>(),
               h.at("tolerance").get<double>(), h.at("seed").get<std::uint64_t>()};
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    if (m.weights.size() != m.vocab.size() || m.vocab.idf.size() != m.vocab.size()) {
      throw FormatError("svm model: weight/idf length does not match vocabulary size");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("svm model: ") + e.what());
  }
}

void save_svm(const SvmBinaryClassifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << svm_to_json(model).dump(1) << '\n';
}

SvmBinaryClassifier load_svm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("svm model not found: " + path.string());
  try {
    return svm_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace aspectminer
