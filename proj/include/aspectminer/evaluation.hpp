#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aspectminer/baseline.hpp"
#include "aspectminer/classifier.hpp"
#include "aspectminer/corpus.hpp"
#include "json.hpp"

namespace aspectminer {

// Receives one human-readable line (warnings, per-fold progress).
using LogSink = std::function<void(const std::string&)>;

struct FoldSplit {
  int fold_index = 0;
  std::vector<std::size_t> train_indices;  // ascending
  std::vector<std::size_t> test_indices;   // ascending

  bool operator==(const FoldSplit&) const = default;
};

// Stratified k-fold partition of 0..n-1. Positives and negatives are
// shuffled separately and dealt round-robin, negatives continuing where the
// positives stopped, so fold sizes and per-fold positive counts each differ
// by at most one. With fewer than k positives the split is unstratified and
// a warning goes to `warn`. Throws SplitError when n < k or k < 2, UsageError
// when labels.size() != n.
std::vector<FoldSplit> kfold_split(std::size_t n, int k, std::uint64_t seed, const std::vector<bool>& labels,
                                   const LogSink& warn = {});

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

// Positive = aspect present. Throws UsageError on a length mismatch.
ConfusionCounts confusion(const std::vector<bool>& predictions, const std::vector<bool>& gold);

// Zero denominators yield 0 and set the matching flag.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  bool operator==(const Metrics&) const = default;
};

Metrics precision_recall_f1(const ConfusionCounts& c);

enum class MetricName { kPrecision, kRecall, kF1 };
inline constexpr MetricName kAllMetrics[] = {MetricName::kPrecision, MetricName::kRecall, MetricName::kF1};
std::string_view metric_name(MetricName m);  // "precision", "recall", "f1"
double metric_value(const Metrics& m, MetricName which);

// Field-wise arithmetic mean; a flag is set when it was set in any fold.
Metrics mean_metrics(std::span<const Metrics> folds);

struct AspectResult {
  Aspect aspect = Aspect::kOthers;
  std::string model_name;
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> fold_seeds;
  std::vector<ConfusionCounts> per_fold_counts;
  std::vector<Metrics> per_fold;
  Metrics mean;    // macro over folds
  Metrics pooled;  // from summed confusion counts
  nlohmann::json config;  // resolved trainer configuration

  bool operator==(const AspectResult&) const = default;
};

nlohmann::json metrics_to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);
nlohmann::json aspect_result_to_json(const AspectResult& r);
AspectResult aspect_result_from_json(const nlohmann::json& j);

// A training procedure for one (aspect, model) cell. fit_predict sees the
// fold's training items only and returns one decision per test sentence.
struct Trainer {
  std::string model_name;
  nlohmann::json config;
  std::function<std::vector<bool>(const BinaryView& train, std::span<const CleanSentence> test, int fold,
                                  std::uint64_t fold_seed)>
      fit_predict;
};

// TF-IDF vocabulary fitted on the training fold, then a linear SVM.
Trainer svm_trainer(const VocabularyConfig& vocab = {}, const SvmHyper& hyper = {});

// Fine-tunes a copy of `base` per fold with cfg (seed replaced by the fold
// seed). Model name is the encoder family name.
Trainer transformer_trainer(const TrainConfig& cfg, std::shared_ptr<const Encoder> base, HeadConfig head = {});

struct CrossValidationOptions {
  int k = 10;
  std::uint64_t seed = 0;
  int jobs = 1;  // folds trained concurrently
  LogSink log;   // warnings and one line per fold
};

// Trainer exceptions are rethrown as TrainError naming the fold.
AspectResult cross_validate(const Dataset& ds, Aspect aspect, const Trainer& trainer,
                            const CrossValidationOptions& options = {});

// Reporting order of model columns: RoBERTa, BERT, XLNet, DistilBERT, then
// any other name alphabetically.
int model_rank(std::string_view model_name);
bool model_order_less(std::string_view a, std::string_view b);

struct ComparisonReport {
  std::vector<std::string> models;  // column order, baseline excluded
  std::string baseline_name;        // empty when there is no baseline
  std::map<std::pair<Aspect, std::string>, AspectResult> cells;
  std::map<Aspect, AspectResult> baseline;
  // metric name -> aspect -> best model
  std::map<std::string, std::map<Aspect, std::string>> best_by;
  // metric name -> aspect -> (best - baseline) / baseline; absent when the
  // baseline is missing or zero
  std::map<std::string, std::map<Aspect, double>> improvement;
  // (aspect, model) -> failure message for cells that could not be computed
  std::map<std::pair<Aspect, std::string>, std::string> failures;
  nlohmann::json provenance;  // seeds, hashes, code version

  std::vector<Aspect> aspects() const;
  bool operator==(const ComparisonReport&) const = default;
};

// Throws UsageError on duplicate (aspect, model) pairs, duplicate baseline
// aspects, or an empty result list.
ComparisonReport compare(const std::vector<AspectResult>& results, const std::vector<AspectResult>& baseline,
                         const std::map<std::pair<Aspect, std::string>, std::string>& failures = {});

}  // namespace aspectminer
