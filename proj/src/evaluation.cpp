#include "aspectminer/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <numeric>
#include <set>
#include <thread>

#include "aspectminer/errors.hpp"

namespace aspectminer {

// ---------------------------------------------------------------- folds

std::vector<FoldSplit> kfold_split(std::size_t n, int k, std::uint64_t seed, const std::vector<bool>& labels,
                                   const LogSink& warn) {
  if (k < 2) throw SplitError("k must be at least 2, got " + std::to_string(k));
  if (n < static_cast<std::size_t>(k)) {
    throw SplitError("cannot split " + std::to_string(n) + " items into " + std::to_string(k) + " folds");
  }
  if (labels.size() != n) throw UsageError("kfold_split: labels must have one flag per item");
  const auto folds = static_cast<std::size_t>(k);

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (labels[i] ? pos : neg).push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> sequence;
  sequence.reserve(n);
  if (pos.size() >= folds) {
    shuffle(std::span(pos), rng);
    shuffle(std::span(neg), rng);
    sequence = pos;
    sequence.insert(sequence.end(), neg.begin(), neg.end());
  } else {
    if (warn) {
      warn("warning: only " + std::to_string(pos.size()) + " positives for " + std::to_string(k) +
           " folds; using unstratified folds");
    }
    sequence.resize(n);
    std::iota(sequence.begin(), sequence.end(), std::size_t{0});
    shuffle(std::span(sequence), rng);
  }

  std::vector<FoldSplit> out(folds);
  std::vector<int> owner(n);
  for (std::size_t j = 0; j < n; ++j) owner[sequence[j]] = static_cast<int>(j % folds);
  for (std::size_t f = 0; f < folds; ++f) out[f].fold_index = static_cast<int>(f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < folds; ++f) {
      (owner[i] == static_cast<int>(f) ? out[f].test_indices : out[f].train_indices).push_back(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------- metrics

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(const std::vector<bool>& predictions, const std::vector<bool>& gold) {
  if (predictions.size() != gold.size()) {
    throw UsageError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predictions[i]) {
      gold[i] ? ++c.tp : ++c.fp;
    } else {
      gold[i] ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

Metrics precision_recall_f1(const ConfusionCounts& c) {
  Metrics m;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp == 0) {
    m.precision_undefined = true;
  } else {
    m.precision = tp / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    m.recall_undefined = true;
  } else {
    m.recall = tp / static_cast<double>(c.tp + c.fn);
  }
  if (m.precision + m.recall == 0.0) {
    m.f1_undefined = true;
  } else {
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

std::string_view metric_name(MetricName m) {
  switch (m) {
    case MetricName::kPrecision:
      return "precision";
    case MetricName::kRecall:
      return "recall";
    case MetricName::kF1:
      return "f1";
  }
  return "?";
}

double metric_value(const Metrics& m, MetricName which) {
  switch (which) {
    case MetricName::kPrecision:
      return m.precision;
    case MetricName::kRecall:
      return m.recall;
    case MetricName::kF1:
      return m.f1;
  }
  return 0.0;
}

Metrics mean_metrics(std::span<const Metrics> folds) {
  Metrics m;
  if (folds.empty()) return m;
  for (const auto& f : folds) {
    m.precision += f.precision;
    m.recall += f.recall;
    m.f1 += f.f1;
    m.precision_undefined |= f.precision_undefined;
    m.recall_undefined |= f.recall_undefined;
    m.f1_undefined |= f.f1_undefined;
  }
  const double n = static_cast<double>(folds.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

// ---------------------------------------------------------------- json

nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"precision_undefined", m.precision_undefined},
          {"recall_undefined", m.recall_undefined},
          {"f1_undefined", m.f1_undefined}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.precision_undefined = j.value("precision_undefined", false);
  m.recall_undefined = j.value("recall_undefined", false);
  m.f1_undefined = j.value("f1_undefined", false);
  return m;
}

nlohmann::json aspect_result_to_json(const AspectResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t f = 0; f < r.per_fold.size(); ++f) {
    nlohmann::json fold = metrics_to_json(r.per_fold[f]);
    if (f < r.per_fold_counts.size()) {
      const auto& c = r.per_fold_counts[f];
      fold["counts"] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
    }
    if (f < r.fold_seeds.size()) fold["seed"] = r.fold_seeds[f];
    folds.push_back(std::move(fold));
  }
  return {{"aspect", aspect_name(r.aspect)},
          {"model", r.model_name},
          {"k", r.k},
          {"seed", r.seed},
          {"mean", metrics_to_json(r.mean)},
          {"pooled", metrics_to_json(r.pooled)},
          {"per_fold", std::move(folds)},
          {"config", r.config}};
}

AspectResult aspect_result_from_json(const nlohmann::json& j) {
  AspectResult r;
  const auto a = parse_aspect(j.at("aspect").get<std::string>());
  if (!a) throw FormatError("unknown aspect " + j.at("aspect").dump());
  r.aspect = *a;
  r.model_name = j.at("model").get<std::string>();
  r.k = j.at("k").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.mean = metrics_from_json(j.at("mean"));
  r.pooled = metrics_from_json(j.at("pooled"));
  for (const auto& fold : j.at("per_fold")) {
    r.per_fold.push_back(metrics_from_json(fold));
    if (fold.contains("counts")) {
      const auto& c = fold.at("counts");
      r.per_fold_counts.push_back({c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                                   c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()});
    }
    if (fold.contains("seed")) r.fold_seeds.push_back(fold.at("seed").get<std::uint64_t>());
  }
  r.config = j.value("config", nlohmann::json());
  return r;
}

// ---------------------------------------------------------------- trainers

Trainer svm_trainer(const VocabularyConfig& vocab, const SvmHyper& hyper) {
  Trainer t;
  t.model_name = "SVM";
  t.config = {{"vocabulary", {{"ngram_min", vocab.ngram_min}, {"ngram_max", vocab.ngram_max}, {"min_df", vocab.min_df}}},
              {"hyper",
               {{"c", hyper.c},
                {"balanced_class_weights", hyper.balanced_class_weights},
                {"max_epochs", hyper.max_epochs},
                {"tolerance", hyper.tolerance},
                {"seed", hyper.seed}}}};
  t.fit_predict = [vocab, hyper](const BinaryView& train, std::span<const CleanSentence> test, int,
                                 std::uint64_t fold_seed) {
    std::vector<CleanSentence> sentences;
    sentences.reserve(train.size());
    for (const auto& s : train.positives) sentences.push_back(s.sentence);
    for (const auto& s : train.negatives) sentences.push_back(s.sentence);
    const VocabularyModel model_vocab = fit_vocabulary(sentences, vocab);
    SvmHyper h = hyper;
    h.seed = fold_seed;
    const SvmBinaryClassifier svm = train_svm(train, model_vocab, h);
    std::vector<bool> out;
    out.reserve(test.size());
    for (const auto& s : test) out.push_back(predict_svm(svm, s).positive);
    return out;
  };
  return t;
}

Trainer transformer_trainer(const TrainConfig& cfg, std::shared_ptr<const Encoder> base, HeadConfig head) {
  if (!base) throw UsageError("transformer_trainer needs an encoder");
  Trainer t;
  t.model_name = std::string(family_name(cfg.encoder.family));
  t.config = train_config_to_json(cfg);
  t.config["head"] = head_config_to_json(head);
  t.fit_predict = [cfg, base, head](const BinaryView& train, std::span<const CleanSentence> test, int,
                                    std::uint64_t fold_seed) {
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed;
    const TrainedAspectModel model = fine_tune(train, fold_cfg, *base, head);
    std::vector<bool> out;
    out.reserve(test.size());
    for (const auto& s : test) out.push_back(predict_aspect(model, s).positive);
    return out;
  };
  return t;
}

// ---------------------------------------------------------------- cross-validation

namespace {

std::string format_metrics(const Metrics& m) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "P=%.4f R=%.4f F1=%.4f", m.precision, m.recall, m.f1);
  return buf;
}

}  // namespace

AspectResult cross_validate(const Dataset& ds, Aspect aspect, const Trainer& trainer,
                            const CrossValidationOptions& options) {
  const std::string cell = std::string(aspect_name(aspect)) + "/" + trainer.model_name;
  std::vector<bool> gold(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) gold[i] = ds.items[i].aspects.contains(aspect);
  const LogSink warn = options.log ? LogSink([&](const std::string& m) { options.log(cell + ": " + m); }) : LogSink();
  const std::vector<FoldSplit> splits = kfold_split(ds.size(), options.k, options.seed, gold, warn);

  AspectResult result;
  result.aspect = aspect;
  result.model_name = trainer.model_name;
  result.k = options.k;
  result.seed = options.seed;
  result.config = trainer.config;
  const auto k = splits.size();
  result.fold_seeds.resize(k);
  result.per_fold_counts.resize(k);
  result.per_fold.resize(k);
  for (std::size_t f = 0; f < k; ++f) result.fold_seeds[f] = mix_seed(options.seed, 1000 + f);

  std::vector<std::exception_ptr> errors(k);
  auto run_fold = [&](std::size_t f) {
    try {
      const FoldSplit& split = splits[f];
      Dataset train;
      train.name = ds.name;
      train.items.reserve(split.train_indices.size());
      for (std::size_t i : split.train_indices) train.items.push_back(ds.items[i]);
      const BinaryView view = binarize(train, aspect);
      std::vector<CleanSentence> test;
      std::vector<bool> test_gold;
      for (std::size_t i : split.test_indices) {
        test.push_back(ds.items[i].sentence);
        test_gold.push_back(gold[i]);
      }
      const std::vector<bool> predicted = trainer.fit_predict(view, test, static_cast<int>(f), result.fold_seeds[f]);
      if (predicted.size() != test.size()) {
        throw UsageError("trainer returned " + std::to_string(predicted.size()) + " decisions for " +
                         std::to_string(test.size()) + " sentences");
      }
      result.per_fold_counts[f] = confusion(predicted, test_gold);
      result.per_fold[f] = precision_recall_f1(result.per_fold_counts[f]);
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.jobs, 1)), 1, k);
  std::size_t logged = 0;
  auto log_ready = [&](std::size_t upto) {
    for (; logged < upto; ++logged) {
      if (options.log && !errors[logged]) {
        options.log(cell + " fold " + std::to_string(logged + 1) + "/" + std::to_string(k) + " " +
                    format_metrics(result.per_fold[logged]));
      }
    }
  };
  if (jobs == 1) {
    for (std::size_t f = 0; f < k; ++f) {
      run_fold(f);
      log_ready(f + 1);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) run_fold(f);
      });
    }
    for (auto& w : workers) w.join();
    log_ready(k);
  }
  for (std::size_t f = 0; f < k; ++f) {
    if (!errors[f]) continue;
    try {
      std::rethrow_exception(errors[f]);
    } catch (const std::exception& e) {
      throw TrainError(cell + " fold " + std::to_string(f + 1) + "/" + std::to_string(k) + ": " + e.what());
    }
  }

  result.mean = mean_metrics(result.per_fold);
  ConfusionCounts total;
  for (const auto& c : result.per_fold_counts) total += c;
  result.pooled = precision_recall_f1(total);
  return result;
}

// ---------------------------------------------------------------- comparison

int model_rank(std::string_view model_name) {
  static constexpr std::string_view order[] = {"RoBERTa", "BERT", "XLNet", "DistilBERT"};
  for (int i = 0; i < 4; ++i) {
    if (order[i] == model_name) return i;
  }
  return 4;
}

bool model_order_less(std::string_view a, std::string_view b) {
  const int ra = model_rank(a), rb = model_rank(b);
  if (ra != rb) return ra < rb;
  return a < b;
}

std::vector<Aspect> ComparisonReport::aspects() const {
  std::set<Aspect> seen;
  for (const auto& [key, r] : cells) seen.insert(key.first);
  for (const auto& [a, r] : baseline) seen.insert(a);
  for (const auto& [key, msg] : failures) seen.insert(key.first);
  return {seen.begin(), seen.end()};
}

ComparisonReport compare(const std::vector<AspectResult>& results, const std::vector<AspectResult>& baseline,
                         const std::map<std::pair<Aspect, std::string>, std::string>& failures) {
  if (results.empty() && baseline.empty()) throw UsageError("compare needs at least one result");
  ComparisonReport report;
  report.failures = failures;
  std::set<std::string> models;
  for (const auto& r : results) {
    const auto key = std::make_pair(r.aspect, r.model_name);
    if (!report.cells.emplace(key, r).second) {
      throw UsageError("duplicate result for " + std::string(aspect_name(r.aspect)) + "/" + r.model_name);
    }
    models.insert(r.model_name);
  }
  for (const auto& [key, msg] : failures) {
    if (report.cells.count(key) == 0) models.insert(key.second);
  }
  for (const auto& b : baseline) {
    if (!report.baseline.emplace(b.aspect, b).second) {
      throw UsageError("duplicate baseline result for " + std::string(aspect_name(b.aspect)));
    }
    if (report.baseline_name.empty()) {
      report.baseline_name = b.model_name;
    } else if (report.baseline_name != b.model_name) {
      throw UsageError("baseline results come from more than one model");
    }
  }
  if (!report.baseline_name.empty()) models.erase(report.baseline_name);
  report.models.assign(models.begin(), models.end());
  std::sort(report.models.begin(), report.models.end(),
            [](const std::string& a, const std::string& b) { return model_order_less(a, b); });

  for (MetricName metric : kAllMetrics) {
    const std::string name(metric_name(metric));
    for (Aspect aspect : kAllAspects) {
      const AspectResult* best = nullptr;
      // Columns are already in tie-break order, so strict > keeps the first.
      for (const auto& model : report.models) {
        const auto it = report.cells.find({aspect, model});
        if (it == report.cells.end()) continue;
        if (best == nullptr || metric_value(it->second.mean, metric) > metric_value(best->mean, metric)) {
          best = &it->second;
        }
      }
      if (best == nullptr) continue;
      report.best_by[name][aspect] = best->model_name;
      const auto base = report.baseline.find(aspect);
      if (base == report.baseline.end()) continue;
      const double b = metric_value(base->second.mean, metric);
      if (b > 0.0) report.improvement[name][aspect] = (metric_value(best->mean, metric) - b) / b;
    }
  }
  return report;
}

}  // namespace aspectminer
