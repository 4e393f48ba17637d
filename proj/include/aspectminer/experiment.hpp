#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aspectminer/baseline.hpp"
#include "aspectminer/classifier.hpp"
#include "aspectminer/corpus.hpp"
#include "aspectminer/evaluation.hpp"
#include "json.hpp"

namespace aspectminer {

inline constexpr std::string_view kCodeVersion = "aspectminer 0.1.0";

enum class ModelKind { kSVM, kRoBERTa, kBERT, kXLNet, kDistilBERT };
inline constexpr ModelKind kAllModels[] = {ModelKind::kSVM, ModelKind::kRoBERTa, ModelKind::kBERT, ModelKind::kXLNet,
                                           ModelKind::kDistilBERT};

std::string_view model_kind_name(ModelKind m);
// Case-insensitive. nullopt for anything outside the closed set.
std::optional<ModelKind> parse_model_kind(std::string_view name);
std::optional<EncoderFamily> model_family(ModelKind m);

struct TrainOverride {
  std::optional<int> batch_size;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<bool> class_weighted;

  bool operator==(const TrainOverride&) const = default;
};

// Config file layout (JSON, every key optional):
//   dataset, format ("csv" | "jsonl"), aspects [names], models [names],
//   k, seed, out, jobs,
//   encoders  {model: checkpoint directory},
//   overrides {aspect: {model: {batch_size, epochs, learning_rate, class_weighted}}},
//   head      {hidden_units, dropout_rate},
//   svm       {c, ngram_min, ngram_max, min_df, max_epochs, tolerance, balanced_class_weights}
// Overrides naming a pair that is not run are ignored.
struct ExperimentConfig {
  std::string dataset;
  std::optional<DatasetFormat> format;
  std::vector<Aspect> aspects;      // empty: all 11
  std::vector<ModelKind> models;    // empty: all 5
  bool models_given = false;        // an explicit empty list is an error
  int k = 10;
  std::uint64_t seed = 0;
  std::string out = "aspectminer-out";
  int jobs = 1;
  std::map<ModelKind, std::string> encoders;
  std::map<std::pair<Aspect, ModelKind>, TrainOverride> overrides;
  HeadConfig head;
  VocabularyConfig vocab;
  SvmHyper svm;
};

// Unknown keys -> ConfigurationError; unknown aspect or model names ->
// UsageError.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
std::vector<Aspect> parse_aspect_list(const std::vector<std::string>& names);
std::vector<ModelKind> parse_model_list(const std::vector<std::string>& names);

// Everything materialised: aspect and model lists, the dataset format and a
// TrainConfig per (aspect, transformer model).
struct ResolvedExperiment {
  ExperimentConfig config;
  DatasetFormat format = DatasetFormat::kOpinerCsv;
  std::map<std::pair<Aspect, ModelKind>, TrainConfig> train;

  nlohmann::json to_json() const;
  std::string canonical() const;  // to_json().dump(2)
  std::string hash() const;       // SHA-256 of canonical() without "out"
};

// Pure apart from reading config.json of any explicitly named encoder
// checkpoint. Throws UsageError for an explicitly empty model list or an
// invalid k / jobs.
ResolvedExperiment resolve_experiment(const ExperimentConfig& config);

// Spec recorded in a checkpoint directory written by Encoder::save (falls
// back to the registry spec of `family`).
EncoderSpec checkpoint_spec(const std::filesystem::path& dir, EncoderFamily family);

// Full command line; returns the process exit code (0 ok, 1 experiment
// failure, 2 usage / configuration / load error).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aspectminer
