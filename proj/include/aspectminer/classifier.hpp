#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "aspectminer/corpus.hpp"
#include "aspectminer/encoder.hpp"
#include "aspectminer/head.hpp"
#include "json.hpp"

namespace aspectminer {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 3;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  Aspect aspect = Aspect::kOthers;
  EncoderSpec encoder;
  // Loss weights n / (2 n_class); off by default.
  bool class_weighted = false;

  bool operator==(const TrainConfig&) const = default;
};

struct RegistryEntry {
  Aspect aspect;
  EncoderFamily family;
  int batch_size;
  int epochs;
  double learning_rate;
  bool fallback;  // not in the published table
};

// Best-by-precision settings per aspect; Others uses the RoBERTa/32/3/1e-5
// fallback row.
const std::array<RegistryEntry, kAspectCount>& hyperparameter_registry();
const RegistryEntry& registry_entry(Aspect aspect);
TrainConfig default_train_config(Aspect aspect, std::uint64_t seed = 0);
// Table defaults for a fixed aspect but a different encoder family: batch,
// epochs and rate of the registry row, encoder replaced.
TrainConfig train_config_for(Aspect aspect, EncoderFamily family, std::uint64_t seed = 0);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json head_config_to_json(const HeadConfig& cfg);
HeadConfig head_config_from_json(const nlohmann::json& j);
nlohmann::json encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainedAspectModel {
  EncoderSpec spec;
  std::shared_ptr<const Encoder> encoder;
  Head head;
  HeadConfig head_config;
  TrainConfig config;
  std::vector<double> training_log;  // mean loss per epoch
};

// Called after each epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

// Fine-tunes every encoder layer together with a freshly built head.
// Throws TrainError on a single-class view or a non-finite loss.
TrainedAspectModel fine_tune(const BinaryView& view, const TrainConfig& cfg, Encoder encoder,
                             HeadConfig head_cfg = {}, const AdamConfig& adam = {},
                             const EpochCallback& on_epoch = {});
// Loads cfg.encoder from the model cache first.
TrainedAspectModel fine_tune(const BinaryView& view, const TrainConfig& cfg);

Prediction predict_aspect(const TrainedAspectModel& model, const CleanSentence& s);
Prediction predict_pooled(const TrainedAspectModel& model, const PooledVector& pooled);

struct Detection {
  AspectSet aspects;
  std::map<Aspect, Prediction> probabilities;
};

// Runs each model independently. Encoder passes are shared between models
// whose encoder spec and weights hash coincide. Throws UsageError on an
// empty map.
Detection detect_aspects(const std::map<Aspect, const TrainedAspectModel*>& models, const CleanSentence& s);
Detection detect_aspects(const std::map<Aspect, TrainedAspectModel>& models, const CleanSentence& s);

// Directory: encoder/, head.safetensors, config.json, manifest.json (aspect
// name plus SHA-256 of every file). load verifies every hash.
void save_trained_model(const TrainedAspectModel& model, const std::filesystem::path& dir);
TrainedAspectModel load_trained_model(const std::filesystem::path& dir);

}  // namespace aspectminer
