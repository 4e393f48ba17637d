#include "aspectminer/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "aspectminer/errors.hpp"
#include "aspectminer/hash.hpp"
#include "aspectminer/safetensors.hpp"

namespace aspectminer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- registry

const std::array<RegistryEntry, kAspectCount>& hyperparameter_registry() {
  using F = EncoderFamily;
  static const std::array<RegistryEntry, kAspectCount> registry = {{
      {Aspect::kPerformance, F::kRoBERTa, 32, 3, 1e-5, false},
      {Aspect::kUsability, F::kRoBERTa, 32, 3, 1e-5, false},
      {Aspect::kSecurity, F::kDistilBERT, 16, 2, 1e-5, false},
      {Aspect::kCommunity, F::kDistilBERT, 16, 3, 2e-5, false},
      {Aspect::kCompatibility, F::kDistilBERT, 16, 3, 2e-5, false},
      {Aspect::kPortability, F::kDistilBERT, 16, 3, 2e-5, false},
      {Aspect::kDocumentation, F::kRoBERTa, 32, 2, 1e-5, false},
      {Aspect::kBug, F::kBERT, 32, 3, 3e-5, false},
      {Aspect::kLegal, F::kDistilBERT, 32, 3, 1e-5, false},
      {Aspect::kOnlySentiment, F::kRoBERTa, 32, 3, 1e-5, false},
      {Aspect::kOthers, F::kRoBERTa, 32, 3, 1e-5, true},
  }};
  return registry;
}

const RegistryEntry& registry_entry(Aspect aspect) { return hyperparameter_registry()[aspect_index(aspect)]; }

TrainConfig default_train_config(Aspect aspect, std::uint64_t seed) {
  return train_config_for(aspect, registry_entry(aspect).family, seed);
}

TrainConfig train_config_for(Aspect aspect, EncoderFamily family, std::uint64_t seed) {
  const RegistryEntry& e = registry_entry(aspect);
  TrainConfig cfg;
  cfg.batch_size = e.batch_size;
  cfg.epochs = e.epochs;
  cfg.learning_rate = e.learning_rate;
  cfg.seed = seed;
  cfg.aspect = aspect;
  cfg.encoder = registry_spec(family);
  return cfg;
}

nlohmann::json encoder_spec_to_json(const EncoderSpec& spec) {
  return {{"family", family_name(spec.family)},
          {"checkpoint_name", spec.checkpoint_name},
          {"layers", spec.layers},
          {"heads", spec.heads},
          {"hidden", spec.hidden},
          {"parameter_count", spec.parameter_count}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
  EncoderSpec s;
  const auto fam = parse_family(j.at("family").get<std::string>());
  if (!fam) throw FormatError("unknown encoder family " + j.at("family").dump());
  s.family = *fam;
  s.checkpoint_name = j.at("checkpoint_name").get<std::string>();
  s.layers = j.at("layers").get<int>();
  s.heads = j.at("heads").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.parameter_count = j.at("parameter_count").get<std::uint64_t>();
  return s;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"aspect", aspect_name(cfg.aspect)},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"learning_rate", cfg.learning_rate},
          {"seed", cfg.seed},
          {"class_weighted", cfg.class_weighted},
          {"encoder", encoder_spec_to_json(cfg.encoder)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  const auto a = parse_aspect(j.at("aspect").get<std::string>());
  if (!a) throw FormatError("unknown aspect " + j.at("aspect").dump());
  cfg.aspect = *a;
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.class_weighted = j.value("class_weighted", false);
  cfg.encoder = encoder_spec_from_json(j.at("encoder"));
  return cfg;
}

nlohmann::json head_config_to_json(const HeadConfig& cfg) {
  return {{"input_units", cfg.input_units},
          {"hidden_units", cfg.hidden_units},
          {"output_units", cfg.output_units},
          {"dropout_rate", cfg.dropout_rate},
          {"init_scheme", cfg.init_scheme}};
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig cfg;
  cfg.input_units = j.at("input_units").get<int>();
  cfg.hidden_units = j.at("hidden_units").get<int>();
  cfg.output_units = j.at("output_units").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.init_scheme = j.at("init_scheme").get<std::string>();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- training

namespace {

class Adam {
 public:
  Adam(std::vector<std::span<double>> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step(const std::vector<std::span<const double>>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      double* __restrict p = params_[i].data();
      const double* __restrict g = grads[i].data();
      double* __restrict m = m_[i].data();
      double* __restrict v = v_[i].data();
      const auto n = static_cast<std::ptrdiff_t>(params_[i].size());
#pragma omp parallel for simd schedule(static) if (n > 65536)
      for (std::ptrdiff_t k = 0; k < n; ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.epsilon);
      }
    }
  }

 private:
  std::vector<std::span<double>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int t_ = 0;
};

struct Example {
  TokenSequence tokens;
  int label;
};

std::string format_log(const std::vector<double>& log) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < log.size(); ++i) out << (i ? ", " : "") << log[i];
  out << ']';
  return out.str();
}

void zero(Gradients& g) {
  for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
}

}  // namespace

TrainedAspectModel fine_tune(const BinaryView& view, const TrainConfig& cfg, Encoder encoder, HeadConfig head_cfg,
                             const AdamConfig& adam, const EpochCallback& on_epoch) {
  const std::string aspect(aspect_name(view.target));
  if (view.positives.empty() || view.negatives.empty()) {
    throw TrainError("cannot fine-tune " + aspect + ": the binary view has " + std::to_string(view.positives.size()) +
                     " positives and " + std::to_string(view.negatives.size()) + " negatives");
  }
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.learning_rate > 0.0)) {
    throw ConfigurationError("train config for " + aspect + " needs batch_size >= 1, epochs >= 0, learning_rate > 0");
  }
  head_cfg.input_units = static_cast<int>(encoder.width());
  Head head = Head::build(head_cfg, mix_seed(cfg.seed, 1));

  TrainedAspectModel model;
  model.spec = encoder.spec();
  model.head_config = head_cfg;
  model.config = cfg;

  if (cfg.epochs > 0) {
    std::vector<Example> examples;
    examples.reserve(view.size());
    for (const auto& s : view.positives) examples.push_back({encoder.tokenize(s.sentence), 1});
    for (const auto& s : view.negatives) examples.push_back({encoder.tokenize(s.sentence), 0});
    const double n = static_cast<double>(examples.size());
    double class_weight[2] = {1.0, 1.0};
    if (cfg.class_weighted) {
      class_weight[0] = n / (2.0 * static_cast<double>(view.negatives.size()));
      class_weight[1] = n / (2.0 * static_cast<double>(view.positives.size()));
    }

    std::vector<std::span<double>> param_spans;
    for (auto& p : encoder.parameters()) param_spans.emplace_back(p.value);
    for (auto& p : head.parameters()) param_spans.emplace_back(p.value);
    Adam optimizer(param_spans, adam);
    Gradients enc_grads = encoder.zero_gradients();
    Gradients head_grads = head.zero_gradients();
    std::vector<std::span<const double>> grad_spans;
    for (auto& g : enc_grads) grad_spans.emplace_back(g);
    for (auto& g : head_grads) grad_spans.emplace_back(g);

    Rng order_rng(mix_seed(cfg.seed, 2));
    Rng dropout_rng(mix_seed(cfg.seed, 3));
    std::vector<std::size_t> order(examples.size());
    const std::size_t width = encoder.width();
    std::vector<double> d_pooled;
    std::vector<double> d_emb(kSequenceLength * width);
    EncoderCache enc_cache;
    HeadCache head_cache;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      shuffle(std::span(order), order_rng);
      double epoch_loss = 0.0;
      const auto batch = static_cast<std::size_t>(cfg.batch_size);
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        zero(enc_grads);
        zero(head_grads);
        double batch_loss = 0.0;
        for (std::size_t b = start; b < end; ++b) {
          const Example& ex = examples[order[b]];
          const TokenEmbeddings emb = encoder.forward(ex.tokens, &dropout_rng, enc_cache);
          const PooledVector pooled = max_pool(emb);
          head.forward(pooled.values, HeadMode::kTrain, &dropout_rng, &head_cache);
          const double loss = head.backward(head_cache, ex.label, class_weight[ex.label], head_grads, d_pooled);
          if (!std::isfinite(loss)) {
            throw TrainError("fine-tuning " + aspect + " diverged: non-finite loss at epoch " +
                             std::to_string(epoch + 1) + ", batch " + std::to_string(start / batch + 1) +
                             "; completed epoch losses " + format_log(model.training_log));
          }
          batch_loss += loss;
          std::fill(d_emb.begin(), d_emb.end(), 0.0);
          for (std::size_t j = 0; j < width; ++j) d_emb[pooled.argmax[j] * width + j] = d_pooled[j];
          encoder.backward(enc_cache, d_emb, enc_grads);
        }
        const double scale = 1.0 / static_cast<double>(end - start);
        for (auto& g : enc_grads) {
          for (double& x : g) x *= scale;
        }
        for (auto& g : head_grads) {
          for (double& x : g) x *= scale;
        }
        optimizer.step(grad_spans, cfg.learning_rate);
        epoch_loss += batch_loss;
      }
      const double mean = epoch_loss / n;
      model.training_log.push_back(mean);
      if (on_epoch) on_epoch(epoch, mean);
    }
    // Adam wrote through raw spans; make sure the cached hash is dropped.
    encoder.parameters();
  }

  model.head = std::move(head);
  model.encoder = std::make_shared<const Encoder>(std::move(encoder));
  return model;
}

TrainedAspectModel fine_tune(const BinaryView& view, const TrainConfig& cfg) {
  return fine_tune(view, cfg, load_encoder(cfg.encoder));
}

// ---------------------------------------------------------------- inference

Prediction predict_pooled(const TrainedAspectModel& model, const PooledVector& pooled) {
  return model.head.forward(pooled.values, HeadMode::kInfer);
}

Prediction predict_aspect(const TrainedAspectModel& model, const CleanSentence& s) {
  const Encoder& enc = *model.encoder;
  return predict_pooled(model, max_pool(enc.embed(enc.tokenize(s))));
}

Detection detect_aspects(const std::map<Aspect, const TrainedAspectModel*>& models, const CleanSentence& s) {
  if (models.empty()) throw UsageError("detect_aspects needs at least one model");
  std::map<std::string, PooledVector> shared;
  Detection out;
  for (const auto& [aspect, model] : models) {
    if (model == nullptr || !model->encoder) throw UsageError("detect_aspects: missing model for an aspect");
    const Encoder& enc = *model->encoder;
    const std::string key = encoder_spec_to_json(enc.spec()).dump() + enc.weights_hash();
    auto it = shared.find(key);
    if (it == shared.end()) it = shared.emplace(key, max_pool(enc.embed(enc.tokenize(s)))).first;
    const Prediction p = predict_pooled(*model, it->second);
    out.probabilities[aspect] = p;
    if (p.positive) out.aspects.insert(aspect);
  }
  return out;
}

Detection detect_aspects(const std::map<Aspect, TrainedAspectModel>& models, const CleanSentence& s) {
  std::map<Aspect, const TrainedAspectModel*> refs;
  for (const auto& [a, m] : models) refs.emplace(a, &m);
  return detect_aspects(refs, s);
}

// ---------------------------------------------------------------- persistence

namespace {

std::vector<std::string> relative_files(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "manifest.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw LoadError("cannot write " + path.string());
}

nlohmann::json read_json_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(what + ": cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(what + ": " + path.string() + " is not valid JSON (" + e.what() + ")");
  }
}

}  // namespace

void save_trained_model(const TrainedAspectModel& model, const fs::path& dir) {
  fs::create_directories(dir);
  model.encoder->save(dir / "encoder");
  TensorMap head;
  for (const auto& p : model.head.parameters()) head.emplace(p.name, Tensor{p.shape, p.value});
  write_safetensors(dir / "head.safetensors", head);
  nlohmann::ordered_json cfg;
  cfg["format"] = "aspectminer-model";
  cfg["aspect"] = aspect_name(model.config.aspect);
  cfg["spec"] = encoder_spec_to_json(model.spec);
  cfg["head"] = head_config_to_json(model.head_config);
  cfg["train"] = train_config_to_json(model.config);
  cfg["training_log"] = model.training_log;
  write_text(dir / "config.json", cfg.dump(2) + "\n");

  nlohmann::ordered_json manifest;
  manifest["aspect"] = aspect_name(model.config.aspect);
  manifest["files"] = nlohmann::ordered_json::object();
  for (const auto& rel : relative_files(dir)) manifest["files"][rel] = sha256_file(dir / rel);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

TrainedAspectModel load_trained_model(const fs::path& dir) {
  const std::string where = "model " + dir.string();
  const auto manifest = read_json_file(dir / "manifest.json", where);
  const std::string aspect = manifest.value("aspect", std::string("?"));
  const std::string what = "aspect model " + aspect + " (" + dir.string() + ")";
  if (!manifest.contains("files") || !manifest.at("files").is_object()) {
    throw LoadError(what + ": manifest lists no files");
  }
  for (const auto& [rel, digest] : manifest.at("files").items()) {
    const fs::path file = dir / rel;
    if (!fs::exists(file)) throw LoadError(what + ": missing " + rel);
    if (sha256_file(file) != digest.get<std::string>()) throw LoadError(what + ": hash mismatch for " + rel);
  }
  const auto cfg = read_json_file(dir / "config.json", what);
  TrainedAspectModel model;
  try {
    model.spec = encoder_spec_from_json(cfg.at("spec"));
    model.head_config = head_config_from_json(cfg.at("head"));
    model.config = train_config_from_json(cfg.at("train"));
    model.training_log = cfg.at("training_log").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(what + ": malformed config.json (" + e.what() + ")");
  }
  if (aspect != aspect_name(model.config.aspect)) throw LoadError(what + ": manifest and config disagree on the aspect");
  model.encoder = std::make_shared<const Encoder>(load_encoder(model.spec, (dir / "encoder").string()));
  const SafetensorsFile head = read_safetensors(dir / "head.safetensors");
  std::vector<Parameter> params;
  for (const char* name : {"dense1.weight", "dense1.bias", "dense2.weight", "dense2.bias"}) {
    const auto it = head.tensors.find(name);
    if (it == head.tensors.end()) throw LoadError(what + ": head lacks " + name);
    params.push_back({name, it->second.shape, it->second.data});
  }
  model.head = Head(model.head_config, std::move(params));
  return model;
}

}  // namespace aspectminer
