#include "aspectminer/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "aspectminer/errors.hpp"
#include "aspectminer/hash.hpp"
#include "aspectminer/report.hpp"
#include "aspectminer/tokenizer.hpp"

namespace aspectminer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- names

std::string_view model_kind_name(ModelKind m) {
  switch (m) {
    case ModelKind::kSVM:
      return "SVM";
    case ModelKind::kRoBERTa:
      return "RoBERTa";
    case ModelKind::kBERT:
      return "BERT";
    case ModelKind::kXLNet:
      return "XLNet";
    case ModelKind::kDistilBERT:
      return "DistilBERT";
  }
  return "?";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  std::string key;
  for (char c : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (ModelKind m : kAllModels) {
    std::string canon;
    for (char c : model_kind_name(m)) canon.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (key == canon) return m;
  }
  return std::nullopt;
}

std::optional<EncoderFamily> model_family(ModelKind m) {
  switch (m) {
    case ModelKind::kSVM:
      return std::nullopt;
    case ModelKind::kRoBERTa:
      return EncoderFamily::kRoBERTa;
    case ModelKind::kBERT:
      return EncoderFamily::kBERT;
    case ModelKind::kXLNet:
      return EncoderFamily::kXLNet;
    case ModelKind::kDistilBERT:
      return EncoderFamily::kDistilBERT;
  }
  return std::nullopt;
}

std::vector<Aspect> parse_aspect_list(const std::vector<std::string>& names) {
  std::vector<Aspect> out;
  for (const auto& n : names) {
    const auto a = parse_aspect(n);
    if (!a) throw UsageError("unknown aspect '" + n + "'");
    if (std::find(out.begin(), out.end(), *a) == out.end()) out.push_back(*a);
  }
  return out;
}

std::vector<ModelKind> parse_model_list(const std::vector<std::string>& names) {
  std::vector<ModelKind> out;
  for (const auto& n : names) {
    const auto m = parse_model_kind(n);
    if (!m) throw UsageError("unknown model '" + n + "' (expected SVM, RoBERTa, BERT, XLNet or DistilBERT)");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  return out;
}

// ---------------------------------------------------------------- config file

namespace {

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigurationError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) throw ConfigurationError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigurationError("config key '" + key + "' has the wrong type");
  }
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& key) {
  const auto& v = j.at(key);
  if (v.is_string()) {
    std::vector<std::string> out;
    std::stringstream ss(v.get<std::string>());
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  return get_as<std::vector<std::string>>(j, key);
}

ModelKind model_key(const std::string& name) {
  const auto m = parse_model_kind(name);
  if (!m) throw UsageError("unknown model '" + name + "'");
  return *m;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  check_keys(j, "config",
             {"dataset", "format", "aspects", "models", "k", "seed", "out", "jobs", "encoders", "overrides", "head",
              "svm"});
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = get_as<std::string>(j, "dataset");
  if (j.contains("format")) c.format = parse_dataset_format(get_as<std::string>(j, "format"));
  if (j.contains("aspects")) c.aspects = parse_aspect_list(string_list(j, "aspects"));
  if (j.contains("models")) {
    c.models = parse_model_list(string_list(j, "models"));
    c.models_given = true;
  }
  if (j.contains("k")) c.k = get_as<int>(j, "k");
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed");
  if (j.contains("out")) c.out = get_as<std::string>(j, "out");
  if (j.contains("jobs")) c.jobs = get_as<int>(j, "jobs");
  if (j.contains("encoders")) {
    check_keys(j.at("encoders"), "encoders", {"RoBERTa", "BERT", "XLNet", "DistilBERT"});
    for (const auto& [name, path] : j.at("encoders").items()) {
      c.encoders[model_key(name)] = get_as<std::string>(j.at("encoders"), name);
    }
  }
  if (j.contains("overrides")) {
    const auto& ov = j.at("overrides");
    if (!ov.is_object()) throw ConfigurationError("overrides must be an object");
    for (const auto& [aname, per_model] : ov.items()) {
      const auto a = parse_aspect(aname);
      if (!a) throw UsageError("unknown aspect '" + aname + "' in overrides");
      if (!per_model.is_object()) throw ConfigurationError("overrides." + aname + " must be an object");
      for (const auto& [mname, o] : per_model.items()) {
        const ModelKind m = model_key(mname);
        if (m == ModelKind::kSVM) throw ConfigurationError("overrides apply to transformer models only");
        check_keys(o, "overrides." + aname + "." + mname, {"batch_size", "epochs", "learning_rate", "class_weighted"});
        TrainOverride t;
        if (o.contains("batch_size")) t.batch_size = get_as<int>(o, "batch_size");
        if (o.contains("epochs")) t.epochs = get_as<int>(o, "epochs");
        if (o.contains("learning_rate")) t.learning_rate = get_as<double>(o, "learning_rate");
        if (o.contains("class_weighted")) t.class_weighted = get_as<bool>(o, "class_weighted");
        c.overrides[{*a, m}] = t;
      }
    }
  }
  if (j.contains("head")) {
    const auto& h = j.at("head");
    check_keys(h, "head", {"hidden_units", "dropout_rate"});
    if (h.contains("hidden_units")) c.head.hidden_units = get_as<int>(h, "hidden_units");
    if (h.contains("dropout_rate")) c.head.dropout_rate = get_as<double>(h, "dropout_rate");
    c.head.validate();
  }
  if (j.contains("svm")) {
    const auto& s = j.at("svm");
    check_keys(s, "svm", {"c", "ngram_min", "ngram_max", "min_df", "max_epochs", "tolerance", "balanced_class_weights"});
    if (s.contains("c")) c.svm.c = get_as<double>(s, "c");
    if (s.contains("max_epochs")) c.svm.max_epochs = get_as<int>(s, "max_epochs");
    if (s.contains("tolerance")) c.svm.tolerance = get_as<double>(s, "tolerance");
    if (s.contains("balanced_class_weights")) c.svm.balanced_class_weights = get_as<bool>(s, "balanced_class_weights");
    if (s.contains("ngram_min")) c.vocab.ngram_min = get_as<int>(s, "ngram_min");
    if (s.contains("ngram_max")) c.vocab.ngram_max = get_as<int>(s, "ngram_max");
    if (s.contains("min_df")) c.vocab.min_df = get_as<int>(s, "min_df");
  }
  return c;
}

// ---------------------------------------------------------------- resolution

EncoderSpec checkpoint_spec(const fs::path& dir, EncoderFamily family) {
  const fs::path file = dir / "config.json";
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigurationError("encoder checkpoint " + dir.string() + " has no readable config.json");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(file.string() + " is not valid JSON: " + e.what());
  }
  if (!cfg.contains("aspectminer")) return registry_spec(family);
  const auto& am = cfg.at("aspectminer");
  EncoderSpec spec;
  const auto f = parse_family(am.value("family", std::string()));
  if (!f || *f != family) {
    throw ConfigurationError("checkpoint " + dir.string() + " does not hold a " + std::string(family_name(family)) +
                             " encoder");
  }
  spec.family = *f;
  spec.checkpoint_name = am.value("checkpoint_name", std::string());
  spec.parameter_count = am.value("parameter_count", std::uint64_t{0});
  spec.layers = cfg.value("num_hidden_layers", 0);
  spec.heads = cfg.value("num_attention_heads", 0);
  spec.hidden = cfg.value("hidden_size", 0);
  return spec;
}

ResolvedExperiment resolve_experiment(const ExperimentConfig& config) {
  ResolvedExperiment r;
  r.config = config;
  ExperimentConfig& c = r.config;
  if (c.models_given && c.models.empty()) throw UsageError("the model list is empty");
  if (c.aspects.empty()) c.aspects.assign(kAllAspects.begin(), kAllAspects.end());
  if (c.models.empty()) c.models.assign(std::begin(kAllModels), std::end(kAllModels));
  c.models_given = true;
  if (c.k < 2) throw UsageError("k must be at least 2");
  if (c.jobs < 1) throw UsageError("jobs must be at least 1");
  c.head.validate();
  r.format = c.format ? *c.format : infer_dataset_format(c.dataset);
  c.format = r.format;

  std::map<ModelKind, EncoderSpec> specs;
  for (ModelKind m : c.models) {
    const auto family = model_family(m);
    if (!family) continue;
    const auto path = c.encoders.find(m);
    specs[m] = path == c.encoders.end() ? registry_spec(*family) : checkpoint_spec(path->second, *family);
  }
  for (Aspect a : c.aspects) {
    for (ModelKind m : c.models) {
      if (!model_family(m)) continue;
      TrainConfig t = train_config_for(a, *model_family(m), c.seed);
      t.encoder = specs.at(m);
      const auto o = c.overrides.find({a, m});
      if (o != c.overrides.end()) {
        if (o->second.batch_size) t.batch_size = *o->second.batch_size;
        if (o->second.epochs) t.epochs = *o->second.epochs;
        if (o->second.learning_rate) t.learning_rate = *o->second.learning_rate;
        if (o->second.class_weighted) t.class_weighted = *o->second.class_weighted;
      }
      if (t.batch_size < 1 || t.epochs < 0 || !(t.learning_rate > 0.0)) {
        throw ConfigurationError("invalid training settings for " + std::string(aspect_name(a)) + "/" +
                                 std::string(model_kind_name(m)));
      }
      r.train[{a, m}] = t;
    }
  }
  return r;
}

nlohmann::json ResolvedExperiment::to_json() const {
  const ExperimentConfig& c = config;
  nlohmann::ordered_json j;
  j["dataset"] = c.dataset;
  j["format"] = dataset_format_name(format);
  j["aspects"] = nlohmann::ordered_json::array();
  for (Aspect a : c.aspects) j["aspects"].push_back(aspect_name(a));
  j["models"] = nlohmann::ordered_json::array();
  for (ModelKind m : c.models) j["models"].push_back(model_kind_name(m));
  j["k"] = c.k;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["encoders"] = nlohmann::ordered_json::object();
  for (const auto& [m, path] : c.encoders) j["encoders"][std::string(model_kind_name(m))] = path;
  j["head"] = head_config_to_json(c.head);
  j["svm"] = {{"c", c.svm.c},
              {"ngram_min", c.vocab.ngram_min},
              {"ngram_max", c.vocab.ngram_max},
              {"min_df", c.vocab.min_df},
              {"max_epochs", c.svm.max_epochs},
              {"tolerance", c.svm.tolerance},
              {"balanced_class_weights", c.svm.balanced_class_weights},
              {"seed", c.svm.seed}};
  j["train"] = nlohmann::ordered_json::array();
  for (Aspect a : c.aspects) {
    for (ModelKind m : c.models) {
      const auto it = train.find({a, m});
      if (it == train.end()) continue;
      nlohmann::ordered_json entry;
      entry["aspect"] = aspect_name(a);
      entry["model"] = model_kind_name(m);
      entry["config"] = train_config_to_json(it->second);
      j["train"].push_back(std::move(entry));
    }
  }
  return nlohmann::json::parse(j.dump());
}

std::string ResolvedExperiment::canonical() const { return to_json().dump(2); }

std::string ResolvedExperiment::hash() const {
  nlohmann::json j = to_json();
  j.erase("out");
  return sha256_hex(j.dump(2));
}

// ---------------------------------------------------------------- commands

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct ExperimentFlags {
  std::string config_path;
  std::string dataset;
  std::string format;
  std::vector<std::string> aspects;
  std::vector<std::string> models;
  int k = 10;
  std::uint64_t seed = 0;
  std::string out;
  int jobs = 1;
  std::map<std::string, CLI::Option*> opts;
};

void add_experiment_flags(CLI::App* app, ExperimentFlags& f) {
  f.opts["config"] = app->add_option("--config", f.config_path, "JSON experiment config; flags win over it");
  f.opts["dataset"] = app->add_option("--dataset", f.dataset, "Labelled dataset (.csv or .jsonl)");
  f.opts["format"] = app->add_option("--format", f.format, "Dataset format: opiner-csv or jsonl");
  f.opts["aspects"] = app->add_option("--aspects", f.aspects, "Comma-separated aspects (default: all)")->delimiter(',');
  f.opts["models"] =
      app->add_option("--models", f.models, "Comma-separated models: SVM,RoBERTa,BERT,XLNet,DistilBERT")
          ->delimiter(',');
  f.opts["k"] = app->add_option("--k", f.k, "Number of folds");
  f.opts["seed"] = app->add_option("--seed", f.seed, "Random seed");
  f.opts["out"] = app->add_option("--out", f.out, "Output directory");
  f.opts["jobs"] = app->add_option("--jobs", f.jobs, "Parallel fold workers");
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(path.string() + " is not valid JSON: " + e.what());
  }
}

ExperimentConfig experiment_from_flags(const ExperimentFlags& f) {
  ExperimentConfig c;
  if (f.opts.at("config")->count()) c = parse_experiment_config(read_json_file(f.config_path));
  if (f.opts.at("dataset")->count()) c.dataset = f.dataset;
  if (f.opts.at("format")->count()) c.format = parse_dataset_format(f.format);
  if (f.opts.at("aspects")->count()) c.aspects = parse_aspect_list(f.aspects);
  if (f.opts.at("models")->count()) {
    std::vector<std::string> names;
    for (const auto& m : f.models) {
      if (!m.empty()) names.push_back(m);
    }
    c.models = parse_model_list(names);
    c.models_given = true;
  }
  if (f.opts.at("k")->count()) c.k = f.k;
  if (f.opts.at("seed")->count()) c.seed = f.seed;
  if (f.opts.at("out")->count()) c.out = f.out;
  if (f.opts.at("jobs")->count()) c.jobs = f.jobs;
  return c;
}

void require_dataset(const ExperimentConfig& c) {
  if (c.dataset.empty()) throw UsageError("no dataset given (--dataset or the config's \"dataset\" key)");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw LoadError("cannot write " + path.string());
}

std::string pair_name(Aspect a, ModelKind m) {
  return std::string(aspect_name(a)) + "-" + std::string(model_kind_name(m));
}

nlohmann::json run_manifest(const std::string& command, const ResolvedExperiment& rx) {
  nlohmann::json j;
  j["command"] = command;
  j["code_version"] = kCodeVersion;
  j["dataset"] = {{"path", rx.config.dataset},
                  {"format", dataset_format_name(rx.format)},
                  {"sha256", sha256_file(rx.config.dataset)}};
  j["seed"] = rx.config.seed;
  j["config_hash"] = rx.hash();
  j["resolved_config"] = rx.to_json();
  return j;
}

// Loaded encoder checkpoints, one per model kind; failures are remembered.
class EncoderPool {
 public:
  explicit EncoderPool(const ResolvedExperiment& rx) : rx_(rx) {}

  std::shared_ptr<const Encoder> get(ModelKind m, const EncoderSpec& spec) {
    const auto hit = loaded_.find(m);
    if (hit != loaded_.end()) return hit->second;
    const auto failed = errors_.find(m);
    if (failed != errors_.end()) throw LoadError(failed->second);
    const auto path = rx_.config.encoders.find(m);
    try {
      auto enc = std::make_shared<const Encoder>(
          load_encoder(spec, path == rx_.config.encoders.end() ? std::string() : path->second));
      loaded_[m] = enc;
      return enc;
    } catch (const Error& e) {
      errors_[m] = e.what();
      throw;
    }
  }

 private:
  const ResolvedExperiment& rx_;
  std::map<ModelKind, std::shared_ptr<const Encoder>> loaded_;
  std::map<ModelKind, std::string> errors_;
};

int cmd_stats(const std::string& dataset, const std::string& format, const std::string& as, std::ostream& out) {
  const DatasetFormat f = format.empty() ? infer_dataset_format(dataset) : parse_dataset_format(format);
  const Dataset ds = load_dataset(dataset, f);
  const AspectDistribution dist = dataset_stats(ds);
  if (as == "csv") {
    out << stats_to_csv(dist);
  } else if (as == "json") {
    out << stats_to_json(dist).dump(2) << '\n';
  } else if (as == "text") {
    out << stats_to_text(dist);
  } else {
    throw UsageError("unknown stats output '" + as + "' (expected text, csv or json)");
  }
  return kExitOk;
}

int cmd_config(const ExperimentFlags& flags, std::ostream& out) {
  const ResolvedExperiment rx = resolve_experiment(experiment_from_flags(flags));
  out << rx.canonical() << '\n';
  return kExitOk;
}

int cmd_train(const ExperimentFlags& flags, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = experiment_from_flags(flags);
  require_dataset(cfg);
  const ResolvedExperiment rx = resolve_experiment(cfg);
  const Dataset ds = load_dataset(rx.config.dataset, rx.format);
  const fs::path root = rx.config.out;
  fs::create_directories(root / "models");
  nlohmann::json manifest = run_manifest("train", rx);
  manifest["pairs"] = nlohmann::json::array();
  EncoderPool pool(rx);
  int failed = 0;
  for (Aspect a : rx.config.aspects) {
    for (ModelKind m : rx.config.models) {
      const std::string name = pair_name(a, m);
      const fs::path dir = root / "models" / name;
      nlohmann::json entry = {{"aspect", aspect_name(a)}, {"model", model_kind_name(m)}, {"path", dir.string()}};
      try {
        const BinaryView view = binarize(ds, a);
        if (m == ModelKind::kSVM) {
          std::vector<CleanSentence> sentences;
          for (const auto& s : ds.items) sentences.push_back(s.sentence);
          SvmHyper hyper = rx.config.svm;
          hyper.seed = mix_seed(rx.config.seed, aspect_index(a));
          const SvmBinaryClassifier svm = train_svm(view, fit_vocabulary(sentences, rx.config.vocab), hyper);
          fs::create_directories(dir);
          save_svm(svm, dir / "svm.json");
          entry["seed"] = hyper.seed;
        } else {
          const TrainConfig& tc = rx.train.at({a, m});
          const auto base = pool.get(m, tc.encoder);
          const TrainedAspectModel model =
              fine_tune(view, tc, *base, rx.config.head, {}, [&](int epoch, double loss) {
                err << name << " epoch " << epoch + 1 << "/" << tc.epochs << " loss=" << loss << '\n';
              });
          save_trained_model(model, dir);
          entry["seed"] = tc.seed;
          entry["training_log"] = model.training_log;
          entry["config"] = train_config_to_json(tc);
        }
        entry["status"] = "ok";
        err << name << ": trained\n";
      } catch (const Error& e) {
        ++failed;
        entry["status"] = "failed";
        entry["error"] = e.what();
        err << name << ": failed: " << e.what() << '\n';
      }
      manifest["pairs"].push_back(std::move(entry));
    }
  }
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  out << "trained " << manifest["pairs"].size() - static_cast<std::size_t>(failed) << " of "
      << manifest["pairs"].size() << " models into " << (root / "models").string() << '\n';
  return failed == 0 ? kExitOk : kExitFailure;
}

int cmd_evaluate(const ExperimentFlags& flags, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = experiment_from_flags(flags);
  require_dataset(cfg);
  const ResolvedExperiment rx = resolve_experiment(cfg);
  const Dataset ds = load_dataset(rx.config.dataset, rx.format);
  EncoderPool pool(rx);
  std::vector<AspectResult> results, baseline;
  std::map<std::pair<Aspect, std::string>, std::string> failures;
  CrossValidationOptions opt;
  opt.k = rx.config.k;
  opt.seed = rx.config.seed;
  opt.jobs = rx.config.jobs;
  opt.log = [&err](const std::string& line) { err << line << '\n'; };
  for (Aspect a : rx.config.aspects) {
    for (ModelKind m : rx.config.models) {
      try {
        if (m == ModelKind::kSVM) {
          baseline.push_back(cross_validate(ds, a, svm_trainer(rx.config.vocab, rx.config.svm), opt));
        } else {
          const TrainConfig& tc = rx.train.at({a, m});
          results.push_back(cross_validate(ds, a, transformer_trainer(tc, pool.get(m, tc.encoder), rx.config.head), opt));
        }
      } catch (const Error& e) {
        failures[{a, std::string(model_kind_name(m))}] = e.what();
        err << pair_name(a, m) << ": failed: " << e.what() << '\n';
      }
    }
  }
  if (results.empty() && baseline.empty()) {
    err << "error: every (aspect, model) pair failed; no report written\n";
    return kExitFailure;
  }
  ComparisonReport report = compare(results, baseline, failures);
  report.provenance = run_manifest("evaluate", rx);
  const fs::path root = rx.config.out;
  write_file(root / "report.json", render_report(report, ReportFormat::kJson));
  write_file(root / "report.csv", render_report(report, ReportFormat::kCsv));
  const std::string md = render_report(report, ReportFormat::kMarkdown);
  write_file(root / "report.md", md);
  write_file(root / "manifest.json", report.provenance.dump(2) + "\n");
  out << md;
  return failures.empty() ? kExitOk : kExitFailure;
}

std::vector<fs::path> find_model_dirs(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::exists(root / "manifest.json") && fs::exists(root / "head.safetensors")) return {root};
  for (const fs::path& base : {root, root / "models"}) {
    if (!fs::is_directory(base)) continue;
    for (const auto& entry : fs::directory_iterator(base)) {
      if (entry.is_directory() && fs::exists(entry.path() / "manifest.json") &&
          fs::exists(entry.path() / "head.safetensors")) {
        out.push_back(entry.path());
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

CleanSentence clean_input(const std::string& raw) {
  RawThreadItem item;
  item.body = raw;
  std::string joined;
  for (const auto& s : preprocess(item)) {
    if (!joined.empty()) joined.push_back(' ');
    joined += s.text;
  }
  return make_clean_sentence(joined);
}

int cmd_predict(const std::string& model_dir, const std::vector<std::string>& texts, const std::string& input,
                const std::vector<std::string>& aspect_filter, const std::vector<std::string>& model_filter,
                std::ostream& out) {
  const auto aspects = parse_aspect_list(aspect_filter);
  std::vector<std::string> model_names;
  for (ModelKind m : parse_model_list(model_filter)) model_names.emplace_back(model_kind_name(m));
  if (!fs::is_directory(model_dir)) throw LoadError("model directory not found: " + model_dir);

  std::map<Aspect, TrainedAspectModel> models;
  for (const auto& dir : find_model_dirs(model_dir)) {
    TrainedAspectModel m = load_trained_model(dir);
    const Aspect a = m.config.aspect;
    const std::string family(family_name(m.spec.family));
    if (!aspects.empty() && std::find(aspects.begin(), aspects.end(), a) == aspects.end()) continue;
    if (!model_names.empty() && std::find(model_names.begin(), model_names.end(), family) == model_names.end()) {
      continue;
    }
    if (models.count(a)) {
      throw UsageError("more than one model for " + std::string(aspect_name(a)) + " under " + model_dir +
                       "; choose one with --models");
    }
    models.emplace(a, std::move(m));
  }
  if (models.empty()) throw UsageError("no trained aspect models under " + model_dir);

  std::vector<std::string> inputs = texts;
  if (!input.empty()) {
    std::ifstream in(input, std::ios::binary);
    if (!in) throw LoadError("cannot read input file " + input);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) inputs.push_back(line);
    }
  }
  if (inputs.empty()) throw UsageError("nothing to predict: give --text or --input");

  for (const auto& raw : inputs) {
    const CleanSentence s = clean_input(raw);
    const Detection d = detect_aspects(models, s);
    nlohmann::ordered_json line;
    line["input"] = raw;
    line["sentence"] = s.text;
    line["aspects"] = nlohmann::ordered_json::array();
    for (Aspect a : d.aspects.to_vector()) line["aspects"].push_back(aspect_name(a));
    line["probabilities"] = nlohmann::ordered_json::object();
    for (const auto& [a, p] : d.probabilities) {
      line["probabilities"][std::string(aspect_name(a))] = {{"negative", p.p_negative}, {"positive", p.p_positive}};
    }
    out << line.dump() << '\n';
  }
  return kExitOk;
}

int cmd_report(const std::string& input, const std::string& format, const std::string& out_path, std::ostream& out) {
  const ReportFormat f = parse_report_format(format);
  std::ifstream in(input, std::ios::binary);
  if (!in) throw LoadError("cannot read report " + input);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(input + " is not valid JSON: " + e.what());
  }
  const std::string text = render_report(report_from_json(j), f);
  if (out_path.empty()) {
    out << text;
  } else {
    write_file(out_path, text);
  }
  return kExitOk;
}

struct InitEncoderFlags {
  std::string model;
  std::string dataset;
  std::string format;
  std::string out;
  int layers = 2;
  int heads = 2;
  int hidden = 32;
  int intermediate = 64;
  std::size_t vocab = 4000;
  std::uint64_t seed = 0;
};

int cmd_init_encoder(const InitEncoderFlags& f, std::ostream& out) {
  const auto m = parse_model_kind(f.model);
  if (!m || !model_family(*m)) throw UsageError("init-encoder needs a transformer model name, got '" + f.model + "'");
  const EncoderFamily family = *model_family(*m);
  if (f.layers < 1 || f.heads < 1 || f.hidden < 1 || f.hidden % f.heads != 0 || f.intermediate < 1) {
    throw UsageError("init-encoder: layers, heads, hidden and intermediate must be positive, heads dividing hidden");
  }
  const DatasetFormat fmt = f.format.empty() ? infer_dataset_format(f.dataset) : parse_dataset_format(f.format);
  const Dataset ds = load_dataset(f.dataset, fmt);
  std::vector<std::string> texts;
  for (const auto& item : ds.items) texts.push_back(item.sentence.text);
  const bool lowercase = family != EncoderFamily::kRoBERTa && family != EncoderFamily::kXLNet;
  auto tokenizer = std::make_shared<const WordPieceTokenizer>(build_wordpiece_tokenizer(texts, f.vocab, lowercase));

  EncoderSpec spec{family,
                   "random-" + std::string(family_name(family)) + "-" + std::to_string(f.layers) + "x" +
                       std::to_string(f.hidden),
                   f.layers, f.heads, f.hidden, 0};
  EncoderArchitecture arch = default_architecture(spec, *tokenizer);
  arch.intermediate = f.intermediate;
  Encoder probe = Encoder::random(spec, arch, tokenizer, f.seed);
  spec.parameter_count = probe.parameter_count();
  const Encoder enc = Encoder::random(spec, arch, tokenizer, f.seed);
  enc.save(f.out);
  out << "wrote " << spec.checkpoint_name << " (" << spec.parameter_count << " parameters) to " << f.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Per-aspect detection of API aspects in developer-forum sentences", "aspectminer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kCodeVersion));

  std::string stats_dataset, stats_format, stats_as = "text";
  auto* stats = app.add_subcommand("stats", "Aspect distribution of a labelled dataset");
  stats->add_option("dataset,--dataset", stats_dataset, "Dataset file");
  stats->add_option("--format", stats_format, "Dataset format: opiner-csv or jsonl");
  stats->add_option("--as", stats_as, "Output: text, csv or json");

  ExperimentFlags train_flags, eval_flags, config_flags;
  auto* train = app.add_subcommand("train", "Train one model per (aspect, model) pair on the full dataset");
  add_experiment_flags(train, train_flags);
  auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation and comparison report");
  add_experiment_flags(evaluate, eval_flags);
  auto* config = app.add_subcommand("config", "Print the fully resolved experiment config");
  add_experiment_flags(config, config_flags);

  std::string model_dir, input_file;
  std::vector<std::string> texts, predict_aspects, predict_models;
  auto* predict = app.add_subcommand("predict", "Detect aspects in raw sentences (JSON lines on stdout)");
  predict->add_option("--model-dir", model_dir, "Directory holding trained aspect models")->required();
  predict->add_option("--text", texts, "Sentence to classify (repeatable)");
  predict->add_option("--input", input_file, "File with one raw sentence per line");
  predict->add_option("--aspects", predict_aspects, "Only these aspects")->delimiter(',');
  predict->add_option("--models", predict_models, "Only models of these families")->delimiter(',');

  std::string report_input, report_format = "markdown", report_out;
  auto* report = app.add_subcommand("report", "Re-render a JSON report");
  report->add_option("input", report_input, "report.json")->required();
  report->add_option("--format", report_format, "markdown, csv or json");
  report->add_option("--out", report_out, "Write here instead of stdout");

  InitEncoderFlags init;
  auto* init_cmd = app.add_subcommand("init-encoder", "Write a small randomly initialised encoder checkpoint");
  init_cmd->add_option("--model", init.model, "Encoder family")->required();
  init_cmd->add_option("--dataset", init.dataset, "Dataset the vocabulary is built from")->required();
  init_cmd->add_option("--format", init.format, "Dataset format");
  init_cmd->add_option("--out", init.out, "Checkpoint directory")->required();
  init_cmd->add_option("--layers", init.layers, "Encoder layers");
  init_cmd->add_option("--heads", init.heads, "Attention heads");
  init_cmd->add_option("--hidden", init.hidden, "Hidden width");
  init_cmd->add_option("--intermediate", init.intermediate, "Feed-forward width");
  init_cmd->add_option("--vocab", init.vocab, "Maximum vocabulary size");
  init_cmd->add_option("--seed", init.seed, "Initialisation seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kCodeVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    for (auto* sub : app.get_subcommands()) err << sub->help();
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (stats->parsed()) {
      if (stats_dataset.empty()) throw UsageError("stats needs a dataset path");
      return cmd_stats(stats_dataset, stats_format, stats_as, out);
    }
    if (config->parsed()) return cmd_config(config_flags, out);
    if (train->parsed()) return cmd_train(train_flags, out, err);
    if (evaluate->parsed()) return cmd_evaluate(eval_flags, out, err);
    if (predict->parsed()) return cmd_predict(model_dir, texts, input_file, predict_aspects, predict_models, out);
    if (report->parsed()) return cmd_report(report_input, report_format, report_out, out);
    if (init_cmd->parsed()) return cmd_init_encoder(init, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigurationError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace aspectminer
