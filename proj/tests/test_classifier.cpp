#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aspectminer/classifier.hpp"
#include "aspectminer/errors.hpp"
#include "fixtures.hpp"

using namespace aspectminer;
using namespace aspectminer::testing;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aspectminer_classifier_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// 200 sentences; positives carry "zzmarker".
BinaryView separable_view(std::uint64_t seed, std::size_t n = 200) {
  Rng rng(seed);
  BinaryView view;
  view.target = Aspect::kPerformance;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSentence s;
    std::string text = random_words(rng, 4 + uniform_index(rng, 8));
    if (i % 2 == 0) {
      text += " zzmarker";
      s.aspects.insert(Aspect::kPerformance);
      s.sentence = make_clean_sentence(text);
      view.positives.push_back(s);
    } else {
      s.aspects.insert(Aspect::kOthers);
      s.sentence = make_clean_sentence(text);
      view.negatives.push_back(s);
    }
  }
  return view;
}

TrainConfig toy_config(int epochs, std::uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.aspect = Aspect::kPerformance;
  cfg.encoder = tiny_spec();
  cfg.batch_size = 16;
  cfg.epochs = epochs;
  cfg.learning_rate = 1e-2;
  cfg.seed = seed;
  return cfg;
}

HeadConfig toy_head() {
  HeadConfig h;
  h.input_units = 8;
  h.hidden_units = 16;
  return h;
}

double loss_of(const Head& head, const std::vector<double>& v, int label) {
  HeadCache c;
  head.forward(v, HeadMode::kInfer, nullptr, &c);
  Gradients g = head.zero_gradients();
  std::vector<double> d;
  return head.backward(c, label, 1.0, g, d);
}

}  // namespace

TEST_CASE("head build: parameter count, glorot bound, seeded init") {
  const Head head = Head::build(HeadConfig{}, 42);
  CHECK(head.parameter_count() == 98690u);
  const double bound = std::sqrt(6.0 / (768.0 + 128.0));
  CHECK(bound == doctest::Approx(0.0818).epsilon(1e-3));
  for (double w : head.parameters()[0].value) CHECK_LE(std::abs(w), bound);
  const double bound2 = std::sqrt(6.0 / (128.0 + 2.0));
  for (double w : head.parameters()[2].value) CHECK_LE(std::abs(w), bound2);
  for (double b : head.parameters()[1].value) CHECK(b == 0.0);

  const Head again = Head::build(HeadConfig{}, 42);
  const Head other = Head::build(HeadConfig{}, 43);
  CHECK(again.parameters()[0].value == head.parameters()[0].value);
  CHECK(other.parameters()[0].value != head.parameters()[0].value);

  HeadConfig bad;
  bad.output_units = 3;
  CHECK_THROWS_AS(Head::build(bad, 1), ConfigurationError);
  bad = HeadConfig{};
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(Head::build(bad, 1), ConfigurationError);
}

TEST_CASE("head forward matches a hand computation on a width-4 toy") {
  HeadConfig cfg;
  cfg.input_units = 4;
  cfg.hidden_units = 2;
  std::vector<Parameter> params = {
      {"dense1.weight", {2, 4}, {1, 0, -1, 0.5, 0, 2, 0, -1}},
      {"dense1.bias", {2}, {0.1, -0.2}},
      {"dense2.weight", {2, 2}, {0.3, -0.4, -0.5, 0.6}},
      {"dense2.bias", {2}, {0.05, -0.05}},
  };
  const Head head(cfg, params);
  const std::vector<double> v = {0.5, -1.0, 2.0, 1.0};
  // h0 = relu(0.5 - 2 + 0.5 + 0.1) = 0; h1 = relu(-2 - 1 - 0.2) = 0 -> logits = bias.
  // Use a second input to light up both units.
  const std::vector<double> u = {2.0, 1.0, 0.5, 0.0};
  // h0 = 2 - 0.5 + 0.1 = 1.6; h1 = 2 - 0.2 = 1.8
  const double l0 = 0.3 * 1.6 - 0.4 * 1.8 + 0.05;
  const double l1 = -0.5 * 1.6 + 0.6 * 1.8 - 0.05;
  const double p1 = std::exp(l1) / (std::exp(l0) + std::exp(l1));
  const Prediction pu = head.forward(u, HeadMode::kInfer);
  CHECK(pu.p_positive == doctest::Approx(p1).epsilon(1e-12));
  CHECK(std::abs(pu.p_positive - p1) < 1e-6);
  CHECK(pu.positive == (p1 > 0.5));

  const double q1 = std::exp(-0.05) / (std::exp(0.05) + std::exp(-0.05));
  const Prediction pv = head.forward(v, HeadMode::kInfer);
  CHECK(std::abs(pv.p_positive - q1) < 1e-6);
  CHECK_FALSE(pv.positive);

  CHECK_THROWS_AS(head.forward(std::vector<double>{1, 2, 3}, HeadMode::kInfer), UsageError);
  CHECK_THROWS_AS(head.forward(std::vector<double>{1, NAN, 3, 4}, HeadMode::kInfer), NumericError);
  CHECK_THROWS_AS(head.forward(std::vector<double>{1, INFINITY, 3, 4}, HeadMode::kInfer), NumericError);
}

TEST_CASE("softmax prediction: equal logits are a negative 0.5/0.5 tie") {
  const Prediction p = softmax_prediction(1.25, 1.25);
  CHECK(p.p_negative == 0.5);
  CHECK(p.p_positive == 0.5);
  CHECK_FALSE(p.positive);
  const Prediction big = softmax_prediction(-800.0, 800.0);
  CHECK(big.p_positive == 1.0);
  CHECK(big.p_negative == 0.0);
  CHECK(big.positive);
}

TEST_CASE("softmax validity over random logits") {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const double scale = std::pow(10.0, uniform_real(rng, -3, 3));
    const double a = uniform_real(rng, -1, 1) * scale;
    const double b = uniform_real(rng, -1, 1) * scale;
    const Prediction p = softmax_prediction(a, b);
    REQUIRE(std::isfinite(p.p_negative));
    REQUIRE(std::isfinite(p.p_positive));
    CHECK(p.p_negative >= 0.0);
    CHECK(p.p_positive >= 0.0);
    CHECK(std::abs(p.p_negative + p.p_positive - 1.0) <= 1e-6);
    CHECK(p.positive == (p.p_positive > 0.5));
  }
}

TEST_CASE("infer mode is deterministic; train mode applies dropout") {
  const Head head = Head::build(toy_head(), 9);
  Rng rng(1);
  std::vector<double> v(8);
  for (double& x : v) x = uniform_real(rng, -1, 1);
  CHECK(head.forward(v, HeadMode::kInfer) == head.forward(v, HeadMode::kInfer));
  Rng d(2);
  HeadCache c;
  head.forward(v, HeadMode::kTrain, &d, &c);
  REQUIRE(c.drop_mask.size() == 16);
  int dropped = 0;
  for (double m : c.drop_mask) {
    CHECK((m == 0.0 || std::abs(m - 1.0 / 0.75) < 1e-15));
    dropped += m == 0.0;
  }
  CHECK(dropped > 0);
}

TEST_CASE("head gradients match central finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Head head = Head::build(toy_head(), 100 + trial);
    std::vector<double> v(8);
    for (double& x : v) x = uniform_real(rng, -2, 2);
    const int label = static_cast<int>(uniform_index(rng, 2));
    HeadCache c;
    head.forward(v, HeadMode::kInfer, nullptr, &c);
    Gradients g = head.zero_gradients();
    std::vector<double> dv;
    head.backward(c, label, 1.0, g, dv);
    const double h = 1e-6;
    for (std::size_t p = 0; p < 4; ++p) {
      auto& value = head.parameters()[p].value;
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double orig = value[k];
        value[k] = orig + h;
        const double up = loss_of(head, v, label);
        value[k] = orig - h;
        const double down = loss_of(head, v, label);
        value[k] = orig;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(g[p][k]), 1e-7});
        CHECK(std::abs(numeric - g[p][k]) / denom < 1e-4);
      }
    }
    for (std::size_t k = 0; k < v.size(); ++k) {
      auto w = v;
      w[k] += h;
      const double up = loss_of(head, w, label);
      w[k] -= 2 * h;
      const double down = loss_of(head, w, label);
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(dv[k]), 1e-7});
      CHECK(std::abs(numeric - dv[k]) / denom < 1e-4);
    }
  }
}

TEST_CASE("hyperparameter registry") {
  const TrainConfig sec = default_train_config(Aspect::kSecurity);
  CHECK(sec.encoder.family == EncoderFamily::kDistilBERT);
  CHECK(sec.encoder.checkpoint_name == "distilbert-base-uncased");
  CHECK(sec.batch_size == 16);
  CHECK(sec.epochs == 2);
  CHECK(sec.learning_rate == 1e-5);

  const TrainConfig perf = default_train_config(Aspect::kPerformance, 9);
  CHECK(perf.encoder.family == EncoderFamily::kRoBERTa);
  CHECK(perf.batch_size == 32);
  CHECK(perf.epochs == 3);
  CHECK(perf.learning_rate == 1e-5);
  CHECK(perf.seed == 9);

  const RegistryEntry& bug = registry_entry(Aspect::kBug);
  CHECK(bug.family == EncoderFamily::kBERT);
  CHECK(bug.learning_rate == 3e-5);
  CHECK(registry_entry(Aspect::kDocumentation).epochs == 2);
  CHECK(registry_entry(Aspect::kCommunity).learning_rate == 2e-5);
  CHECK(registry_entry(Aspect::kLegal).batch_size == 32);
  CHECK(registry_entry(Aspect::kOthers).fallback);
  int fallbacks = 0;
  for (const auto& e : hyperparameter_registry()) fallbacks += e.fallback;
  CHECK(fallbacks == 1);

  const TrainConfig swapped = train_config_for(Aspect::kSecurity, EncoderFamily::kBERT);
  CHECK(swapped.encoder.checkpoint_name == "bert-base-uncased");
  CHECK(swapped.batch_size == 16);
  CHECK(train_config_from_json(train_config_to_json(sec)) == sec);
  CHECK(head_config_from_json(head_config_to_json(toy_head())) == toy_head());
}

TEST_CASE("fine_tune preconditions and the epochs=0 no-op") {
  BinaryView view = separable_view(1, 20);
  Encoder enc = tiny_encoder();
  const Encoder untouched = enc;

  BinaryView one_class = view;
  one_class.negatives.clear();
  CHECK_THROWS_AS(fine_tune(one_class, toy_config(1), enc, toy_head()), TrainError);
  try {
    fine_tune(one_class, toy_config(1), enc, toy_head());
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("Performance") != std::string::npos);
  }

  const TrainedAspectModel m = fine_tune(view, toy_config(0), enc, toy_head());
  CHECK(m.training_log.empty());
  CHECK(m.encoder->weights_hash() == untouched.weights_hash());
  const Head fresh = Head::build(m.head_config, mix_seed(5, 1));
  for (std::size_t p = 0; p < 4; ++p) CHECK(m.head.parameters()[p].value == fresh.parameters()[p].value);
}

TEST_CASE("a single step changes every encoder layer") {
  const BinaryView view = separable_view(2, 8);
  TrainConfig cfg = toy_config(1);
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-4;
  const Encoder before = tiny_encoder();
  const TrainedAspectModel m = fine_tune(view, cfg, before, toy_head());
  const auto layers = before.parameter_layers();
  std::map<int, bool> changed;
  for (std::size_t p = 0; p < layers.size(); ++p) {
    changed.emplace(layers[p], false);
    if (before.parameters()[p].value != m.encoder->parameters()[p].value) changed[layers[p]] = true;
  }
  CHECK(changed.size() == 3);  // embeddings + 2 layers
  for (const auto& [layer, did] : changed) {
    INFO("layer " << layer);
    CHECK(did);
  }
}

TEST_CASE("fine_tune is reproducible and fits a separable toy") {
  const BinaryView view = separable_view(3);
  std::vector<double> seen;
  const TrainedAspectModel a =
      fine_tune(view, toy_config(3), tiny_encoder(), toy_head(), {}, [&](int, double loss) { seen.push_back(loss); });
  const TrainedAspectModel b = fine_tune(view, toy_config(3), tiny_encoder(), toy_head());
  REQUIRE(a.training_log.size() == 3);
  CHECK(seen == a.training_log);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(std::isfinite(a.training_log[e]));
    CHECK(std::abs(a.training_log[e] - b.training_log[e]) <= 1e-6);
  }
  CHECK(a.training_log.back() < a.training_log.front());
  for (const auto& p : a.encoder->parameters()) {
    for (double x : p.value) REQUIRE(std::isfinite(x));
  }

  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : view.positives) {
    const Prediction p = predict_aspect(a, s.sentence);
    CHECK(p == predict_aspect(a, s.sentence));
    p.positive ? ++tp : ++fn;
  }
  for (const auto& s : view.negatives) fp += predict_aspect(a, s.sentence).positive;
  const double f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  INFO("tp=" << tp << " fp=" << fp << " fn=" << fn);
  CHECK(f1 >= 0.95);
  CHECK(tp >= 0.95 * view.positives.size());

  const Prediction empty = predict_aspect(a, make_clean_sentence("url_ codesnippet_java1"));
  CHECK(std::abs(empty.p_negative + empty.p_positive - 1.0) <= 1e-6);
}

TEST_CASE("save and load round-trip; tampering is detected") {
  const BinaryView view = separable_view(4, 24);
  const TrainedAspectModel m = fine_tune(view, toy_config(1), tiny_encoder(), toy_head());
  const auto dir = scratch_dir("roundtrip");
  save_trained_model(m, dir);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "head.safetensors"));

  const TrainedAspectModel back = load_trained_model(dir);
  CHECK(back.config == m.config);
  CHECK(back.head_config == m.head_config);
  CHECK(back.training_log == m.training_log);
  CHECK(back.encoder->weights_hash() == m.encoder->weights_hash());
  for (const auto& s : view.positives) CHECK(predict_aspect(back, s.sentence) == predict_aspect(m, s.sentence));

  {
    std::fstream f(dir / "head.safetensors", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  try {
    load_trained_model(dir);
    FAIL("tampered model loaded");
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("Performance") != std::string::npos);
    CHECK(msg.find("head.safetensors") != std::string::npos);
  }
  CHECK_THROWS_AS(load_trained_model(scratch_dir("missing")), LoadError);
  std::filesystem::remove_all(dir);
}

namespace {

// One layer, width 16, all transforms zeroed so each row is the LayerNorm of
// its word embedding. Marker word i spikes dimension i.
std::shared_ptr<const Encoder> marker_encoder(const std::vector<std::string>& markers) {
  const EncoderSpec spec{EncoderFamily::kBERT, "marker-test", 1, 2, 16, 0};
  EncoderArchitecture arch = default_architecture(spec, *tiny_tokenizer());
  arch.intermediate = 16;
  arch.max_positions = 128;
  Encoder enc = Encoder::random(spec, arch, tiny_tokenizer(), 1);
  for (auto& p : enc.parameters()) {
    const bool gamma = p.name.find("LayerNorm.weight") != std::string::npos;
    std::fill(p.value.begin(), p.value.end(), gamma ? 1.0 : 0.0);
  }
  auto& words = enc.parameters()[0];
  REQUIRE(words.name == "embeddings.word_embeddings.weight");
  for (std::size_t i = 0; i < markers.size(); ++i) {
    const auto ids = enc.tokenizer().encode(markers[i]);
    REQUIRE(ids.size() == 1);
    words.value[static_cast<std::size_t>(ids[0]) * 16 + i] = 10.0;
  }
  return std::make_shared<const Encoder>(std::move(enc));
}

TrainedAspectModel marker_model(std::shared_ptr<const Encoder> enc, Aspect aspect, std::size_t dim) {
  HeadConfig cfg;
  cfg.input_units = 16;
  cfg.hidden_units = 1;
  std::vector<double> w1(16, 0.0);
  w1[dim] = 1.0;
  std::vector<Parameter> params = {
      {"dense1.weight", {1, 16}, w1},
      {"dense1.bias", {1}, {0.0}},
      {"dense2.weight", {2, 1}, {0.0, 2.0}},
      {"dense2.bias", {2}, {0.0, -1.0}},
  };
  TrainedAspectModel m;
  m.spec = enc->spec();
  m.encoder = std::move(enc);
  m.head = Head(cfg, params);
  m.head_config = cfg;
  m.config.aspect = aspect;
  m.config.encoder = m.spec;
  return m;
}

}  // namespace

TEST_CASE("detect_aspects with constructed marker models") {
  const std::vector<std::string> markers = {"api",     "fast",   "slow",    "buggy",   "secure",   "license",
                                            "docs",    "thread", "parser",  "windows", "community"};
  const auto enc = marker_encoder(markers);
  std::map<Aspect, TrainedAspectModel> models;
  for (std::size_t i = 0; i < kAspectCount; ++i) models.emplace(kAllAspects[i], marker_model(enc, kAllAspects[i], i));

  const Detection two = detect_aspects(models, make_clean_sentence("the fast parser works fine"));
  CHECK(two.aspects == AspectSet{Aspect::kUsability, Aspect::kLegal});
  CHECK(two.probabilities.size() == kAspectCount);

  const Detection none = detect_aspects(models, make_clean_sentence("it works with java"));
  CHECK(none.aspects.empty());
  CHECK(none.probabilities.size() == kAspectCount);
  for (const auto& [a, p] : none.probabilities) CHECK(std::abs(p.p_negative + p.p_positive - 1.0) <= 1e-6);

  for (std::size_t i = 0; i < kAspectCount; ++i) {
    const Detection one = detect_aspects(models, make_clean_sentence("I use " + markers[i]));
    CHECK(one.aspects == AspectSet{kAllAspects[i]});
  }

  CHECK_THROWS_AS(detect_aspects(std::map<Aspect, TrainedAspectModel>{}, make_clean_sentence("x")), UsageError);
}
