#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "aspectminer/encoder.hpp"
#include "aspectminer/errors.hpp"
#include "aspectminer/safetensors.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace aspectminer;
using namespace aspectminer::testing;
namespace fs = std::filesystem;

namespace {

using Matrix = std::vector<std::vector<double>>;

// Independent forward pass over the n real tokens only, written from the
// textbook definition with nested loops.
Matrix oracle_forward(const Encoder& enc, const std::vector<std::int32_t>& ids) {
  std::map<std::string, const Parameter*> p;
  for (const auto& prm : enc.parameters()) p[prm.name] = &prm;
  const auto& a = enc.architecture();
  const int H = a.hidden;
  const int I = a.intermediate;
  const int nh = a.heads;
  const int dh = H / nh;
  const int n = static_cast<int>(ids.size());
  auto w = [&](const std::string& name) { return p.at(name)->value; };

  auto layer_norm = [&](std::vector<double> x, const std::string& prefix) {
    const auto g = w(prefix + ".weight");
    const auto b = w(prefix + ".bias");
    double mean = 0;
    for (double v : x) mean += v;
    mean /= H;
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= H;
    for (int j = 0; j < H; ++j) x[j] = g[j] * (x[j] - mean) / std::sqrt(var + a.layer_norm_eps) + b[j];
    return x;
  };
  auto linear = [&](const std::vector<double>& x, const std::string& prefix, int out, int in) {
    const auto W = w(prefix + ".weight");
    const auto b = w(prefix + ".bias");
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      y[o] = b[o];
      for (int i = 0; i < in; ++i) y[o] += W[o * in + i] * x[i];
    }
    return y;
  };

  Matrix x(n, std::vector<double>(H));
  for (int t = 0; t < n; ++t) {
    std::vector<double> e(H);
    for (int j = 0; j < H; ++j) {
      e[j] = w("embeddings.word_embeddings.weight")[ids[t] * H + j] +
             w("embeddings.position_embeddings.weight")[(t + a.position_offset) * H + j];
      if (a.type_vocab_size > 0) e[j] += w("embeddings.token_type_embeddings.weight")[j];
    }
    x[t] = layer_norm(e, "embeddings.LayerNorm");
  }
  for (int l = 0; l < a.layers; ++l) {
    const std::string pre = "encoder.layer." + std::to_string(l) + ".";
    Matrix q(n), k(n), v(n);
    for (int t = 0; t < n; ++t) {
      q[t] = linear(x[t], pre + "attention.self.query", H, H);
      k[t] = linear(x[t], pre + "attention.self.key", H, H);
      v[t] = linear(x[t], pre + "attention.self.value", H, H);
    }
    Matrix next(n);
    for (int t = 0; t < n; ++t) {
      std::vector<double> ctx(H, 0.0);
      for (int h = 0; h < nh; ++h) {
        std::vector<double> s(n);
        double mx = -1e300;
        for (int u = 0; u < n; ++u) {
          s[u] = 0;
          for (int d = 0; d < dh; ++d) s[u] += q[t][h * dh + d] * k[u][h * dh + d];
          s[u] /= std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (int u = 0; u < n; ++u) z += std::exp(s[u] - mx);
        for (int u = 0; u < n; ++u) {
          const double pr = std::exp(s[u] - mx) / z;
          for (int d = 0; d < dh; ++d) ctx[h * dh + d] += pr * v[u][h * dh + d];
        }
      }
      auto attn = linear(ctx, pre + "attention.output.dense", H, H);
      for (int j = 0; j < H; ++j) attn[j] += x[t][j];
      const auto h1 = layer_norm(attn, pre + "attention.output.LayerNorm");
      auto f = linear(h1, pre + "intermediate.dense", I, H);
      for (double& fv : f) fv = 0.5 * fv * (1 + std::erf(fv / std::sqrt(2.0)));
      auto g = linear(f, pre + "output.dense", H, I);
      for (int j = 0; j < H; ++j) g[j] += h1[j];
      next[t] = layer_norm(g, pre + "output.LayerNorm");
    }
    x = next;
  }
  return x;
}

TokenSequence make_sequence(const std::vector<std::int32_t>& ids, std::int32_t pad) {
  TokenSequence s;
  s.ids.fill(pad);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    s.ids[i] = ids[i];
    s.mask[i] = 1;
  }
  return s;
}

double weighted_sum(const TokenEmbeddings& e, const std::vector<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * e.matrix[i];
  return s;
}

}  // namespace

TEST_CASE("registry holds the four published encoders") {
  const auto& reg = encoder_registry();
  REQUIRE(reg.size() == 4);
  CHECK(reg[0].family == EncoderFamily::kRoBERTa);
  CHECK(reg[0].checkpoint_name == "distilroberta-base");
  CHECK(reg[0].layers == 6);
  CHECK(reg[0].parameter_count == 82'000'000);
  CHECK(reg[1].checkpoint_name == "bert-base-uncased");
  CHECK(reg[1].layers == 12);
  CHECK(reg[1].parameter_count == 110'000'000);
  CHECK(reg[2].checkpoint_name == "xlnet-base-cased");
  CHECK(reg[2].layers == 12);
  CHECK(reg[2].parameter_count == 110'000'000);
  CHECK(reg[3].checkpoint_name == "distilbert-base-uncased");
  CHECK(reg[3].layers == 6);
  CHECK(reg[3].parameter_count == 66'000'000);
  for (const auto& s : reg) {
    CHECK(s.hidden == 768);
    CHECK(s.heads == 12);
  }
  CHECK(find_registry_spec("distilbert")->checkpoint_name == "distilbert-base-uncased");
  CHECK(find_registry_spec("xlnet-base-cased")->family == EncoderFamily::kXLNet);
  CHECK_FALSE(find_registry_spec("gpt2").has_value());
}

TEST_CASE("tiny encoder matches a straight-line forward pass on a 3-token input") {
  const Encoder enc = tiny_encoder(21);
  const auto& tok = enc.tokenizer();
  const std::vector<std::int32_t> ids = {tok.start_id(), tok.piece_id("fast"), tok.end_id()};
  const TokenEmbeddings out = enc.embed(make_sequence(ids, tok.pad_id()));
  const Matrix expect = oracle_forward(enc, ids);
  REQUIRE(out.width == 8);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(t, j) == doctest::Approx(expect[t][j]).epsilon(1e-5));
  }
}

TEST_CASE("RoBERTa-style position offsets feed the same oracle") {
  const std::vector<std::string> texts = {"fast api"};
  const auto tok = std::make_shared<const WordPieceTokenizer>(build_wordpiece_tokenizer(texts, 100, false));
  EncoderSpec spec{EncoderFamily::kRoBERTa, "tiny-roberta", 1, 2, 8, 0};
  EncoderArchitecture arch = default_architecture(spec, *tok);
  arch.intermediate = 12;
  CHECK(arch.position_offset == tok->pad_id() + 1);
  const Encoder enc = Encoder::random(spec, arch, tok, 4);
  const std::vector<std::int32_t> ids = {tok->start_id(), tok->piece_id("fast"), tok->piece_id("api"), tok->end_id()};
  const TokenEmbeddings out = enc.embed(make_sequence(ids, tok->pad_id()));
  const Matrix expect = oracle_forward(enc, ids);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    for (std::size_t j = 0; j < 8; ++j) CHECK(out.at(t, j) == doctest::Approx(expect[t][j]).epsilon(1e-5));
  }
}

TEST_CASE("embed is deterministic and backend-independent") {
  Encoder enc = tiny_encoder(5);
  const TokenSequence seq = enc.tokenize(std::string_view("the api is fast with java"));
  const TokenEmbeddings a = enc.embed(seq);
  const TokenEmbeddings b = enc.embed(seq);
  CHECK(a.matrix == b.matrix);
  CHECK(a.matrix.size() == kSequenceLength * 8);
  enc.set_kernel_backend(KernelBackend::kReference);
  const TokenEmbeddings c = enc.embed(seq);
  for (std::size_t i = 0; i < a.matrix.size(); ++i) CHECK(c.matrix[i] == doctest::Approx(a.matrix[i]).epsilon(1e-12));
}

TEST_CASE("real-token outputs do not depend on what sits in padded slots") {
  const Encoder enc = tiny_encoder(8);
  TokenSequence seq = enc.tokenize(std::string_view("secure library"));
  const TokenEmbeddings a = enc.embed(seq);
  const std::size_t n = seq.length();
  for (std::size_t i = n; i < kSequenceLength; ++i) seq.ids[i] = enc.tokenizer().piece_id("java");
  const TokenEmbeddings b = enc.embed(seq);
  for (std::size_t i = 0; i < n * 8; ++i) CHECK(a.matrix[i] == b.matrix[i]);
}

TEST_CASE("max_pool examples and errors") {
  TokenEmbeddings e;
  e.width = 3;
  e.matrix.assign(kSequenceLength * 3, 100.0);
  const double rows[2][3] = {{1, 5, 2}, {3, 0, 4}};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) e.matrix[r * 3 + c] = rows[r][c];
  }
  e.mask[0] = e.mask[1] = 1;
  const PooledVector p = max_pool(e);
  CHECK(p.values == std::vector<double>{3, 5, 4});
  CHECK(p.argmax == std::vector<std::uint32_t>{1, 0, 1});

  e.mask[1] = 0;
  CHECK(max_pool(e).values == std::vector<double>{1, 5, 2});

  e.mask.fill(0);
  CHECK_THROWS_AS(max_pool(e), PoolingError);
}

TEST_CASE("property: max_pool equals the brute-force loop, ignores padding, is monotone") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    TokenEmbeddings e;
    e.width = 768;
    e.matrix.resize(kSequenceLength * e.width);
    for (double& v : e.matrix) v = uniform_real(rng, -3, 3);
    const std::size_t n = 1 + uniform_index(rng, kSequenceLength);
    for (std::size_t i = 0; i < n; ++i) e.mask[i] = 1;
    const PooledVector p = max_pool(e);
    for (std::size_t j = 0; j < e.width; ++j) {
      double best = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) best = std::max(best, e.at(i, j));
      CHECK(p.values[j] == best);
    }
    TokenEmbeddings padded = e;
    for (std::size_t i = n; i < kSequenceLength; ++i) {
      for (std::size_t j = 0; j < e.width; ++j) padded.matrix[i * e.width + j] = 1e9;
    }
    CHECK(max_pool(padded).values == p.values);

    TokenEmbeddings bumped = e;
    const std::size_t row = uniform_index(rng, n);
    const std::size_t col = uniform_index(rng, e.width);
    bumped.matrix[row * e.width + col] += uniform_real(rng, 0, 2);
    CHECK(max_pool(bumped).values[col] >= p.values[col]);
  }
}

TEST_CASE("encoder backward matches central finite differences") {
  for (bool dropout : {false, true}) {
    CAPTURE(dropout);
    Encoder enc = tiny_encoder(31, dropout ? 0.2 : 0.0);
    const TokenSequence seq = enc.tokenize(std::string_view("the parser crashes often under load"));
    Rng rr(2);
    std::vector<double> r(kSequenceLength * 8);
    for (double& v : r) v = uniform_real(rr, -1, 1);

    auto loss = [&](Encoder& e) {
      Rng drop(99);
      EncoderCache cache;
      return weighted_sum(e.forward(seq, &drop, cache), r);
    };
    Rng drop(99);
    EncoderCache cache;
    enc.forward(seq, &drop, cache);
    Gradients grads = enc.zero_gradients();
    enc.backward(cache, r, grads);

    Rng pick(5);
    const double h = 1e-5;
    for (std::size_t pi = 0; pi < enc.parameters().size(); ++pi) {
      for (int s = 0; s < 3; ++s) {
        std::size_t idx;
        if (pi == 0) {
          idx = static_cast<std::size_t>(seq.ids[uniform_index(pick, seq.length())]) * 8 + uniform_index(pick, 8);
        } else {
          idx = uniform_index(pick, enc.parameters()[pi].value.size());
        }
        double& w = enc.parameters()[pi].value[idx];
        const double orig = w;
        w = orig + h;
        const double lp = loss(enc);
        w = orig - h;
        const double lm = loss(enc);
        w = orig;
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = grads[pi][idx];
        const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        CAPTURE(enc.parameters()[pi].name);
        CHECK(rel < 1e-4);
      }
    }
  }
}

TEST_CASE("save/load round-trips the tiny encoder identically") {
  const auto dir = fs::temp_directory_path() / "aspectminer_enc_rt";
  fs::remove_all(dir);
  const Encoder enc = tiny_encoder(3);
  enc.save(dir);
  const Encoder back = load_encoder(tiny_spec(), dir.string());
  CHECK(back.weights_hash() == enc.weights_hash());
  CHECK(back.architecture().intermediate == 16);
  const TokenSequence seq = back.tokenize(std::string_view("docs are great"));
  CHECK(back.embed(seq).matrix == enc.embed(seq).matrix);

  EncoderSpec wrong = tiny_spec();
  wrong.layers = 6;
  CHECK_THROWS_AS(load_encoder(wrong, dir.string()), ConfigurationError);
  EncoderSpec other_family = tiny_spec();
  other_family.family = EncoderFamily::kRoBERTa;
  CHECK_THROWS_AS(load_encoder(other_family, dir.string()), ConfigurationError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoints resolve through ASPECTMINER_MODEL_CACHE, with a hint when missing") {
  const auto root = fs::temp_directory_path() / "aspectminer_cache_test";
  fs::remove_all(root);
  const Encoder enc = tiny_encoder(4);
  enc.save(root / "tiny-test");
  ::setenv("ASPECTMINER_MODEL_CACHE", root.c_str(), 1);
  CHECK(model_cache_root() == root);
  CHECK(load_encoder(tiny_spec()).weights_hash() == enc.weights_hash());
  try {
    load_encoder(registry_spec(EncoderFamily::kBERT));
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("ASPECTMINER_MODEL_CACHE") != std::string::npos);
  }
  ::unsetenv("ASPECTMINER_MODEL_CACHE");
  fs::remove_all(root);
}

TEST_CASE("HF DistilBERT tensor names and config keys are accepted") {
  const auto dir = fs::temp_directory_path() / "aspectminer_hf_distil";
  fs::remove_all(dir);
  EncoderSpec spec{EncoderFamily::kDistilBERT, "tiny-distil", 1, 2, 8, 0};
  EncoderArchitecture arch = default_architecture(spec, *tiny_tokenizer());
  arch.intermediate = 16;
  const Encoder enc = Encoder::random(spec, arch, tiny_tokenizer(), 12);

  TensorMap hf;
  const std::map<std::string, std::string> rename = {
      {"attention.self.query.", "attention.q_lin."},     {"attention.self.key.", "attention.k_lin."},
      {"attention.self.value.", "attention.v_lin."},     {"attention.output.dense.", "attention.out_lin."},
      {"attention.output.LayerNorm.", "sa_layer_norm."}, {"intermediate.dense.", "ffn.lin1."},
      {"output.dense.", "ffn.lin2."},                    {"output.LayerNorm.", "output_layer_norm."}};
  for (const auto& p : enc.parameters()) {
    std::string name = p.name;
    if (name.rfind("encoder.layer.0.", 0) == 0) {
      std::string rest = name.substr(16);
      for (const auto& [from, to] : rename) {
        if (rest.rfind(from, 0) == 0) {
          rest = to + rest.substr(from.size());
          break;
        }
      }
      name = "transformer.layer.0." + rest;
    }
    hf.emplace("distilbert." + name, Tensor{p.shape, p.value});
  }
  hf.emplace("vocab_projector.bias", Tensor{{3}, {0, 0, 0}});
  write_safetensors(dir / "model.safetensors", hf);
  tiny_tokenizer()->save(dir);
  std::ofstream(dir / "config.json") << nlohmann::json{{"model_type", "distilbert"}, {"n_layers", 1},
                                                       {"n_heads", 2},         {"dim", 8},
                                                       {"hidden_dim", 16},     {"vocab_size", arch.vocab_size},
                                                       {"max_position_embeddings", arch.max_positions}}
                                            .dump();
  const Encoder back = load_encoder(spec, dir.string());
  const TokenSequence seq = back.tokenize(std::string_view("thread safe"));
  CHECK(back.embed(seq).matrix == enc.embed(seq).matrix);
  fs::remove_all(dir);
}

TEST_CASE("embedding dumps store n=100, d, then float32 rows") {
  const Encoder enc = tiny_encoder(2);
  const TokenEmbeddings e = enc.embed(enc.tokenize(std::string_view("memory")));
  const auto path = fs::temp_directory_path() / "aspectminer_dump.bin";
  write_embedding_dump(path, e);
  CHECK(fs::file_size(path) == 8 + kSequenceLength * 8 * 4);
  const TokenEmbeddings back = read_embedding_dump(path);
  CHECK(back.width == 8);
  for (std::size_t i = 0; i < e.matrix.size(); ++i) CHECK(back.matrix[i] == static_cast<float>(e.matrix[i]));
  fs::remove(path);
}
