#include "aspectminer/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <cctype>
#include <functional>
#include <map>
#include <numeric>
#include <fstream>
#include <sstream>

#include "aspectminer/errors.hpp"
#include "aspectminer/hash.hpp"
#include "aspectminer/kernels.hpp"
#include "aspectminer/safetensors.hpp"
#include "json.hpp"

namespace aspectminer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- registry

std::string_view family_name(EncoderFamily f) {
  switch (f) {
    case EncoderFamily::kRoBERTa:
      return "RoBERTa";
    case EncoderFamily::kBERT:
      return "BERT";
    case EncoderFamily::kXLNet:
      return "XLNet";
    case EncoderFamily::kDistilBERT:
      return "DistilBERT";
  }
  return "?";
}

std::optional<EncoderFamily> parse_family(std::string_view name) {
  std::string key;
  for (char c : name) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "roberta") return EncoderFamily::kRoBERTa;
  if (key == "bert") return EncoderFamily::kBERT;
  if (key == "xlnet") return EncoderFamily::kXLNet;
  if (key == "distilbert") return EncoderFamily::kDistilBERT;
  return std::nullopt;
}

const std::array<EncoderSpec, 4>& encoder_registry() {
  static const std::array<EncoderSpec, 4> registry = {{
      {EncoderFamily::kRoBERTa, "distilroberta-base", 6, 12, 768, 82'000'000},
      {EncoderFamily::kBERT, "bert-base-uncased", 12, 12, 768, 110'000'000},
      {EncoderFamily::kXLNet, "xlnet-base-cased", 12, 12, 768, 110'000'000},
      {EncoderFamily::kDistilBERT, "distilbert-base-uncased", 6, 12, 768, 66'000'000},
  }};
  return registry;
}

const EncoderSpec& registry_spec(EncoderFamily family) {
  for (const auto& s : encoder_registry()) {
    if (s.family == family) return s;
  }
  throw UsageError("no registry entry for family");
}

std::optional<EncoderSpec> find_registry_spec(std::string_view name) {
  if (auto f = parse_family(name)) return registry_spec(*f);
  for (const auto& s : encoder_registry()) {
    if (s.checkpoint_name == name) return s;
  }
  return std::nullopt;
}

EncoderArchitecture default_architecture(const EncoderSpec& spec, const Tokenizer& tokenizer) {
  EncoderArchitecture a;
  a.layers = spec.layers;
  a.heads = spec.heads;
  a.hidden = spec.hidden;
  a.intermediate = 4 * spec.hidden;
  a.vocab_size = static_cast<int>(tokenizer.vocab_size());
  a.max_positions = 512;
  switch (spec.family) {
    case EncoderFamily::kBERT:
      a.type_vocab_size = 2;
      a.lowercase = true;
      break;
    case EncoderFamily::kRoBERTa:
      a.type_vocab_size = 1;
      a.layer_norm_eps = 1e-5;
      a.position_offset = tokenizer.pad_id() + 1;
      a.max_positions = 512 + a.position_offset;
      a.lowercase = false;
      break;
    case EncoderFamily::kDistilBERT:
      a.lowercase = true;
      break;
    case EncoderFamily::kXLNet:
      a.lowercase = false;
      break;
  }
  return a;
}

// ---------------------------------------------------------------- pooling

PooledVector max_pool(const TokenEmbeddings& emb) {
  if (std::none_of(emb.mask.begin(), emb.mask.end(), [](auto m) { return m != 0; })) {
    throw PoolingError("max_pool: mask has no real tokens");
  }
  PooledVector out;
  out.values.resize(emb.width);
  out.argmax.resize(emb.width);
  kernels::omp::masked_max_pool(emb.matrix, emb.mask, out.values, out.argmax, kSequenceLength, emb.width);
  return out;
}

// ---------------------------------------------------------------- kernels

namespace {

struct Ops {
  decltype(&kernels::omp::matmul) matmul;
  decltype(&kernels::omp::matmul_bt) matmul_bt;
  decltype(&kernels::omp::matmul_at) matmul_at;
  decltype(&kernels::omp::add_row_bias) add_row_bias;
  decltype(&kernels::omp::column_sums) column_sums;
  decltype(&kernels::omp::layer_norm) layer_norm;
  decltype(&kernels::omp::layer_norm_backward) layer_norm_backward;
  decltype(&kernels::omp::masked_softmax_rows) masked_softmax_rows;
  decltype(&kernels::omp::gelu) gelu;
  decltype(&kernels::omp::gelu_backward) gelu_backward;
};

const Ops& ops(KernelBackend backend) {
  namespace o = kernels::omp;
  namespace r = kernels::reference;
  static const Ops kOmp{o::matmul,     o::matmul_bt,           o::matmul_at,           o::add_row_bias,
                        o::column_sums, o::layer_norm,         o::layer_norm_backward, o::masked_softmax_rows,
                        o::gelu,       o::gelu_backward};
  static const Ops kRef{r::matmul,     r::matmul_bt,           r::matmul_at,           r::add_row_bias,
                        r::column_sums, r::layer_norm,         r::layer_norm_backward, r::masked_softmax_rows,
                        r::gelu,       r::gelu_backward};
  return backend == KernelBackend::kOmp ? kOmp : kRef;
}

std::vector<double> dropout_mask(Rng* rng, double p, std::size_t n) {
  if (rng == nullptr || p <= 0.0) return {};
  std::vector<double> mask(n);
  const double keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = uniform_unit(*rng) < p ? 0.0 : keep;
  return mask;
}

void apply_mask(std::vector<double>& x, const std::vector<double>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

void gather_head(const std::vector<double>& src, std::vector<double>& dst, std::size_t h, std::size_t T,
                 std::size_t H, std::size_t dh) {
  for (std::size_t t = 0; t < T; ++t) std::copy_n(src.data() + t * H + h * dh, dh, dst.data() + t * dh);
}

void scatter_head(const std::vector<double>& src, std::vector<double>& dst, std::size_t h, std::size_t T,
                  std::size_t H, std::size_t dh) {
  for (std::size_t t = 0; t < T; ++t) std::copy_n(src.data() + t * dh, dh, dst.data() + t * H + h * dh);
}

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

// ---------------------------------------------------------------- layout

std::vector<std::pair<std::string, std::vector<std::size_t>>> encoder_parameter_layout(const EncoderArchitecture& a) {
  const auto H = static_cast<std::size_t>(a.hidden);
  const auto I = static_cast<std::size_t>(a.intermediate);
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  out.push_back({"embeddings.word_embeddings.weight", {static_cast<std::size_t>(a.vocab_size), H}});
  out.push_back({"embeddings.position_embeddings.weight", {static_cast<std::size_t>(a.max_positions), H}});
  if (a.type_vocab_size > 0) {
    out.push_back({"embeddings.token_type_embeddings.weight", {static_cast<std::size_t>(a.type_vocab_size), H}});
  }
  out.push_back({"embeddings.LayerNorm.weight", {H}});
  out.push_back({"embeddings.LayerNorm.bias", {H}});
  for (int l = 0; l < a.layers; ++l) {
    const std::string p = "encoder.layer." + std::to_string(l) + ".";
    for (const char* qkv : {"query", "key", "value"}) {
      out.push_back({p + "attention.self." + qkv + ".weight", {H, H}});
      out.push_back({p + "attention.self." + qkv + ".bias", {H}});
    }
    out.push_back({p + "attention.output.dense.weight", {H, H}});
    out.push_back({p + "attention.output.dense.bias", {H}});
    out.push_back({p + "attention.output.LayerNorm.weight", {H}});
    out.push_back({p + "attention.output.LayerNorm.bias", {H}});
    out.push_back({p + "intermediate.dense.weight", {I, H}});
    out.push_back({p + "intermediate.dense.bias", {I}});
    out.push_back({p + "output.dense.weight", {H, I}});
    out.push_back({p + "output.dense.bias", {H}});
    out.push_back({p + "output.LayerNorm.weight", {H}});
    out.push_back({p + "output.LayerNorm.bias", {H}});
  }
  return out;
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(EncoderSpec spec, EncoderArchitecture arch, std::shared_ptr<const Tokenizer> tokenizer,
                 std::vector<Parameter> params)
    : spec_(std::move(spec)),
      arch_(arch),
      tokenizer_(std::move(tokenizer)),
      params_(std::move(params)),
      hash_mutex_(std::make_unique<std::mutex>()) {
  if (arch_.heads <= 0 || arch_.hidden % arch_.heads != 0) {
    throw ConfigurationError("hidden width " + std::to_string(arch_.hidden) + " is not divisible by " +
                             std::to_string(arch_.heads) + " heads");
  }
  if (arch_.layers != spec_.layers || arch_.hidden != spec_.hidden || arch_.heads != spec_.heads) {
    throw ConfigurationError("encoder architecture (" + std::to_string(arch_.layers) + " layers, hidden " +
                             std::to_string(arch_.hidden) + ", " + std::to_string(arch_.heads) +
                             " heads) does not match spec " + spec_.checkpoint_name + " (" +
                             std::to_string(spec_.layers) + " layers, hidden " + std::to_string(spec_.hidden) +
                             ", " + std::to_string(spec_.heads) + " heads)");
  }
  if (static_cast<int>(kSequenceLength) + arch_.position_offset > arch_.max_positions) {
    throw ConfigurationError("encoder has too few position embeddings for 100 tokens");
  }
  if (tokenizer_->vocab_size() > static_cast<std::size_t>(arch_.vocab_size)) {
    throw ConfigurationError("tokenizer vocabulary (" + std::to_string(tokenizer_->vocab_size()) +
                             ") exceeds the embedding table (" + std::to_string(arch_.vocab_size) + ")");
  }
  index_parameters();
}

Encoder::Encoder(const Encoder& other)
    : spec_(other.spec_),
      arch_(other.arch_),
      tokenizer_(other.tokenizer_),
      params_(other.params_),
      word_(other.word_),
      pos_(other.pos_),
      type_(other.type_),
      eln_g_(other.eln_g_),
      eln_b_(other.eln_b_),
      has_type_(other.has_type_),
      layer_index_(other.layer_index_),
      backend_(other.backend_),
      hash_mutex_(std::make_unique<std::mutex>()) {
  std::lock_guard lock(*other.hash_mutex_);
  hash_ = other.hash_;
}

Encoder& Encoder::operator=(const Encoder& other) {
  if (this != &other) {
    Encoder copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;
Encoder::~Encoder() = default;

void Encoder::index_parameters() {
  const auto layout = encoder_parameter_layout(arch_);
  if (layout.size() != params_.size()) {
    throw ConfigurationError("encoder expects " + std::to_string(layout.size()) + " tensors, got " +
                             std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].name != layout[i].first || params_[i].shape != layout[i].second ||
        params_[i].value.size() != std::accumulate(layout[i].second.begin(), layout[i].second.end(),
                                                    std::size_t{1}, std::multiplies<>())) {
      throw ConfigurationError("encoder tensor " + std::to_string(i) + " (" + params_[i].name +
                               ") does not match the expected layout entry " + layout[i].first);
    }
  }
  std::size_t i = 0;
  word_ = i++;
  pos_ = i++;
  has_type_ = arch_.type_vocab_size > 0;
  if (has_type_) type_ = i++;
  eln_g_ = i++;
  eln_b_ = i++;
  layer_index_.clear();
  for (int l = 0; l < arch_.layers; ++l) {
    LayerIndex li{};
    li.q_w = i++;
    li.q_b = i++;
    li.k_w = i++;
    li.k_b = i++;
    li.v_w = i++;
    li.v_b = i++;
    li.o_w = i++;
    li.o_b = i++;
    li.ln1_g = i++;
    li.ln1_b = i++;
    li.f1_w = i++;
    li.f1_b = i++;
    li.f2_w = i++;
    li.f2_b = i++;
    li.ln2_g = i++;
    li.ln2_b = i++;
    layer_index_.push_back(li);
  }
}

Encoder Encoder::random(EncoderSpec spec, EncoderArchitecture arch, std::shared_ptr<const Tokenizer> tokenizer,
                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Parameter> params;
  for (auto& [name, shape] : encoder_parameter_layout(arch)) {
    Parameter p{name, shape, {}};
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    const bool is_ln = name.find("LayerNorm") != std::string::npos;
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (is_ln && !is_bias) {
      p.value.assign(n, 1.0);
    } else if (is_bias) {
      p.value.assign(n, 0.0);
    } else {
      p.value.resize(n);
      for (double& v : p.value) v = 0.02 * standard_normal(rng);
    }
    params.push_back(std::move(p));
  }
  return Encoder(std::move(spec), arch, std::move(tokenizer), std::move(params));
}

std::vector<Parameter>& Encoder::parameters() {
  std::lock_guard lock(*hash_mutex_);
  hash_.clear();
  return params_;
}

Gradients Encoder::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
  return g;
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::vector<int> Encoder::parameter_layers() const {
  std::vector<int> out(params_.size(), -1);
  for (std::size_t l = 0; l < layer_index_.size(); ++l) {
    const std::size_t first = layer_index_[l].q_w;
    for (std::size_t i = first; i <= layer_index_[l].ln2_b; ++i) out[i] = static_cast<int>(l);
  }
  return out;
}

TokenEmbeddings Encoder::embed(const TokenSequence& tokens) const {
  EncoderCache cache;
  return forward(tokens, nullptr, cache);
}

TokenEmbeddings Encoder::forward(const TokenSequence& tokens, Rng* rng, EncoderCache& c) const {
  const Ops& K = ops(backend_);
  const std::size_t T = kSequenceLength;
  const auto H = static_cast<std::size_t>(arch_.hidden);
  const auto I = static_cast<std::size_t>(arch_.intermediate);
  const auto nh = static_cast<std::size_t>(arch_.heads);
  const std::size_t dh = H / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double p = arch_.hidden_dropout;
  const std::span<const std::uint8_t> mask(tokens.mask);

  c.tokens = tokens;
  c.positions.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (arch_.position_offset > 0) {
      c.positions[t] = tokens.mask[t] ? arch_.position_offset + static_cast<int>(t) : arch_.position_offset - 1;
    } else {
      c.positions[t] = static_cast<int>(t);
    }
  }

  std::vector<double> e(T * H);
  const auto& word = params_[word_].value;
  const auto& pos = params_[pos_].value;
  for (std::size_t t = 0; t < T; ++t) {
    const auto id = tokens.ids[t];
    if (id < 0 || id >= arch_.vocab_size) {
      throw ConfigurationError("token id " + std::to_string(id) + " outside the embedding table");
    }
    const double* w = word.data() + static_cast<std::size_t>(id) * H;
    const double* ps = pos.data() + static_cast<std::size_t>(c.positions[t]) * H;
    double* row = e.data() + t * H;
    for (std::size_t j = 0; j < H; ++j) row[j] = w[j] + ps[j];
    if (has_type_) {
      const double* ty = params_[type_].value.data();
      for (std::size_t j = 0; j < H; ++j) row[j] += ty[j];
    }
  }
  std::vector<double> x(T * H);
  c.emb_xhat.resize(T * H);
  c.emb_rstd.resize(T);
  K.layer_norm(e, params_[eln_g_].value, params_[eln_b_].value, x, c.emb_xhat, c.emb_rstd, T, H,
               arch_.layer_norm_eps);
  c.drop_emb = dropout_mask(rng, p, T * H);
  apply_mask(x, c.drop_emb);

  c.layers.resize(layer_index_.size());
  std::vector<double> qh(T * dh), kh(T * dh), vh(T * dh), ch(T * dh);
  for (std::size_t l = 0; l < layer_index_.size(); ++l) {
    const LayerIndex& li = layer_index_[l];
    EncoderLayerCache& lc = c.layers[l];
    auto W = [&](std::size_t idx) -> std::span<const double> { return params_[idx].value; };

    lc.x_in = x;
    lc.q.resize(T * H);
    lc.k.resize(T * H);
    lc.v.resize(T * H);
    K.matmul_bt(x, W(li.q_w), lc.q, T, H, H, false);
    K.add_row_bias(lc.q, W(li.q_b), T, H);
    K.matmul_bt(x, W(li.k_w), lc.k, T, H, H, false);
    K.add_row_bias(lc.k, W(li.k_b), T, H);
    K.matmul_bt(x, W(li.v_w), lc.v, T, H, H, false);
    K.add_row_bias(lc.v, W(li.v_b), T, H);

    lc.probs.resize(nh * T * T);
    lc.ctx.assign(T * H, 0.0);
    for (std::size_t h = 0; h < nh; ++h) {
      gather_head(lc.q, qh, h, T, H, dh);
      gather_head(lc.k, kh, h, T, H, dh);
      gather_head(lc.v, vh, h, T, H, dh);
      std::span<double> s(lc.probs.data() + h * T * T, T * T);
      K.matmul_bt(qh, kh, s, T, dh, T, false);
      for (double& v : s) v *= scale;
      K.masked_softmax_rows(s, mask, T, T);
      K.matmul(s, vh, ch, T, T, dh, false);
      scatter_head(ch, lc.ctx, h, T, H, dh);
    }

    std::vector<double> a(T * H);
    K.matmul_bt(lc.ctx, W(li.o_w), a, T, H, H, false);
    K.add_row_bias(a, W(li.o_b), T, H);
    lc.drop_attn = dropout_mask(rng, p, T * H);
    apply_mask(a, lc.drop_attn);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += x[i];
    lc.h1.resize(T * H);
    lc.ln1_xhat.resize(T * H);
    lc.ln1_rstd.resize(T);
    K.layer_norm(a, W(li.ln1_g), W(li.ln1_b), lc.h1, lc.ln1_xhat, lc.ln1_rstd, T, H, arch_.layer_norm_eps);

    lc.f_pre.resize(T * I);
    lc.f_act.resize(T * I);
    K.matmul_bt(lc.h1, W(li.f1_w), lc.f_pre, T, H, I, false);
    K.add_row_bias(lc.f_pre, W(li.f1_b), T, I);
    K.gelu(lc.f_pre, lc.f_act);
    std::vector<double> g(T * H);
    K.matmul_bt(lc.f_act, W(li.f2_w), g, T, I, H, false);
    K.add_row_bias(g, W(li.f2_b), T, H);
    lc.drop_ffn = dropout_mask(rng, p, T * H);
    apply_mask(g, lc.drop_ffn);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += lc.h1[i];
    lc.ln2_xhat.resize(T * H);
    lc.ln2_rstd.resize(T);
    K.layer_norm(g, W(li.ln2_g), W(li.ln2_b), x, lc.ln2_xhat, lc.ln2_rstd, T, H, arch_.layer_norm_eps);
  }

  TokenEmbeddings out;
  out.width = H;
  out.matrix = std::move(x);
  out.mask = tokens.mask;
  return out;
}

void Encoder::backward(const EncoderCache& c, std::span<const double> d_out, Gradients& grads) const {
  const Ops& K = ops(backend_);
  const std::size_t T = kSequenceLength;
  const auto H = static_cast<std::size_t>(arch_.hidden);
  const auto I = static_cast<std::size_t>(arch_.intermediate);
  const auto nh = static_cast<std::size_t>(arch_.heads);
  const std::size_t dh = H / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (d_out.size() != T * H) throw UsageError("encoder backward: gradient has the wrong shape");
  if (grads.size() != params_.size()) throw UsageError("encoder backward: gradient buffers do not match");

  std::vector<double> dx(d_out.begin(), d_out.end());
  std::vector<double> dr(T * H), dh1(T * H), dg(T * H), df(T * I), dfpre(T * I);
  std::vector<double> da(T * H), dctx(T * H), dq(T * H), dk(T * H), dv(T * H), dx_in(T * H);
  std::vector<double> qh(T * dh), kh(T * dh), vh(T * dh), dch(T * dh), dqh(T * dh), dkh(T * dh), dvh(T * dh);
  std::vector<double> dp(T * T);

  for (std::size_t l = layer_index_.size(); l-- > 0;) {
    const LayerIndex& li = layer_index_[l];
    const EncoderLayerCache& lc = c.layers[l];
    auto W = [&](std::size_t idx) -> std::span<const double> { return params_[idx].value; };
    auto G = [&](std::size_t idx) -> std::span<double> { return grads[idx]; };

    K.layer_norm_backward(dx, lc.ln2_xhat, lc.ln2_rstd, W(li.ln2_g), dr, G(li.ln2_g), G(li.ln2_b), T, H);
    dh1 = dr;
    dg = dr;
    apply_mask(dg, lc.drop_ffn);
    K.matmul_at(dg, lc.f_act, G(li.f2_w), H, T, I, true);
    K.column_sums(dg, G(li.f2_b), T, H, true);
    K.matmul(dg, W(li.f2_w), df, T, H, I, false);
    K.gelu_backward(lc.f_pre, df, dfpre);
    K.matmul_at(dfpre, lc.h1, G(li.f1_w), I, T, H, true);
    K.column_sums(dfpre, G(li.f1_b), T, I, true);
    K.matmul(dfpre, W(li.f1_w), dh1, T, I, H, true);

    K.layer_norm_backward(dh1, lc.ln1_xhat, lc.ln1_rstd, W(li.ln1_g), dr, G(li.ln1_g), G(li.ln1_b), T, H);
    dx_in = dr;
    da = dr;
    apply_mask(da, lc.drop_attn);
    K.matmul_at(da, lc.ctx, G(li.o_w), H, T, H, true);
    K.column_sums(da, G(li.o_b), T, H, true);
    K.matmul(da, W(li.o_w), dctx, T, H, H, false);

    for (std::size_t h = 0; h < nh; ++h) {
      gather_head(lc.q, qh, h, T, H, dh);
      gather_head(lc.k, kh, h, T, H, dh);
      gather_head(lc.v, vh, h, T, H, dh);
      gather_head(dctx, dch, h, T, H, dh);
      const std::span<const double> prob(lc.probs.data() + h * T * T, T * T);
      K.matmul_bt(dch, vh, dp, T, dh, T, false);
      K.matmul_at(prob, dch, dvh, T, T, dh, false);
      for (std::size_t i = 0; i < T; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < T; ++j) s += dp[i * T + j] * prob[i * T + j];
        for (std::size_t j = 0; j < T; ++j) dp[i * T + j] = prob[i * T + j] * (dp[i * T + j] - s) * scale;
      }
      K.matmul(dp, kh, dqh, T, T, dh, false);
      K.matmul_at(dp, qh, dkh, T, T, dh, false);
      scatter_head(dqh, dq, h, T, H, dh);
      scatter_head(dkh, dk, h, T, H, dh);
      scatter_head(dvh, dv, h, T, H, dh);
    }

    const std::pair<const std::vector<double>*, std::pair<std::size_t, std::size_t>> projections[] = {
        {&dq, {li.q_w, li.q_b}}, {&dk, {li.k_w, li.k_b}}, {&dv, {li.v_w, li.v_b}}};
    for (const auto& [d, idx] : projections) {
      K.matmul_at(*d, lc.x_in, G(idx.first), H, T, H, true);
      K.column_sums(*d, G(idx.second), T, H, true);
      K.matmul(*d, W(idx.first), dx_in, T, H, H, true);
    }
    dx.swap(dx_in);
  }

  apply_mask(dx, c.drop_emb);
  K.layer_norm_backward(dx, c.emb_xhat, c.emb_rstd, params_[eln_g_].value, dr, grads[eln_g_], grads[eln_b_], T, H);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = dr.data() + t * H;
    double* gw = grads[word_].data() + static_cast<std::size_t>(c.tokens.ids[t]) * H;
    double* gp = grads[pos_].data() + static_cast<std::size_t>(c.positions[t]) * H;
    for (std::size_t j = 0; j < H; ++j) {
      gw[j] += row[j];
      gp[j] += row[j];
    }
    if (has_type_) {
      double* gt = grads[type_].data();
      for (std::size_t j = 0; j < H; ++j) gt[j] += row[j];
    }
  }
}

std::string Encoder::weights_hash() const {
  std::lock_guard lock(*hash_mutex_);
  if (hash_.empty()) {
    Sha256 h;
    for (const auto& p : params_) {
      h.update(p.name.data(), p.name.size() + 1);
      for (std::size_t d : p.shape) {
        const auto v = static_cast<std::uint64_t>(d);
        h.update(&v, sizeof v);
      }
      h.update(p.value.data(), p.value.size() * sizeof(double));
    }
    hash_ = h.hex();
  }
  return hash_;
}

// ---------------------------------------------------------------- I/O

namespace {

std::string model_type(EncoderFamily f) {
  switch (f) {
    case EncoderFamily::kRoBERTa:
      return "roberta";
    case EncoderFamily::kBERT:
      return "bert";
    case EncoderFamily::kXLNet:
      return "xlnet";
    case EncoderFamily::kDistilBERT:
      return "distilbert";
  }
  return "bert";
}

std::optional<EncoderFamily> family_from_model_type(const std::string& t) {
  if (t == "roberta") return EncoderFamily::kRoBERTa;
  if (t == "bert") return EncoderFamily::kBERT;
  if (t == "xlnet") return EncoderFamily::kXLNet;
  if (t == "distilbert") return EncoderFamily::kDistilBERT;
  return std::nullopt;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Maps an HF tensor name onto the canonical layout; nullopt for tensors the
// encoder does not use (pooler, LM head, ...).
std::optional<std::string> canonical_name(std::string name, EncoderFamily family) {
  for (const char* prefix : {"bert.", "roberta.", "distilbert."}) {
    if (name.rfind(prefix, 0) == 0) {
      name.erase(0, std::strlen(prefix));
      break;
    }
  }
  auto replace_suffix = [&](const std::string& from, const std::string& to) {
    if (name.size() >= from.size() && name.compare(name.size() - from.size(), from.size(), from) == 0) {
      name.replace(name.size() - from.size(), from.size(), to);
    }
  };
  replace_suffix("LayerNorm.gamma", "LayerNorm.weight");
  replace_suffix("LayerNorm.beta", "LayerNorm.bias");
  if (family == EncoderFamily::kDistilBERT && name.rfind("transformer.layer.", 0) == 0) {
    const std::size_t dot = name.find('.', 18);
    const std::string layer = name.substr(18, dot - 18);
    const std::string rest = name.substr(dot + 1);
    static const std::pair<const char*, const char*> kMap[] = {
        {"attention.q_lin.", "attention.self.query."},
        {"attention.k_lin.", "attention.self.key."},
        {"attention.v_lin.", "attention.self.value."},
        {"attention.out_lin.", "attention.output.dense."},
        {"sa_layer_norm.", "attention.output.LayerNorm."},
        {"ffn.lin1.", "intermediate.dense."},
        {"ffn.lin2.", "output.dense."},
        {"output_layer_norm.", "output.LayerNorm."},
    };
    for (const auto& [from, to] : kMap) {
      const std::string f(from);
      if (rest.rfind(f, 0) == 0) return "encoder.layer." + layer + "." + to + rest.substr(f.size());
    }
    return std::nullopt;
  }
  if (name.rfind("embeddings.", 0) == 0 || name.rfind("encoder.layer.", 0) == 0) return name;
  return std::nullopt;
}

int json_int(const nlohmann::json& j, const char* key, int fallback) {
  return j.contains(key) ? j.at(key).get<int>() : fallback;
}

}  // namespace

fs::path model_cache_root() {
  if (const char* env = std::getenv("ASPECTMINER_MODEL_CACHE"); env != nullptr && *env != '\0') return fs::path(env);
  if (const char* home = std::getenv("HOME"); home != nullptr && *home != '\0') {
    return fs::path(home) / ".cache" / "aspectminer" / "models";
  }
  return fs::path(".aspectminer-models");
}

void Encoder::save(const fs::path& dir) const {
  fs::create_directories(dir);
  nlohmann::ordered_json cfg;
  cfg["model_type"] = model_type(spec_.family);
  cfg["num_hidden_layers"] = arch_.layers;
  cfg["num_attention_heads"] = arch_.heads;
  cfg["hidden_size"] = arch_.hidden;
  cfg["intermediate_size"] = arch_.intermediate;
  cfg["vocab_size"] = arch_.vocab_size;
  cfg["max_position_embeddings"] = arch_.max_positions;
  cfg["type_vocab_size"] = arch_.type_vocab_size;
  cfg["layer_norm_eps"] = arch_.layer_norm_eps;
  cfg["hidden_dropout_prob"] = arch_.hidden_dropout;
  cfg["pad_token_id"] = tokenizer_->pad_id();
  cfg["aspectminer"] = {{"family", family_name(spec_.family)},
                        {"checkpoint_name", spec_.checkpoint_name},
                        {"parameter_count", spec_.parameter_count},
                        {"position_offset", arch_.position_offset},
                        {"lowercase", arch_.lowercase}};
  std::ofstream out(dir / "config.json", std::ios::binary);
  out << cfg.dump(2) << '\n';
  if (!out) throw LoadError("cannot write " + (dir / "config.json").string());
  tokenizer_->save(dir);
  TensorMap tensors;
  for (const auto& p : params_) tensors.emplace(p.name, Tensor{p.shape, p.value});
  write_safetensors(dir / "model.safetensors", tensors, {{"format", "aspectminer"}});
}

Encoder load_encoder(const EncoderSpec& spec, const std::string& locator) {
  const std::string key = locator.empty() ? spec.checkpoint_name : locator;
  fs::path dir = key;
  if (!fs::is_directory(dir)) dir = model_cache_root() / key;
  if (!fs::is_directory(dir)) {
    throw LoadError("encoder checkpoint '" + key + "' not found: looked for directory " + fs::path(key).string() +
                    " and " + dir.string() + "; download the checkpoint (config.json, vocabulary, " +
                    "model.safetensors) into that directory or set ASPECTMINER_MODEL_CACHE");
  }
  if (!fs::exists(dir / "config.json")) throw LoadError("checkpoint " + dir.string() + " has no config.json");
  const nlohmann::json cfg = read_json(dir / "config.json");
  const std::string type = cfg.value("model_type", std::string());
  const auto family = family_from_model_type(type);
  if (!family) throw ConfigurationError("checkpoint " + dir.string() + " has unsupported model_type '" + type + "'");
  if (*family != spec.family) {
    throw ConfigurationError("checkpoint " + dir.string() + " is a " + std::string(family_name(*family)) +
                             " model but the spec asks for " + std::string(family_name(spec.family)));
  }
  const bool native = cfg.contains("aspectminer");
  if (*family == EncoderFamily::kXLNet && !native) {
    throw ConfigurationError("XLNet relative-attention checkpoints are not supported by this encoder");
  }

  EncoderArchitecture arch;
  if (*family == EncoderFamily::kDistilBERT && !native) {
    arch.layers = json_int(cfg, "n_layers", 6);
    arch.heads = json_int(cfg, "n_heads", 12);
    arch.hidden = json_int(cfg, "dim", 768);
    arch.intermediate = json_int(cfg, "hidden_dim", 3072);
    arch.hidden_dropout = cfg.value("dropout", 0.1);
    arch.type_vocab_size = 0;
  } else {
    arch.layers = json_int(cfg, "num_hidden_layers", 12);
    arch.heads = json_int(cfg, "num_attention_heads", 12);
    arch.hidden = json_int(cfg, "hidden_size", 768);
    arch.intermediate = json_int(cfg, "intermediate_size", 4 * arch.hidden);
    arch.hidden_dropout = cfg.value("hidden_dropout_prob", 0.1);
    arch.type_vocab_size = json_int(cfg, "type_vocab_size", *family == EncoderFamily::kDistilBERT ? 0 : 2);
  }
  arch.vocab_size = json_int(cfg, "vocab_size", 0);
  arch.max_positions = json_int(cfg, "max_position_embeddings", 512);
  arch.layer_norm_eps = cfg.value("layer_norm_eps", 1e-12);

  if (arch.layers != spec.layers || arch.hidden != spec.hidden || arch.heads != spec.heads) {
    throw ConfigurationError("spec " + spec.checkpoint_name + " expects " + std::to_string(spec.layers) +
                             " layers, hidden " + std::to_string(spec.hidden) + ", " + std::to_string(spec.heads) +
                             " heads but checkpoint " + dir.string() + " has " + std::to_string(arch.layers) +
                             " layers, hidden " + std::to_string(arch.hidden) + ", " +
                             std::to_string(arch.heads) + " heads");
  }

  bool lowercase = *family == EncoderFamily::kBERT || *family == EncoderFamily::kDistilBERT;
  if (spec.checkpoint_name.find("-cased") != std::string::npos) lowercase = false;
  if (fs::exists(dir / "tokenizer_config.json")) {
    const auto tc = read_json(dir / "tokenizer_config.json");
    if (tc.contains("do_lower_case")) lowercase = tc.at("do_lower_case").get<bool>();
  }
  if (native) {
    const auto& am = cfg.at("aspectminer");
    lowercase = am.value("lowercase", lowercase);
    arch.position_offset = am.value("position_offset", 0);
  }
  arch.lowercase = lowercase;
  std::shared_ptr<const Tokenizer> tokenizer = load_tokenizer(dir, lowercase);
  if (*family == EncoderFamily::kRoBERTa && !native) {
    arch.position_offset = json_int(cfg, "pad_token_id", tokenizer->pad_id()) + 1;
  }

  fs::path weights = dir / "model.safetensors";
  if (!fs::exists(weights)) {
    throw LoadError("checkpoint " + dir.string() + " has no model.safetensors" +
                    (fs::exists(dir / "pytorch_model.bin") ? " (pytorch_model.bin is not supported; convert it)"
                                                           : std::string()));
  }
  SafetensorsFile file = read_safetensors(weights);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : file.tensors) {
    if (auto c = canonical_name(name, *family)) by_name[*c] = std::move(t);
  }
  std::vector<Parameter> params;
  for (auto& [name, shape] : encoder_parameter_layout(arch)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigurationError("checkpoint " + dir.string() + " lacks tensor " + name);
    if (it->second.shape != shape) {
      throw ConfigurationError("checkpoint tensor " + name + " has an unexpected shape");
    }
    params.push_back(Parameter{name, shape, std::move(it->second.data)});
  }
  return Encoder(spec, arch, std::move(tokenizer), std::move(params));
}

void write_embedding_dump(const fs::path& path, const TokenEmbeddings& emb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  const auto n = static_cast<std::uint32_t>(kSequenceLength);
  const auto d = static_cast<std::uint32_t>(emb.width);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (double v : emb.matrix) {
    const auto f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  if (!out) throw LoadError("failed writing " + path.string());
}

TokenEmbeddings read_embedding_dump(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || n != kSequenceLength) throw FormatError(path.string() + ": bad embedding dump header");
  TokenEmbeddings emb;
  emb.width = d;
  emb.matrix.resize(static_cast<std::size_t>(n) * d);
  for (double& v : emb.matrix) {
    float f = 0;
    in.read(reinterpret_cast<char*>(&f), 4);
    v = f;
  }
  if (!in) throw FormatError(path.string() + ": truncated embedding dump");
  return emb;
}

}  // namespace aspectminer
