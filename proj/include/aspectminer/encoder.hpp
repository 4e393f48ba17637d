#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aspectminer/corpus.hpp"
#include "aspectminer/random.hpp"
#include "aspectminer/tokenizer.hpp"

namespace aspectminer {

enum class EncoderFamily { kRoBERTa, kBERT, kXLNet, kDistilBERT };

std::string_view family_name(EncoderFamily f);
std::optional<EncoderFamily> parse_family(std::string_view name);

struct EncoderSpec {
  EncoderFamily family = EncoderFamily::kBERT;
  std::string checkpoint_name;
  int layers = 0;
  int heads = 0;
  int hidden = 0;
  std::uint64_t parameter_count = 0;

  bool operator==(const EncoderSpec&) const = default;
};

// The four published encoders (RoBERTa, BERT, XLNet, DistilBERT order).
const std::array<EncoderSpec, 4>& encoder_registry();
const EncoderSpec& registry_spec(EncoderFamily family);
// Matches a family name ("RoBERTa") or a checkpoint name ("distilroberta-base").
std::optional<EncoderSpec> find_registry_spec(std::string_view name);

// Everything the forward pass needs beyond the registry metadata.
struct EncoderArchitecture {
  int layers = 0;
  int heads = 0;
  int hidden = 0;
  int intermediate = 0;
  int vocab_size = 0;
  int max_positions = 0;
  int type_vocab_size = 0;  // 0: no token-type embedding
  int position_offset = 0;  // first real position id (RoBERTa counts from pad_id + 1)
  double layer_norm_eps = 1e-12;
  double hidden_dropout = 0.1;
  bool lowercase = true;
};

// HF defaults for the family: intermediate = 4 * hidden, 512 positions, ...
EncoderArchitecture default_architecture(const EncoderSpec& spec, const Tokenizer& tokenizer);

struct TokenEmbeddings {
  std::size_t width = 0;
  std::vector<double> matrix;  // kSequenceLength x width, row-major
  std::array<std::uint8_t, kSequenceLength> mask{};

  double at(std::size_t row, std::size_t col) const { return matrix[row * width + col]; }
};

struct PooledVector {
  std::vector<double> values;
  std::vector<std::uint32_t> argmax;  // winning row per column
};

// Column-wise max over rows with mask == 1. Throws PoolingError on an
// all-zero mask.
PooledVector max_pool(const TokenEmbeddings& emb);

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
};

using Gradients = std::vector<std::vector<double>>;

enum class KernelBackend { kOmp, kReference };

struct EncoderLayerCache {
  std::vector<double> x_in, q, k, v, probs, ctx;
  std::vector<double> ln1_xhat, ln1_rstd, h1;
  std::vector<double> f_pre, f_act;
  std::vector<double> ln2_xhat, ln2_rstd;
  std::vector<double> drop_attn, drop_ffn;  // scaled keep masks; empty without dropout
};

struct EncoderCache {
  TokenSequence tokens;
  std::vector<std::int32_t> positions;
  std::vector<double> emb_xhat, emb_rstd, drop_emb;
  std::vector<EncoderLayerCache> layers;
};

// Post-LN transformer encoder (BERT/RoBERTa/DistilBERT layout) with its
// native tokenizer. Const methods are safe to call concurrently.
class Encoder {
 public:
  Encoder(EncoderSpec spec, EncoderArchitecture arch, std::shared_ptr<const Tokenizer> tokenizer,
          std::vector<Parameter> params);
  Encoder(const Encoder& other);
  Encoder& operator=(const Encoder& other);
  Encoder(Encoder&&) noexcept;
  Encoder& operator=(Encoder&&) noexcept;
  ~Encoder();

  // Truncated-normal-free N(0, 0.02) weights, unit LayerNorm, zero biases.
  static Encoder random(EncoderSpec spec, EncoderArchitecture arch, std::shared_ptr<const Tokenizer> tokenizer,
                        std::uint64_t seed);

  const EncoderSpec& spec() const { return spec_; }
  const EncoderArchitecture& architecture() const { return arch_; }
  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> shared_tokenizer() const { return tokenizer_; }
  std::size_t width() const { return static_cast<std::size_t>(arch_.hidden); }

  TokenSequence tokenize(const CleanSentence& s) const { return tokenizer_->tokenize(s.text); }
  TokenSequence tokenize(std::string_view text) const { return tokenizer_->tokenize(text); }

  // Inference: dropout off, bitwise deterministic.
  TokenEmbeddings embed(const TokenSequence& tokens) const;

  // Training forward. dropout_rng == nullptr disables dropout.
  TokenEmbeddings forward(const TokenSequence& tokens, Rng* dropout_rng, EncoderCache& cache) const;
  // Accumulates parameter gradients for d(loss)/d(output rows) into grads.
  void backward(const EncoderCache& cache, std::span<const double> d_out, Gradients& grads) const;

  std::vector<Parameter>& parameters();
  const std::vector<Parameter>& parameters() const { return params_; }
  Gradients zero_gradients() const;
  std::size_t parameter_count() const;
  // Layer index of each parameter, -1 for embeddings.
  std::vector<int> parameter_layers() const;

  void set_kernel_backend(KernelBackend backend) { backend_ = backend; }
  KernelBackend kernel_backend() const { return backend_; }

  // Writes config.json, tokenizer files and model.safetensors.
  void save(const std::filesystem::path& dir) const;
  // SHA-256 over parameter names, shapes and values; cached until mutated.
  std::string weights_hash() const;

 private:
  struct LayerIndex {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln1_g, ln1_b, f1_w, f1_b, f2_w, f2_b, ln2_g, ln2_b;
  };
  void index_parameters();

  EncoderSpec spec_;
  EncoderArchitecture arch_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  std::vector<Parameter> params_;
  std::size_t word_ = 0, pos_ = 0, type_ = 0, eln_g_ = 0, eln_b_ = 0;
  bool has_type_ = false;
  std::vector<LayerIndex> layer_index_;
  KernelBackend backend_ = KernelBackend::kOmp;
  mutable std::unique_ptr<std::mutex> hash_mutex_;
  mutable std::string hash_;
};

// Canonical (BERT-style, unprefixed) parameter names for an architecture.
std::vector<std::pair<std::string, std::vector<std::size_t>>> encoder_parameter_layout(const EncoderArchitecture& arch);

// $ASPECTMINER_MODEL_CACHE, else ~/.cache/aspectminer/models.
std::filesystem::path model_cache_root();

// Locator: a checkpoint directory, or a cache key under model_cache_root();
// empty means spec.checkpoint_name. Accepts HF-format BERT, RoBERTa and
// DistilBERT checkpoints (config.json, vocab, model.safetensors) and
// directories written by Encoder::save.
Encoder load_encoder(const EncoderSpec& spec, const std::string& locator = {});

// Debug dump: uint32 n, uint32 d, then n*d little-endian float32, row-major.
void write_embedding_dump(const std::filesystem::path& path, const TokenEmbeddings& emb);
TokenEmbeddings read_embedding_dump(const std::filesystem::path& path);

}  // namespace aspectminer
