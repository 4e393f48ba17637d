#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace aspectminer {

inline constexpr std::size_t kSequenceLength = 100;

// Fixed-length model input. mask is a contiguous prefix of ones.
struct TokenSequence {
  std::array<std::int32_t, kSequenceLength> ids{};
  std::array<std::uint8_t, kSequenceLength> mask{};
  bool truncated = false;

  std::size_t length() const;
  bool operator==(const TokenSequence&) const = default;
};

// Subword tokenizer with the special-token layout of its encoder family:
// <start> pieces... <end>, then padding up to kSequenceLength.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<std::string> tokenize_pieces(std::string_view text) const = 0;
  virtual std::int32_t piece_id(std::string_view piece) const = 0;
  virtual void save(const std::filesystem::path& dir) const = 0;

  std::int32_t start_id() const { return start_id_; }
  std::int32_t end_id() const { return end_id_; }
  std::int32_t pad_id() const { return pad_id_; }
  std::int32_t unk_id() const { return unk_id_; }

  std::vector<std::int32_t> encode(std::string_view text) const;
  // Truncates to kSequenceLength - 2 pieces, adds start/end, pads with pad_id.
  TokenSequence tokenize(std::string_view text) const;

 protected:
  std::int32_t start_id_ = 0;
  std::int32_t end_id_ = 0;
  std::int32_t pad_id_ = 0;
  std::int32_t unk_id_ = 0;
};

// BERT-style: basic tokenization (cleanup, optional lower-casing and accent
// folding, punctuation splitting) followed by greedy longest-match-first
// wordpiece with "##" continuation pieces.
class WordPieceTokenizer final : public Tokenizer {
 public:
  WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase);
  static WordPieceTokenizer load(const std::filesystem::path& vocab_txt, bool lowercase);

  std::string kind() const override { return "wordpiece"; }
  std::size_t vocab_size() const override { return vocab_.size(); }
  std::vector<std::string> tokenize_pieces(std::string_view text) const override;
  std::int32_t piece_id(std::string_view piece) const override;
  void save(const std::filesystem::path& dir) const override;

  bool lowercase() const { return lowercase_; }
  const std::vector<std::string>& vocab() const { return vocab_; }

  std::vector<std::string> basic_tokenize(std::string_view text) const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::int32_t> index_;
  bool lowercase_;
};

// GPT-2/RoBERTa byte-level BPE (vocab.json + merges.txt).
class ByteLevelBpeTokenizer final : public Tokenizer {
 public:
  ByteLevelBpeTokenizer(std::unordered_map<std::string, std::int32_t> vocab,
                        std::vector<std::pair<std::string, std::string>> merges);
  static ByteLevelBpeTokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

  std::string kind() const override { return "byte-bpe"; }
  std::size_t vocab_size() const override { return vocab_.size(); }
  std::vector<std::string> tokenize_pieces(std::string_view text) const override;
  std::int32_t piece_id(std::string_view piece) const override;
  void save(const std::filesystem::path& dir) const override;

  // Regex-free equivalent of the GPT-2 pre-tokenization pattern.
  static std::vector<std::string> pretokenize(std::string_view text);

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::unordered_map<std::string, std::int32_t> vocab_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

// Detects vocab.txt (wordpiece) or vocab.json + merges.txt (byte BPE) in a
// checkpoint directory. Throws LoadError when neither is present.
std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& dir, bool lowercase);

// Deterministic wordpiece vocabulary for small test encoders: specials, every
// character seen (bare and "##"-prefixed), then the most frequent words.
WordPieceTokenizer build_wordpiece_tokenizer(std::span<const std::string> texts, std::size_t max_vocab,
                                             bool lowercase);

}  // namespace aspectminer
