#pragma once

// Small randomly initialised encoders for tests.

#include <memory>
#include <string>
#include <vector>

#include "aspectminer/encoder.hpp"
#include "generators.hpp"

namespace aspectminer::testing {

inline std::vector<std::string> tiny_vocab_corpus() {
  std::vector<std::string> texts = word_pool();
  for (const char* extra : {"zzmarker", "qqsignal", "url_", "codesnippet_java1", "codeterm_gen1", "rare", "token"}) {
    texts.emplace_back(extra);
  }
  return texts;
}

inline std::shared_ptr<const Tokenizer> tiny_tokenizer() {
  static const auto tok = std::make_shared<const WordPieceTokenizer>(
      build_wordpiece_tokenizer(tiny_vocab_corpus(), 400, true));
  return tok;
}

inline EncoderSpec tiny_spec() { return EncoderSpec{EncoderFamily::kBERT, "tiny-test", 2, 2, 8, 0}; }

inline EncoderArchitecture tiny_architecture(double dropout = 0.1) {
  EncoderArchitecture arch = default_architecture(tiny_spec(), *tiny_tokenizer());
  arch.intermediate = 16;
  arch.max_positions = 128;
  arch.hidden_dropout = dropout;
  return arch;
}

// 2 layers, hidden 8, 2 heads, intermediate 16.
inline Encoder tiny_encoder(std::uint64_t seed = 7, double dropout = 0.1) {
  return Encoder::random(tiny_spec(), tiny_architecture(dropout), tiny_tokenizer(), seed);
}

// Full-width (768) single-layer encoder for shape checks.
inline EncoderSpec shape_spec() { return EncoderSpec{EncoderFamily::kBERT, "shape-test-768", 1, 12, 768, 0}; }

inline Encoder shape_encoder(std::uint64_t seed = 11) {
  EncoderArchitecture arch = default_architecture(shape_spec(), *tiny_tokenizer());
  arch.intermediate = 768;
  arch.max_positions = 128;
  return Encoder::random(shape_spec(), arch, tiny_tokenizer(), seed);
}

}  // namespace aspectminer::testing
