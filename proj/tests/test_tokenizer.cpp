#include <filesystem>
#include <numeric>

#include "aspectminer/errors.hpp"
#include "aspectminer/tokenizer.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace aspectminer;
using aspectminer::testing::random_words;

namespace {

WordPieceTokenizer small_wordpiece() {
  return WordPieceTokenizer({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "un", "##aff", "##able", "the", "api", ",",
                             "!", "hello", "world", "cafe", "fast", "##er"},
                            true);
}

// Symbols of the byte-to-unicode table for ' ' and ASCII letters.
const std::string kSpace = "\xC4\xA0";  // U+0120

ByteLevelBpeTokenizer small_bpe() {
  std::unordered_map<std::string, std::int32_t> vocab = {{"<s>", 0}, {"<pad>", 1}, {"</s>", 2}, {"<unk>", 3}};
  std::int32_t next = 4;
  for (const std::string s : {kSpace, std::string("w"), std::string("o"), std::string("r"), std::string("l"),
                              std::string("d"), std::string("h"), std::string("i"), std::string("'"),
                              std::string("s"), kSpace + "w", std::string("or"), kSpace + "wor",
                              std::string("ld"), kSpace + "world", std::string("hi")}) {
    vocab.emplace(s, next++);
  }
  std::vector<std::pair<std::string, std::string>> merges = {
      {kSpace, "w"}, {"o", "r"}, {kSpace + "w", "or"}, {"l", "d"}, {kSpace + "wor", "ld"}, {"h", "i"}};
  return ByteLevelBpeTokenizer(std::move(vocab), std::move(merges));
}

}  // namespace

TEST_CASE("wordpiece basic tokenization splits punctuation and folds case/accents") {
  const auto tok = small_wordpiece();
  CHECK(tok.basic_tokenize("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(tok.basic_tokenize("  Café\tAPI ") == std::vector<std::string>{"cafe", "api"});
  CHECK(tok.basic_tokenize("a\x01" "b") == std::vector<std::string>{"ab"});
  const WordPieceTokenizer cased({"[PAD]", "[UNK]", "[CLS]", "[SEP]"}, false);
  CHECK(cased.basic_tokenize("Café") == std::vector<std::string>{"Café"});
}

TEST_CASE("wordpiece greedy longest match") {
  const auto tok = small_wordpiece();
  CHECK(tok.tokenize_pieces("unaffable") == std::vector<std::string>{"un", "##aff", "##able"});
  CHECK(tok.tokenize_pieces("faster API!") == std::vector<std::string>{"fast", "##er", "api", "!"});
  CHECK(tok.tokenize_pieces("unknownword") == std::vector<std::string>{"[UNK]"});
  CHECK(tok.encode("the api") == std::vector<std::int32_t>{8, 9});
}

TEST_CASE("sequence layout: start, pieces, end, padding") {
  const auto tok = small_wordpiece();
  const TokenSequence seq = tok.tokenize("hello world");
  CHECK(seq.ids[0] == 2);
  CHECK(seq.ids[1] == 12);
  CHECK(seq.ids[2] == 13);
  CHECK(seq.ids[3] == 3);
  CHECK(seq.ids[4] == 0);
  CHECK(seq.length() == 4);
  CHECK_FALSE(seq.truncated);

  const TokenSequence empty = tok.tokenize("");
  CHECK(empty.length() == 2);
  CHECK(empty.ids[0] == 2);
  CHECK(empty.ids[1] == 3);
}

TEST_CASE("long input truncates to 100 with the prefix property") {
  const auto tok = aspectminer::testing::tiny_tokenizer();
  Rng rng(3);
  const std::string text = random_words(rng, 300);
  const TokenSequence seq = tok->tokenize(text);
  CHECK(seq.truncated);
  CHECK(seq.length() == 100);
  const auto all = tok->encode(text);
  REQUIRE(all.size() > 98);
  for (std::size_t i = 0; i < 98; ++i) CHECK(seq.ids[i + 1] == all[i]);
  CHECK(seq.ids[99] == tok->end_id());
}

TEST_CASE("property: any input yields 100 ids with a contiguous mask") {
  const auto tok = aspectminer::testing::tiny_tokenizer();
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::string text = random_words(rng, uniform_index(rng, 200));
    if (trial % 7 == 0) text += "\xFF\xFE broken \xE2\x82";
    const TokenSequence seq = tok->tokenize(text);
    CHECK(seq.ids.size() == kSequenceLength);
    const std::size_t n = seq.length();
    CHECK(n >= 2);
    for (std::size_t i = 0; i < kSequenceLength; ++i) CHECK(seq.mask[i] == (i < n ? 1 : 0));
    CHECK(seq.truncated == (tok->encode(text).size() > 98));
  }
}

TEST_CASE("byte-level pre-tokenization follows the GPT-2 pattern") {
  using V = std::vector<std::string>;
  CHECK(ByteLevelBpeTokenizer::pretokenize("Hello world's  test") == V{"Hello", " world", "'s", " ", " test"});
  CHECK(ByteLevelBpeTokenizer::pretokenize("v2.0 rocks!!") == V{"v", "2", ".", "0", " rocks", "!!"});
  CHECK(ByteLevelBpeTokenizer::pretokenize("they'll  ") == V{"they", "'ll", "  "});
  CHECK(ByteLevelBpeTokenizer::pretokenize("") == V{});
}

TEST_CASE("byte-level BPE applies merges by rank") {
  const auto tok = small_bpe();
  CHECK(tok.tokenize_pieces(" world") == std::vector<std::string>{kSpace + "world"});
  CHECK(tok.tokenize_pieces("hi world") == std::vector<std::string>{"hi", kSpace + "world"});
  CHECK(tok.tokenize_pieces("wo") == std::vector<std::string>{"w", "o"});
  const TokenSequence seq = tok.tokenize("hi");
  CHECK(seq.ids[0] == 0);
  CHECK(seq.ids[2] == 2);
  CHECK(seq.ids[3] == 1);
  CHECK(tok.piece_id("Z") == tok.unk_id());
}

TEST_CASE("tokenizer files round-trip and are detected by load_tokenizer") {
  const auto dir = std::filesystem::temp_directory_path() / "aspectminer_tok_test";
  std::filesystem::remove_all(dir);
  const auto bpe = small_bpe();
  bpe.save(dir / "bpe");
  const auto bpe2 = load_tokenizer(dir / "bpe", false);
  CHECK(bpe2->kind() == "byte-bpe");
  CHECK(bpe2->tokenize("hi world").ids == bpe.tokenize("hi world").ids);

  const auto wp = small_wordpiece();
  wp.save(dir / "wp");
  const auto wp2 = load_tokenizer(dir / "wp", true);
  CHECK(wp2->kind() == "wordpiece");
  CHECK(wp2->tokenize("unaffable hello").ids == wp.tokenize("unaffable hello").ids);

  CHECK_THROWS_AS(load_tokenizer(dir / "missing", true), LoadError);
  CHECK_THROWS_AS(WordPieceTokenizer({"a", "b"}, true), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("built wordpiece vocabularies cover every character") {
  const std::vector<std::string> texts = {"Zebra crossing", "zebra", "über cool"};
  const auto tok = build_wordpiece_tokenizer(texts, 1000, true);
  for (const auto& t : texts) {
    for (auto id : tok.encode(t)) CHECK(id != tok.unk_id());
  }
  CHECK(tok.encode("arbez") != std::vector<std::int32_t>{tok.unk_id()});
  const auto again = build_wordpiece_tokenizer(texts, 1000, true);
  CHECK(again.vocab() == tok.vocab());
}
