#include "aspectminer/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "aspectminer/errors.hpp"
#include "aspectminer/utf8.hpp"
#include "json.hpp"

namespace aspectminer {

namespace {

namespace fs = std::filesystem;

bool is_whitespace(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v' || c == 0x00A0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

bool is_control(char32_t c) {
  if (c == U'\t' || c == U'\n' || c == U'\r') return false;
  return c < 0x20 || (c >= 0x7F && c <= 0x9F) || c == 0x00AD || (c >= 0x200B && c <= 0x200F) ||
         (c >= 0x202A && c <= 0x202E) || (c >= 0x2060 && c <= 0x2064) || c == 0xFEFF;
}

// ASCII symbols count as punctuation, as in the reference BERT tokenizer;
// beyond ASCII only the common punctuation blocks are covered.
bool is_punctuation(char32_t c) {
  if ((c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126)) return true;
  switch (c) {
    case 0x00A1:
    case 0x00A7:
    case 0x00AB:
    case 0x00B6:
    case 0x00B7:
    case 0x00BB:
    case 0x00BF:
    case 0x037E:
    case 0x0387:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20);
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0x2A700 && c <= 0x2CEAF) || (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x2F800 && c <= 0x2FA1F);
}

bool is_combining_mark(char32_t c) {
  return (c >= 0x0300 && c <= 0x036F) || (c >= 0x1AB0 && c <= 0x1AFF) || (c >= 0x1DC0 && c <= 0x1DFF) ||
         (c >= 0x20D0 && c <= 0x20FF) || (c >= 0xFE20 && c <= 0xFE2F);
}

// Base letter of U+0100..U+017F after canonical decomposition; '-' marks
// letters without one.
constexpr std::string_view kLatinExtA =
    "aaaaaaccccccccdd"
    "--eeeeeeeeeegggg"
    "gggghh--iiiiiiii"
    "i---jjkk-llllll-"
    "---nnnnnn---oooo"
    "oo--rrrrrrssssss"
    "sstttt--uuuuuuuu"
    "uuuuwwyyyzzzzzz-";

char32_t to_lower(char32_t c) {
  if (c < 0x80) return (c >= U'A' && c <= U'Z') ? c + 32 : c;
  if ((c >= 0xC0 && c <= 0xDE && c != 0xD7) || (c >= 0x391 && c <= 0x3AB && c != 0x3A2) ||
      (c >= 0x410 && c <= 0x42F))
    return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  if (c >= 0x100 && c <= 0x17F) {
    if (c == 0x130) return U'i';
    if (c == 0x178) return 0xFF;
    const bool even_upper = (c <= 0x137) || (c >= 0x14A && c <= 0x177);
    const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E);
    if (even_upper && c % 2 == 0) return c + 1;
    if (odd_upper && c % 2 == 1) return c + 1;
  }
  return c;
}

// Approximates NFD followed by dropping nonspacing marks, for Latin scripts.
void push_stripped(std::u32string& out, char32_t c) {
  if (is_combining_mark(c)) return;
  if (c >= 0xC0 && c <= 0xFF) {
    static constexpr std::string_view kLatin1 =
        "aaaaaa-ceeeeiiii-nooooo--uuuuy--"
        "aaaaaa-ceeeeiiii-nooooo--uuuuy-y";
    const char base = kLatin1[c - 0xC0];
    out.push_back(base == '-' ? c : static_cast<char32_t>(base));
    return;
  }
  if (c >= 0x100 && c <= 0x17F) {
    const char base = kLatinExtA[c - 0x100];
    out.push_back(base == '-' ? c : static_cast<char32_t>(base));
    return;
  }
  out.push_back(c);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read tokenizer asset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::int32_t required_id(const std::unordered_map<std::string, std::int32_t>& index, const std::string& token,
                         const std::string& where) {
  const auto it = index.find(token);
  if (it == index.end()) throw FormatError(where + ": vocabulary lacks special token " + token);
  return it->second;
}

}  // namespace

std::size_t TokenSequence::length() const {
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return n;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  const auto pieces = tokenize_pieces(text);
  std::vector<std::int32_t> ids;
  ids.reserve(pieces.size());
  for (const auto& p : pieces) ids.push_back(piece_id(p));
  return ids;
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
  const auto ids = encode(text);
  constexpr std::size_t kContent = kSequenceLength - 2;
  TokenSequence seq;
  seq.truncated = ids.size() > kContent;
  const std::size_t kept = std::min(ids.size(), kContent);
  seq.ids.fill(pad_id_);
  seq.ids[0] = start_id_;
  std::copy_n(ids.begin(), kept, seq.ids.begin() + 1);
  seq.ids[kept + 1] = end_id_;
  std::fill_n(seq.mask.begin(), kept + 2, std::uint8_t{1});
  return seq;
}

// ---------------------------------------------------------------- wordpiece

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase)
    : vocab_(std::move(vocab)), lowercase_(lowercase) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<std::int32_t>(i));
  start_id_ = required_id(index_, "[CLS]", "wordpiece");
  end_id_ = required_id(index_, "[SEP]", "wordpiece");
  pad_id_ = required_id(index_, "[PAD]", "wordpiece");
  unk_id_ = required_id(index_, "[UNK]", "wordpiece");
}

WordPieceTokenizer WordPieceTokenizer::load(const fs::path& vocab_txt, bool lowercase) {
  const std::string content = read_text(vocab_txt);
  std::vector<std::string> vocab;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view text) const {
  std::vector<std::u32string> words;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    char32_t c = utf8::next(text, i);
    if (c == 0 || c == utf8::kReplacement || is_control(c)) continue;
    if (is_whitespace(c)) {
      flush();
      continue;
    }
    if (is_cjk(c) || is_punctuation(c)) {
      flush();
      words.push_back(std::u32string(1, c));
      continue;
    }
    if (lowercase_) {
      push_stripped(current, to_lower(c));
    } else {
      current.push_back(c);
    }
  }
  flush();
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(utf8::encode(w));
  return out;
}

std::vector<std::string> WordPieceTokenizer::tokenize_pieces(std::string_view text) const {
  constexpr std::size_t kMaxWordChars = 100;
  std::vector<std::string> out;
  for (const auto& word : basic_tokenize(text)) {
    const std::u32string cps = utf8::decode(word);
    if (cps.size() > kMaxWordChars) {
      out.push_back("[UNK]");
      continue;
    }
    std::vector<std::string> pieces;
    bool bad = false;
    std::size_t start = 0;
    while (start < cps.size()) {
      std::size_t end = cps.size();
      std::string found;
      while (start < end) {
        std::string candidate = utf8::encode(std::u32string_view(cps).substr(start, end - start));
        if (start > 0) candidate.insert(0, "##");
        if (index_.count(candidate)) {
          found = std::move(candidate);
          break;
        }
        --end;
      }
      if (found.empty()) {
        bad = true;
        break;
      }
      pieces.push_back(std::move(found));
      start = end;
    }
    if (bad) {
      out.push_back("[UNK]");
    } else {
      for (auto& p : pieces) out.push_back(std::move(p));
    }
  }
  return out;
}

std::int32_t WordPieceTokenizer::piece_id(std::string_view piece) const {
  const auto it = index_.find(std::string(piece));
  return it == index_.end() ? unk_id_ : it->second;
}

void WordPieceTokenizer::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream out(dir / "vocab.txt", std::ios::binary);
  for (const auto& v : vocab_) out << v << '\n';
  if (!out) throw LoadError("cannot write " + (dir / "vocab.txt").string());
}

// ---------------------------------------------------------------- byte BPE

namespace {

const std::array<std::string, 256>& byte_symbols() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const bool printable = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
      char32_t cp = printable ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + extra++);
      utf8::append(t[static_cast<std::size_t>(b)], cp);
    }
    return t;
  }();
  return table;
}

enum class CharClass { kSpace, kLetter, kNumber, kOther };

// Letters are approximated as every non-ASCII code point that is not
// whitespace or punctuation.
CharClass classify(char32_t c) {
  if (is_whitespace(c)) return CharClass::kSpace;
  if (c < 0x80) {
    if ((c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z')) return CharClass::kLetter;
    if (c >= U'0' && c <= U'9') return CharClass::kNumber;
    return CharClass::kOther;
  }
  if (is_punctuation(c)) return CharClass::kOther;
  if (c >= 0xFF10 && c <= 0xFF19) return CharClass::kNumber;
  return CharClass::kLetter;
}

}  // namespace

ByteLevelBpeTokenizer::ByteLevelBpeTokenizer(std::unordered_map<std::string, std::int32_t> vocab,
                                             std::vector<std::pair<std::string, std::string>> merges)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) ranks_.emplace(merges_[i], i);
  start_id_ = required_id(vocab_, "<s>", "byte-bpe");
  end_id_ = required_id(vocab_, "</s>", "byte-bpe");
  pad_id_ = required_id(vocab_, "<pad>", "byte-bpe");
  unk_id_ = required_id(vocab_, "<unk>", "byte-bpe");
}

ByteLevelBpeTokenizer ByteLevelBpeTokenizer::load(const fs::path& vocab_json, const fs::path& merges_txt) {
  std::unordered_map<std::string, std::int32_t> vocab;
  try {
    const auto j = nlohmann::json::parse(read_text(vocab_json));
    for (const auto& [k, v] : j.items()) vocab.emplace(k, v.get<std::int32_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(vocab_json.string() + ": " + e.what());
  }
  std::vector<std::pair<std::string, std::string>> merges;
  std::istringstream in(read_text(merges_txt));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("#version", 0) == 0) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw FormatError(merges_txt.string() + ": malformed merge line '" + line + "'");
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return ByteLevelBpeTokenizer(std::move(vocab), std::move(merges));
}

std::vector<std::string> ByteLevelBpeTokenizer::pretokenize(std::string_view text) {
  const std::u32string cps = utf8::decode(text);
  const std::size_t n = cps.size();
  std::vector<std::string> out;
  auto emit = [&](std::size_t from, std::size_t to) { out.push_back(utf8::encode(cps.substr(from, to - from))); };
  auto cls = [&](std::size_t k) { return classify(cps[k]); };

  std::size_t i = 0;
  while (i < n) {
    if (cps[i] == U'\'' && i + 1 < n) {
      const char32_t a = cps[i + 1];
      if (a == U's' || a == U't' || a == U'm' || a == U'd') {
        emit(i, i + 2);
        i += 2;
        continue;
      }
      if (i + 2 < n) {
        const char32_t b = cps[i + 2];
        if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
          emit(i, i + 3);
          i += 3;
          continue;
        }
      }
    }
    const std::size_t body = (cps[i] == U' ' && i + 1 < n && cls(i + 1) != CharClass::kSpace) ? i + 1 : i;
    const CharClass c = cls(body);
    if (c != CharClass::kSpace) {
      std::size_t j = body + 1;
      while (j < n && cls(j) == c) ++j;
      emit(i, j);
      i = j;
      continue;
    }
    std::size_t j = i;
    while (j < n && cls(j) == CharClass::kSpace) ++j;
    // \s+(?!\S): leave the last space to prefix the following word.
    if (j < n && j - i >= 2) --j;
    emit(i, j);
    i = j;
  }
  return out;
}

std::vector<std::string> ByteLevelBpeTokenizer::bpe(const std::string& word) const {
  std::vector<std::string> symbols;
  for (unsigned char b : word) symbols.push_back(byte_symbols()[b]);
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::pair<std::string, std::string> best;
    for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
      const auto it = ranks_.find({symbols[k], symbols[k + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t k = 0; k < symbols.size();) {
      if (k + 1 < symbols.size() && symbols[k] == best.first && symbols[k + 1] == best.second) {
        merged.push_back(symbols[k] + symbols[k + 1]);
        k += 2;
      } else {
        merged.push_back(symbols[k]);
        ++k;
      }
    }
    symbols = std::move(merged);
  }
  return symbols;
}

std::vector<std::string> ByteLevelBpeTokenizer::tokenize_pieces(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& word : pretokenize(text)) {
    for (auto& piece : bpe(word)) out.push_back(std::move(piece));
  }
  return out;
}

std::int32_t ByteLevelBpeTokenizer::piece_id(std::string_view piece) const {
  const auto it = vocab_.find(std::string(piece));
  return it == vocab_.end() ? unk_id_ : it->second;
}

void ByteLevelBpeTokenizer::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::vector<std::pair<std::int32_t, std::string>> by_id;
  for (const auto& [k, v] : vocab_) by_id.emplace_back(v, k);
  std::sort(by_id.begin(), by_id.end());
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, tok] : by_id) j[tok] = id;
  std::ofstream vj(dir / "vocab.json", std::ios::binary);
  vj << j.dump();
  std::ofstream mt(dir / "merges.txt", std::ios::binary);
  mt << "#version: 0.2\n";
  for (const auto& [a, b] : merges_) mt << a << ' ' << b << '\n';
  if (!vj || !mt) throw LoadError("cannot write tokenizer files to " + dir.string());
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Tokenizer> load_tokenizer(const fs::path& dir, bool lowercase) {
  if (fs::exists(dir / "vocab.txt")) {
    return std::make_unique<WordPieceTokenizer>(WordPieceTokenizer::load(dir / "vocab.txt", lowercase));
  }
  if (fs::exists(dir / "vocab.json") && fs::exists(dir / "merges.txt")) {
    return std::make_unique<ByteLevelBpeTokenizer>(
        ByteLevelBpeTokenizer::load(dir / "vocab.json", dir / "merges.txt"));
  }
  throw LoadError("no tokenizer vocabulary in " + dir.string() +
                  " (expected vocab.txt, or vocab.json with merges.txt)");
}

WordPieceTokenizer build_wordpiece_tokenizer(std::span<const std::string> texts, std::size_t max_vocab,
                                             bool lowercase) {
  std::vector<std::string> vocab = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  const WordPieceTokenizer basic(vocab, lowercase);
  std::set<std::u32string> chars;
  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts) {
    for (const auto& w : basic.basic_tokenize(t)) {
      for (char32_t c : utf8::decode(w)) chars.insert(std::u32string(1, c));
      ++freq[w];
    }
  }
  std::set<std::string> present(vocab.begin(), vocab.end());
  auto add = [&](std::string tok) {
    if (vocab.size() < max_vocab && present.insert(tok).second) vocab.push_back(std::move(tok));
  };
  for (const auto& c : chars) add(utf8::encode(c));
  for (const auto& c : chars) add("##" + utf8::encode(c));
  std::vector<std::pair<std::string, std::size_t>> words(freq.begin(), freq.end());
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (auto& [w, count] : words) add(w);
  return WordPieceTokenizer(std::move(vocab), lowercase);
}

}  // namespace aspectminer
