#include "aspectminer/html.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>

namespace aspectminer {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) { return lower(x) == lower(y); });
}

struct Tag {
  std::string name;  // lower-case
  bool closing = false;
  std::size_t begin = 0;
  std::size_t end = 0;  // one past '>' (or end of input when unterminated)
  std::string_view attrs;
};

// Lexes the tag starting at s[pos] == '<'. Returns nullopt when the '<' does
// not open an element tag.
std::optional<Tag> lex_tag(std::string_view s, std::size_t pos) {
  std::size_t j = pos + 1;
  Tag tag;
  tag.begin = pos;
  if (j < s.size() && s[j] == '/') {
    tag.closing = true;
    ++j;
  }
  if (j >= s.size() || !is_alpha(s[j])) return std::nullopt;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '-' || s[j] == ':')) {
    tag.name.push_back(lower(s[j]));
    ++j;
  }
  const std::size_t attrs_begin = j;
  char quote = 0;
  std::size_t k = j;
  for (; k < s.size(); ++k) {
    const char c = s[k];
    if (quote != 0) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      // Only treat quotes as delimiters directly after '='.
      std::size_t p = k;
      while (p > attrs_begin && is_space(s[p - 1])) --p;
      if (p > attrs_begin && s[p - 1] == '=') quote = c;
    } else if (c == '>') {
      break;
    }
  }
  tag.attrs = s.substr(attrs_begin, std::min(k, s.size()) - attrs_begin);
  tag.end = k < s.size() ? k + 1 : s.size();
  return tag;
}

// Skips a comment, doctype or processing instruction starting at pos.
std::optional<std::size_t> skip_declaration(std::string_view s, std::size_t pos) {
  if (s.substr(pos, 4) == "<!--") {
    const auto close = s.find("-->", pos + 4);
    return close == std::string_view::npos ? s.size() : close + 3;
  }
  if (pos + 1 < s.size() && (s[pos + 1] == '!' || s[pos + 1] == '?')) {
    const auto close = s.find('>', pos + 2);
    return close == std::string_view::npos ? s.size() : close + 1;
  }
  return std::nullopt;
}

struct CloseMatch {
  std::size_t inner_end;  // start of the closing tag
  std::size_t end;        // one past the closing tag
};

// Finds the close tag matching an already-consumed open tag `name`, counting
// nested elements of the same name. Unclosed elements run to end of input.
CloseMatch find_close(std::string_view s, std::size_t from, std::string_view name) {
  int depth = 1;
  std::size_t i = from;
  while (i < s.size()) {
    const auto lt = s.find('<', i);
    if (lt == std::string_view::npos) break;
    auto tag = lex_tag(s, lt);
    if (!tag) {
      i = lt + 1;
      continue;
    }
    if (tag->name == name) {
      depth += tag->closing ? -1 : 1;
      if (depth == 0) return {lt, tag->end};
    }
    i = tag->end;
  }
  return {s.size(), s.size()};
}

std::optional<std::string> attribute(std::string_view attrs, std::string_view key) {
  std::size_t i = 0;
  while (i < attrs.size()) {
    while (i < attrs.size() && (is_space(attrs[i]) || attrs[i] == '/')) ++i;
    const std::size_t name_begin = i;
    while (i < attrs.size() && !is_space(attrs[i]) && attrs[i] != '=' && attrs[i] != '/') ++i;
    const std::string_view name = attrs.substr(name_begin, i - name_begin);
    while (i < attrs.size() && is_space(attrs[i])) ++i;
    std::string value;
    if (i < attrs.size() && attrs[i] == '=') {
      ++i;
      while (i < attrs.size() && is_space(attrs[i])) ++i;
      if (i < attrs.size() && (attrs[i] == '"' || attrs[i] == '\'')) {
        const char q = attrs[i++];
        const auto close = attrs.find(q, i);
        const std::size_t stop = close == std::string_view::npos ? attrs.size() : close;
        value.assign(attrs.substr(i, stop - i));
        i = stop == attrs.size() ? stop : stop + 1;
      } else {
        const std::size_t vb = i;
        while (i < attrs.size() && !is_space(attrs[i])) ++i;
        value.assign(attrs.substr(vb, i - vb));
      }
    }
    if (name.empty()) {
      if (i == name_begin) ++i;
      continue;
    }
    if (iequals(name, key)) return value;
  }
  return std::nullopt;
}

// Tags that render inline and therefore do not separate words.
bool is_inline_tag(std::string_view name) {
  static constexpr std::array<std::string_view, 24> kInline = {
      "a",    "abbr", "b",    "big",  "cite", "code",   "del",   "dfn",
      "em",   "font", "i",    "ins",  "kbd",  "mark",   "q",     "s",
      "samp", "small", "span", "strike", "strong", "sub", "sup", "tt"};
  return std::find(kInline.begin(), kInline.end(), name) != kInline.end() || name == "u" ||
         name == "var";
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

struct NamedEntity {
  std::string_view name;
  std::uint32_t code_point;
};

constexpr std::array<NamedEntity, 40> kEntities = {{
    {"amp", '&'},       {"lt", '<'},        {"gt", '>'},        {"quot", '"'},
    {"apos", '\''},     {"nbsp", ' '},      {"copy", 0xA9},     {"reg", 0xAE},
    {"trade", 0x2122},  {"hellip", 0x2026}, {"mdash", 0x2014},  {"ndash", 0x2013},
    {"lsquo", 0x2018},  {"rsquo", 0x2019},  {"ldquo", 0x201C},  {"rdquo", 0x201D},
    {"bull", 0x2022},   {"middot", 0xB7},   {"laquo", 0xAB},    {"raquo", 0xBB},
    {"euro", 0x20AC},   {"pound", 0xA3},    {"yen", 0xA5},      {"cent", 0xA2},
    {"sect", 0xA7},     {"deg", 0xB0},      {"plusmn", 0xB1},   {"times", 0xD7},
    {"divide", 0xF7},   {"frac12", 0xBD},   {"larr", 0x2190},   {"rarr", 0x2192},
    {"uarr", 0x2191},   {"darr", 0x2193},   {"hArr", 0x21D4},   {"rArr", 0x21D2},
    {"para", 0xB6},     {"shy", 0xAD},      {"iexcl", 0xA1},    {"iquest", 0xBF},
}};

// Decodes the reference starting at s[pos] == '&'. On success appends the
// decoded text and returns the index after ';'.
std::optional<std::size_t> decode_entity_at(std::string_view s, std::size_t pos, std::string& out) {
  const auto semi = s.find(';', pos + 1);
  if (semi == std::string_view::npos || semi - pos > 12) return std::nullopt;
  const std::string_view body = s.substr(pos + 1, semi - pos - 1);
  if (body.empty()) return std::nullopt;
  if (body[0] == '#') {
    std::uint32_t cp = 0;
    const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
    const std::string_view digits = body.substr(hex ? 2 : 1);
    if (digits.empty()) return std::nullopt;
    for (char c : digits) {
      const int d = hex ? (std::isxdigit(static_cast<unsigned char>(c))
                               ? (std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : lower(c) - 'a' + 10)
                               : -1)
                        : (std::isdigit(static_cast<unsigned char>(c)) ? c - '0' : -1);
      if (d < 0) return std::nullopt;
      cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
      if (cp > 0x10FFFF) cp = 0x110000;
    }
    append_utf8(out, cp);
    return semi + 1;
  }
  for (const auto& e : kEntities) {
    if (e.name == body) {
      append_utf8(out, e.code_point);
      return semi + 1;
    }
  }
  return std::nullopt;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const bool nbsp = static_cast<unsigned char>(c) == 0xC2 && i + 1 < s.size() &&
                      static_cast<unsigned char>(s[i + 1]) == 0xA0;
    if (is_space(c) || nbsp) {
      pending_space = !out.empty();
      if (nbsp) ++i;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string remove_whitespace(std::string_view s) {
  std::string out;
  for (char c : collapse_whitespace(s)) {
    if (c != ' ') out.push_back(c);
  }
  return out;
}

}  // namespace

std::string code_language_for_tags(const std::vector<std::string>& tags) {
  for (const auto& t : tags) {
    if (iequals(t, "java")) return "JAVA";
  }
  return "GEN";
}

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '&') {
      if (auto next = decode_entity_at(text, i, out)) {
        i = *next;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

std::string strip_html(std::string_view body) {
  std::string raw;
  raw.reserve(body.size());
  std::size_t i = 0;
  while (i < body.size()) {
    const char c = body[i];
    if (c == '<') {
      if (auto after = skip_declaration(body, i)) {
        raw.push_back(' ');
        i = *after;
        continue;
      }
      if (auto tag = lex_tag(body, i)) {
        if (!tag->closing && (tag->name == "script" || tag->name == "style")) {
          i = find_close(body, tag->end, tag->name).end;
          raw.push_back(' ');
          continue;
        }
        if (!is_inline_tag(tag->name)) raw.push_back(' ');
        i = tag->end;
        continue;
      }
      raw.push_back(' ');
      ++i;
      continue;
    }
    if (c == '>') {
      raw.push_back(' ');
      ++i;
      continue;
    }
    if (c == '&') {
      std::string decoded;
      if (auto next = decode_entity_at(body, i, decoded)) {
        for (char d : decoded) raw.push_back(d == '<' || d == '>' ? ' ' : d);
        i = *next;
        continue;
      }
    }
    raw.push_back(c);
    ++i;
  }
  return collapse_whitespace(raw);
}

std::string normalize_links(std::string_view fragment) {
  std::string out;
  out.reserve(fragment.size());
  std::size_t i = 0;
  while (i < fragment.size()) {
    const auto lt = fragment.find('<', i);
    if (lt == std::string_view::npos) break;
    auto tag = lex_tag(fragment, lt);
    if (!tag || tag->closing || tag->name != "a") {
      const std::size_t stop = tag ? tag->end : lt + 1;
      out.append(fragment.substr(i, stop - i));
      i = stop;
      continue;
    }
    out.append(fragment.substr(i, lt - i));
    const CloseMatch close = find_close(fragment, tag->end, "a");
    std::string target = remove_whitespace(strip_html(fragment.substr(tag->end, close.inner_end - tag->end)));
    if (target.empty()) {
      if (auto href = attribute(tag->attrs, "href")) target = remove_whitespace(decode_entities(*href));
    }
    out.append("URL_");
    for (char c : target) {
      if (c == '&') {
        out.append("&amp;");
      } else if (c != '<' && c != '>') {
        out.push_back(c);
      }
    }
    i = close.end;
  }
  if (i < fragment.size()) out.append(fragment.substr(i));
  return out;
}

std::string replace_code_with(std::string_view fragment,
                              const std::function<std::string(CodeKind)>& emit) {
  std::string out;
  out.reserve(fragment.size());
  std::size_t i = 0;
  while (i < fragment.size()) {
    const auto lt = fragment.find('<', i);
    if (lt == std::string_view::npos) break;
    auto tag = lex_tag(fragment, lt);
    if (!tag || tag->closing || (tag->name != "pre" && tag->name != "code")) {
      const std::size_t stop = tag ? tag->end : lt + 1;
      out.append(fragment.substr(i, stop - i));
      i = stop;
      continue;
    }
    out.append(fragment.substr(i, lt - i));
    const CloseMatch close = find_close(fragment, tag->end, tag->name);
    if (tag->name == "pre") {
      out.push_back(' ');
      out.append(emit(CodeKind::kSnippet));
      out.push_back(' ');
    } else {
      out.append(emit(CodeKind::kTerm));
    }
    i = close.end;
  }
  if (i < fragment.size()) out.append(fragment.substr(i));
  return out;
}

std::string replace_code(std::string_view fragment, std::string_view language) {
  int snippets = 0;
  int terms = 0;
  const std::string lang(language);
  return replace_code_with(fragment, [&](CodeKind kind) {
    if (kind == CodeKind::kSnippet) return "CODESNIPPET_" + lang + std::to_string(++snippets);
    return "CODETERM_" + lang + std::to_string(++terms);
  });
}

}  // namespace aspectminer
