#pragma once

// Hand-rolled generators shared by the property-style tests.

#include <string>
#include <vector>

#include "aspectminer/corpus.hpp"
#include "aspectminer/random.hpp"

namespace aspectminer::testing {

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> words = {
      "the",    "api",     "is",      "fast",   "slow",    "buggy",   "secure", "license",
      "docs",   "works",   "fine",    "with",   "java",    "library", "thread", "safe",
      "parser", "crashes", "often",   "under",  "load",    "windows", "linux",  "community",
      "great",  "I",       "think",   "use",    "memory",  "XML",     "JSON",   "HTTP",
      "doesn't", "(see",   "below)",  "it's",   "v2.0",    "e.g.",    "100%",   "café",
  };
  return words;
}

inline std::string random_words(Rng& rng, std::size_t count) {
  const auto& pool = word_pool();
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i > 0) out.push_back(' ');
    out += pool[uniform_index(rng, pool.size())];
  }
  return out;
}

// Random HTML fragment mixing inline/block tags, anchors, code, entities and
// stray markup. Never produces double-escaped entities.
inline std::string random_html(Rng& rng, int depth = 0) {
  static const std::vector<std::string> inline_tags = {"b", "i", "em", "strong", "span"};
  static const std::vector<std::string> block_tags = {"p", "div", "li", "blockquote", "h2"};
  static const std::vector<std::string> entities = {"&amp;", "&lt;", "&gt;", "&quot;", "&#39;", "&nbsp;", "&#x41;"};
  std::string out;
  const std::size_t parts = 1 + uniform_index(rng, 5);
  for (std::size_t p = 0; p < parts; ++p) {
    switch (uniform_index(rng, depth > 2 ? 3 : 9)) {
      case 0:
      case 1:
        out += random_words(rng, 1 + uniform_index(rng, 6));
        break;
      case 2:
        out += entities[uniform_index(rng, entities.size())];
        break;
      case 3: {
        const auto& t = inline_tags[uniform_index(rng, inline_tags.size())];
        out += "<" + t + ">" + random_html(rng, depth + 1) + "</" + t + ">";
        break;
      }
      case 4: {
        const auto& t = block_tags[uniform_index(rng, block_tags.size())];
        out += "<" + t + " class=\"x\">" + random_html(rng, depth + 1);
        if (uniform_index(rng, 4) != 0) out += "</" + t + ">";
        break;
      }
      case 5:
        out += "<a href=\"http://example.com/" + std::to_string(uniform_index(rng, 100)) + "\">" +
               (uniform_index(rng, 3) == 0 ? std::string() : random_words(rng, 2)) + "</a>";
        break;
      case 6:
        out += uniform_index(rng, 2) == 0 ? "<pre><code>int x = a < b;\n</code></pre>"
                                          : "<code>List&lt;String&gt;</code>";
        break;
      case 7:
        out += uniform_index(rng, 2) == 0 ? "<br/>" : "<!-- note -->";
        break;
      default:
        out += uniform_index(rng, 2) == 0 ? " a < b " : ". ";
        break;
    }
    out.push_back(' ');
  }
  return out;
}

// Labeled dataset with random aspect sets (each row non-empty).
inline Dataset random_dataset(Rng& rng, std::size_t n) {
  Dataset ds;
  ds.name = "random";
  for (std::size_t i = 0; i < n; ++i) {
    LabeledSentence item;
    item.sentence = make_clean_sentence(random_words(rng, 3 + uniform_index(rng, 10)));
    for (Aspect a : kAllAspects) {
      if (uniform_index(rng, 5) == 0) item.aspects.insert(a);
    }
    if (item.aspects.empty()) item.aspects.insert(Aspect::kOthers);
    item.origin = "r" + std::to_string(i);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace aspectminer::testing
