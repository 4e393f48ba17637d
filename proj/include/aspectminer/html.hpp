#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace aspectminer {

enum class CodeKind { kSnippet, kTerm };

// Language tag used inside code placeholders: "JAVA" for Java-tagged
// threads, "GEN" otherwise.
std::string code_language_for_tags(const std::vector<std::string>& tags);

// Removes element markup, decodes entity references and collapses
// whitespace. Never throws; stray or unterminated markup is dropped.
// Angle brackets never survive, including ones produced by &lt;/&gt;.
std::string strip_html(std::string_view body);

// Decodes named and numeric character references. Unknown references are
// left untouched.
std::string decode_entities(std::string_view text);

// Replaces each <a> element with `URL_` followed by its visible text (or the
// href when the text is empty), whitespace removed. The result is still an
// HTML fragment; `&` inside the token is re-escaped.
std::string normalize_links(std::string_view fragment);

// Replaces <pre> blocks with CODESNIPPET_<LANG><n> and inline <code> with
// CODETERM_<LANG><n>; counters are 1-based per kind across the fragment.
// The outermost code element wins and its content is discarded.
std::string replace_code(std::string_view fragment, std::string_view language);

// Lower-level form used by the preprocessing pipeline: `emit` supplies the
// replacement text for each code element in document order.
std::string replace_code_with(std::string_view fragment,
                              const std::function<std::string(CodeKind)>& emit);

}  // namespace aspectminer
