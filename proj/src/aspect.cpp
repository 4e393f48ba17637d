#include "aspectminer/aspect.hpp"

#include <cctype>

namespace aspectminer {

namespace {

constexpr std::array<std::string_view, kAspectCount> kNames = {
    "Performance",   "Usability",   "Security", "Community",
    "Compatibility", "Portability", "Documentation", "Bug",
    "Legal",         "OnlySentiment", "Others",
};

std::string fold_name(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == ' ' || c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::string_view aspect_name(Aspect a) { return kNames[aspect_index(a)]; }

std::optional<Aspect> parse_aspect(std::string_view name) {
  const std::string key = fold_name(name);
  for (Aspect a : kAllAspects) {
    if (fold_name(aspect_name(a)) == key) return a;
  }
  return std::nullopt;
}

}  // namespace aspectminer
