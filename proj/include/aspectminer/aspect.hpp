#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace aspectminer {

// The closed set of API aspects. Declaration order is the canonical
// reporting order used by stats tables and reports.
enum class Aspect {
  kPerformance,
  kUsability,
  kSecurity,
  kCommunity,
  kCompatibility,
  kPortability,
  kDocumentation,
  kBug,
  kLegal,
  kOnlySentiment,
  kOthers,
};

inline constexpr std::size_t kAspectCount = 11;

inline constexpr std::array<Aspect, kAspectCount> kAllAspects = {
    Aspect::kPerformance,   Aspect::kUsability, Aspect::kSecurity,
    Aspect::kCommunity,     Aspect::kCompatibility, Aspect::kPortability,
    Aspect::kDocumentation, Aspect::kBug,       Aspect::kLegal,
    Aspect::kOnlySentiment, Aspect::kOthers,
};

std::string_view aspect_name(Aspect a);

// Accepts the canonical names plus case/space/underscore variants
// ("Only Sentiment", "onlysentiment"). Returns nullopt for anything else.
std::optional<Aspect> parse_aspect(std::string_view name);

inline constexpr std::size_t aspect_index(Aspect a) {
  return static_cast<std::size_t>(a);
}

}  // namespace aspectminer
