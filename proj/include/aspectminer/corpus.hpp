#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "aspectminer/aspect.hpp"

namespace aspectminer {

enum class ThreadItemKind { kQuestion, kAnswer, kComment };

struct RawThreadItem {
  std::string source_id;
  ThreadItemKind kind = ThreadItemKind::kQuestion;
  std::string body;               // HTML fragment
  std::vector<std::string> tags;  // thread tags; selects the code placeholder language
};

struct PlaceholderCounts {
  int url = 0;
  int code_snippet = 0;
  int code_term = 0;

  bool operator==(const PlaceholderCounts&) const = default;
};

struct CleanSentence {
  std::string text;
  PlaceholderCounts placeholders;

  bool operator==(const CleanSentence&) const = default;
};

// Wraps plain text, counting the placeholder tokens already present in it.
CleanSentence make_clean_sentence(std::string text);

class AspectSet {
 public:
  AspectSet() = default;
  AspectSet(std::initializer_list<Aspect> aspects) {
    for (Aspect a : aspects) insert(a);
  }

  void insert(Aspect a) { bits_.set(aspect_index(a)); }
  bool contains(Aspect a) const { return bits_.test(aspect_index(a)); }
  bool empty() const { return bits_.none(); }
  std::size_t size() const { return bits_.count(); }
  std::vector<Aspect> to_vector() const;

  bool operator==(const AspectSet&) const = default;

 private:
  std::bitset<kAspectCount> bits_;
};

struct LabeledSentence {
  CleanSentence sentence;
  AspectSet aspects;
  std::string origin;

  bool operator==(const LabeledSentence&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<LabeledSentence> items;

  std::size_t size() const { return items.size(); }
  bool operator==(const Dataset&) const = default;
};

struct AspectDistribution {
  std::size_t total = 0;
  std::array<std::size_t, kAspectCount> counts{};
  std::array<double, kAspectCount> rates{};

  std::size_t count(Aspect a) const { return counts[aspect_index(a)]; }
  double rate(Aspect a) const { return rates[aspect_index(a)]; }
};

struct BinaryView {
  Aspect target = Aspect::kOthers;
  std::vector<LabeledSentence> positives;
  std::vector<LabeledSentence> negatives;

  std::size_t size() const { return positives.size() + negatives.size(); }
};

enum class DatasetFormat { kOpinerCsv, kJsonl };

DatasetFormat parse_dataset_format(std::string_view name);
std::string_view dataset_format_name(DatasetFormat format);
// Picks the format from the extension (.csv / .jsonl / .json).
DatasetFormat infer_dataset_format(const std::filesystem::path& path);

// Sentence boundaries: '.', '!' or '?' followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

// normalize_links -> replace_code -> strip_html -> split_sentences, with
// code placeholders numbered per resulting sentence.
std::vector<CleanSentence> preprocess(const RawThreadItem& item);

// Throws LoadError when the file is missing and FormatError (naming the row)
// on malformed content.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset parse_opiner_csv(std::string_view content, std::string name);
Dataset parse_jsonl(std::string_view content, std::string name);

// Canonical serializers; parse_* round-trips them.
std::string to_opiner_csv(const Dataset& ds);
std::string to_jsonl(const Dataset& ds);

AspectDistribution dataset_stats(const Dataset& ds);

// Whole-number percentage, rounded half up, as printed in distribution tables.
int rounded_percent(double rate);

std::string stats_to_csv(const AspectDistribution& dist);
nlohmann::json stats_to_json(const AspectDistribution& dist);
// Two-column "Aspect count pct%" text table.
std::string stats_to_text(const AspectDistribution& dist);

BinaryView binarize(const Dataset& ds, Aspect target);

}  // namespace aspectminer
