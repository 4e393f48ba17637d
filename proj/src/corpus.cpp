#include "aspectminer/corpus.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aspectminer/errors.hpp"
#include "aspectminer/html.hpp"

namespace aspectminer {

namespace {

constexpr char kSentinel = '\x1A';

bool starts_with_placeholder(std::string_view word, std::string_view prefix) {
  while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.front()))) word.remove_prefix(1);
  return word.starts_with(prefix);
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) return false;
    for (int k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += static_cast<std::size_t>(extra) + 1;
  }
  return true;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open dataset file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

// RFC 4180 reader: quoted fields may hold commas, quotes ("") and newlines.
std::vector<CsvRecord> read_csv(std::string_view content) {
  std::vector<CsvRecord> records;
  if (content.starts_with("\xEF\xBB\xBF")) content.remove_prefix(3);
  CsvRecord current;
  std::string field;
  std::size_t line = 1;
  current.line = line;
  bool in_quotes = false;
  bool field_started = false;
  auto end_record = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty();
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
    current.line = line;
    field_started = false;
  };
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      current.fields.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\r') {
      // tolerated before '\n'
    } else if (c == '\n') {
      ++line;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw FormatError("csv: unterminated quoted field starting near line " + std::to_string(current.line));
  if (field_started || !field.empty() || !current.fields.empty()) end_record();
  return records;
}

std::string csv_quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string lower_copy(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::vector<Aspect> AspectSet::to_vector() const {
  std::vector<Aspect> out;
  for (Aspect a : kAllAspects) {
    if (contains(a)) out.push_back(a);
  }
  return out;
}

CleanSentence make_clean_sentence(std::string text) {
  CleanSentence s;
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    if (starts_with_placeholder(w, "URL_")) ++s.placeholders.url;
    if (starts_with_placeholder(w, "CODESNIPPET")) ++s.placeholders.code_snippet;
    if (starts_with_placeholder(w, "CODETERM")) ++s.placeholders.code_term;
  }
  s.text = std::move(text);
  return s;
}

DatasetFormat parse_dataset_format(std::string_view name) {
  const std::string key = lower_copy(name);
  if (key == "opiner-csv" || key == "csv") return DatasetFormat::kOpinerCsv;
  if (key == "jsonl") return DatasetFormat::kJsonl;
  throw UsageError("unknown dataset format '" + std::string(name) + "' (expected opiner-csv or jsonl)");
}

std::string_view dataset_format_name(DatasetFormat format) {
  return format == DatasetFormat::kOpinerCsv ? "opiner-csv" : "jsonl";
}

DatasetFormat infer_dataset_format(const std::filesystem::path& path) {
  const std::string ext = lower_copy(path.extension().string());
  if (ext == ".jsonl" || ext == ".json") return DatasetFormat::kJsonl;
  return DatasetFormat::kOpinerCsv;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') && i + 1 < text.size() && is_space(text[i + 1])) {
      std::string piece = trim(text.substr(begin, i + 1 - begin));
      if (!piece.empty()) out.push_back(std::move(piece));
      begin = i + 1;
    }
  }
  std::string tail = trim(text.substr(begin));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<CleanSentence> preprocess(const RawThreadItem& item) {
  std::string body = item.body;
  for (char& c : body) {
    if (c == kSentinel) c = ' ';
  }
  const std::string lang = code_language_for_tags(item.tags);
  std::string html = normalize_links(body);
  html = replace_code_with(html, [](CodeKind kind) {
    return std::string{kSentinel, kind == CodeKind::kSnippet ? 'S' : 'T'};
  });
  const std::string text = strip_html(html);

  std::vector<CleanSentence> out;
  for (const std::string& raw : split_sentences(text)) {
    std::string sentence;
    int snippets = 0;
    int terms = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == kSentinel && i + 1 < raw.size()) {
        if (raw[i + 1] == 'S') {
          sentence += "CODESNIPPET_" + lang + std::to_string(++snippets);
        } else {
          sentence += "CODETERM_" + lang + std::to_string(++terms);
        }
        ++i;
      } else if (raw[i] != kSentinel) {
        sentence.push_back(raw[i]);
      }
    }
    out.push_back(make_clean_sentence(std::move(sentence)));
  }
  return out;
}

Dataset parse_opiner_csv(std::string_view content, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  if (!valid_utf8(content)) throw FormatError("csv: input is not valid UTF-8");
  const auto records = read_csv(content);
  if (records.empty()) throw FormatError("csv: missing header row");

  int id_col = -1;
  int text_col = -1;
  std::vector<std::pair<int, Aspect>> aspect_cols;
  const auto& header = records.front().fields;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string col = trim(header[c]);
    const std::string key = lower_copy(col);
    if (key == "id") {
      id_col = static_cast<int>(c);
    } else if (key == "text" || key == "sentence") {
      text_col = static_cast<int>(c);
    } else if (auto a = parse_aspect(col)) {
      aspect_cols.emplace_back(static_cast<int>(c), *a);
    } else {
      throw FormatError("csv header: unknown aspect column '" + col + "'");
    }
  }
  if (text_col < 0) throw FormatError("csv header: missing 'text' column");
  if (aspect_cols.empty()) throw FormatError("csv header: no aspect columns");

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "row " + std::to_string(r) + " (line " + std::to_string(rec.line) + ")";
    if (rec.fields.size() != header.size()) {
      throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(rec.fields.size()));
    }
    LabeledSentence item;
    for (const auto& [col, aspect] : aspect_cols) {
      const std::string v = trim(rec.fields[static_cast<std::size_t>(col)]);
      if (v == "1") {
        item.aspects.insert(aspect);
      } else if (v != "0") {
        throw FormatError(where + ": column " + std::string(aspect_name(aspect)) + " must be 0 or 1, got '" + v + "'");
      }
    }
    if (item.aspects.empty()) throw FormatError(where + ": sentence has no aspect");
    item.origin = id_col >= 0 ? rec.fields[static_cast<std::size_t>(id_col)] : "row-" + std::to_string(r);
    item.sentence = make_clean_sentence(rec.fields[static_cast<std::size_t>(text_col)]);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

Dataset parse_jsonl(std::string_view content, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  if (!valid_utf8(content)) throw FormatError("jsonl: input is not valid UTF-8");
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string line = trim(content.substr(pos, nl - pos));
    ++line_no;
    pos = nl + 1;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json row;
    try {
      row = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!row.is_object() || !row.contains("text") || !row["text"].is_string()) {
      throw FormatError(where + ": expected an object with a string 'text'");
    }
    if (!row.contains("aspects") || !row["aspects"].is_array()) {
      throw FormatError(where + ": expected an 'aspects' array");
    }
    LabeledSentence item;
    for (const auto& label : row["aspects"]) {
      if (!label.is_string()) throw FormatError(where + ": aspect labels must be strings");
      const auto a = parse_aspect(label.get<std::string>());
      if (!a) throw FormatError(where + ": unknown aspect '" + label.get<std::string>() + "'");
      item.aspects.insert(*a);
    }
    if (item.aspects.empty()) throw FormatError(where + ": sentence has no aspect");
    if (row.contains("id")) {
      item.origin = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
    } else {
      item.origin = "line-" + std::to_string(line_no);
    }
    item.sentence = make_clean_sentence(row["text"].get<std::string>());
    ds.items.push_back(std::move(item));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (!std::filesystem::exists(path)) throw LoadError("dataset not found: " + path.string());
  const std::string content = read_file(path);
  const std::string name = path.stem().string();
  return format == DatasetFormat::kOpinerCsv ? parse_opiner_csv(content, name) : parse_jsonl(content, name);
}

std::string to_opiner_csv(const Dataset& ds) {
  std::string out = "id,text";
  for (Aspect a : kAllAspects) {
    out += ',';
    out += aspect_name(a);
  }
  out += '\n';
  for (const auto& item : ds.items) {
    out += csv_quote(item.origin);
    out += ',';
    out += csv_quote(item.sentence.text);
    for (Aspect a : kAllAspects) out += item.aspects.contains(a) ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& item : ds.items) {
    nlohmann::json row;
    row["id"] = item.origin;
    row["text"] = item.sentence.text;
    row["aspects"] = nlohmann::json::array();
    for (Aspect a : item.aspects.to_vector()) row["aspects"].push_back(std::string(aspect_name(a)));
    out += row.dump();
    out += '\n';
  }
  return out;
}

AspectDistribution dataset_stats(const Dataset& ds) {
  AspectDistribution dist;
  dist.total = ds.items.size();
  for (const auto& item : ds.items) {
    for (Aspect a : kAllAspects) {
      if (item.aspects.contains(a)) ++dist.counts[aspect_index(a)];
    }
  }
  for (std::size_t i = 0; i < kAspectCount; ++i) {
    dist.rates[i] = dist.total == 0 ? 0.0 : static_cast<double>(dist.counts[i]) / static_cast<double>(dist.total);
  }
  return dist;
}

int rounded_percent(double rate) { return static_cast<int>(std::floor(rate * 100.0 + 0.5)); }

std::string stats_to_csv(const AspectDistribution& dist) {
  std::string out = "aspect,count,percentage\n";
  for (Aspect a : kAllAspects) {
    out += std::string(aspect_name(a)) + ',' + std::to_string(dist.count(a)) + ',' +
           std::to_string(rounded_percent(dist.rate(a))) + '\n';
  }
  return out;
}

nlohmann::json stats_to_json(const AspectDistribution& dist) {
  nlohmann::json j;
  j["total"] = dist.total;
  j["aspects"] = nlohmann::json::array();
  for (Aspect a : kAllAspects) {
    j["aspects"].push_back({{"aspect", std::string(aspect_name(a))},
                            {"count", dist.count(a)},
                            {"rate", dist.rate(a)},
                            {"percentage", rounded_percent(dist.rate(a))}});
  }
  return j;
}

std::string stats_to_text(const AspectDistribution& dist) {
  std::string out;
  for (Aspect a : kAllAspects) {
    out += std::string(aspect_name(a)) + ' ' + std::to_string(dist.count(a)) + ' ' +
           std::to_string(rounded_percent(dist.rate(a))) + "%\n";
  }
  out += "Total " + std::to_string(dist.total) + '\n';
  return out;
}

BinaryView binarize(const Dataset& ds, Aspect target) {
  BinaryView view;
  view.target = target;
  for (const auto& item : ds.items) {
    (item.aspects.contains(target) ? view.positives : view.negatives).push_back(item);
  }
  return view;
}

}  // namespace aspectminer
