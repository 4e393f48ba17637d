#include "aspectminer/report.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "aspectminer/errors.hpp"

namespace aspectminer {

ReportFormat parse_report_format(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "csv") return ReportFormat::kCsv;
  if (lower == "json") return ReportFormat::kJson;
  if (lower == "markdown" || lower == "md") return ReportFormat::kMarkdown;
  throw UsageError("unknown report format '" + std::string(name) + "' (expected csv, json or markdown)");
}

std::string round2(double value) {
  // The 1e-9 nudge makes binary near-misses like 0.575 round as their decimal
  // spelling does.
  const double scaled = std::floor(std::abs(value) * 100.0 + 0.5 + 1e-9);
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%.2f", value < 0 && scaled != 0 ? "-" : "", scaled / 100.0);
  return buf;
}

// ---------------------------------------------------------------- json

namespace {

std::string aspect_str(Aspect a) { return std::string(aspect_name(a)); }

Aspect aspect_of(const std::string& name) {
  const auto a = parse_aspect(name);
  if (!a) throw FormatError("report: unknown aspect " + name);
  return *a;
}

}  // namespace

nlohmann::json report_to_json(const ComparisonReport& r) {
  nlohmann::json j;
  j["format"] = "aspectminer-report";
  j["version"] = 1;
  j["models"] = r.models;
  j["baseline_name"] = r.baseline_name;
  j["cells"] = nlohmann::json::array();
  for (const auto& [key, cell] : r.cells) j["cells"].push_back(aspect_result_to_json(cell));
  j["baseline"] = nlohmann::json::array();
  for (const auto& [a, cell] : r.baseline) j["baseline"].push_back(aspect_result_to_json(cell));
  j["best_by"] = nlohmann::json::object();
  for (const auto& [metric, by_aspect] : r.best_by) {
    for (const auto& [a, model] : by_aspect) j["best_by"][metric][aspect_str(a)] = model;
  }
  j["improvement"] = nlohmann::json::object();
  for (const auto& [metric, by_aspect] : r.improvement) {
    for (const auto& [a, value] : by_aspect) j["improvement"][metric][aspect_str(a)] = value;
  }
  j["failures"] = nlohmann::json::array();
  for (const auto& [key, msg] : r.failures) {
    j["failures"].push_back({{"aspect", aspect_str(key.first)}, {"model", key.second}, {"error", msg}});
  }
  j["provenance"] = r.provenance.is_null() ? nlohmann::json::object() : r.provenance;
  return j;
}

ComparisonReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "aspectminer-report") throw FormatError("not an aspectminer report");
    ComparisonReport r;
    r.models = j.at("models").get<std::vector<std::string>>();
    r.baseline_name = j.at("baseline_name").get<std::string>();
    for (const auto& c : j.at("cells")) {
      AspectResult a = aspect_result_from_json(c);
      r.cells.emplace(std::make_pair(a.aspect, a.model_name), std::move(a));
    }
    for (const auto& c : j.at("baseline")) {
      AspectResult a = aspect_result_from_json(c);
      r.baseline.emplace(a.aspect, std::move(a));
    }
    for (const auto& [metric, by_aspect] : j.at("best_by").items()) {
      for (const auto& [a, model] : by_aspect.items()) r.best_by[metric][aspect_of(a)] = model.get<std::string>();
    }
    for (const auto& [metric, by_aspect] : j.at("improvement").items()) {
      for (const auto& [a, value] : by_aspect.items()) r.improvement[metric][aspect_of(a)] = value.get<double>();
    }
    for (const auto& f : j.at("failures")) {
      r.failures[{aspect_of(f.at("aspect").get<std::string>()), f.at("model").get<std::string>()}] =
          f.at("error").get<std::string>();
    }
    r.provenance = j.at("provenance");
    if (r.provenance.empty()) r.provenance = nlohmann::json();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

// ---------------------------------------------------------------- human formats

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

void write_csv(std::ostream& out, const Table& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_field(cells[i]);
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

void write_markdown(std::ostream& out, const Table& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (const auto& c : cells) out << ' ' << c << " |";
    out << '\n';
  };
  line(t.header);
  out << '|';
  for (std::size_t i = 0; i < t.header.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& r : t.rows) line(r);
}

const char* short_metric(MetricName m) {
  switch (m) {
    case MetricName::kPrecision:
      return "P";
    case MetricName::kRecall:
      return "R";
    case MetricName::kF1:
      return "F1";
  }
  return "?";
}

Table metrics_table(const ComparisonReport& r) {
  Table t;
  t.header = {"Aspect", "Metric"};
  for (const auto& m : r.models) t.header.push_back(m);
  if (!r.baseline_name.empty()) t.header.push_back(r.baseline_name);
  for (Aspect a : r.aspects()) {
    for (MetricName metric : kAllMetrics) {
      std::vector<std::string> row = {aspect_str(a), short_metric(metric)};
      for (const auto& m : r.models) {
        const auto it = r.cells.find({a, m});
        row.push_back(it == r.cells.end() ? "-" : round2(metric_value(it->second.mean, metric)));
      }
      if (!r.baseline_name.empty()) {
        const auto it = r.baseline.find(a);
        row.push_back(it == r.baseline.end() ? "-" : round2(metric_value(it->second.mean, metric)));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::string config_field(const nlohmann::json& cfg, const char* key) {
  if (!cfg.is_object() || !cfg.contains(key)) return "-";
  const auto& v = cfg.at(key);
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2E", v.get<double>());
    return buf;
  }
  return v.dump();
}

// Best model per aspect by precision with its hyperparameters.
Table best_precision_table(const ComparisonReport& r) {
  Table t;
  t.header = {"Aspect", "Model", "Batch size", "Epochs", "Learning rate"};
  const auto it = r.best_by.find("precision");
  if (it == r.best_by.end()) return t;
  for (const auto& [a, model] : it->second) {
    const auto& cfg = r.cells.at({a, model}).config;
    t.rows.push_back({aspect_str(a), model, config_field(cfg, "batch_size"), config_field(cfg, "epochs"),
                      config_field(cfg, "learning_rate")});
  }
  return t;
}

Table best_by_table(const ComparisonReport& r) {
  Table t;
  t.header = {"Aspect"};
  for (MetricName m : kAllMetrics) t.header.push_back(std::string("Best ") + short_metric(m));
  const bool has_improvement = !r.improvement.empty();
  if (has_improvement) t.header.push_back("F1 improvement over " + r.baseline_name);
  for (Aspect a : r.aspects()) {
    std::vector<std::string> row = {aspect_str(a)};
    bool any = false;
    for (MetricName m : kAllMetrics) {
      const auto by = r.best_by.find(std::string(metric_name(m)));
      if (by != r.best_by.end() && by->second.count(a)) {
        row.push_back(by->second.at(a));
        any = true;
      } else {
        row.push_back("-");
      }
    }
    if (!any) continue;
    if (has_improvement) {
      const auto f1 = r.improvement.find("f1");
      if (f1 != r.improvement.end() && f1->second.count(a)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.0f%%", std::floor(f1->second.at(a) * 100.0 + 0.5 + 1e-9));
        row.push_back(buf);
      } else {
        row.push_back("-");
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table failures_table(const ComparisonReport& r) {
  Table t;
  t.header = {"Aspect", "Model", "Error"};
  for (const auto& [key, msg] : r.failures) t.rows.push_back({aspect_str(key.first), key.second, msg});
  return t;
}

}  // namespace

std::string render_report(const ComparisonReport& r, ReportFormat format) {
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kJson:
      return report_to_json(r).dump(2) + "\n";
    case ReportFormat::kCsv:
      write_csv(out, metrics_table(r));
      break;
    case ReportFormat::kMarkdown: {
      out << "## Results\n\n";
      write_markdown(out, metrics_table(r));
      const Table best = best_by_table(r);
      if (!best.rows.empty()) {
        out << "\n## Best model per metric\n\n";
        write_markdown(out, best);
      }
      const Table hyper = best_precision_table(r);
      if (!hyper.rows.empty()) {
        out << "\n## Best models by precision with hyperparameters\n\n";
        write_markdown(out, hyper);
      }
      if (!r.failures.empty()) {
        out << "\n## Missing cells\n\n";
        write_markdown(out, failures_table(r));
      }
      break;
    }
  }
  return out.str();
}

std::string render_report(const ComparisonReport& r, std::string_view format) {
  return render_report(r, parse_report_format(format));
}

}  // namespace aspectminer
