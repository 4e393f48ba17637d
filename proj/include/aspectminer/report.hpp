#pragma once

#include <string>
#include <string_view>

#include "aspectminer/evaluation.hpp"
#include "json.hpp"

namespace aspectminer {

enum class ReportFormat { kCsv, kJson, kMarkdown };

// "csv", "json", "markdown" (also "md"). Throws UsageError otherwise.
ReportFormat parse_report_format(std::string_view name);

// Half-up rounding to two decimals, e.g. 0.125 -> "0.13", 0.575 -> "0.58".
std::string round2(double value);

nlohmann::json report_to_json(const ComparisonReport& report);
ComparisonReport report_from_json(const nlohmann::json& j);

// Human formats: one row per (aspect, metric), model columns then the
// baseline column, values rounded to 2 decimals; followed by the best-model
// sections. JSON keeps full precision.
std::string render_report(const ComparisonReport& report, ReportFormat format);
std::string render_report(const ComparisonReport& report, std::string_view format);

}  // namespace aspectminer
