#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tapool/adaptive_ci.hpp"
#include "tapool/simlab.hpp"
#include "tapool/tap.hpp"

namespace tapool {

using Json = nlohmann::ordered_json;

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

Json to_json(const VarComps& vc);
Json to_json(const TuningParams& t);
Json to_json(const TapEstimate& tap);
Json to_json(const Interval& iv);
Json to_json(const StudySummary& s, bool include_records = false);

TapEstimate tap_from_json(const Json& j);
Interval interval_from_json(const Json& j);

// One row per estimator and per interval method:
// scenario,kind,name,count,bias,var,mse,coverage,width
extern const char* const kSummaryCsvHeader;
std::string summary_csv(const StudySummary& s);

struct SummaryCsvRow {
  double scenario = 0.0;
  std::string kind;  // "estimator" or "interval"
  std::string name;
  int count = 0;
  double bias = 0.0, var = 0.0, mse = 0.0, coverage = 0.0, width = 0.0;
};
std::vector<SummaryCsvRow> parse_summary_csv(const std::string& text);

// Plain-text tables with moments scaled by 10^3.
std::string summary_table(const StudySummary& s);
std::string estimate_text(const TapEstimate& tap, const std::vector<Interval>& intervals);

extern const char* const kToyCsvHeader;
std::string toy_csv(const std::vector<ToyRow>& rows);
std::vector<ToyRow> parse_toy_csv(const std::string& text);

}  // namespace tapool
