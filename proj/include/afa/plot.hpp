#pragma once

#include "afa/harness.hpp"

namespace afa {

// One budget-curve SVG for a single dataset: a polyline with error bars per
// method, x = acquisition step, y = metric.
std::string render_budget_svg(const std::vector<CsvRow>& rows, const std::string& dataset,
                              const std::string& metric_label);

// Writes one SVG per dataset found in the rows; returns the written paths.
std::vector<std::string> write_budget_svgs(const std::vector<CsvRow>& rows,
                                           const std::string& out_dir);

}  // namespace afa
