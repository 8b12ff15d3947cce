#pragma once

#include <filesystem>
#include <vector>

namespace rscope::pipeline {

// Renders SVG analogs of the report tables found in `report_dir`:
// angles_boxplot.svg, retention_heatmap_<level>.svg and delta_c.svg.
// Throws ParseError on malformed CSV.
std::vector<std::filesystem::path> render_plots(const std::filesystem::path& report_dir);

}  // namespace rscope::pipeline
