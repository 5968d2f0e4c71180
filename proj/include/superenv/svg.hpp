#pragma once

#include <string>
#include <vector>

namespace superenv {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Static SVG: one polyline per series over a box with min/max tick labels. Non-finite points are skipped.
std::string line_plot_svg(const std::string& title, const std::vector<Series>& series, bool log_x = false,
                          bool log_y = false);

std::string histogram_svg(const std::string& title, const std::vector<double>& values, int bins = 30);

} // namespace superenv
