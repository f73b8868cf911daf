#pragma once

#include <string>
#include <vector>

namespace taskadapt {

struct PlotSeries {
    std::string name;
    std::string color;  // CSS color
    std::vector<std::pair<double, double>> points;
};

// Static SVG line plot with fixed decimal formatting so identical inputs
// produce identical bytes. `annotation` (optional) is rendered under the
// title, e.g. to flag an empty partition.
std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<PlotSeries>& series,
                             const std::string& annotation = "");

}  // namespace taskadapt
