#include "taskadapt/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace taskadapt {

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::string render_line_plot(const std::string& title, const std::string& x_label,
                             const std::string& y_label, const std::vector<PlotSeries>& series,
                             const std::string& annotation) {
    constexpr double width = 640, height = 420;
    constexpr double left = 64, right = 24, top = 48, bottom = 56;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;

    double x_min = 0.0, x_max = 1.0;
    bool any = false;
    for (const PlotSeries& s : series) {
        for (const auto& [x, y] : s.points) {
            if (!any) {
                x_min = x_max = x;
                any = true;
            } else {
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
            }
        }
    }
    if (x_max <= x_min) x_max = x_min + 1.0;
    // Success rates live in [0, 1]; pin the y axis for comparability.
    const double y_min = 0.0, y_max = 1.0;

    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double y) { return top + (y_max - y) / (y_max - y_min) * plot_h; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" "
           "text-anchor=\"middle\">"
        << escape_xml(title) << "</text>\n";
    if (!annotation.empty()) {
        out << "<text x=\"" << width / 2 << "\" y=\"40\" font-family=\"sans-serif\" font-size=\"11\" "
               "fill=\"#a00\" text-anchor=\"middle\">"
            << escape_xml(annotation) << "</text>\n";
    }

    // Axes and gridlines.
    out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\""
        << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = y_min + (y_max - y_min) * i / 5.0;
        out << "<line x1=\"" << left << "\" y1=\"" << fixed2(py(y)) << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << fixed2(py(y)) << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 8 << "\" y=\"" << fixed2(py(y) + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fixed2(y)
            << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double x = x_min + (x_max - x_min) * i / 4.0;
        out << "<text x=\"" << fixed2(px(x)) << "\" y=\"" << top + plot_h + 18
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
            << fixed2(x) << "</text>\n";
    }
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 14
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
        << escape_xml(x_label) << "</text>\n";
    out << "<text x=\"16\" y=\"" << top + plot_h / 2
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << top + plot_h / 2 << ")\">" << escape_xml(y_label) << "</text>\n";

    // Series.
    double legend_y = top + 14;
    for (const PlotSeries& s : series) {
        if (!s.points.empty()) {
            out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : s.points) out << fixed2(px(x)) << "," << fixed2(py(y)) << " ";
            out << "\"/>\n";
        }
        out << "<line x1=\"" << left + plot_w - 140 << "\" y1=\"" << fixed2(legend_y) << "\" x2=\""
            << left + plot_w - 120 << "\" y2=\"" << fixed2(legend_y) << "\" stroke=\"" << s.color
            << "\" stroke-width=\"1.5\"/>\n";
        out << "<text x=\"" << left + plot_w - 114 << "\" y=\"" << fixed2(legend_y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(s.name)
            << (s.points.empty() ? " (empty)" : "") << "</text>\n";
        legend_y += 16;
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace taskadapt
