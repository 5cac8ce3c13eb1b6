#ifndef SEAFIELD_PLOT_HPP
#define SEAFIELD_PLOT_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "seafield/common.hpp"

namespace seafield::plot {

struct Series {
    std::string label;
    std::vector<double> values;
};

/// Minimal SVG line chart: shared x axis 0..n-1, autoscaled y, legend in
/// the top-right corner. Output is deterministic.
inline void line_plot(const std::string& path, const std::string& title,
                      const std::vector<Series>& series, const std::string& x_label = "",
                      const std::string& y_label = "") {
    SF_CHECK(!series.empty(), "plot needs at least one series");
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf"};
    const int width = 860, height = 420;
    const int ml = 70, mr = 20, mt = 40, mb = 45;

    double lo = 0.0, hi = 1.0;
    std::size_t max_n = 0;
    bool first = true;
    for (const auto& s : series) {
        max_n = std::max(max_n, s.values.size());
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    if (hi == lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    SF_CHECK(max_n >= 1, "plot needs data");

    auto xpix = [&](double i) {
        return ml + (width - ml - mr) * (max_n > 1 ? i / static_cast<double>(max_n - 1) : 0.5);
    };
    auto ypix = [&](double v) { return mt + (height - mt - mb) * (1.0 - (v - lo) / (hi - lo)); };

    std::ofstream os(path);
    if (!os) throw DataError("cannot write plot: " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
       << "' viewBox='0 0 " << width << " " << height << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << width / 2 << "' y='22' text-anchor='middle' font-size='15' "
          "font-family='sans-serif'>"
       << title << "</text>\n";
    // axes
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='"
       << height - mb << "' stroke='black'/>\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", hi);
    os << "<text x='" << ml - 6 << "' y='" << mt + 4
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", lo);
    os << "<text x='" << ml - 6 << "' y='" << height - mb
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << buf << "</text>\n";
    os << "<text x='" << ml - 6 << "' y='" << height - mb + 16
       << "' text-anchor='start' font-size='11' font-family='sans-serif'>0</text>\n";
    os << "<text x='" << width - mr << "' y='" << height - mb + 16
       << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << (max_n - 1)
       << "</text>\n";
    if (!x_label.empty())
        os << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 8
           << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << x_label
           << "</text>\n";
    if (!y_label.empty())
        os << "<text x='16' y='" << (mt + height - mb) / 2
           << "' text-anchor='middle' font-size='12' font-family='sans-serif' transform='rotate(-90 "
              "16 "
           << (mt + height - mb) / 2 << ")'>" << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % (sizeof(palette) / sizeof(palette[0]))];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            if (!std::isfinite(s.values[i])) continue;
            os << xpix(static_cast<double>(i)) << ',' << ypix(s.values[i]) << ' ';
        }
        os << "'/>\n";
        const int ly = mt + 16 * static_cast<int>(si);
        os << "<line x1='" << width - mr - 150 << "' y1='" << ly << "' x2='" << width - mr - 126
           << "' y2='" << ly << "' stroke='" << color << "' stroke-width='2'/>\n";
        os << "<text x='" << width - mr - 120 << "' y='" << ly + 4
           << "' font-size='11' font-family='sans-serif'>" << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

} // namespace seafield::plot

#endif // SEAFIELD_PLOT_HPP
