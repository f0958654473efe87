#include "acnorm/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "acnorm/errors.hpp"

namespace acnorm {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// Dark-blue -> teal -> yellow ramp.
std::string color_for(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const int r = int(255.0 * std::clamp(1.8 * t - 0.6, 0.0, 1.0));
    const int g = int(255.0 * std::clamp(1.4 * t, 0.0, 1.0) * 0.9);
    const int b = int(255.0 * std::clamp(0.95 - 0.8 * t, 0.05, 1.0));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

std::ofstream open_svg(const std::string& path, int w, int h) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write plot: " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return os;
}

void text(std::ofstream& os, double x, double y, const std::string& s, int size = 12,
          const std::string& anchor = "start") {
    os << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
       << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
}

} // namespace

void write_heatmap_svg(const std::string& path, const Tensor& matrix, const std::string& title) {
    const std::size_t k = matrix.dim(0);
    const int cell = std::max(6, int(320 / std::max<std::size_t>(k, 1)));
    const int margin = 40;
    const int grid = int(k) * cell;
    const int w = grid + 2 * margin + 60, h = grid + 2 * margin;
    auto os = open_svg(path, w, h);
    text(os, margin, 24, title, 14);

    double lo = matrix[0], hi = matrix[0];
    for (std::size_t i = 0; i < matrix.numel(); ++i) {
        lo = std::min(lo, matrix[i]);
        hi = std::max(hi, matrix[i]);
    }
    const double span = (hi > lo) ? (hi - lo) : 1.0;

    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t q = 0; q < k; ++q) {
            const double t = (matrix(p, q) - lo) / span;
            os << "<rect x=\"" << margin + int(q) * cell << "\" y=\"" << margin + int(p) * cell
               << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << color_for(t)
               << "\"/>\n";
        }

    // Value scale.
    for (int i = 0; i <= 20; ++i) {
        const double t = double(i) / 20.0;
        os << "<rect x=\"" << margin + grid + 16 << "\" y=\"" << margin + grid - (i + 1) * grid / 21
           << "\" width=\"12\" height=\"" << grid / 21 + 1 << "\" fill=\"" << color_for(t)
           << "\"/>\n";
    }
    text(os, margin + grid + 32, margin + 10, fmt(hi), 10);
    text(os, margin + grid + 32, margin + grid, fmt(lo), 10);
    os << "</svg>\n";
}

void write_bars_svg(const std::string& path, const std::vector<std::string>& labels,
                    const std::vector<std::pair<std::string, std::vector<double>>>& series,
                    const std::string& title) {
    const int w = 720, h = 360, margin = 50;
    auto os = open_svg(path, w, h);
    text(os, margin, 24, title, 14);

    double hi = 0.0;
    for (const auto& [name, values] : series)
        for (double v : values) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;

    const int plot_w = w - 2 * margin, plot_h = h - 2 * margin - 20;
    const std::size_t groups = labels.size();
    const std::size_t per = std::max<std::size_t>(series.size(), 1);
    const double group_w = double(plot_w) / double(std::max<std::size_t>(groups, 1));
    const double bar_w = std::max(2.0, group_w / double(per) * 0.8);

    static const char* palette[] = {"#3b6fb5", "#d28749", "#5da05d", "#b55b5b", "#8263a8", "#5b9fa8"};
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t s = 0; s < series.size(); ++s) {
            const auto& values = series[s].second;
            if (g >= values.size()) continue;
            const double v = values[g];
            const double bh = plot_h * (v / hi);
            const double x = margin + double(g) * group_w + double(s) * bar_w * 1.05;
            os << "<rect x=\"" << x << "\" y=\"" << margin + 20 + plot_h - bh << "\" width=\""
               << bar_w << "\" height=\"" << bh << "\" fill=\"" << palette[s % 6] << "\"/>\n";
        }
        text(os, margin + (double(g) + 0.35) * group_w, h - margin + 14, labels[g], 9, "middle");
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        os << "<rect x=\"" << margin + int(s) * 130 << "\" y=\"" << 32 << "\" width=\"10\" height=\"10\" fill=\""
           << palette[s % 6] << "\"/>\n";
        text(os, margin + int(s) * 130 + 14, 41, series[s].first, 10);
    }
    text(os, 8, margin + 24, fmt(hi), 10);
    os << "</svg>\n";
}

void write_scatter_svg(const std::string& path, const std::vector<double>& xs,
                       const std::vector<double>& ys, const std::vector<std::string>& labels,
                       const std::string& x_label, const std::string& y_label,
                       const std::string& title, const std::string& annotation) {
    const int w = 480, h = 400, margin = 60;
    auto os = open_svg(path, w, h);
    text(os, margin, 24, title, 14);
    text(os, margin, 40, annotation, 11);

    double xlo = xs.empty() ? 0.0 : xs[0], xhi = xlo, ylo = ys.empty() ? 0.0 : ys[0], yhi = ylo;
    for (double v : xs) {
        xlo = std::min(xlo, v);
        xhi = std::max(xhi, v);
    }
    for (double v : ys) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
    }
    const double xspan = (xhi > xlo) ? (xhi - xlo) : 1.0;
    const double yspan = (yhi > ylo) ? (yhi - ylo) : 1.0;
    const int plot_w = w - 2 * margin, plot_h = h - 2 * margin - 20;

    os << "<rect x=\"" << margin << "\" y=\"" << margin + 20 << "\" width=\"" << plot_w
       << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#999\"/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double px = margin + plot_w * ((xs[i] - xlo) / xspan) * 0.9 + plot_w * 0.05;
        const double py = margin + 20 + plot_h - (plot_h * ((ys[i] - ylo) / yspan) * 0.9 + plot_h * 0.05);
        os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"5\" fill=\"#3b6fb5\"/>\n";
        if (i < labels.size()) text(os, px + 7, py + 4, labels[i], 10);
    }
    text(os, w / 2.0, h - 12, x_label, 11, "middle");
    text(os, 14, margin + 16, y_label, 11);
    text(os, 8, margin + plot_h + 20 + 12, fmt(ylo), 9);
    text(os, 8, margin + 40, fmt(yhi), 9);
    os << "</svg>\n";
}

} // namespace acnorm
