#include "superenv/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace superenv {

namespace {

constexpr double W = 640, H = 400, ML = 70, MR = 20, MT = 36, MB = 44;
const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
}

std::string escape(const std::string& s)
{
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v)
    {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish()
    {
        if (!(lo <= hi)) {
            lo = 0.0;
            hi = 1.0;
        }
        if (lo == hi) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

std::string frame(const std::string& title, const Range& rx, const Range& ry, bool log_x, bool log_y)
{
    auto lab = [](double v, bool lg) { return num(lg ? std::pow(10.0, v) : v); };
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         escape(title) + "</text>\n";
    s += "<rect x=\"" + num(ML) + "\" y=\"" + num(MT) + "\" width=\"" + num(W - ML - MR) + "\" height=\"" +
         num(H - MT - MB) + "\" fill=\"none\" stroke=\"black\"/>\n";
    auto text = [&](double x, double y, const std::string& anchor, const std::string& t) {
        s += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor +
             "\" font-family=\"sans-serif\" font-size=\"11\">" + t + "</text>\n";
    };
    text(ML, H - MB + 16, "start", lab(rx.lo, log_x));
    text(W - MR, H - MB + 16, "end", lab(rx.hi, log_x));
    text(ML - 6, H - MB, "end", lab(ry.lo, log_y));
    text(ML - 6, MT + 10, "end", lab(ry.hi, log_y));
    return s;
}

} // namespace

std::string line_plot_svg(const std::string& title, const std::vector<Series>& series, bool log_x, bool log_y)
{
    auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
    Range rx, ry;
    for (const auto& sr : series)
        for (std::size_t i = 0; i < std::min(sr.x.size(), sr.y.size()); ++i) {
            double a = tx(sr.x[i]), b = ty(sr.y[i]);
            if (std::isfinite(a) && std::isfinite(b)) {
                rx.add(a);
                ry.add(b);
            }
        }
    rx.finish();
    ry.finish();
    std::string s = frame(title, rx, ry, log_x, log_y);
    auto px = [&](double a) { return ML + (a - rx.lo) / (rx.hi - rx.lo) * (W - ML - MR); };
    auto py = [&](double b) { return H - MB - (b - ry.lo) / (ry.hi - ry.lo) * (H - MT - MB); };
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& sr = series[k];
        const char* col = palette[k % 6];
        std::string pts;
        for (std::size_t i = 0; i < std::min(sr.x.size(), sr.y.size()); ++i) {
            double a = tx(sr.x[i]), b = ty(sr.y[i]);
            if (std::isfinite(a) && std::isfinite(b))
                pts += num(px(a)) + "," + num(py(b)) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"1.5\" points=\"" + pts +
             "\"/>\n";
        s += "<text x=\"" + num(W - MR - 6) + "\" y=\"" + num(MT + 16 + 14 * k) + "\" text-anchor=\"end\" fill=\"" +
             col + "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(sr.label) + "</text>\n";
    }
    return s + "</svg>\n";
}

std::string histogram_svg(const std::string& title, const std::vector<double>& values, int bins)
{
    Range rx;
    for (double v : values)
        if (std::isfinite(v))
            rx.add(v);
    rx.finish();
    bins = std::max(bins, 1);
    std::vector<double> count(static_cast<std::size_t>(bins), 0.0);
    for (double v : values) {
        if (!std::isfinite(v))
            continue;
        int b = static_cast<int>((v - rx.lo) / (rx.hi - rx.lo) * bins);
        count[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
    }
    Range ry;
    ry.add(0.0);
    ry.add(*std::max_element(count.begin(), count.end()));
    ry.finish();
    std::string s = frame(title, rx, ry, false, false);
    const double bw = (W - ML - MR) / bins;
    for (int b = 0; b < bins; ++b) {
        double h = count[static_cast<std::size_t>(b)] / ry.hi * (H - MT - MB);
        s += "<rect x=\"" + num(ML + b * bw) + "\" y=\"" + num(H - MB - h) + "\" width=\"" + num(bw) + "\" height=\"" +
             num(h) + "\" fill=\"#1f77b4\" stroke=\"white\"/>\n";
    }
    return s + "</svg>\n";
}

} // namespace superenv
