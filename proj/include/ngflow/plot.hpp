#pragma once

// Plain-text SVG convergence plots: semilog residual history per run, with an
// optional panel comparing theta_k against the observed residual ratio.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngflow/experiments.hpp"

namespace ngflow {

struct PlotOptions {
    bool theta_panel = false;
    std::string title = "Nonlinear residual";
    int width = 820;
    int panel_height = 420;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

inline const char* series_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[i % (sizeof palette / sizeof *palette)];
}

struct Frame {
    double left, top, width, height;
    double x0, x1, y0, y1;  // data range; y is log10 for semilog panels

    double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
    double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

inline double nice_step(double span, int target) {
    const double raw = span / std::max(target, 1);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double f : {1.0, 2.0, 5.0, 10.0})
        if (f * mag >= raw) return f * mag;
    return 10.0 * mag;
}

inline void axes(std::string& svg, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
    svg += "<rect x=\"" + num(f.left) + "\" y=\"" + num(f.top) + "\" width=\"" + num(f.width) + "\" height=\"" +
           num(f.height) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    const double step = std::max(1.0, nice_step(f.x1 - f.x0, 10));
    for (double x = f.x0; x <= f.x1 + 1e-9; x += step) {
        const double X = f.px(x);
        svg += "<line class=\"xtick\" x1=\"" + num(X) + "\" y1=\"" + num(f.top + f.height) + "\" x2=\"" + num(X) +
               "\" y2=\"" + num(f.top + f.height + 5) + "\" stroke=\"#333\"/>\n";
        svg += "<text x=\"" + num(X) + "\" y=\"" + num(f.top + f.height + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + std::to_string(static_cast<long long>(std::lround(x))) +
               "</text>\n";
    }
    svg += "<text x=\"" + num(f.left + f.width / 2) + "\" y=\"" + num(f.top + f.height + 34) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + xml_escape(xlabel) + "</text>\n";
    svg += "<text x=\"" + num(f.left - 48) + "\" y=\"" + num(f.top + f.height / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 " + num(f.left - 48) + " " +
           num(f.top + f.height / 2) + ")\">" + xml_escape(ylabel) + "</text>\n";
}

inline std::string polyline(const std::vector<std::pair<double, double>>& pts, const char* color, const char* dash,
                            const std::string& cls) {
    std::string s = "<polyline class=\"" + cls + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.6\"";
    if (dash) s += std::string(" stroke-dasharray=\"") + dash + "\"";
    s += " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i) s += ' ';
        s += num(pts[i].first) + "," + num(pts[i].second);
    }
    return s + "\"/>\n";
}

inline void legend_entry(std::string& svg, double x, double y, const char* color, const char* dash,
                         const std::string& text) {
    svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x + 22) + "\" y2=\"" + num(y) +
           "\" stroke=\"" + color + "\" stroke-width=\"2\"";
    if (dash) svg += std::string(" stroke-dasharray=\"") + dash + "\"";
    svg += "/>\n<text x=\"" + num(x + 28) + "\" y=\"" + num(y + 4) + "\" font-size=\"11\">" + xml_escape(text) +
           "</text>\n";
}

}  // namespace detail

/// Decades covered by the positive finite V' residuals of the logs:
/// {floor(log10 min), ceil(log10 max)}.
inline std::pair<int, int> residual_decades(const std::vector<RunLog>& logs) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (const auto& log : logs)
        for (const auto& r : log.records)
            if (std::isfinite(r.g_vprime) && r.g_vprime > 0.0) {
                lo = std::min(lo, r.g_vprime);
                hi = std::max(hi, r.g_vprime);
            }
    if (!(hi > 0.0)) return {-1, 0};
    int a = static_cast<int>(std::floor(std::log10(lo) + 1e-12));
    int b = static_cast<int>(std::ceil(std::log10(hi) - 1e-12));
    if (a == b) --a;
    return {a, b};
}

inline std::string plot_svg(const std::vector<RunLog>& logs, const PlotOptions& opt = {}) {
    if (logs.empty()) throw std::invalid_argument("plot: no logs to draw");
    const double ml = 78, mr = 24, mt = 40, mb = 56;
    const double legend_h = 16.0 * static_cast<double>(logs.size() * (opt.theta_panel ? 2 : 1)) + 12;
    const int panels = opt.theta_panel ? 2 : 1;
    const double total_h = panels * (opt.panel_height + mb) + mt + legend_h;

    std::size_t kmax = 1;
    for (const auto& log : logs)
        for (const auto& r : log.records) kmax = std::max(kmax, r.k);

    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(opt.width) + "\" height=\"" +
           detail::num(total_h) + "\" viewBox=\"0 0 " + std::to_string(opt.width) + " " + detail::num(total_h) +
           "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::num(opt.width / 2.0) + "\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">" +
           detail::xml_escape(opt.title) + "</text>\n";

    const auto [d0, d1] = residual_decades(logs);
    detail::Frame f{ml, mt, opt.width - ml - mr, static_cast<double>(opt.panel_height), 0.0, static_cast<double>(kmax),
                    static_cast<double>(d0), static_cast<double>(d1)};
    detail::axes(svg, f, "iteration k", "||g(u_k)||_V'");
    for (int d = d0; d <= d1; ++d) {
        const double Y = f.py(d);
        svg += "<line class=\"ytick\" x1=\"" + detail::num(f.left - 5) + "\" y1=\"" + detail::num(Y) + "\" x2=\"" +
               detail::num(f.left + f.width) + "\" y2=\"" + detail::num(Y) + "\" stroke=\"#ddd\"/>\n";
        svg += "<text class=\"ylabel\" x=\"" + detail::num(f.left - 8) + "\" y=\"" + detail::num(Y + 4) +
               "\" font-size=\"11\" text-anchor=\"end\">1e" + std::to_string(d) + "</text>\n";
    }
    for (std::size_t i = 0; i < logs.size(); ++i) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : logs[i].records) {
            if (!(std::isfinite(r.g_vprime) && r.g_vprime > 0.0)) continue;
            pts.emplace_back(f.px(static_cast<double>(r.k)), f.py(std::log10(r.g_vprime)));
        }
        svg += detail::polyline(pts, detail::series_color(i), nullptr, "residual");
    }

    double legend_y = mt + opt.panel_height + mb;
    if (opt.theta_panel) {
        // theta_{k+1} against ||g(u_{k+1})|| / ||g(u_k)||, both placed at k + 1.
        double ymax = 1.0;
        std::vector<std::vector<std::pair<double, double>>> theta(logs.size()), ratio(logs.size());
        for (std::size_t i = 0; i < logs.size(); ++i) {
            const auto& rs = logs[i].records;
            for (std::size_t j = 0; j + 1 < rs.size(); ++j) {
                const double k1 = static_cast<double>(rs[j + 1].k);
                if (std::isfinite(rs[j].theta)) {
                    theta[i].emplace_back(k1, rs[j].theta);
                    ymax = std::max(ymax, rs[j].theta);
                }
                if (rs[j].g_vprime > 0.0 && std::isfinite(rs[j + 1].g_vprime)) {
                    const double q = rs[j + 1].g_vprime / rs[j].g_vprime;
                    ratio[i].emplace_back(k1, q);
                    ymax = std::max(ymax, q);
                }
            }
        }
        ymax = std::min(2.0, std::ceil(ymax * 5.0) / 5.0);
        detail::Frame t{ml, mt + opt.panel_height + mb, f.width, static_cast<double>(opt.panel_height),
                        0.0, static_cast<double>(kmax), 0.0, ymax};
        detail::axes(svg, t, "iteration k", "theta_k and ratio");
        for (double y = 0.0; y <= ymax + 1e-9; y += 0.2) {
            const double Y = t.py(y);
            svg += "<line x1=\"" + detail::num(t.left - 5) + "\" y1=\"" + detail::num(Y) + "\" x2=\"" +
                   detail::num(t.left + t.width) + "\" y2=\"" + detail::num(Y) + "\" stroke=\"#eee\"/>\n";
            svg += "<text x=\"" + detail::num(t.left - 8) + "\" y=\"" + detail::num(Y + 4) +
                   "\" font-size=\"11\" text-anchor=\"end\">" + detail::num(y).substr(0, 3) + "</text>\n";
        }
        auto place = [&](const std::vector<std::pair<double, double>>& v) {
            std::vector<std::pair<double, double>> out;
            for (auto [k, y] : v) out.emplace_back(t.px(k), t.py(std::min(y, ymax)));
            return out;
        };
        for (std::size_t i = 0; i < logs.size(); ++i) {
            svg += detail::polyline(place(theta[i]), detail::series_color(i), nullptr, "theta");
            svg += detail::polyline(place(ratio[i]), detail::series_color(i), "5,4", "ratio");
        }
        legend_y += opt.panel_height + mb;
    }

    for (std::size_t i = 0; i < logs.size(); ++i) {
        const std::string name = logs[i].legend();
        if (opt.theta_panel) {
            detail::legend_entry(svg, ml, legend_y, detail::series_color(i), nullptr, name + " (residual, theta)");
            legend_y += 16;
            detail::legend_entry(svg, ml, legend_y, detail::series_color(i), "5,4", name + " (observed ratio)");
        } else {
            detail::legend_entry(svg, ml, legend_y, detail::series_color(i), nullptr, name);
        }
        legend_y += 16;
    }
    svg += "</svg>\n";
    return svg;
}

inline void emit_plot(const std::vector<RunLog>& logs, const std::filesystem::path& path, const PlotOptions& opt = {}) {
    write_file_atomic(path, plot_svg(logs, opt));
}

}  // namespace ngflow
