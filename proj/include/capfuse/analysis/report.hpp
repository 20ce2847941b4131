#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "capfuse/dataset/store.hpp"
#include "capfuse/error.hpp"
#include "capfuse/infer/classify.hpp"
#include "capfuse/train/trainer.hpp"

namespace capfuse {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct LinePlot {
    std::string slug;  // output file stem
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
};

/// Long-format table of a plot: series,x,y.
inline std::string plot_csv(const LinePlot& p) {
    std::string out = "series," + p.x_label + "," + p.y_label + "\n";
    for (const auto& s : p.series)
        for (const auto& [x, y] : s.points) out += s.name + "," + format_double(x) + "," + format_double(y) + "\n";
    return out;
}

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

inline std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

inline std::pair<double, double> padded_range(double lo, double hi) {
    if (!(hi > lo)) {
        const double d = std::abs(lo) > 0 ? std::abs(lo) * 0.1 : 1.0;
        return {lo - d, hi + d};
    }
    const double pad = (hi - lo) * 0.05;
    return {lo - pad, hi + pad};
}

} // namespace detail

/// Standalone SVG line chart. The plotted values are embedded verbatim as a
/// CSV table inside <desc>, so the file carries its own data.
inline std::string render_svg(const LinePlot& p) {
    static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    constexpr double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : p.series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!std::isfinite(xmin)) xmin = xmax = ymin = ymax = 0.0;
    std::tie(xmin, xmax) = detail::padded_range(xmin, xmax);
    std::tie(ymin, ymax) = detail::padded_range(ymin, ymax);
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    using detail::fmt;

    std::string o;
    o += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
    o += "<title>" + detail::xml_escape(p.title) + "</title>\n";
    o += "<desc id=\"data\"><![CDATA[\n" + plot_csv(p) + "]]></desc>\n";
    o += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
    o += "<text x=\"" + fmt(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(p.title) + "</text>\n";
    o += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(H - B) + "\" x2=\"" + fmt(W - R) + "\" y2=\"" + fmt(H - B) +
         "\" stroke=\"black\"/>\n";
    o += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(T) + "\" x2=\"" + fmt(L) + "\" y2=\"" + fmt(H - B) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
        o += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(H - B + 16) + "\" text-anchor=\"middle\">" +
             fmt(xv, "%.3g") + "</text>\n";
        o += "<text x=\"" + fmt(L - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv, "%.3g") +
             "</text>\n";
        o += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(py(yv)) + "\" x2=\"" + fmt(W - R) + "\" y2=\"" +
             fmt(py(yv)) + "\" stroke=\"#dddddd\"/>\n";
    }
    o += "<text x=\"" + fmt((L + W - R) / 2) + "\" y=\"" + fmt(H - 12) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(p.x_label) + "</text>\n";
    o += "<text transform=\"translate(18," + fmt((T + H - B) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         detail::xml_escape(p.y_label) + "</text>\n";
    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const auto& s = p.series[k];
        const std::string color = kColors[k % 8];
        std::string pts;
        for (const auto& [x, y] : s.points) {
            if (!pts.empty()) pts += ' ';
            pts += fmt(px(x)) + "," + fmt(py(y));
        }
        o += "<g class=\"series\" data-name=\"" + detail::xml_escape(s.name) + "\">\n";
        o += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        for (const auto& [x, y] : s.points)
            o += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
        o += "</g>\n";
        const double ly = T + 10 + 18.0 * static_cast<double>(k);
        o += "<rect x=\"" + fmt(W - R + 12) + "\" y=\"" + fmt(ly - 8) + "\" width=\"12\" height=\"12\" fill=\"" +
             color + "\"/>\n";
        o += "<text x=\"" + fmt(W - R + 30) + "\" y=\"" + fmt(ly + 2) + "\">" + detail::xml_escape(s.name) +
             "</text>\n";
    }
    o += "</svg>\n";
    return o;
}

inline LinePlot w_sweep_plot(const std::map<std::string, std::vector<std::pair<double, double>>>& by_backbone) {
    LinePlot p{"w_sweep", "Accuracy vs. supervised-loss weight", "w", "accuracy", {}};
    for (auto [name, pts] : by_backbone) {
        std::sort(pts.begin(), pts.end());
        p.series.push_back({name, pts});
    }
    return p;
}

inline LinePlot accuracy_vs_shots_plot(const std::map<std::string, std::vector<std::pair<double, double>>>& by_method) {
    LinePlot p{"accuracy_vs_shots", "Accuracy vs. shots per class", "shots", "accuracy", {}};
    for (auto [name, pts] : by_method) {
        std::sort(pts.begin(), pts.end());
        p.series.push_back({name, pts});
    }
    return p;
}

inline LinePlot loss_curves_plot(const std::vector<std::pair<std::string, std::vector<EpochRecord>>>& runs) {
    LinePlot p{"loss_curves", "Training loss", "epoch", "total_loss", {}};
    for (const auto& [name, hist] : runs) {
        Series s{name, {}};
        for (const auto& h : hist) s.points.emplace_back(static_cast<double>(h.epoch), h.loss.total);
        p.series.push_back(std::move(s));
    }
    return p;
}

inline std::vector<EpochRecord> parse_history_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,", 0) != 0) fail(Errc::CorruptManifest, "history.csv has no header");
    std::vector<EpochRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() < 7) fail(Errc::CorruptManifest, "history.csv row has " + std::to_string(f.size()) + " fields");
        try {
            EpochRecord r;
            r.epoch = static_cast<std::size_t>(std::stoul(f[0]));
            r.loss = {std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])};
            r.lr = std::stod(f[6]);
            if (f.size() > 7 && !f[7].empty()) r.val_accuracy = std::stod(f[7]);
            out.push_back(r);
        } catch (const std::logic_error&) {
            fail(Errc::CorruptManifest, "history.csv has a non-numeric field: " + line);
        }
    }
    return out;
}

struct RunSummary {
    std::string name;
    nlohmann::json metrics = nlohmann::json::object();
    std::optional<std::vector<EpochRecord>> history;  // nullopt: run has no training history
};

struct ReportFiles {
    std::vector<std::filesystem::path> written;
};

namespace detail {

inline std::mutex& report_write_mutex() {
    static std::mutex mu;
    return mu;
}

inline std::filesystem::path emit_file(const std::filesystem::path& p, const std::string& text) {
    std::lock_guard lock(report_write_mutex());
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + p.string());
    out << text;
    if (!out) fail(Errc::IoError, "short write to " + p.string());
    return p;
}

inline std::string csv_cell(const nlohmann::json& v) {
    if (v.is_number_float()) return format_double(v.get<double>());
    if (v.is_number()) return v.dump();
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return "";
}

} // namespace detail

/// report.json + report.csv (one row per run, scalar metrics as columns),
/// loss curves for runs that carry a history, and every extra plot, each as
/// plots/<slug>.svg with a matching plots/<slug>.csv. Output depends only on
/// the inputs.
inline ReportFiles emit_report(const std::filesystem::path& out_dir, const std::vector<RunSummary>& runs,
                               const std::vector<LinePlot>& extra_plots = {}) {
    if (runs.empty() && extra_plots.empty())
        fail(Errc::EmptyHistory, "nothing to report: pass at least one run directory or plot");
    std::vector<std::pair<std::string, std::vector<EpochRecord>>> curves;
    for (const auto& r : runs)
        if (r.history) {
            if (r.history->empty())
                fail(Errc::EmptyHistory, "run '" + r.name +
                                             "' has an empty training history; rerun `train` for it or drop it "
                                             "from the report");
            curves.emplace_back(r.name, *r.history);
        }
    for (const auto& p : extra_plots)
        for (const auto& s : p.series)
            if (s.points.empty())
                fail(Errc::EmptyHistory, "plot '" + p.slug + "' series '" + s.name + "' has no points");

    ReportFiles files;
    nlohmann::json all = nlohmann::json::array();
    std::set<std::string> keys;
    for (const auto& r : runs) {
        all.push_back({{"name", r.name}, {"metrics", r.metrics}});
        for (auto it = r.metrics.begin(); it != r.metrics.end(); ++it)
            if (it->is_primitive() && !it->is_null()) keys.insert(it.key());
    }
    files.written.push_back(detail::emit_file(out_dir / "report.json", all.dump(2) + "\n"));
    std::string csv = "run";
    for (const auto& k : keys) csv += "," + k;
    csv += "\n";
    for (const auto& r : runs) {
        csv += r.name;
        for (const auto& k : keys) csv += "," + (r.metrics.contains(k) ? detail::csv_cell(r.metrics.at(k)) : "");
        csv += "\n";
    }
    files.written.push_back(detail::emit_file(out_dir / "report.csv", csv));

    std::vector<LinePlot> plots;
    if (!curves.empty()) plots.push_back(loss_curves_plot(curves));
    plots.insert(plots.end(), extra_plots.begin(), extra_plots.end());
    for (const auto& p : plots) {
        files.written.push_back(detail::emit_file(out_dir / "plots" / (p.slug + ".svg"), render_svg(p)));
        files.written.push_back(detail::emit_file(out_dir / "plots" / (p.slug + ".csv"), plot_csv(p)));
    }
    return files;
}

} // namespace capfuse
