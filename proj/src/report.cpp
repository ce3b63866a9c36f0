#include "fprobe/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fprobe {

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> header)
    : path_(path), out_(path, std::ios::binary), width_(header.size()) {
    if (!out_) {
        throw std::runtime_error("cannot write '" + path + "'");
    }
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) {
        throw std::logic_error("CsvWriter: row width does not match header in " + path_);
    }
    for (size_t i = 0; i < cells.size(); ++i) {
        if (i > 0) {
            out_ << ',';
        }
        if (cells[i].find_first_of(",\"\n") != std::string::npos) {
            out_ << '"';
            for (char c : cells[i]) {
                out_ << c;
                if (c == '"') {
                    out_ << '"';
                }
            }
            out_ << '"';
        } else {
            out_ << cells[i];
        }
    }
    out_ << '\n';
}

void CsvWriter::close() {
    out_.flush();
    if (!out_) {
        throw std::runtime_error("failed writing '" + path_ + "'");
    }
    out_.close();
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read '" + path + "'");
    }
    uint64_t h = 0xcbf29ce484222325ULL;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        const auto got = static_cast<size_t>(in.gcount());
        h = fnv1a(std::as_bytes(std::span(buf.data(), got)), h);
    }
    return hex64(h);
}

namespace {

constexpr double kW = 640;
constexpr double kH = 420;
constexpr double kMargin = 56;

const char* palette(size_t i) {
    static const std::array<const char*, 10> colors = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                       "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % colors.size()];
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

void save(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body << "</svg>\n";
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    void settle() {
        if (!(lo <= hi)) {
            lo = 0;
            hi = 1;
        }
        if (hi == lo) {
            hi = lo + 1;
        }
    }
    double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

}  // namespace

void write_line_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::vector<Series>& series) {
    Range xr, yr;
    for (const auto& s : series) {
        for (double v : s.x) xr.add(v);
        for (double v : s.y) yr.add(v);
    }
    xr.settle();
    yr.settle();
    std::ostringstream b;
    b << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
    b << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
      << "</text>\n";
    b << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kW - 2 * kMargin << "\" height=\""
      << kH - 2 * kMargin << "\" fill=\"none\" stroke=\"#444\"/>\n";
    b << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + 4 << "\" text-anchor=\"end\">" << format_double(yr.hi).substr(0, 6)
      << "</text>\n";
    b << "<text x=\"" << kMargin - 4 << "\" y=\"" << kH - kMargin << "\" text-anchor=\"end\">"
      << format_double(yr.lo).substr(0, 6) << "</text>\n";
    for (size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        b << "<polyline fill=\"none\" stroke=\"" << palette(i) << "\" points=\"";
        for (size_t j = 0; j < std::min(s.x.size(), s.y.size()); ++j) {
            if (!std::isfinite(s.y[j])) {
                continue;
            }
            b << xr.map(s.x[j], kMargin, kW - kMargin) << ',' << yr.map(s.y[j], kH - kMargin, kMargin) << ' ';
        }
        b << "\"/>\n";
        b << "<text x=\"" << kW - kMargin + 4 << "\" y=\"" << kMargin + 14 * static_cast<double>(i) << "\" fill=\""
          << palette(i) << "\">" << escape(s.label) << "</text>\n";
    }
    save(path, b.str());
}

void write_heatmap_svg(const std::string& path, const std::string& title, const MatD& values,
                       const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels) {
    Range vr;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        vr.add(values.data()[i]);
    }
    vr.settle();
    const double cw = (kW - 2 * kMargin) / std::max<double>(1.0, static_cast<double>(values.cols()));
    const double ch = (kH - 2 * kMargin) / std::max<double>(1.0, static_cast<double>(values.rows()));
    std::ostringstream b;
    b << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            const double v = values(r, c);
            std::string fill = "#dddddd";
            if (std::isfinite(v)) {
                // Blue (low) to red (high).
                const double t = vr.map(v, 0.0, 1.0);
                char buf[8];
                std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t), 64,
                              static_cast<int>(255 * (1 - t)));
                fill = buf;
            }
            b << "<rect x=\"" << kMargin + static_cast<double>(c) * cw << "\" y=\"" << kMargin + static_cast<double>(r) * ch
              << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\"" << fill << "\"/>\n";
        }
        if (static_cast<size_t>(r) < row_labels.size()) {
            b << "<text x=\"" << kMargin - 4 << "\" y=\"" << kMargin + (static_cast<double>(r) + 0.7) * ch
              << "\" text-anchor=\"end\" font-size=\"8\">" << escape(row_labels[static_cast<size_t>(r)]) << "</text>\n";
        }
    }
    for (size_t c = 0; c < col_labels.size(); ++c) {
        b << "<text x=\"" << kMargin + (static_cast<double>(c) + 0.5) * cw << "\" y=\"" << kH - kMargin + 14
          << "\" text-anchor=\"middle\" font-size=\"9\">" << escape(col_labels[c]) << "</text>\n";
    }
    save(path, b.str());
}

void write_scatter_svg(const std::string& path, const std::string& title, const std::vector<double>& x,
                       const std::vector<double>& y, const std::vector<int>& group,
                       const std::vector<std::string>& labels) {
    Range xr, yr;
    for (double v : x) xr.add(v);
    for (double v : y) yr.add(v);
    xr.settle();
    yr.settle();
    std::ostringstream b;
    b << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
    for (size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
        const double px = xr.map(x[i], kMargin, kW - kMargin);
        const double py = yr.map(y[i], kH - kMargin, kMargin);
        const size_t g = i < group.size() ? static_cast<size_t>(group[i]) : 0;
        b << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << palette(g) << "\"/>\n";
        if (i < labels.size()) {
            b << "<text x=\"" << px + 4 << "\" y=\"" << py - 3 << "\" font-size=\"7\">" << escape(labels[i])
              << "</text>\n";
        }
    }
    save(path, b.str());
}

}  // namespace fprobe
