#pragma once

#include "fprobe/common.hpp"

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace fprobe {

/// %.17g, so values round-trip; NaN prints as "nan".
std::string format_double(double v);

class CsvWriter {
public:
    CsvWriter(const std::string& path, std::vector<std::string> header);
    void row(const std::vector<std::string>& cells);
    // Flushes and throws if anything failed to write.
    void close();

private:
    std::string path_;
    std::ofstream out_;
    size_t width_;
};

/// FNV-1a of a file's bytes, hex encoded.
std::string hash_file(const std::string& path);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal SVG renderers. They exist for eyeballing; tests read the CSVs.
void write_line_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::vector<Series>& series);
void write_heatmap_svg(const std::string& path, const std::string& title, const MatD& values,
                       const std::vector<std::string>& row_labels, const std::vector<std::string>& col_labels);
void write_scatter_svg(const std::string& path, const std::string& title, const std::vector<double>& x,
                       const std::vector<double>& y, const std::vector<int>& group,
                       const std::vector<std::string>& labels);

}  // namespace fprobe
