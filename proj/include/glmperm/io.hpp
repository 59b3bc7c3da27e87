#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glmperm/glm.hpp"

namespace glmperm::io {

// ---------------------------------------------------------------------------
// CSV reading
// ---------------------------------------------------------------------------

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_of_row; // 1-based source line per data row
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Splits one CSV record; double quotes may enclose fields and "" escapes a quote.
inline std::vector<std::string> split_record(const std::string& line, const std::string& where) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false, was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = was_quoted = true;
        } else if (c == ',') {
            fields.push_back(was_quoted ? field : trim(field));
            field.clear();
            was_quoted = false;
        } else {
            field += c;
        }
    }
    if (quoted) fail(ErrorKind::InvalidInput, where + ": unterminated quoted field");
    fields.push_back(was_quoted ? field : trim(field));
    return fields;
}

} // namespace detail

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::InvalidInput, path + ": cannot open file");
    CsvTable t;
    t.path = path;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        auto fields = detail::split_record(line, where);
        if (!have_header) {
            for (const auto& h : fields)
                if (h.empty()) fail(ErrorKind::InvalidInput, where + ": empty column name in header");
            t.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header.size())
            fail(ErrorKind::InvalidInput, where + ": expected " + std::to_string(t.header.size()) + " fields, found " +
                                              std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_of_row.push_back(line_no);
    }
    if (!have_header) fail(ErrorKind::InvalidInput, path + ": file is empty");
    if (t.rows.empty()) fail(ErrorKind::InvalidInput, path + ": no data rows");
    return t;
}

inline bool is_missing_token(const std::string& s) {
    if (s.empty()) return true;
    if (s.size() != 2) return false;
    return std::toupper(static_cast<unsigned char>(s[0])) == 'N' && std::toupper(static_cast<unsigned char>(s[1])) == 'A';
}

/// Response CSV: header = response names, one row per observation, missing
/// entries empty or NA (any case).
inline ResponseMatrix read_responses(const std::string& path) {
    const CsvTable t = read_csv(path);
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    const auto m = static_cast<Eigen::Index>(t.header.size());
    Matrix values = Matrix::Zero(n, m);
    Mask missing = Mask::Constant(n, m, false);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            const std::string& s = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (is_missing_token(s)) {
                missing(i, j) = true;
                continue;
            }
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size() || !std::isfinite(v))
                fail(ErrorKind::InvalidInput, path + ":" + std::to_string(t.line_of_row[static_cast<std::size_t>(i)]) +
                                                  ": column '" + t.header[static_cast<std::size_t>(j)] +
                                                  "': cannot parse '" + s + "' as a number");
            values(i, j) = v;
        }
    ResponseMatrix x(std::move(values), std::move(missing), t.header);
    x.validate();
    return x;
}

/// Design CSV: header = factor names, cells = level labels. Levels are
/// numbered in order of first appearance.
inline DesignSpec read_design(const std::string& path, const std::string& formula) {
    const CsvTable t = read_csv(path);
    DesignSpec d;
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    const auto f_count = static_cast<Eigen::Index>(t.header.size());
    d.assignments.resize(n, f_count);
    for (Eigen::Index f = 0; f < f_count; ++f) {
        FactorSpec spec{t.header[static_cast<std::size_t>(f)], 0, {}};
        std::map<std::string, int> index;
        for (Eigen::Index i = 0; i < n; ++i) {
            const std::string& label = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(f)];
            if (is_missing_token(label))
                fail(ErrorKind::InvalidInput, path + ":" + std::to_string(t.line_of_row[static_cast<std::size_t>(i)]) +
                                                  ": factor '" + spec.name + "' has no level");
            auto [it, inserted] = index.emplace(label, static_cast<int>(index.size()) + 1);
            if (inserted) spec.level_labels.push_back(label);
            d.assignments(i, f) = it->second;
        }
        spec.n_levels = static_cast<int>(spec.level_labels.size());
        if (spec.n_levels < 2) fail(ErrorKind::InvalidInput, path + ": factor '" + spec.name + "' has a single level");
        d.factors.push_back(std::move(spec));
    }
    d.terms = parse_model_formula(formula, d.factors);
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

/// Accumulates CSV text row by row.
class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

    CsvWriter& row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) text_ += ',';
            text_ += csv_field(fields[i]);
        }
        text_ += '\n';
        return *this;
    }

    const std::string& str() const { return text_; }

private:
    std::string text_;
};

/// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::InvalidInput, "cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) fail(ErrorKind::InvalidInput, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
inline std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "unavailable";
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// ---------------------------------------------------------------------------
// Minimal SVG plots
// ---------------------------------------------------------------------------

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> band; // optional +- half-width per point
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    bool lines = true;          // false: scatter
    std::vector<double> hlines; // horizontal reference lines
    std::vector<double> vlines; // vertical reference lines
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

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

} // namespace detail

inline std::string render_svg(const PlotSpec& plot) {
    constexpr double width = 640, height = 420, left = 70, right = 150, top = 40, bottom = 55;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    auto extend = [&](double x, double y) {
        if (!std::isfinite(x) || !std::isfinite(y)) return;
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    };
    for (const auto& s : plot.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double b = i < s.band.size() ? s.band[i] : 0.0;
            extend(s.x[i], s.y[i] - b);
            extend(s.x[i], s.y[i] + b);
        }
    for (double h : plot.hlines) extend(x0 > x1 ? 0.0 : x0, h);
    for (double v : plot.vlines) extend(v, y0 > y1 ? 0.0 : y0);
    if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * ph; };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::xml_escape(plot.title) << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << "<text x=\"" << detail::svg_num(sx(xv)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
          << format_number(std::round(xv * 1000) / 1000) << "</text>\n";
        o << "<text x=\"" << left - 6 << "\" y=\"" << detail::svg_num(sy(yv) + 4) << "\" text-anchor=\"end\">"
          << format_number(std::round(yv * 1000) / 1000) << "</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
      << detail::xml_escape(plot.x_label) << "</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << detail::xml_escape(plot.y_label) << "</text>\n";
    for (double h : plot.hlines)
        o << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << detail::svg_num(sy(h)) << "\" y2=\""
          << detail::svg_num(sy(h)) << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
    for (double v : plot.vlines)
        o << "<line y1=\"" << top << "\" y2=\"" << top + ph << "\" x1=\"" << detail::svg_num(sx(v)) << "\" x2=\""
          << detail::svg_num(sx(v)) << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";

    for (std::size_t s = 0; s < plot.series.size(); ++s) {
        const auto& ser = plot.series[s];
        const char* color = colors[s % 6];
        if (!ser.band.empty()) {
            std::string upper, lower;
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                upper += detail::svg_num(sx(ser.x[i])) + "," + detail::svg_num(sy(ser.y[i] + ser.band[i])) + " ";
                const std::size_t r = ser.x.size() - 1 - i;
                lower += detail::svg_num(sx(ser.x[r])) + "," + detail::svg_num(sy(ser.y[r] - ser.band[r])) + " ";
            }
            o << "<polygon points=\"" << upper << lower << "\" fill=\"" << color << "\" fill-opacity=\"0.15\"/>\n";
        }
        if (plot.lines) {
            o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
            for (std::size_t i = 0; i < ser.x.size(); ++i)
                o << detail::svg_num(sx(ser.x[i])) << "," << detail::svg_num(sy(ser.y[i])) << " ";
            o << "\"/>\n";
        }
        for (std::size_t i = 0; i < ser.x.size(); ++i)
            if (std::isfinite(ser.y[i]))
                o << "<circle cx=\"" << detail::svg_num(sx(ser.x[i])) << "\" cy=\"" << detail::svg_num(sy(ser.y[i]))
                  << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(s);
        o << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly - 4 << "\" y2=\""
          << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << detail::xml_escape(ser.name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace glmperm::io
