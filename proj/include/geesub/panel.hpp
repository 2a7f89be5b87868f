#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "geesub/errors.hpp"

namespace geesub {

/// One subject's block: n observations of (response, covariate row).
struct Subject {
    std::string id;
    Eigen::MatrixXd X; // n x p, row j = x_ij'
    Eigen::VectorXd y; // n
};

/// Balanced longitudinal dataset: m subjects, n observations each, p
/// covariates. Immutable by convention after construction/validation; safe to
/// share read-only across threads.
struct Panel {
    std::vector<Subject> subjects;
    Eigen::Index p = 0;
    Eigen::Index n = 0;

    Eigen::Index m() const { return static_cast<Eigen::Index>(subjects.size()); }

    void validate() const {
        if (subjects.empty() || n < 1 || p < 1) {
            throw EmptyPanelError("panel must have m >= 1, n >= 1, p >= 1");
        }
        for (const auto& s : subjects) {
            if (s.X.rows() != n || s.y.size() != n) {
                throw BalanceError("subject \"" + s.id + "\" has " +
                                   std::to_string(s.y.size()) + " observations, expected " +
                                   std::to_string(n));
            }
            if (s.X.cols() != p) {
                throw BalanceError("subject \"" + s.id + "\" has " +
                                   std::to_string(s.X.cols()) + " covariates, expected " +
                                   std::to_string(p));
            }
            if (!s.X.allFinite() || !s.y.allFinite()) {
                throw ParseError("subject \"" + s.id + "\" has non-finite values");
            }
        }
    }
};

inline bool operator==(const Subject& a, const Subject& b) {
    return a.id == b.id && a.X == b.X && a.y == b.y;
}

inline bool operator==(const Panel& a, const Panel& b) {
    return a.p == b.p && a.n == b.n && a.subjects == b.subjects;
}

/// Column-name mapping for CSV ingestion. Empty x_cols means "every column
/// that is not id/time/y, in header order".
struct CsvSchema {
    std::string id_col = "id";
    std::string time_col = "time";
    std::string y_col = "y";
    std::vector<std::string> x_cols;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline double parse_cell(std::string_view cell, std::size_t line_no) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value, std::chars_format::general);
    if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
        throw ParseError("line " + std::to_string(line_no) + ": cell \"" +
                         std::string(cell) + "\" is not a finite number");
    }
    return value;
}

} // namespace detail

/// Read a long-format CSV (one observation per row) into a Panel. Subjects
/// keep first-appearance order; observations are sorted by the time column
/// (stable). Balancedness is verified and violations name the offending id.
inline Panel read_panel(const std::string& path, const CsvSchema& schema = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open \"" + path + "\" for reading");
    }

    std::string line;
    if (!std::getline(in, line)) {
        throw EmptyPanelError("\"" + path + "\" is empty");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = detail::split_csv_line(line);
    auto find_col = [&](const std::string& name) -> std::size_t {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == name) return c;
        }
        throw SchemaError("\"" + path + "\" is missing column \"" + name + "\"");
    };

    const std::size_t id_c = find_col(schema.id_col);
    const std::size_t time_c = find_col(schema.time_col);
    const std::size_t y_c = find_col(schema.y_col);
    std::vector<std::size_t> x_cs;
    if (schema.x_cols.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c != id_c && c != time_c && c != y_c) x_cs.push_back(c);
        }
    } else {
        for (const auto& name : schema.x_cols) x_cs.push_back(find_col(name));
    }
    if (x_cs.empty()) {
        throw SchemaError("\"" + path + "\" has no covariate columns");
    }
    const Eigen::Index p = static_cast<Eigen::Index>(x_cs.size());

    struct Row {
        double time;
        double y;
        std::vector<double> x;
    };
    std::vector<std::string> order; // ids in first-appearance order
    std::map<std::string, std::vector<Row>> groups;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        }
        Row row;
        row.time = detail::parse_cell(cells[time_c], line_no);
        row.y = detail::parse_cell(cells[y_c], line_no);
        row.x.reserve(x_cs.size());
        for (std::size_t c : x_cs) row.x.push_back(detail::parse_cell(cells[c], line_no));

        std::string id(cells[id_c]);
        auto [it, inserted] = groups.try_emplace(std::move(id));
        if (inserted) order.push_back(it->first);
        it->second.push_back(std::move(row));
    }
    if (order.empty()) {
        throw EmptyPanelError("\"" + path + "\" has a header but no data rows");
    }

    // balance check against the modal observation count
    std::map<std::size_t, std::size_t> count_freq;
    for (const auto& id : order) ++count_freq[groups[id].size()];
    std::size_t expected = groups[order.front()].size();
    std::size_t best = 0;
    for (const auto& [count, freq] : count_freq) {
        if (freq > best) {
            best = freq;
            expected = count;
        }
    }
    for (const auto& id : order) {
        if (groups[id].size() != expected) {
            throw BalanceError("subject \"" + id + "\" has " +
                               std::to_string(groups[id].size()) +
                               " observations, expected " + std::to_string(expected));
        }
    }

    Panel panel;
    panel.p = p;
    panel.n = static_cast<Eigen::Index>(expected);
    panel.subjects.reserve(order.size());
    for (const auto& id : order) {
        auto& rows = groups[id];
        std::stable_sort(rows.begin(), rows.end(),
                         [](const Row& a, const Row& b) { return a.time < b.time; });
        Subject s;
        s.id = id;
        s.X.resize(panel.n, p);
        s.y.resize(panel.n);
        for (Eigen::Index j = 0; j < panel.n; ++j) {
            s.y[j] = rows[j].y;
            for (Eigen::Index k = 0; k < p; ++k) s.X(j, k) = rows[j].x[k];
        }
        panel.subjects.push_back(std::move(s));
    }
    panel.validate();
    return panel;
}

/// Write a Panel as long-format CSV with columns id,time,y,x1..xp. Values are
/// serialized with 17 significant digits so read_panel(write_panel(P)) == P.
inline void write_panel(const Panel& panel, const std::string& path) {
    panel.validate();
    if (std::filesystem::is_directory(path)) {
        throw IoError("\"" + path + "\" is a directory");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open \"" + path + "\" for writing");
    }
    out << "id,time,y";
    for (Eigen::Index k = 0; k < panel.p; ++k) out << ",x" << (k + 1);
    out << "\n";

    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << buf;
    };
    for (const auto& s : panel.subjects) {
        for (Eigen::Index j = 0; j < panel.n; ++j) {
            out << s.id << ',' << (j + 1) << ',';
            put(s.y[j]);
            for (Eigen::Index k = 0; k < panel.p; ++k) {
                out << ',';
                put(s.X(j, k));
            }
            out << "\n";
        }
    }
    if (!out.good()) {
        throw IoError("write to \"" + path + "\" failed");
    }
}

} // namespace geesub
