#pragma once

// CSV writing, table readers and run manifests for the command-line tool.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ccadj/table.hpp"

namespace ccadj::io {

/// Malformed user input; line is 1-based, 0 when not tied to a line.
class InputError : public std::runtime_error {
public:
    InputError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// 17 significant digits, enough to round-trip a double.
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& operator<<(std::string_view s) {
        sep();
        os_ << csv_field(s);
        return *this;
    }
    CsvWriter& operator<<(const std::string& s) { return *this << std::string_view(s); }
    CsvWriter& operator<<(const char* s) { return *this << std::string_view(s); }
    CsvWriter& operator<<(double x) {
        sep();
        os_ << fmt(x);
        return *this;
    }
    CsvWriter& operator<<(int x) {
        sep();
        os_ << x;
        return *this;
    }
    CsvWriter& operator<<(long long x) {
        sep();
        os_ << x;
        return *this;
    }
    void row(const std::vector<std::string>& fields) {
        for (const auto& f : fields) *this << f;
        end();
    }
    void end() {
        os_ << "\r\n";
        first_ = true;
    }

private:
    void sep() {
        if (!first_) os_ << ',';
        first_ = false;
    }
    std::ostream& os_;
    bool first_ = true;
};

// ============================================================================
// Parsing helpers
// ============================================================================

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(const std::string& s, int line = 0) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw InputError("not a number: '" + s + "'", line);
    }
    if (used != s.size()) throw InputError("not a number: '" + s + "'", line);
    return v;
}

inline int parse_binary(const std::string& s, const char* what, int line) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw InputError(std::string(what) + " must be 0 or 1, got '" + s + "'", line);
}

/// "min:max:points" -> evenly spaced grid including both ends.
inline std::vector<double> parse_range(const std::string& spec) {
    const auto parts = split(spec, ':');
    if (parts.size() != 3) throw InputError("grid must look like min:max:points, got '" + spec + "'");
    const double lo = parse_double(parts[0]);
    const double hi = parse_double(parts[1]);
    const double pts = parse_double(parts[2]);
    if (!(pts >= 1.0) || pts != std::floor(pts)) throw InputError("grid point count must be a positive integer");
    if (!(lo <= hi)) throw InputError("grid min exceeds max");
    const int k = static_cast<int>(pts);
    std::vector<double> g(k);
    for (int a = 0; a < k; ++a) g[a] = k == 1 ? lo : lo + (hi - lo) * a / (k - 1);
    if (k > 1) g.back() = hi;
    return g;
}

inline std::vector<double> parse_list(const std::string& spec) {
    std::vector<double> out;
    for (const auto& p : split(spec, ',')) out.push_back(parse_double(p));
    return out;
}

/// "d,i,j,count"
inline void add_cell(CaseControlTable& t, std::array<bool, 8>& seen, const std::vector<std::string>& f, int line) {
    if (f.size() != 4) throw InputError("expected d,i,j,count", line);
    const int d = parse_binary(f[0], "d", line);
    const int i = parse_binary(f[1], "i", line);
    const int j = parse_binary(f[2], "j", line);
    const double c = parse_double(f[3], line);
    if (!(std::isfinite(c) && c >= 0.0)) throw InputError("count must be a nonnegative number", line);
    const int k = 4 * d + 2 * i + j;
    if (seen[k]) throw InputError("cell given twice", line);
    seen[k] = true;
    t(d, i, j) = c;
}

inline CaseControlTable table_from_cells(const std::vector<std::string>& cells) {
    CaseControlTable t;
    std::array<bool, 8> seen{};
    for (std::size_t k = 0; k < cells.size(); ++k) {
        try {
            add_cell(t, seen, split(cells[k], ','), 0);
        } catch (const InputError& e) {
            throw InputError(std::string("--cell '") + cells[k] + "': " + e.what());
        }
    }
    for (bool s : seen)
        if (!s) throw InputError("all eight --cell d,i,j,count entries are required");
    return t;
}

namespace detail {

inline std::vector<int> header_columns(const std::string& header, const std::vector<std::string>& want) {
    const auto cols = split(header, ',');
    std::vector<int> idx(want.size(), -1);
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (std::size_t w = 0; w < want.size(); ++w)
            if (cols[c] == want[w]) idx[w] = static_cast<int>(c);
    for (std::size_t w = 0; w < want.size(); ++w)
        if (idx[w] < 0) throw InputError("header lacks column '" + want[w] + "'", 1);
    return idx;
}

template <class RowFn>
void read_csv(std::istream& in, const std::vector<std::string>& want, RowFn&& fn) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty file");
    const auto idx = header_columns(line, want);
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        std::vector<std::string> picked;
        for (int c : idx) {
            if (c >= static_cast<int>(fields.size())) throw InputError("too few fields", lineno);
            picked.push_back(fields[c]);
        }
        fn(picked, lineno);
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return in;
}

} // namespace detail

/// CSV with header d,i,j,count; every cell exactly once.
inline CaseControlTable read_counts(std::istream& in) {
    CaseControlTable t;
    std::array<bool, 8> seen{};
    detail::read_csv(in, {"d", "i", "j", "count"}, [&](const auto& f, int line) { add_cell(t, seen, f, line); });
    for (bool s : seen)
        if (!s) throw InputError("counts file must list all eight (d,i,j) cells");
    return t;
}

/// One row per subject with header d,x,e; aggregated into counts.
inline CaseControlTable read_subjects(std::istream& in) {
    CaseControlTable t;
    detail::read_csv(in, {"d", "x", "e"}, [&](const auto& f, int line) {
        t(parse_binary(f[0], "d", line), parse_binary(f[1], "x", line), parse_binary(f[2], "e", line)) += 1.0;
    });
    return t;
}

inline CaseControlTable read_counts_file(const std::string& path) {
    auto in = detail::open_input(path);
    return read_counts(in);
}

inline CaseControlTable read_subjects_file(const std::string& path) {
    auto in = detail::open_input(path);
    return read_subjects(in);
}

inline void write_counts(std::ostream& os, const CaseControlTable& t) {
    CsvWriter w(os);
    w.row({"d", "i", "j", "count"});
    for (int d = 0; d < 2; ++d)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                w << d << i << j << t(d, i, j);
                w.end();
            }
}

// ============================================================================
// Manifest
// ============================================================================

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Flat key=value file. Metadata keys carry a "manifest." prefix; the rest is
/// the resolved option set, readable back through --config.
struct Manifest {
    std::string command;
    std::string version;
    std::string started, finished;
    std::vector<std::string> outputs;
    std::string resolved; // key=value lines

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write manifest '" + path + "'");
        os << "# ccadj run manifest; rerun with: ccadj " << command << " --config <this file>\n";
        os << "manifest.command=\"" << command << "\"\n";
        os << "manifest.version=\"" << version << "\"\n";
        os << "manifest.started=\"" << started << "\"\n";
        os << "manifest.finished=\"" << finished << "\"\n";
        for (const auto& o : outputs) os << "manifest.output=\"" << o << "\"\n";
        os << resolved;
        if (!resolved.empty() && resolved.back() != '\n') os << '\n';
    }
};

} // namespace ccadj::io
