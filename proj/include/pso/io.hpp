#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "pso/dataset.hpp"
#include "pso/error.hpp"
#include "pso/finetune.hpp"
#include "pso/text.hpp"

namespace pso {

namespace detail {

inline std::vector<std::string> data_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        out.push_back(line);
    }
    return out;
}

inline int parse_condition(const std::string& s, std::size_t line) {
    const long long c = parse_int(s, "condition on line " + std::to_string(line));
    if (c < 0 || c > 1'000'000) throw LoadError("condition out of range on line " + std::to_string(line));
    return static_cast<int>(c);
}

} // namespace detail

/// Offline pair file: one record per line, "condition,tau_x,tau_y,rho_x,rho_y".
/// Blank lines and lines starting with '#' are ignored.
inline std::string format_pairs(const std::vector<PairRecord>& pairs) {
    std::string s;
    for (const auto& p : pairs)
        s += std::to_string(p.condition) + ',' + fmt_double(p.target.x) + ',' + fmt_double(p.target.y) + ',' +
             fmt_double(p.reference.x) + ',' + fmt_double(p.reference.y) + '\n';
    return s;
}

inline std::vector<PairRecord> parse_pairs(const std::string& text) {
    std::vector<PairRecord> out;
    std::size_t n = 0;
    for (const auto& line : detail::data_lines(text)) {
        ++n;
        const auto f = split(line, ',');
        if (f.size() != 5) throw LoadError("pair record " + std::to_string(n) + " needs 5 fields, got " + std::to_string(f.size()));
        const std::string at = " in pair record " + std::to_string(n);
        out.push_back({detail::parse_condition(f[0], n),
                       {parse_double(f[1], "tau_x" + at), parse_double(f[2], "tau_y" + at)},
                       {parse_double(f[3], "rho_x" + at), parse_double(f[4], "rho_y" + at)}});
    }
    return out;
}

/// Point file: header "x,y,condition" then one point per line.
inline std::string format_points(const LabeledPoints& pts) {
    std::string s = "x,y,condition\n";
    for (std::size_t i = 0; i < pts.size(); ++i)
        s += fmt_double(pts.points[i].x) + ',' + fmt_double(pts.points[i].y) + ',' + std::to_string(pts.conditions[i]) + '\n';
    return s;
}

inline LabeledPoints parse_points(const std::string& text) {
    LabeledPoints out;
    auto lines = detail::data_lines(text);
    std::size_t first = 0;
    if (!lines.empty() && lines[0] == "x,y,condition") first = 1;
    for (std::size_t i = first; i < lines.size(); ++i) {
        const auto f = split(lines[i], ',');
        if (f.size() != 3) throw LoadError("point record " + std::to_string(i) + " needs 3 fields");
        out.points.push_back({parse_double(f[0], "x"), parse_double(f[1], "y")});
        out.conditions.push_back(detail::parse_condition(f[2], i));
    }
    return out;
}

} // namespace pso
