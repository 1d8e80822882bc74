#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "fairdiff/error.hpp"
#include "fairdiff/mlp.hpp"

namespace fairdiff {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        parts.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

inline std::size_t parse_count(const std::string& text, std::size_t line, std::size_t col) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ParseError("expected a non-negative integer, got '" + text + "'", line, col);
    return v;
}

inline double parse_number(const std::string& text, std::size_t line, std::size_t col) {
    try {
        return parse_double(text);
    } catch (const InputError&) {
        throw ParseError("expected a number, got '" + text + "'", line, col);
    }
}

template <class T, class Fn>
T with_input_file(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return fn(in);
}

template <class Fn>
void with_output_file(const std::string& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    fn(out);
    out.flush();
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace fairdiff
