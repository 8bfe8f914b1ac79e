#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tmascan::csv {

// Minimal reader for the unquoted comma-separated files this project
// writes. Row numbers are 1-based file line numbers (the header is line 1).
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;

    // Column index of `name`, or -1.
    int column(std::string_view name) const;
};

Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string_view trim(std::string_view s);

// Fixed-precision formatting so emitted files are byte-stable.
std::string fixed(double value, int precision = 6);

} // namespace tmascan::csv
