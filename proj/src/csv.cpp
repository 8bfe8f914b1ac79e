#include "tmascan/csv.hpp"

#include "tmascan/sequence_io.hpp"

#include <cstdio>

namespace tmascan::csv {

int Table::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string> split(std::string_view line, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

Table parse(std::string_view text)
{
    Table t;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool have_header = false;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto line = trim(text.substr(start, end - start));
        ++line_no;
        start = end + 1;
        if (line.empty()) {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        if (!have_header) {
            t.header = split(line);
            have_header = true;
        } else {
            t.rows.push_back(split(line));
            t.line_numbers.push_back(line_no);
        }
        if (end == text.size()) {
            break;
        }
    }
    return t;
}

Table read(const std::filesystem::path& path)
{
    return parse(io::read_text(path));
}

std::string fixed(double value, int precision)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, value);
    std::string s(buf);
    if (s.rfind("-0.", 0) == 0 && s.find_first_not_of("-0.") == std::string::npos) {
        s.erase(0, 1);
    }
    return s;
}

} // namespace tmascan::csv
