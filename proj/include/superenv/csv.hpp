#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace superenv {

std::string csv_quote(const std::string& s);

inline std::string csv_cell(const std::string& s) { return csv_quote(s); }
inline std::string csv_cell(const char* s) { return csv_quote(s); }
inline std::string csv_cell(bool b) { return b ? "true" : "false"; }

template <class T>
std::enable_if_t<std::is_floating_point_v<T>, std::string> csv_cell(T v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
}

template <class T>
std::enable_if_t<std::is_integral_v<T> && !std::is_same_v<T, bool>, std::string> csv_cell(T v)
{
    return std::to_string(v);
}

// RFC-4180 CSV with a header row, doubles printed round-trip exact.
class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header)
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            os_ << (i ? "," : "") << csv_quote(header[i]);
        os_ << "\r\n";
        ncols_ = header.size();
    }

    template <class... Ts>
    void row(const Ts&... cells)
    {
        static_assert(sizeof...(Ts) > 0);
        std::vector<std::string> v{csv_cell(cells)...};
        raw_row(v);
    }

    void raw_row(const std::vector<std::string>& cells);
    std::string str() const { return os_.str(); }

private:
    std::ostringstream os_;
    std::size_t ncols_ = 0;
};

void write_text(const std::string& path, const std::string& content);

} // namespace superenv
