#include "superenv/csv.hpp"

#include <fstream>
#include <stdexcept>

namespace superenv {

std::string csv_quote(const std::string& s)
{
    if (s.find_first_of(",\"\r\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

void CsvWriter::raw_row(const std::vector<std::string>& cells)
{
    if (cells.size() != ncols_)
        throw std::invalid_argument("CsvWriter: row width does not match header");
    for (std::size_t i = 0; i < cells.size(); ++i)
        os_ << (i ? "," : "") << cells[i];
    os_ << "\r\n";
}

void write_text(const std::string& path, const std::string& content)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("cannot open " + path + " for writing");
    os << content;
}

} // namespace superenv
