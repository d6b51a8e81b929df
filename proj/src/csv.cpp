#include "stackdid/csv.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "stackdid/errors.hpp"

namespace stackdid {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string> split_commas(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        std::string_view field = (comma == std::string_view::npos)
                                     ? line.substr(start)
                                     : line.substr(start, comma - start);
        out.emplace_back(trim(field));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

std::size_t csv_table::column_index(std::string_view column) const {
    auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) {
        throw io_error(origin + ": no column \"" + std::string(column) + "\"");
    }
    return static_cast<std::size_t>(it - header.begin());
}

const std::string& csv_table::cell(std::size_t row, std::string_view column) const {
    return rows.at(row)[column_index(column)];
}

std::string csv_table::row_location(std::size_t row) const {
    std::ostringstream loc;
    loc << origin << ":line ";
    if (row < line_numbers.size()) {
        loc << line_numbers[row];
    } else {
        loc << "?";
    }
    return loc.str();
}

csv_table read_csv(std::istream& in, std::string_view origin) {
    csv_table table;
    table.origin = std::string(origin);

    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto fields = split_commas(line);
        if (table.header.empty()) {
            table.header = std::move(fields);
            continue;
        }
        if (fields.size() != table.header.size()) {
            std::ostringstream msg;
            msg << table.origin << ":line " << line_no << ": expected " << table.header.size()
                << " fields, got " << fields.size();
            throw io_error(msg.str());
        }
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(line_no);
    }
    if (table.header.empty()) {
        throw io_error(table.origin + ": missing header row");
    }
    return table;
}

csv_table read_csv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    return read_csv(in, path);
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << "\n";
    }
}

}  // namespace stackdid
