#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace stackdid {

/// Comma-separated table with a mandatory header row.
///
/// The dialect is deliberately small: fields may not contain commas or
/// newlines, there is no quoting, and lines whose first non-blank character
/// is '#' are comments. That covers the panel inputs and bundled count
/// tables, which hold identifiers and numbers only.
struct csv_table {
    std::string origin;  // file name or stream description, for error messages
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // source line of each row

    [[nodiscard]] std::size_t column_index(std::string_view column) const;
    [[nodiscard]] const std::string& cell(std::size_t row, std::string_view column) const;
    /// "origin:line N" for diagnostics about one row.
    [[nodiscard]] std::string row_location(std::size_t row) const;
};

[[nodiscard]] csv_table read_csv(std::istream& in, std::string_view origin);
[[nodiscard]] csv_table read_csv_file(const std::string& path);

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace stackdid
