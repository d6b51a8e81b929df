#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stackdid {

/// Formats a double as the shortest decimal string that parses back to the
/// identical bits (std::to_chars round-trip form).
[[nodiscard]] std::string format_double(double x);

/// Strict double parse of an entire token. Throws io_error on leftovers,
/// empty input, or out-of-range values.
[[nodiscard]] double parse_double(std::string_view token, std::string_view context = {});

/// Strict integer parse of an entire token.
[[nodiscard]] std::int64_t parse_int(std::string_view token, std::string_view context = {});

/// Named table inside a kv_document: a header row plus whitespace-delimited
/// body rows, every row the same width as the header.
struct kv_table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column_index(std::string_view column) const;
    [[nodiscard]] const std::string& cell(std::size_t row, std::string_view column) const;
    [[nodiscard]] double cell_double(std::size_t row, std::string_view column) const;
    [[nodiscard]] std::int64_t cell_int(std::size_t row, std::string_view column) const;
};

/// Line-oriented key-value document with optional named tables.
///
/// Grammar, one construct per line:
///
///     # comment                         ignored
///     key = value                       value runs to end of line, trimmed
///     [table name]                      table start; next line is the header
///     col_a col_b                       whitespace-delimited header/rows
///     [/table]                          table end
///
/// Keys and insertion order are preserved by serialize(), so documents
/// round-trip byte for byte. All run outputs and structured inputs of the
/// command line tool use this format.
class kv_document {
public:
    void set(std::string_view key, std::string_view value);
    void set(std::string_view key, double value);
    void set(std::string_view key, std::int64_t value);

    [[nodiscard]] bool contains(std::string_view key) const;
    [[nodiscard]] std::optional<std::string> get(std::string_view key) const;
    [[nodiscard]] const std::string& at(std::string_view key) const;
    [[nodiscard]] double at_double(std::string_view key) const;
    [[nodiscard]] std::int64_t at_int(std::string_view key) const;

    /// The returned reference stays valid for the document's lifetime.
    kv_table& add_table(std::string_view name, std::vector<std::string> columns);
    [[nodiscard]] const kv_table* find_table(std::string_view name) const;
    [[nodiscard]] const kv_table& table(std::string_view name) const;

    [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& entries() const {
        return entries_;
    }
    [[nodiscard]] const std::deque<kv_table>& tables() const { return tables_; }

    [[nodiscard]] static kv_document parse(std::string_view text, std::string_view origin = {});
    [[nodiscard]] static kv_document parse_file(const std::string& path);
    [[nodiscard]] std::string serialize() const;
    void write_file(const std::string& path) const;

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::deque<kv_table> tables_;
};

}  // namespace stackdid
