#include "stackdid/kv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

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

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        if (i > start) out.emplace_back(line.substr(start, i - start));
    }
    return out;
}

[[noreturn]] void fail_parse(std::string_view origin, std::size_t line_no, std::string_view what) {
    std::ostringstream msg;
    if (!origin.empty()) msg << origin << ":";
    msg << "line " << line_no << ": " << what;
    throw io_error(msg.str());
}

}  // namespace

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc()) throw io_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

double parse_double(std::string_view token, std::string_view context) {
    token = trim(token);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        std::ostringstream msg;
        msg << "expected a real number, got \"" << token << "\"";
        if (!context.empty()) msg << " (" << context << ")";
        throw io_error(msg.str());
    }
    return value;
}

std::int64_t parse_int(std::string_view token, std::string_view context) {
    token = trim(token);
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size()) {
        std::ostringstream msg;
        msg << "expected an integer, got \"" << token << "\"";
        if (!context.empty()) msg << " (" << context << ")";
        throw io_error(msg.str());
    }
    return value;
}

std::size_t kv_table::column_index(std::string_view column) const {
    auto it = std::find(columns.begin(), columns.end(), column);
    if (it == columns.end()) {
        throw io_error("table \"" + name + "\" has no column \"" + std::string(column) + "\"");
    }
    return static_cast<std::size_t>(it - columns.begin());
}

const std::string& kv_table::cell(std::size_t row, std::string_view column) const {
    if (row >= rows.size()) {
        throw io_error("table \"" + name + "\": row index out of range");
    }
    return rows[row][column_index(column)];
}

double kv_table::cell_double(std::size_t row, std::string_view column) const {
    return parse_double(cell(row, column), "table \"" + name + "\", column \"" +
                                               std::string(column) + "\"");
}

std::int64_t kv_table::cell_int(std::size_t row, std::string_view column) const {
    return parse_int(cell(row, column), "table \"" + name + "\", column \"" +
                                            std::string(column) + "\"");
}

void kv_document::set(std::string_view key, std::string_view value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::string(value);
            return;
        }
    }
    entries_.emplace_back(std::string(key), std::string(value));
}

void kv_document::set(std::string_view key, double value) { set(key, format_double(value)); }

void kv_document::set(std::string_view key, std::int64_t value) {
    set(key, std::to_string(value));
}

bool kv_document::contains(std::string_view key) const {
    return get(key).has_value();
}

std::optional<std::string> kv_document::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    return std::nullopt;
}

const std::string& kv_document::at(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    throw io_error("missing required key \"" + std::string(key) + "\"");
}

double kv_document::at_double(std::string_view key) const {
    return parse_double(at(key), "key \"" + std::string(key) + "\"");
}

std::int64_t kv_document::at_int(std::string_view key) const {
    return parse_int(at(key), "key \"" + std::string(key) + "\"");
}

kv_table& kv_document::add_table(std::string_view name, std::vector<std::string> columns) {
    if (find_table(name) != nullptr) {
        throw io_error("duplicate table \"" + std::string(name) + "\"");
    }
    kv_table t;
    t.name = std::string(name);
    t.columns = std::move(columns);
    tables_.push_back(std::move(t));
    return tables_.back();
}

const kv_table* kv_document::find_table(std::string_view name) const {
    for (const auto& t : tables_) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const kv_table& kv_document::table(std::string_view name) const {
    const kv_table* t = find_table(name);
    if (t == nullptr) throw io_error("missing required table \"" + std::string(name) + "\"");
    return *t;
}

kv_document kv_document::parse(std::string_view text, std::string_view origin) {
    kv_document doc;
    kv_table* open_table = nullptr;
    bool header_pending = false;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view raw = (eol == std::string_view::npos) ? text.substr(pos)
                                                               : text.substr(pos, eol - pos);
        pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
        ++line_no;

        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;

        if (line.front() == '[') {
            if (line == "[/table]") {
                if (open_table == nullptr) fail_parse(origin, line_no, "[/table] without [table]");
                if (header_pending) fail_parse(origin, line_no, "table ended before its header");
                open_table = nullptr;
                continue;
            }
            if (line.substr(0, 7) == "[table " && line.back() == ']') {
                if (open_table != nullptr) fail_parse(origin, line_no, "nested [table]");
                std::string_view name = trim(line.substr(7, line.size() - 8));
                if (name.empty()) fail_parse(origin, line_no, "[table] needs a name");
                if (doc.find_table(name) != nullptr) {
                    fail_parse(origin, line_no, "duplicate table name");
                }
                kv_table t;
                t.name = std::string(name);
                doc.tables_.push_back(std::move(t));
                open_table = &doc.tables_.back();
                header_pending = true;
                continue;
            }
            fail_parse(origin, line_no, "unrecognized directive");
        }

        if (open_table != nullptr) {
            auto cells = split_ws(line);
            if (header_pending) {
                open_table->columns = std::move(cells);
                header_pending = false;
            } else {
                if (cells.size() != open_table->columns.size()) {
                    fail_parse(origin, line_no, "row width does not match table header");
                }
                open_table->rows.push_back(std::move(cells));
            }
            continue;
        }

        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) fail_parse(origin, line_no, "expected key = value");
        std::string_view key = trim(line.substr(0, eq));
        std::string_view value = trim(line.substr(eq + 1));
        if (key.empty()) fail_parse(origin, line_no, "empty key");
        doc.entries_.emplace_back(std::string(key), std::string(value));
    }
    if (open_table != nullptr) {
        fail_parse(origin, line_no, "unterminated [table]");
    }
    return doc;
}

kv_document kv_document::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

std::string kv_document::serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : entries_) out << k << " = " << v << "\n";
    for (const auto& t : tables_) {
        out << "\n[table " << t.name << "]\n";
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            out << (c ? " " : "") << t.columns[c];
        }
        out << "\n";
        for (const auto& row : t.rows) {
            for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << row[c];
            out << "\n";
        }
        out << "[/table]\n";
    }
    return out.str();
}

void kv_document::write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write " + path);
    out << serialize();
    if (!out) throw io_error("write failed for " + path);
}

}  // namespace stackdid
