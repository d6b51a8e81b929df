#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"

using namespace stackdid;

TEST_CASE("format_double round-trips arbitrary bit patterns") {
    const double values[] = {0.0,
                             -0.0,
                             1.0,
                             -1.0,
                             0.1,
                             1.0 / 3.0,
                             -0.016337209302325581,
                             6.02214076e23,
                             5e-324,
                             1.7976931348623157e308,
                             -2.2250738585072014e-308};
    for (double x : values) {
        CAPTURE(x);
        const std::string text = format_double(x);
        const double back = parse_double(text);
        CHECK(std::memcmp(&back, &x, sizeof x) == 0);
    }
}

TEST_CASE("parse_double accepts full tokens only") {
    CHECK(parse_double("2.5") == 2.5);
    CHECK(parse_double("-1e-3") == -1e-3);
    CHECK_THROWS_AS((void)parse_double(""), io_error);
    CHECK_THROWS_AS((void)parse_double("1.5x"), io_error);
    CHECK_THROWS_AS((void)parse_double("nanx"), io_error);
    CHECK_THROWS_AS((void)parse_double("1e999"), io_error);
    CHECK(parse_double("  2.5 ") == 2.5);  // surrounding whitespace is trimmed
}

TEST_CASE("parse_int accepts full tokens only") {
    CHECK(parse_int("42") == 42);
    CHECK(parse_int("-7") == -7);
    CHECK(parse_int("9223372036854775807") == INT64_MAX);
    CHECK_THROWS_AS((void)parse_int(""), io_error);
    CHECK_THROWS_AS((void)parse_int("12.5"), io_error);
    CHECK_THROWS_AS((void)parse_int("9223372036854775808"), io_error);
    CHECK(parse_int(" 12 ") == 12);
}

TEST_CASE("parse errors cite the supplied context") {
    try {
        (void)parse_int("oops", "widget count");
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("widget count") != std::string::npos);
        CHECK(std::string(e.what()).find("oops") != std::string::npos);
    }
}

TEST_CASE("documents serialize and parse back byte for byte") {
    kv_document doc;
    doc.set("document", "demo");
    doc.set("alpha", 0.25);
    doc.set("count", std::int64_t{12});
    kv_table& t = doc.add_table("rows", {"name", "value"});
    t.rows.push_back({"first", format_double(1.5)});
    t.rows.push_back({"second", format_double(-0.125)});

    const std::string text = doc.serialize();
    const kv_document back = kv_document::parse(text);
    CHECK(back.serialize() == text);

    CHECK(back.at("document") == "demo");
    CHECK(back.at_double("alpha") == 0.25);
    CHECK(back.at_int("count") == 12);
    const kv_table& rt = back.table("rows");
    REQUIRE(rt.rows.size() == 2);
    CHECK(rt.cell(0, "name") == "first");
    CHECK(rt.cell_double(1, "value") == -0.125);
}

TEST_CASE("entries keep insertion order and precede tables in output") {
    kv_document doc;
    doc.set("zulu", "1");
    doc.add_table("early", {"x"});
    doc.set("alpha", "2");

    const std::string text = doc.serialize();
    const auto zulu = text.find("zulu");
    const auto alpha = text.find("alpha");
    const auto table = text.find("[table early]");
    REQUIRE(zulu != std::string::npos);
    REQUIRE(alpha != std::string::npos);
    REQUIRE(table != std::string::npos);
    CHECK(zulu < alpha);
    CHECK(alpha < table);
}

TEST_CASE("set replaces an existing key in place") {
    kv_document doc;
    doc.set("a", "1");
    doc.set("b", "2");
    doc.set("a", "3");
    CHECK(doc.at("a") == "3");
    REQUIRE(doc.entries().size() == 2);
    CHECK(doc.entries()[0].first == "a");
    CHECK(doc.entries()[0].second == "3");
}

TEST_CASE("table references stay valid as more tables are added") {
    kv_document doc;
    kv_table& first = doc.add_table("first", {"v"});
    for (int i = 0; i < 40; ++i) {
        doc.add_table("filler_" + std::to_string(i), {"w"});
    }
    first.rows.push_back({"kept"});
    const kv_document back = kv_document::parse(doc.serialize());
    REQUIRE(back.table("first").rows.size() == 1);
    CHECK(back.table("first").cell(0, "v") == "kept");
}

TEST_CASE("comments and blank lines are ignored") {
    const char* text =
        "# leading comment\n"
        "\n"
        "key = value with spaces\n"
        "  # indented comment\n"
        "[table t]\n"
        "a b\n"
        "# inside a table\n"
        "1 2\n"
        "[/table]\n";
    const kv_document doc = kv_document::parse(text);
    CHECK(doc.at("key") == "value with spaces");
    REQUIRE(doc.table("t").rows.size() == 1);
    CHECK(doc.table("t").cell_int(0, "b") == 2);
}

TEST_CASE("structural problems are io_errors naming the line") {
    const struct {
        const char* text;
        const char* needle;
    } cases[] = {
        {"key = 1\nstray line\n", "line 2"},
        {"[bogus]\n", "line 1"},
        {"[table t]\na b\n1\n[/table]\n", "line 3"},
        {"[table t]\na b\n1 2 3\n[/table]\n", "line 3"},
        {"[table t]\na b\n1 2\n", "unterminated"},
        {"[/table]\n", "without"},
        {"[table t]\n[table u]\n", "nested"},
        {"[table t]\n[/table]\n", "header"},
        {"[table t]\na\n[/table]\n[table t]\nb\n[/table]\n", "duplicate"},
    };
    for (const auto& c : cases) {
        CAPTURE(c.text);
        try {
            (void)kv_document::parse(c.text, "input.kv");
            FAIL("expected io_error");
        } catch (const io_error& e) {
            CHECK(std::string(e.what()).find(c.needle) != std::string::npos);
        }
    }
}

TEST_CASE("missing keys and tables raise io_error, lookups by name work") {
    kv_document doc;
    doc.set("present", "1");
    CHECK(doc.contains("present"));
    CHECK_FALSE(doc.contains("absent"));
    CHECK(doc.get("absent") == std::nullopt);
    CHECK_THROWS_AS((void)doc.at("absent"), io_error);
    CHECK(doc.find_table("absent") == nullptr);
    CHECK_THROWS_AS((void)doc.table("absent"), io_error);
}

TEST_CASE("table cell accessors validate column names and bounds") {
    kv_document doc;
    kv_table& t = doc.add_table("t", {"a", "b"});
    t.rows.push_back({"1", "2.5"});
    CHECK(t.column_index("b") == 1);
    CHECK_THROWS_AS((void)t.column_index("c"), io_error);
    CHECK_THROWS_AS((void)t.cell(1, "a"), io_error);
    CHECK(t.cell_int(0, "a") == 1);
    CHECK(t.cell_double(0, "b") == 2.5);
    CHECK_THROWS_AS((void)t.cell_int(0, "b"), io_error);
}

TEST_CASE("file round trip and missing-file error") {
    kv_document doc;
    doc.set("document", "demo");
    doc.set("x", 0.1);
    const std::string path = "test_kv_roundtrip.kv";
    doc.write_file(path);
    const kv_document back = kv_document::parse_file(path);
    CHECK(back.serialize() == doc.serialize());
    std::remove(path.c_str());

    try {
        (void)kv_document::parse_file("no_such_dir/no_such.kv");
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("no_such.kv") != std::string::npos);
    }
}
