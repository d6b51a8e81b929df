#include <sstream>
#include <string>

#include "doctest.h"
#include "stackdid/csv.hpp"
#include "stackdid/errors.hpp"

using namespace stackdid;

TEST_CASE("reads a plain table with header") {
    std::istringstream in("unit,occasion,outcome\nA,1,2.5\nB,2,-1\n");
    const csv_table t = read_csv(in, "obs.csv");
    CHECK(t.origin == "obs.csv");
    REQUIRE(t.header.size() == 3);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.cell(0, "unit") == "A");
    CHECK(t.cell(1, "outcome") == "-1");
    CHECK(t.column_index("occasion") == 1);
}

TEST_CASE("trims fields and skips comments and blank lines") {
    std::istringstream in(
        "# generated\n"
        "\n"
        " unit , count \n"
        "  A ,  3\n"
        "# a note\n"
        "\t\n"
        "B, 4 \n");
    const csv_table t = read_csv(in, "x.csv");
    CHECK(t.header[0] == "unit");
    CHECK(t.header[1] == "count");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.cell(0, "unit") == "A");
    CHECK(t.cell(0, "count") == "3");
    CHECK(t.cell(1, "unit") == "B");
}

TEST_CASE("row_location reports the source line after skipped lines") {
    std::istringstream in(
        "# comment on line 1\n"
        "unit,count\n"
        "\n"
        "A,1\n"
        "# another comment\n"
        "B,2\n");
    const csv_table t = read_csv(in, "counts.csv");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.row_location(0) == "counts.csv:line 4");
    CHECK(t.row_location(1) == "counts.csv:line 6");
}

TEST_CASE("carriage returns from windows files are stripped") {
    std::istringstream in("unit,count\r\nA,1\r\n");
    const csv_table t = read_csv(in, "crlf.csv");
    CHECK(t.header[1] == "count");
    CHECK(t.cell(0, "count") == "1");
}

TEST_CASE("field count mismatches cite the offending line") {
    std::istringstream in("a,b\n1,2\n3\n");
    try {
        (void)read_csv(in, "bad.csv");
        FAIL("expected io_error");
    } catch (const io_error& e) {
        const std::string what = e.what();
        CHECK(what.find("bad.csv:line 3") != std::string::npos);
        CHECK(what.find("expected 2 fields, got 1") != std::string::npos);
    }
}

TEST_CASE("a file without a header row is rejected") {
    std::istringstream in("# only comments\n\n");
    CHECK_THROWS_AS((void)read_csv(in, "empty.csv"), io_error);
}

TEST_CASE("unknown columns and missing files name the culprit") {
    std::istringstream in("a,b\n1,2\n");
    const csv_table t = read_csv(in, "t.csv");
    try {
        (void)t.cell(0, "c");
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("t.csv") != std::string::npos);
        CHECK(std::string(e.what()).find("\"c\"") != std::string::npos);
    }

    try {
        (void)read_csv_file("missing_dir/missing.csv");
        FAIL("expected io_error");
    } catch (const io_error& e) {
        CHECK(std::string(e.what()).find("missing.csv") != std::string::npos);
    }
}

TEST_CASE("write_csv emits what read_csv parses") {
    std::ostringstream out;
    write_csv(out, {"unit", "value"}, {{"A", "1.5"}, {"B", "2"}});
    CHECK(out.str() == "unit,value\nA,1.5\nB,2\n");
    std::istringstream in(out.str());
    const csv_table t = read_csv(in, "round.csv");
    REQUIRE(t.rows.size() == 2);
    CHECK(t.cell(1, "value") == "2");
}
