#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "stackdid/csv.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/panel.hpp"

using namespace stackdid;

namespace {

csv_table parse_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    return read_csv(in, origin);
}

/// Two treated units (policy at 2 and 3) and two control units, every
/// individual present over occasions 0..4.
PanelDataset small_panel() {
    PanelDataset panel;
    panel.add_unit("T0", {true, 2});
    panel.add_unit("T1", {true, 3});
    panel.add_unit("C0", {false, 0});
    panel.add_unit("C1", {false, 0});
    const char* units[] = {"T0", "T1", "C0", "C1"};
    for (const char* unit : units) {
        for (int person = 0; person < 3; ++person) {
            const std::string id = std::string(unit) + ".p" + std::to_string(person);
            for (std::int64_t t = 0; t <= 4; ++t) {
                panel.add_observation(unit, id, t, static_cast<double>(person) + 0.1 * t);
            }
        }
    }
    panel.finalize();
    return panel;
}

}  // namespace

TEST_CASE("presence intervals are the maximal runs of consecutive occasions") {
    PanelDataset panel;
    panel.add_unit("U", {false, 0});
    for (std::int64_t t : {3, 1, 2, 7, 8}) panel.add_observation("U", "a", t, 0.0);
    panel.finalize();

    const auto& rec = panel.individual("a");
    REQUIRE(rec.presence.size() == 2);
    CHECK(rec.presence[0].first == 1);
    CHECK(rec.presence[0].last == 3);
    CHECK(rec.presence[1].first == 7);
    CHECK(rec.presence[1].last == 8);
    CHECK(rec.present_over(1, 3));
    CHECK(rec.present_over(7, 7));
    CHECK_FALSE(rec.present_over(2, 7));
    CHECK(rec.cells.size() == 5);
    CHECK(rec.cells.front().occasion == 1);  // cells are sorted on finalize
    CHECK(rec.outcome_at(7).has_value());
    CHECK_FALSE(rec.outcome_at(5).has_value());
}

TEST_CASE("builder rejects malformed construction") {
    PanelDataset panel;
    panel.add_unit("U", {false, 0});
    CHECK_THROWS_AS(panel.add_unit("U", {false, 0}), validation_error);
    CHECK_THROWS_AS(panel.add_observation("V", "a", 0, 1.0), validation_error);
    panel.add_observation("U", "a", 0, 1.0);
    panel.add_observation("U", "a", 0, 2.0);  // caught when finalize sorts the cells
    CHECK_THROWS_AS(panel.finalize(), validation_error);

    PanelDataset two_units;
    two_units.add_unit("A", {false, 0});
    two_units.add_unit("B", {false, 0});
    two_units.add_observation("A", "x", 0, 1.0);
    CHECK_THROWS_AS(two_units.add_observation("B", "x", 1, 1.0), validation_error);

    PanelDataset sealed;
    sealed.add_unit("A", {false, 0});
    sealed.add_observation("A", "x", 0, 1.0);
    sealed.finalize();
    CHECK_THROWS_AS(sealed.add_unit("B", {false, 0}), validation_error);
    CHECK_THROWS_AS(sealed.add_observation("A", "x", 1, 1.0), validation_error);
    CHECK_THROWS_AS((void)sealed.individual("nobody"), validation_error);
}

TEST_CASE("load_panel wires roles, members, and counts") {
    const csv_table units = parse_csv(
        "unit,role,policy_occasion\n"
        "T0,treated,2\n"
        "C0,control,\n",
        "units.csv");
    const csv_table obs = parse_csv(
        "unit,individual,occasion,outcome\n"
        "T0,t.a,0,1.0\n"
        "T0,t.a,1,1.5\n"
        "C0,c.a,0,0.5\n"
        "C0,c.b,1,0.25\n",
        "obs.csv");
    const PanelDataset panel = load_panel(obs, units);

    REQUIRE(panel.unit_roles().size() == 2);
    CHECK(panel.unit_roles().at("T0").treated);
    CHECK(panel.unit_roles().at("T0").policy_occasion == 2);
    CHECK_FALSE(panel.unit_roles().at("C0").treated);
    CHECK(panel.n_individuals() == 3);
    CHECK(panel.n_observations() == 4);
    CHECK(panel.members_of("C0") == std::vector<std::string>{"c.a", "c.b"});
    CHECK(panel.individual("t.a").unit == "T0");
    CHECK(panel.individual("t.a").outcome_at(1) == 1.5);
}

TEST_CASE("load_panel diagnostics carry the source location") {
    const std::string units_ok =
        "unit,role,policy_occasion\n"
        "T0,treated,2\n"
        "C0,control,\n";

    SUBCASE("bad role") {
        const csv_table units = parse_csv(
            "unit,role,policy_occasion\n"
            "# filler comment\n"
            "T0,treaded,2\n",
            "units.csv");
        const csv_table obs = parse_csv("unit,individual,occasion,outcome\n", "obs.csv");
        try {
            (void)load_panel(obs, units);
            FAIL("expected validation_error");
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("units.csv:line 3") != std::string::npos);
            CHECK(std::string(e.what()).find("treaded") != std::string::npos);
        }
    }

    SUBCASE("control with a policy occasion") {
        const csv_table units = parse_csv(
            "unit,role,policy_occasion\n"
            "C0,control,4\n",
            "units.csv");
        const csv_table obs = parse_csv("unit,individual,occasion,outcome\n", "obs.csv");
        CHECK_THROWS_AS((void)load_panel(obs, units), validation_error);
    }

    SUBCASE("treated without a policy occasion") {
        const csv_table units = parse_csv(
            "unit,role,policy_occasion\n"
            "T0,treated,\n",
            "units.csv");
        const csv_table obs = parse_csv("unit,individual,occasion,outcome\n", "obs.csv");
        CHECK_THROWS_AS((void)load_panel(obs, units), validation_error);
    }

    SUBCASE("unparseable occasion cites row and column") {
        const csv_table units = parse_csv(units_ok, "units.csv");
        const csv_table obs = parse_csv(
            "unit,individual,occasion,outcome\n"
            "T0,t.a,zero,1.0\n",
            "obs.csv");
        try {
            (void)load_panel(obs, units);
            FAIL("expected validation_error");
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("obs.csv:line 2") != std::string::npos);
            CHECK(std::string(e.what()).find("occasion") != std::string::npos);
        }
    }

    SUBCASE("duplicate cell cites both rows") {
        const csv_table units = parse_csv(units_ok, "units.csv");
        const csv_table obs = parse_csv(
            "unit,individual,occasion,outcome\n"
            "T0,t.a,0,1.0\n"
            "T0,t.a,0,2.0\n",
            "obs.csv");
        try {
            (void)load_panel(obs, units);
            FAIL("expected validation_error");
        } catch (const validation_error& e) {
            const std::string what = e.what();
            CHECK(what.find("obs.csv:line 3") != std::string::npos);
            CHECK(what.find("obs.csv:line 2") != std::string::npos);
        }
    }

    SUBCASE("unknown unit in observations") {
        const csv_table units = parse_csv(units_ok, "units.csv");
        const csv_table obs = parse_csv(
            "unit,individual,occasion,outcome\n"
            "TX,t.a,0,1.0\n",
            "obs.csv");
        try {
            (void)load_panel(obs, units);
            FAIL("expected validation_error");
        } catch (const validation_error& e) {
            CHECK(std::string(e.what()).find("unknown unit \"TX\"") != std::string::npos);
        }
    }
}

TEST_CASE("build_cohort applies the presence rule over the study window") {
    PanelDataset panel;
    panel.add_unit("T0", {true, 2});
    panel.add_unit("C0", {false, 0});
    // Treated members: full presence, a late joiner, and one with a gap.
    for (std::int64_t t = 0; t <= 3; ++t) panel.add_observation("T0", "t.full", t, 1.0);
    for (std::int64_t t = 2; t <= 3; ++t) panel.add_observation("T0", "t.late", t, 1.0);
    for (std::int64_t t : {0, 1, 3}) panel.add_observation("T0", "t.gap", t, 1.0);
    for (std::int64_t t = 0; t <= 3; ++t) panel.add_observation("C0", "c.full", t, 0.0);
    for (std::int64_t t = 1; t <= 3; ++t) panel.add_observation("C0", "c.short", t, 0.0);
    panel.finalize();

    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 2;
    spec.t_pre = 2;
    spec.t_post = 2;  // window 0..3
    const Cohort cohort = build_cohort(panel, spec);

    CHECK(cohort.treated_members == std::vector<std::string>{"t.full"});
    CHECK(cohort.control_members.at("C0") == std::vector<std::string>{"c.full"});
    CHECK(cohort.n_treated() == 1);
    CHECK(cohort.n_control("C0") == 1);
    CHECK(cohort.n_control("C9") == 0);
    CHECK(cohort.n_control_total() == 1);

    SUBCASE("narrower window admits the late joiner") {
        spec.t_pre = 1;  // window 1..3 still excludes t.late (joined at 2)
        const Cohort narrow = build_cohort(panel, spec);
        CHECK(narrow.treated_members == std::vector<std::string>{"t.full"});
        CHECK(narrow.control_members.at("C0") ==
              std::vector<std::string>{"c.full", "c.short"});
    }
}

TEST_CASE("build_cohort excludes members of other treated units") {
    const PanelDataset panel = small_panel();
    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 2;
    spec.t_pre = 2;
    spec.t_post = 2;
    const Cohort cohort = build_cohort(panel, spec);
    CHECK(cohort.n_treated() == 3);
    CHECK(cohort.control_members.count("T1") == 0);
    CHECK(cohort.n_control_total() == 6);  // C0 and C1 only
}

TEST_CASE("eligibility markers restrict the treated roster") {
    const PanelDataset panel = small_panel();
    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 2;
    spec.t_pre = 2;
    spec.t_post = 2;
    // Pre-period is occasions 0..1. p0 qualifies inside it, p1 only outside,
    // p2 has no marker record at all.
    spec.eligibility_markers = std::map<std::string, std::vector<std::int64_t>>{
        {"T0.p0", {1}},
        {"T0.p1", {2, 4}},
        {"C0.p0", {0}},
        {"C0.p1", {3}},
        {"C1.p2", {1}},
    };
    const Cohort cohort = build_cohort(panel, spec);
    CHECK(cohort.treated_members == std::vector<std::string>{"T0.p0"});
    CHECK(cohort.control_members.at("C0") == std::vector<std::string>{"C0.p0"});
    CHECK(cohort.control_members.at("C1") == std::vector<std::string>{"C1.p2"});
}

TEST_CASE("build_cohort rejects degenerate or misdirected specs") {
    const PanelDataset panel = small_panel();
    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 2;
    spec.t_pre = 2;
    spec.t_post = 2;

    SUBCASE("unknown unit") {
        spec.treated_unit = "TX";
        CHECK_THROWS_AS((void)build_cohort(panel, spec), validation_error);
    }
    SUBCASE("control unit as cohort") {
        spec.treated_unit = "C0";
        CHECK_THROWS_AS((void)build_cohort(panel, spec), validation_error);
    }
    SUBCASE("window lengths below one") {
        spec.t_pre = 0;
        CHECK_THROWS_AS((void)build_cohort(panel, spec), validation_error);
    }
    SUBCASE("window wider than anyone's presence") {
        spec.t_pre = 10;
        CHECK_THROWS_AS((void)build_cohort(panel, spec), validation_error);
    }
}

TEST_CASE("overlap_counts orients by policy occasion and intersects rosters") {
    PanelDataset panel;
    panel.add_unit("T0", {true, 2});
    panel.add_unit("T1", {true, 4});
    panel.add_unit("C0", {false, 0});
    panel.add_unit("C1", {false, 0});
    for (int person = 0; person < 2; ++person) {
        const std::string a = "T0.p" + std::to_string(person);
        const std::string b = "T1.p" + std::to_string(person);
        for (std::int64_t t = 0; t <= 5; ++t) {
            panel.add_observation("T0", a, t, 0.0);
            panel.add_observation("T1", b, t, 0.0);
        }
    }
    // C0: one member covering both windows, one only the early window,
    // one only the late window. C1: a single member covering both.
    for (std::int64_t t = 0; t <= 5; ++t) panel.add_observation("C0", "C0.both", t, 0.0);
    for (std::int64_t t = 0; t <= 3; ++t) panel.add_observation("C0", "C0.early", t, 0.0);
    for (std::int64_t t = 2; t <= 5; ++t) panel.add_observation("C0", "C0.late", t, 0.0);
    for (std::int64_t t = 0; t <= 5; ++t) panel.add_observation("C1", "C1.both", t, 0.0);
    panel.finalize();

    CohortSpec early;
    early.treated_unit = "T0";
    early.policy_occasion = 2;
    early.t_pre = 2;
    early.t_post = 2;  // window 0..3
    CohortSpec late = early;
    late.treated_unit = "T1";
    late.policy_occasion = 4;  // window 2..5

    const Cohort a = build_cohort(panel, early);
    const Cohort b = build_cohort(panel, late);

    const OverlapCounts counts = overlap_counts(a, b);
    CHECK(counts.cohort_a == "T0");
    CHECK(counts.cohort_b == "T1");
    CHECK(counts.delta == 2);
    CHECK(counts.t_pre == 2);
    CHECK(counts.t_post == 2);
    CHECK(counts.n_treated_a == 2);
    CHECK(counts.n_treated_b == 2);
    REQUIRE(counts.controls.size() == 2);
    CHECK(counts.controls[0].unit == "C0");
    CHECK(counts.controls[0].n_a == 2);        // both + early
    CHECK(counts.controls[0].n_b == 2);        // both + late
    CHECK(counts.controls[0].n_shared == 1);   // both
    CHECK(counts.controls[0].n_only_a() == 1);
    CHECK(counts.controls[0].n_only_b() == 1);
    CHECK(counts.controls[1].unit == "C1");
    CHECK(counts.controls[1].n_shared == 1);
    CHECK(counts.n_ctrl_a == 3);
    CHECK(counts.n_ctrl_b == 3);
    counts.validate();

    SUBCASE("argument order does not matter") {
        const OverlapCounts swapped = overlap_counts(b, a);
        CHECK(swapped.cohort_a == "T0");
        CHECK(swapped.delta == 2);
        CHECK(swapped.controls[0].n_a == 2);
    }

    SUBCASE("mismatched study shapes are rejected") {
        CohortSpec wide = late;
        wide.t_post = 1;
        const Cohort c = build_cohort(panel, wide);
        CHECK_THROWS_AS((void)overlap_counts(a, c), validation_error);
    }
}

TEST_CASE("OverlapCounts::validate catches inconsistent rows") {
    OverlapCounts counts;
    counts.cohort_a = "A";
    counts.cohort_b = "B";
    counts.n_treated_a = 1;
    counts.n_treated_b = 1;
    counts.t_pre = 1;
    counts.t_post = 1;
    counts.delta = 1;
    counts.controls.push_back({"X", 2, 3, 1});
    counts.n_ctrl_a = 2;
    counts.n_ctrl_b = 3;
    counts.validate();

    SUBCASE("shared above either side") {
        counts.controls[0].n_shared = 4;
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
    SUBCASE("totals disagree with rows") {
        counts.n_ctrl_b = 5;
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
    SUBCASE("unsorted control rows") {
        counts.controls.push_back({"A2", 1, 1, 0});
        counts.n_ctrl_a = 3;
        counts.n_ctrl_b = 4;
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
    SUBCASE("same cohort twice") {
        counts.cohort_b = "A";
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
    SUBCASE("negative delta") {
        counts.delta = -1;
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
    SUBCASE("no controls") {
        counts.controls.clear();
        counts.n_ctrl_a = 0;
        counts.n_ctrl_b = 0;
        CHECK_THROWS_AS(counts.validate(), validation_error);
    }
}
