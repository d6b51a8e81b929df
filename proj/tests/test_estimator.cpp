#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "doctest.h"
#include "stackdid/errors.hpp"
#include "stackdid/estimator.hpp"
#include "stackdid/panel.hpp"
#include "stackdid/rng.hpp"

using namespace stackdid;

namespace {

struct toy_obs {
    const char* unit;
    const char* id;
    std::int64_t occasion;
    double y;
};

PanelDataset panel_from(const std::vector<toy_obs>& obs) {
    PanelDataset panel;
    panel.add_unit("T0", {true, 1});
    panel.add_unit("C0", {false, 0});
    for (const auto& o : obs) panel.add_observation(o.unit, o.id, o.occasion, o.y);
    panel.finalize();
    return panel;
}

CohortSpec unit_window_spec() {
    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 1;
    spec.t_pre = 1;
    spec.t_post = 1;
    return spec;
}

}  // namespace

TEST_CASE("plug-in estimate on a worked example") {
    const PanelDataset panel = panel_from({
        {"T0", "t1", 0, 1.0},
        {"T0", "t1", 1, 4.0},
        {"C0", "c1", 0, 1.0},
        {"C0", "c1", 1, 2.0},
        {"C0", "c2", 0, 3.0},
        {"C0", "c2", 1, 2.0},
    });
    const Cohort cohort = build_cohort(panel, unit_window_spec());
    const AttEstimate att = att_plugin(panel, cohort);

    CHECK(att.cohort_id == "T0");
    CHECK(att.value == 3.0);
    CHECK(att.pre_treated_mean == 1.0);
    CHECK(att.post_treated_mean == 4.0);
    CHECK(att.pre_control_mean == 2.0);
    CHECK(att.post_control_mean == 2.0);
    CHECK(att.n_treated == 1);
    CHECK(att.n_control == 2);
    CHECK(att.policy_occasion == 1);
    CHECK(att.t_pre == 1);
    CHECK(att.t_post == 1);
}

TEST_CASE("constant outcomes estimate zero") {
    const PanelDataset panel = panel_from({
        {"T0", "t1", 0, 5.0},
        {"T0", "t1", 1, 5.0},
        {"C0", "c1", 0, 5.0},
        {"C0", "c1", 1, 5.0},
    });
    const Cohort cohort = build_cohort(panel, unit_window_spec());
    CHECK(att_plugin(panel, cohort).value == 0.0);
}

TEST_CASE("a shared trend with unit offsets estimates zero") {
    PanelDataset panel;
    panel.add_unit("T0", {true, 3});
    panel.add_unit("C0", {false, 0});
    panel.add_unit("C1", {false, 0});
    const struct {
        const char* unit;
        double offset;
        int persons;
    } blocks[] = {{"T0", 4.0, 2}, {"C0", -1.5, 3}, {"C1", 0.25, 1}};
    for (const auto& b : blocks) {
        for (int person = 0; person < b.persons; ++person) {
            const std::string id = std::string(b.unit) + ".p" + std::to_string(person);
            for (std::int64_t t = 0; t <= 5; ++t) {
                const double trend = 0.7 * static_cast<double>(t);
                panel.add_observation(b.unit, id, t, b.offset + trend + 0.1 * person);
            }
        }
    }
    panel.finalize();

    CohortSpec spec;
    spec.treated_unit = "T0";
    spec.policy_occasion = 3;
    spec.t_pre = 3;
    spec.t_post = 3;
    const Cohort cohort = build_cohort(panel, spec);
    CHECK(std::abs(att_plugin(panel, cohort).value) < 1e-12);
}

TEST_CASE("affine outcome changes move the estimate accordingly") {
    const std::vector<toy_obs> raw = {
        {"T0", "t1", 0, 1.0}, {"T0", "t1", 1, 4.0},  {"C0", "c1", 0, 1.0},
        {"C0", "c1", 1, 2.0}, {"C0", "c2", 0, 3.0},  {"C0", "c2", 1, 2.0},
    };
    std::vector<toy_obs> scaled = raw;
    for (auto& o : scaled) o.y = -2.5 * o.y + 7.0;

    const PanelDataset base = panel_from(raw);
    const PanelDataset moved = panel_from(scaled);
    const Cohort cohort_base = build_cohort(base, unit_window_spec());
    const Cohort cohort_moved = build_cohort(moved, unit_window_spec());
    const double v = att_plugin(base, cohort_base).value;
    const double w = att_plugin(moved, cohort_moved).value;
    CHECK(std::abs(w - (-2.5) * v) < 1e-12);
}

TEST_CASE("a missing study-period cell is reported by name") {
    PanelDataset panel;
    panel.add_unit("T0", {true, 1});
    panel.add_unit("C0", {false, 0});
    panel.add_observation("T0", "t1", 0, 1.0);
    panel.add_observation("T0", "t1", 1, 2.0);
    panel.add_observation("C0", "c1", 0, 1.0);
    panel.add_observation("C0", "c1", 1, 1.0);
    panel.finalize();

    const Cohort cohort = build_cohort(panel, unit_window_spec());
    // Damage the roster directly: a member the panel has no cells for.
    Cohort broken = cohort;
    broken.control_members["C0"].push_back("c.ghost");
    try {
        (void)att_plugin(panel, broken);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("c.ghost") != std::string::npos);
    }
}

TEST_CASE("plug-in agrees with the two-way fixed effects oracle") {
    rng root(314159);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        rng r = root.stream(static_cast<std::uint64_t>(trial));
        const std::int64_t t_pre = 1 + static_cast<std::int64_t>(r.next_below(3));
        const std::int64_t t_post = 1 + static_cast<std::int64_t>(r.next_below(3));
        const std::int64_t t_star = t_pre;
        const std::int64_t n_treated = 1 + static_cast<std::int64_t>(r.next_below(4));
        const std::int64_t n_controls[2] = {1 + static_cast<std::int64_t>(r.next_below(4)),
                                            1 + static_cast<std::int64_t>(r.next_below(4))};

        PanelDataset panel;
        panel.add_unit("T0", {true, t_star});
        panel.add_unit("C0", {false, 0});
        panel.add_unit("C1", {false, 0});
        auto fill = [&](const std::string& unit, std::int64_t persons) {
            for (std::int64_t person = 0; person < persons; ++person) {
                const std::string id = unit + ".p" + std::to_string(person);
                for (std::int64_t t = 0; t < t_pre + t_post; ++t) {
                    panel.add_observation(unit, id, t, r.next_normal());
                }
            }
        };
        fill("T0", n_treated);
        fill("C0", n_controls[0]);
        fill("C1", n_controls[1]);
        panel.finalize();

        CohortSpec spec;
        spec.treated_unit = "T0";
        spec.policy_occasion = t_star;
        spec.t_pre = t_pre;
        spec.t_post = t_post;
        const Cohort cohort = build_cohort(panel, spec);

        const double plug = att_plugin(panel, cohort).value;
        const double twfe = att_twfe_oracle(panel, cohort);
        CAPTURE(trial);
        REQUIRE(std::abs(plug - twfe) <= 1e-8 * (1.0 + std::abs(plug)));
        ++checked;
    }
    CHECK(checked == 200);
}
