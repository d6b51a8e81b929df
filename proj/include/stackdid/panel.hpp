#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stackdid/csv.hpp"

namespace stackdid {

/// Inclusive run of consecutive occasions an individual is observed.
struct presence_interval {
    std::int64_t first = 0;
    std::int64_t last = 0;

    [[nodiscard]] bool covers(std::int64_t lo, std::int64_t hi) const {
        return first <= lo && hi <= last;
    }
};

struct unit_role {
    bool treated = false;
    std::int64_t policy_occasion = 0;  // meaningful only when treated
};

/// Person-time panel: one outcome per (unit, individual, occasion).
///
/// Individuals belong to exactly one unit, and presence intervals are the
/// maximal runs of consecutive observed occasions. Immutable once built;
/// safe to share across threads.
class PanelDataset {
public:
    struct observation {
        std::int64_t occasion;
        double outcome;
    };

    /// All observations for one individual, kept sorted by occasion.
    struct individual_record {
        std::string unit;
        std::vector<observation> cells;
        std::vector<presence_interval> presence;

        [[nodiscard]] bool present_over(std::int64_t lo, std::int64_t hi) const {
            for (const auto& iv : presence) {
                if (iv.covers(lo, hi)) return true;
            }
            return false;
        }
        /// Outcome at an occasion, if observed.
        [[nodiscard]] std::optional<double> outcome_at(std::int64_t occasion) const;
    };

    /// Construction happens through load_panel or the builder interface below.
    void add_unit(const std::string& unit, unit_role role);
    void add_observation(const std::string& unit, const std::string& individual,
                         std::int64_t occasion, double outcome);
    /// Sorts cells, infers presence runs, and checks all dataset invariants.
    void finalize();

    [[nodiscard]] const std::map<std::string, unit_role>& unit_roles() const { return roles_; }
    [[nodiscard]] const std::map<std::string, individual_record>& individuals() const {
        return individuals_;
    }
    [[nodiscard]] const individual_record& individual(const std::string& id) const;
    [[nodiscard]] bool has_unit(const std::string& unit) const { return roles_.count(unit) > 0; }
    [[nodiscard]] std::size_t n_individuals() const { return individuals_.size(); }
    [[nodiscard]] std::size_t n_observations() const { return n_observations_; }

    /// Individual ids of one unit, sorted.
    [[nodiscard]] std::vector<std::string> members_of(const std::string& unit) const;

private:
    std::map<std::string, unit_role> roles_;
    std::map<std::string, individual_record> individuals_;
    std::size_t n_observations_ = 0;
    bool finalized_ = false;
};

/// Column mapping for load_panel; the defaults match the documented file layout.
struct panel_schema {
    std::string unit = "unit";
    std::string individual = "individual";
    std::string occasion = "occasion";
    std::string outcome = "outcome";
};

/// Reads a panel from an observation table and a units table.
///
/// Observation file columns: unit,individual,occasion,outcome. Units file
/// columns: unit,role,policy_occasion with role "treated" or "control" and
/// policy_occasion blank for controls. Presence intervals are inferred from
/// the observed occasions. Throws io_error for unreadable or malformed
/// files and validation_error for consistency violations (duplicate cells,
/// an individual under two units, unknown units).
[[nodiscard]] PanelDataset load_panel(const csv_table& observations, const csv_table& units,
                                      const panel_schema& schema = {});
[[nodiscard]] PanelDataset load_panel_files(const std::string& observations_path,
                                            const std::string& units_path,
                                            const panel_schema& schema = {});

/// One treated state's cohort definition.
struct CohortSpec {
    std::string treated_unit;
    std::int64_t policy_occasion = 0;  // t*
    std::int64_t t_pre = 1;
    std::int64_t t_post = 1;
    /// Optional marker rule: individuals qualify only if at least one marker
    /// occasion falls inside [t* - t_pre, t* - 1].
    std::optional<std::map<std::string, std::vector<std::int64_t>>> eligibility_markers;

    [[nodiscard]] std::int64_t window_first() const { return policy_occasion - t_pre; }
    [[nodiscard]] std::int64_t window_last() const { return policy_occasion + t_post - 1; }
};

/// Materialized cohort: rosters of included individuals per unit.
struct Cohort {
    CohortSpec spec;
    std::vector<std::string> treated_members;                     // sorted ids
    std::map<std::string, std::vector<std::string>> control_members;  // unit -> sorted ids

    [[nodiscard]] std::int64_t n_treated() const {
        return static_cast<std::int64_t>(treated_members.size());
    }
    [[nodiscard]] std::int64_t n_control(const std::string& unit) const;
    [[nodiscard]] std::int64_t n_control_total() const;
};

/// Applies the eligibility rules: continuous presence over the whole study
/// period, marker-in-pre-period when markers are supplied, individuals of
/// other treated units excluded. Throws validation_error for an unknown or
/// non-treated unit and for degenerate cohorts (no treated or no control
/// members).
[[nodiscard]] Cohort build_cohort(const PanelDataset& panel, const CohortSpec& spec);

/// Shared-control overlap between two cohorts.
struct OverlapCounts {
    std::string cohort_a;  // treated unit ids
    std::string cohort_b;
    std::int64_t n_treated_a = 0;  // treated-arm sizes
    std::int64_t n_treated_b = 0;

    struct control_row {
        std::string unit;
        std::int64_t n_a = 0;       // cohort a's members in this unit
        std::int64_t n_b = 0;       // cohort b's members
        std::int64_t n_shared = 0;  // members of both
        [[nodiscard]] std::int64_t n_only_a() const { return n_a - n_shared; }
        [[nodiscard]] std::int64_t n_only_b() const { return n_b - n_shared; }
    };
    std::vector<control_row> controls;  // sorted by unit id

    std::int64_t n_ctrl_a = 0;  // totals over control units
    std::int64_t n_ctrl_b = 0;
    std::int64_t delta = 0;  // |t*_a - t*_b|
    std::int64_t t_pre = 0;
    std::int64_t t_post = 0;

    void validate() const;  // throws validation_error on inconsistency
};

/// Per-control-unit intersection counts for a cohort pair. Requires the two
/// cohorts to share t_pre and t_post; the covariance formulas assume a
/// common study-period shape.
[[nodiscard]] OverlapCounts overlap_counts(const Cohort& a, const Cohort& b);

}  // namespace stackdid
