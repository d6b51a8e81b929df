#include "stackdid/panel.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"

namespace stackdid {

namespace {

/// Content-level numeric parse: the file was readable and structurally
/// sound, so a bad number is a validation failure, not an I/O one.
std::int64_t parse_int_cell(const std::string& token, const std::string& where) {
    try {
        return parse_int(token, where);
    } catch (const io_error& e) {
        throw validation_error(e.what());
    }
}

double parse_double_cell(const std::string& token, const std::string& where) {
    try {
        return parse_double(token, where);
    } catch (const io_error& e) {
        throw validation_error(e.what());
    }
}

}  // namespace

std::optional<double> PanelDataset::individual_record::outcome_at(std::int64_t occasion) const {
    auto it = std::lower_bound(cells.begin(), cells.end(), occasion,
                               [](const observation& obs, std::int64_t t) {
                                   return obs.occasion < t;
                               });
    if (it == cells.end() || it->occasion != occasion) return std::nullopt;
    return it->outcome;
}

void PanelDataset::add_unit(const std::string& unit, unit_role role) {
    if (finalized_) throw validation_error("panel is already finalized");
    if (unit.empty()) throw validation_error("unit id may not be empty");
    if (!roles_.emplace(unit, role).second) {
        throw validation_error("duplicate unit \"" + unit + "\"");
    }
}

void PanelDataset::add_observation(const std::string& unit, const std::string& individual,
                                   std::int64_t occasion, double outcome) {
    if (finalized_) throw validation_error("panel is already finalized");
    if (roles_.find(unit) == roles_.end()) {
        throw validation_error("unknown unit \"" + unit + "\" for individual \"" + individual +
                               "\"");
    }
    if (individual.empty()) throw validation_error("individual id may not be empty");
    auto [it, inserted] = individuals_.try_emplace(individual);
    if (inserted) {
        it->second.unit = unit;
    } else if (it->second.unit != unit) {
        throw validation_error("individual \"" + individual + "\" appears under unit \"" +
                               it->second.unit + "\" and unit \"" + unit + "\"");
    }
    it->second.cells.push_back({occasion, outcome});
    ++n_observations_;
}

void PanelDataset::finalize() {
    if (finalized_) return;
    for (auto& [id, rec] : individuals_) {
        std::sort(rec.cells.begin(), rec.cells.end(),
                  [](const observation& a, const observation& b) {
                      return a.occasion < b.occasion;
                  });
        rec.presence.clear();
        for (std::size_t i = 0; i < rec.cells.size(); ++i) {
            if (i > 0 && rec.cells[i].occasion == rec.cells[i - 1].occasion) {
                std::ostringstream msg;
                msg << "duplicate observation for individual \"" << id << "\" at occasion "
                    << rec.cells[i].occasion;
                throw validation_error(msg.str());
            }
            if (!rec.presence.empty() && rec.cells[i].occasion == rec.presence.back().last + 1) {
                rec.presence.back().last = rec.cells[i].occasion;
            } else {
                rec.presence.push_back({rec.cells[i].occasion, rec.cells[i].occasion});
            }
        }
    }
    finalized_ = true;
}

const PanelDataset::individual_record& PanelDataset::individual(const std::string& id) const {
    auto it = individuals_.find(id);
    if (it == individuals_.end()) {
        throw validation_error("unknown individual \"" + id + "\"");
    }
    return it->second;
}

std::vector<std::string> PanelDataset::members_of(const std::string& unit) const {
    std::vector<std::string> out;
    for (const auto& [id, rec] : individuals_) {
        if (rec.unit == unit) out.push_back(id);
    }
    return out;  // map iteration keeps ids sorted
}

PanelDataset load_panel(const csv_table& observations, const csv_table& units,
                        const panel_schema& schema) {
    PanelDataset panel;

    const std::size_t u_unit = units.column_index(schema.unit);
    const std::size_t u_role = units.column_index("role");
    const std::size_t u_policy = units.column_index("policy_occasion");
    for (std::size_t r = 0; r < units.rows.size(); ++r) {
        const auto& row = units.rows[r];
        const std::string& unit = row[u_unit];
        const std::string& role = row[u_role];
        unit_role ur;
        if (role == "treated") {
            ur.treated = true;
            ur.policy_occasion = parse_int_cell(row[u_policy], units.row_location(r));
        } else if (role == "control") {
            ur.treated = false;
            if (!row[u_policy].empty()) {
                throw validation_error(units.row_location(r) +
                                       ": control unit \"" + unit +
                                       "\" must leave policy_occasion blank");
            }
        } else {
            throw validation_error(units.row_location(r) + ": role must be \"treated\" or "
                                   "\"control\", got \"" + role + "\"");
        }
        if (panel.has_unit(unit)) {
            throw validation_error(units.row_location(r) + ": duplicate unit \"" + unit + "\"");
        }
        panel.add_unit(unit, ur);
    }

    const std::size_t o_unit = observations.column_index(schema.unit);
    const std::size_t o_indiv = observations.column_index(schema.individual);
    const std::size_t o_occ = observations.column_index(schema.occasion);
    const std::size_t o_out = observations.column_index(schema.outcome);

    // Track first sighting of each cell so duplicates can cite both rows.
    std::unordered_map<std::string, std::unordered_map<std::int64_t, std::size_t>> seen;
    for (std::size_t r = 0; r < observations.rows.size(); ++r) {
        const auto& row = observations.rows[r];
        const std::string& unit = row[o_unit];
        const std::string& individual = row[o_indiv];
        if (!panel.has_unit(unit)) {
            throw validation_error(observations.row_location(r) + ": unknown unit \"" + unit +
                                   "\"");
        }
        const std::int64_t occasion =
            parse_int_cell(row[o_occ], observations.row_location(r) + ", column \"" +
                                           schema.occasion + "\"");
        const double outcome =
            parse_double_cell(row[o_out], observations.row_location(r) + ", column \"" +
                                              schema.outcome + "\"");
        auto [it, inserted] = seen[individual].try_emplace(occasion, r);
        if (!inserted) {
            std::ostringstream msg;
            msg << observations.row_location(r) << ": duplicate observation for individual \""
                << individual << "\" at occasion " << occasion << " (first at "
                << observations.row_location(it->second) << ")";
            throw validation_error(msg.str());
        }
        try {
            panel.add_observation(unit, individual, occasion, outcome);
        } catch (const validation_error& e) {
            throw validation_error(observations.row_location(r) + ": " + e.what());
        }
    }

    panel.finalize();
    return panel;
}

PanelDataset load_panel_files(const std::string& observations_path,
                              const std::string& units_path, const panel_schema& schema) {
    csv_table observations = read_csv_file(observations_path);
    csv_table units = read_csv_file(units_path);
    return load_panel(observations, units, schema);
}

std::int64_t Cohort::n_control(const std::string& unit) const {
    auto it = control_members.find(unit);
    if (it == control_members.end()) return 0;
    return static_cast<std::int64_t>(it->second.size());
}

std::int64_t Cohort::n_control_total() const {
    std::int64_t total = 0;
    for (const auto& [unit, members] : control_members) {
        total += static_cast<std::int64_t>(members.size());
    }
    return total;
}

namespace {

/// Marker rule: at least one marker occasion inside [t* - t_pre, t* - 1].
bool marker_eligible(const CohortSpec& spec, const std::string& individual) {
    if (!spec.eligibility_markers) return true;
    auto it = spec.eligibility_markers->find(individual);
    if (it == spec.eligibility_markers->end()) return false;
    const std::int64_t lo = spec.policy_occasion - spec.t_pre;
    const std::int64_t hi = spec.policy_occasion - 1;
    return std::any_of(it->second.begin(), it->second.end(),
                       [&](std::int64_t t) { return lo <= t && t <= hi; });
}

}  // namespace

Cohort build_cohort(const PanelDataset& panel, const CohortSpec& spec) {
    if (spec.t_pre < 1 || spec.t_post < 1) {
        throw validation_error("cohort \"" + spec.treated_unit +
                               "\": t_pre and t_post must be at least 1");
    }
    auto role_it = panel.unit_roles().find(spec.treated_unit);
    if (role_it == panel.unit_roles().end()) {
        throw validation_error("cohort references unknown unit \"" + spec.treated_unit + "\"");
    }
    if (!role_it->second.treated) {
        throw validation_error("cohort unit \"" + spec.treated_unit + "\" is not treated");
    }

    Cohort cohort;
    cohort.spec = spec;
    const std::int64_t lo = spec.window_first();
    const std::int64_t hi = spec.window_last();

    for (const auto& [id, rec] : panel.individuals()) {
        if (!rec.present_over(lo, hi)) continue;
        if (!marker_eligible(spec, id)) continue;
        const unit_role& role = panel.unit_roles().at(rec.unit);
        if (rec.unit == spec.treated_unit) {
            cohort.treated_members.push_back(id);
        } else if (!role.treated) {
            cohort.control_members[rec.unit].push_back(id);
        }
        // Individuals of other treated units never enter this cohort.
    }

    if (cohort.treated_members.empty()) {
        throw validation_error("cohort \"" + spec.treated_unit +
                               "\" has no eligible treated individuals");
    }
    if (cohort.n_control_total() == 0) {
        throw validation_error("cohort \"" + spec.treated_unit +
                               "\" has no eligible control individuals");
    }
    return cohort;
}

void OverlapCounts::validate() const {
    std::ostringstream msg;
    if (cohort_a == cohort_b) {
        throw validation_error("overlap counts need two distinct cohorts, got \"" + cohort_a +
                               "\" twice");
    }
    if (t_pre < 1 || t_post < 1) {
        throw validation_error("overlap counts: t_pre and t_post must be at least 1");
    }
    if (delta < 0) throw validation_error("overlap counts: delta must be nonnegative");
    if (n_treated_a < 1 || n_treated_b < 1) {
        throw validation_error("overlap counts: each cohort needs at least one treated member");
    }

    std::int64_t sum_a = 0;
    std::int64_t sum_b = 0;
    const control_row* prev = nullptr;
    for (const auto& row : controls) {
        if (prev != nullptr && !(prev->unit < row.unit)) {
            throw validation_error("overlap counts: control rows must be sorted by unique unit, "
                                   "offender \"" + row.unit + "\"");
        }
        prev = &row;
        if (row.n_a < 0 || row.n_b < 0 || row.n_shared < 0) {
            throw validation_error("overlap counts: negative count for unit \"" + row.unit +
                                   "\"");
        }
        if (row.n_shared > row.n_a || row.n_shared > row.n_b) {
            msg << "overlap counts: unit \"" << row.unit << "\" shares " << row.n_shared
                << " individuals but has only (" << row.n_a << ", " << row.n_b << ")";
            throw validation_error(msg.str());
        }
        sum_a += row.n_a;
        sum_b += row.n_b;
    }
    if (sum_a != n_ctrl_a || sum_b != n_ctrl_b) {
        msg << "overlap counts: control totals (" << n_ctrl_a << ", " << n_ctrl_b
            << ") do not match row sums (" << sum_a << ", " << sum_b << ")";
        throw validation_error(msg.str());
    }
    if (n_ctrl_a < 1 || n_ctrl_b < 1) {
        throw validation_error("overlap counts: each cohort needs at least one control member");
    }
}

OverlapCounts overlap_counts(const Cohort& first, const Cohort& second) {
    if (first.spec.t_pre != second.spec.t_pre || first.spec.t_post != second.spec.t_post) {
        throw validation_error("overlap counts need matching study-period shapes, got (" +
                               std::to_string(first.spec.t_pre) + "," +
                               std::to_string(first.spec.t_post) + ") and (" +
                               std::to_string(second.spec.t_pre) + "," +
                               std::to_string(second.spec.t_post) + ")");
    }
    const bool swap = second.spec.policy_occasion < first.spec.policy_occasion;
    const Cohort& a = swap ? second : first;
    const Cohort& b = swap ? first : second;

    OverlapCounts counts;
    counts.cohort_a = a.spec.treated_unit;
    counts.cohort_b = b.spec.treated_unit;
    counts.n_treated_a = a.n_treated();
    counts.n_treated_b = b.n_treated();
    counts.delta = b.spec.policy_occasion - a.spec.policy_occasion;
    counts.t_pre = a.spec.t_pre;
    counts.t_post = a.spec.t_post;

    std::vector<std::string> units;
    for (const auto& [unit, members] : a.control_members) units.push_back(unit);
    for (const auto& [unit, members] : b.control_members) units.push_back(unit);
    std::sort(units.begin(), units.end());
    units.erase(std::unique(units.begin(), units.end()), units.end());

    static const std::vector<std::string> kEmpty;
    for (const auto& unit : units) {
        auto it_a = a.control_members.find(unit);
        auto it_b = b.control_members.find(unit);
        const std::vector<std::string>& in_a = it_a == a.control_members.end() ? kEmpty
                                                                               : it_a->second;
        const std::vector<std::string>& in_b = it_b == b.control_members.end() ? kEmpty
                                                                               : it_b->second;
        std::vector<std::string> both;
        std::set_intersection(in_a.begin(), in_a.end(), in_b.begin(), in_b.end(),
                              std::back_inserter(both));
        OverlapCounts::control_row row;
        row.unit = unit;
        row.n_a = static_cast<std::int64_t>(in_a.size());
        row.n_b = static_cast<std::int64_t>(in_b.size());
        row.n_shared = static_cast<std::int64_t>(both.size());
        counts.n_ctrl_a += row.n_a;
        counts.n_ctrl_b += row.n_b;
        counts.controls.push_back(std::move(row));
    }

    counts.validate();
    return counts;
}

}  // namespace stackdid
