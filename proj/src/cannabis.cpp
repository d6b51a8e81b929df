#include "stackdid/cannabis.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "stackdid/csv.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"

namespace stackdid {

namespace {

// Numeric cells in an otherwise well-formed table are content, not
// structure: a bad one is a validation failure, not an I/O failure.
std::int64_t parse_count_cell(const csv_table& table, std::size_t row, std::string_view column) {
    const std::string& raw = table.cell(row, column);
    std::int64_t value = 0;
    try {
        value = parse_int(raw, table.row_location(row) + ", column '" + std::string(column) + "'");
    } catch (const io_error& e) {
        throw validation_error(e.what());
    }
    if (value < 0) {
        throw validation_error(table.row_location(row) + ": column '" + std::string(column) +
                               "' must be nonnegative, got " + raw);
    }
    return value;
}

std::string join_path(const std::string& directory, const std::string& file) {
    if (directory.empty()) return file;
    if (directory.back() == '/') return directory + file;
    return directory + "/" + file;
}

std::tuple<std::string, std::string, std::string> shared_key(std::string a, std::string b,
                                                             std::string state) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b), std::move(state)};
}

}  // namespace

const CannabisFixture::cohort_info& CannabisFixture::cohort(const std::string& name) const {
    for (const auto& info : cohorts) {
        if (info.name == name) return info;
    }
    throw validation_error("unknown cohort '" + name + "'");
}

std::int64_t CannabisFixture::control_count(const std::string& cohort,
                                            const std::string& state) const {
    auto it = control_counts.find({cohort, state});
    if (it == control_counts.end()) {
        throw validation_error("no control count for cohort '" + cohort + "', state '" + state +
                               "'");
    }
    return it->second;
}

std::int64_t CannabisFixture::shared_count(const std::string& cohort_a,
                                           const std::string& cohort_b,
                                           const std::string& state) const {
    auto it = shared_counts.find(shared_key(cohort_a, cohort_b, state));
    if (it == shared_counts.end()) {
        throw validation_error("no shared count for cohorts '" + cohort_a + "'/'" + cohort_b +
                               "', state '" + state + "'");
    }
    return it->second;
}

OverlapCounts CannabisFixture::pair_counts(const std::string& cohort_a,
                                           const std::string& cohort_b) const {
    const cohort_info& first = cohort(cohort_a);
    const cohort_info& second = cohort(cohort_b);
    if (first.name == second.name) {
        throw validation_error("pair_counts needs two distinct cohorts, got '" + first.name +
                               "' twice");
    }
    if (first.policy_occasion == second.policy_occasion) {
        throw validation_error("cohorts '" + first.name + "' and '" + second.name +
                               "' share a policy occasion; the pair ordering is undefined");
    }
    const cohort_info& early = first.policy_occasion < second.policy_occasion ? first : second;
    const cohort_info& late = first.policy_occasion < second.policy_occasion ? second : first;

    OverlapCounts counts;
    counts.cohort_a = early.name;
    counts.cohort_b = late.name;
    counts.n_treated_a = early.n_treated;
    counts.n_treated_b = late.n_treated;
    counts.n_ctrl_a = early.n_control_total;
    counts.n_ctrl_b = late.n_control_total;
    counts.delta = late.policy_occasion - early.policy_occasion;
    counts.t_pre = t_pre;
    counts.t_post = t_post;
    counts.controls.reserve(control_states.size());
    for (const std::string& state : control_states) {
        OverlapCounts::control_row row;
        row.unit = state;
        row.n_a = control_count(early.name, state);
        row.n_b = control_count(late.name, state);
        row.n_shared = shared_count(early.name, late.name, state);
        counts.controls.push_back(std::move(row));
    }
    counts.validate();
    return counts;
}

void CannabisFixture::validate() const {
    if (cohorts.size() < 2) {
        throw validation_error("fixture needs at least two cohorts, found " +
                               std::to_string(cohorts.size()));
    }
    if (t_pre < 1 || t_post < 1) {
        throw validation_error("fixture window lengths must be at least 1");
    }
    for (std::size_t i = 0; i < cohorts.size(); ++i) {
        const cohort_info& info = cohorts[i];
        if (info.name.empty()) throw validation_error("fixture has a cohort with an empty name");
        if (info.n_treated < 1) {
            throw validation_error("cohort '" + info.name + "' has n_treated " +
                                   std::to_string(info.n_treated) + "; need at least 1");
        }
        if (info.n_control_total < 1) {
            throw validation_error("cohort '" + info.name + "' has n_control " +
                                   std::to_string(info.n_control_total) + "; need at least 1");
        }
        if (i > 0) {
            const cohort_info& prev = cohorts[i - 1];
            if (info.policy_occasion < prev.policy_occasion) {
                throw validation_error("cohorts are not ordered by policy occasion ('" +
                                       prev.name + "' then '" + info.name + "')");
            }
            if (info.policy_occasion == prev.policy_occasion) {
                throw validation_error("cohorts '" + prev.name + "' and '" + info.name +
                                       "' share policy occasion " +
                                       std::to_string(info.policy_occasion));
            }
        }
        for (const cohort_info& other : cohorts) {
            if (&other != &info && other.name == info.name) {
                throw validation_error("duplicate cohort '" + info.name + "'");
            }
        }
    }
    if (control_states.empty()) {
        throw validation_error("fixture has no control states");
    }
    for (std::size_t i = 0; i < control_states.size(); ++i) {
        if (control_states[i].empty()) {
            throw validation_error("fixture has a control state with an empty name");
        }
        if (i > 0 && control_states[i] <= control_states[i - 1]) {
            throw validation_error("control states are not sorted and distinct near '" +
                                   control_states[i] + "'");
        }
        for (const cohort_info& info : cohorts) {
            if (info.name == control_states[i]) {
                throw validation_error("'" + info.name +
                                       "' appears as both a cohort and a control state");
            }
        }
    }

    // Every (cohort, state) cell must be present, and the per-state counts
    // must add up to the cohort's stated control total.
    for (const cohort_info& info : cohorts) {
        std::int64_t total = 0;
        for (const std::string& state : control_states) {
            total += control_count(info.name, state);
        }
        if (total != info.n_control_total) {
            throw validation_error("control_state_counts: cohort '" + info.name + "' sums to " +
                                   std::to_string(total) + " but cohort_totals says " +
                                   std::to_string(info.n_control_total));
        }
    }
    if (control_counts.size() != cohorts.size() * control_states.size()) {
        for (const auto& [key, value] : control_counts) {
            (void)value;
            bool known_cohort = false;
            for (const cohort_info& info : cohorts) known_cohort |= info.name == key.first;
            bool known_state = std::binary_search(control_states.begin(), control_states.end(),
                                                  key.second);
            if (!known_cohort || !known_state) {
                throw validation_error("control_state_counts: entry for unknown pair ('" +
                                       key.first + "', '" + key.second + "')");
            }
        }
    }

    // Shared membership can never exceed either side's draw from the state.
    std::size_t n_pairs = cohorts.size() * (cohorts.size() - 1) / 2;
    if (shared_counts.size() != n_pairs * control_states.size()) {
        throw validation_error("shared_control_counts: expected " +
                               std::to_string(n_pairs * control_states.size()) +
                               " entries (every pair and state), found " +
                               std::to_string(shared_counts.size()));
    }
    for (const auto& [key, value] : shared_counts) {
        const auto& [a, b, state] = key;
        if (a >= b) {
            throw validation_error("shared_control_counts: key ('" + a + "', '" + b +
                                   "') is not in lexical order");
        }
        std::int64_t in_a = control_count(a, state);
        std::int64_t in_b = control_count(b, state);
        if (value > std::min(in_a, in_b)) {
            throw validation_error("shared_control_counts: cohorts '" + a + "'/'" + b +
                                   "', state '" + state + "': shared count " +
                                   std::to_string(value) + " exceeds membership (" +
                                   std::to_string(in_a) + ", " + std::to_string(in_b) + ")");
        }
    }
}

CannabisFixture load_cannabis_fixture(const std::string& directory) {
    csv_table policy = read_csv_file(join_path(directory, "policy_occasions.csv"));
    csv_table totals = read_csv_file(join_path(directory, "cohort_totals.csv"));
    csv_table per_state = read_csv_file(join_path(directory, "control_state_counts.csv"));
    csv_table shared = read_csv_file(join_path(directory, "shared_control_counts.csv"));
    csv_table disjoint = read_csv_file(join_path(directory, "disjoint_control_counts.csv"));

    std::map<std::string, std::int64_t> policy_occasion;
    for (std::size_t r = 0; r < policy.rows.size(); ++r) {
        const std::string& state = policy.cell(r, "state");
        auto [it, inserted] = policy_occasion.emplace(state, parse_count_cell(policy, r, "policy_occasion"));
        (void)it;
        if (!inserted) {
            throw validation_error(policy.row_location(r) + ": duplicate state '" + state + "'");
        }
    }

    CannabisFixture fixture;
    for (std::size_t r = 0; r < totals.rows.size(); ++r) {
        CannabisFixture::cohort_info info;
        info.name = totals.cell(r, "cohort");
        auto it = policy_occasion.find(info.name);
        if (it == policy_occasion.end()) {
            throw validation_error(totals.row_location(r) + ": cohort '" + info.name +
                                   "' has no entry in policy_occasions.csv");
        }
        info.policy_occasion = it->second;
        info.n_treated = parse_count_cell(totals, r, "n_treated");
        info.n_control_total = parse_count_cell(totals, r, "n_control");
        fixture.cohorts.push_back(std::move(info));
    }
    std::sort(fixture.cohorts.begin(), fixture.cohorts.end(),
              [](const auto& a, const auto& b) {
                  return std::tie(a.policy_occasion, a.name) < std::tie(b.policy_occasion, b.name);
              });

    for (std::size_t r = 0; r < per_state.rows.size(); ++r) {
        std::pair<std::string, std::string> key{per_state.cell(r, "cohort"),
                                                per_state.cell(r, "control_state")};
        std::int64_t count = parse_count_cell(per_state, r, "count");
        if (!fixture.control_counts.emplace(key, count).second) {
            throw validation_error(per_state.row_location(r) + ": duplicate entry for cohort '" +
                                   key.first + "', state '" + key.second + "'");
        }
    }
    std::vector<std::string> states;
    for (const auto& [key, value] : fixture.control_counts) {
        (void)value;
        if (states.empty() || states.back() != key.second) states.push_back(key.second);
    }
    std::sort(states.begin(), states.end());
    states.erase(std::unique(states.begin(), states.end()), states.end());
    fixture.control_states = std::move(states);

    for (std::size_t r = 0; r < shared.rows.size(); ++r) {
        auto key = shared_key(shared.cell(r, "cohort_a"), shared.cell(r, "cohort_b"),
                              shared.cell(r, "control_state"));
        std::int64_t count = parse_count_cell(shared, r, "count");
        if (!fixture.shared_counts.emplace(std::move(key), count).second) {
            throw validation_error(shared.row_location(r) + ": duplicate shared-count entry");
        }
    }

    fixture.validate();

    // The disjoint table is redundant with the shared one; use it as a
    // cross-check instead of storing it. Each row states how many of a
    // cohort's members from one state are *not* shared with the other
    // cohort, so disjoint + shared must reproduce the membership count.
    for (std::size_t r = 0; r < disjoint.rows.size(); ++r) {
        const std::string& cohort = disjoint.cell(r, "cohort");
        const std::string& other = disjoint.cell(r, "other");
        const std::string& state = disjoint.cell(r, "control_state");
        std::int64_t count = parse_count_cell(disjoint, r, "count");
        std::int64_t expected =
            fixture.control_count(cohort, state) - fixture.shared_count(cohort, other, state);
        if (count != expected) {
            throw validation_error(disjoint.row_location(r) + ": disjoint count " +
                                   std::to_string(count) + " + shared count does not match the " +
                                   "membership of cohort '" + cohort + "' in state '" + state +
                                   "' (expected " + std::to_string(expected) + ")");
        }
    }

    return fixture;
}

CannabisCorrelations cannabis_correlations(const CannabisFixture& fixture,
                                           const CorrelationStructure& corr) {
    fixture.validate();
    corr.validate();

    CannabisCorrelations out;
    for (const auto& info : fixture.cohorts) {
        CohortCounts counts;
        counts.cohort = info.name;
        counts.n_treated = info.n_treated;
        counts.n_ctrl = info.n_control_total;
        counts.t_pre = fixture.t_pre;
        counts.t_post = fixture.t_post;
        counts.controls.reserve(fixture.control_states.size());
        for (const std::string& state : fixture.control_states) {
            counts.controls.emplace_back(state, fixture.control_count(info.name, state));
        }
        out.variances[info.name] = att_variance(counts, corr);
    }

    for (std::size_t i = 0; i < fixture.cohorts.size(); ++i) {
        for (std::size_t j = i + 1; j < fixture.cohorts.size(); ++j) {
            const auto& early = fixture.cohorts[i];
            const auto& late = fixture.cohorts[j];
            OverlapCounts counts = fixture.pair_counts(early.name, late.name);
            PairCovariance cov = att_covariance(counts, corr);
            CannabisPair pair;
            pair.cohort_a = early.name;
            pair.cohort_b = late.name;
            pair.delta = counts.delta;
            pair.time_factor = cov.time_factor;
            pair.covariance = cov.value;
            pair.correlation =
                cov.value / std::sqrt(out.variances[early.name] * out.variances[late.name]);
            out.pairs.push_back(std::move(pair));
        }
    }

    std::vector<double> cors;
    cors.reserve(out.pairs.size());
    for (const auto& pair : out.pairs) cors.push_back(pair.correlation);
    std::sort(cors.begin(), cors.end());
    out.min_correlation = cors.front();
    out.max_correlation = cors.back();
    std::size_t mid = cors.size() / 2;
    out.median_correlation =
        cors.size() % 2 == 1 ? cors[mid] : 0.5 * (cors[mid - 1] + cors[mid]);

    return out;
}

}  // namespace stackdid
