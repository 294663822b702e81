#pragma once

// Parent selection and survival: tournament, epsilon-lexicase, fair
// epsilon-lexicase over protected groups, and NSGA-II machinery.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/core.hpp"

namespace fairgp {

// Fitness values consulted by the selection operators. Every block is
// optional except `overall`; each operator uses the blocks it needs.
struct FitnessTable {
    std::vector<double> overall;                 // f(n), one per individual
    Matrix group_loss;                           // N x G, f(n, g)
    Matrix group_fairness;                       // N x G, |f(n) - f(n, g)|
    std::vector<bool> group_empty;               // G, group has no training rows
    Matrix case_loss;                            // N x C per-sample losses
    std::vector<std::vector<double>> objectives; // N x K, all minimized
    std::vector<bool> trivial;                   // N, constant-output individuals

    [[nodiscard]] auto size() const noexcept { return overall.size(); }
    [[nodiscard]] auto group_count() const noexcept { return group_loss.cols(); }
    [[nodiscard]] auto is_trivial(std::size_t i) const -> bool { return !trivial.empty() && trivial[i]; }

    // Table over per-sample case losses; overall loss is the row mean.
    static auto from_case_losses(Matrix losses) -> FitnessTable
    {
        FitnessTable t;
        t.overall.resize(losses.rows());
        for (std::size_t i = 0; i < losses.rows(); ++i) {
            auto row = losses.row(i);
            t.overall[i] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
        }
        t.case_loss = std::move(losses);
        return t;
    }

    // Table over group losses; fairness is derived from overall and group
    // losses. NaN entries mark groups without members.
    static auto from_group_losses(std::vector<double> overall, Matrix group_loss) -> FitnessTable
    {
        expect(overall.size() == group_loss.rows(), "group loss rows must match population size");
        FitnessTable t;
        t.overall = std::move(overall);
        t.group_fairness = Matrix(group_loss.rows(), group_loss.cols());
        t.group_empty.assign(group_loss.cols(), false);
        for (std::size_t g = 0; g < group_loss.cols(); ++g) {
            for (std::size_t i = 0; i < group_loss.rows(); ++i) {
                if (std::isnan(group_loss(i, g))) {
                    t.group_empty[g] = true;
                } else {
                    t.group_fairness(i, g) = std::abs(t.overall[i] - group_loss(i, g));
                }
            }
        }
        t.group_loss = std::move(group_loss);
        return t;
    }
};

// median(|x - median(x)|), midpoint median for even lengths.
inline auto mad_epsilon(std::span<const double> losses) -> double
{
    expect(!losses.empty(), "median absolute deviation of an empty vector");
    std::vector<double> values(losses.begin(), losses.end());
    auto center = median(values);
    for (auto& v : values) {
        v = std::abs(v - center);
    }
    return median(std::move(values));
}

namespace detail {
    // Starting pool: every non-trivial individual, or everyone if all are trivial.
    inline auto initial_pool(const FitnessTable& table) -> std::vector<std::size_t>
    {
        expect(table.size() >= 1, "selection from an empty population");
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < table.size(); ++i) {
            if (!table.is_trivial(i)) {
                pool.push_back(i);
            }
        }
        if (pool.empty()) {
            pool.resize(table.size());
            std::iota(pool.begin(), pool.end(), 0);
        }
        return pool;
    }

    // Keeps pool members within epsilon (the pool's MAD) of the pool's best.
    template <typename LossOf>
    void epsilon_filter(std::vector<std::size_t>& pool, LossOf&& loss_of)
    {
        std::vector<double> losses(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) {
            losses[k] = loss_of(pool[k]);
        }
        auto best = *std::min_element(losses.begin(), losses.end());
        auto eps = mad_epsilon(losses);
        std::vector<std::size_t> kept;
        kept.reserve(pool.size());
        for (std::size_t k = 0; k < pool.size(); ++k) {
            if (!(losses[k] > best + eps)) {
                kept.push_back(pool[k]);
            }
        }
        pool = std::move(kept);
    }
} // namespace detail

struct LexicaseTrace {
    std::vector<std::size_t> cases;
    std::vector<std::size_t> pool_sizes; // after each case
    std::size_t selected { 0 };
};

// Dynamic epsilon-lexicase over the per-sample losses in table.case_loss.
inline auto epsilon_lexicase_select(const FitnessTable& table, Rng& rng, LexicaseTrace* trace = nullptr) -> std::size_t
{
    expect(table.case_loss.rows() == table.size() && table.case_loss.cols() >= 1, "lexicase needs per-case losses");
    auto pool = detail::initial_pool(table);
    std::vector<std::size_t> cases(table.case_loss.cols());
    std::iota(cases.begin(), cases.end(), 0);
    shuffle(std::span(cases), rng);
    for (std::size_t c = 0; c < cases.size() && pool.size() > 1; ++c) {
        auto const case_index = cases[c];
        detail::epsilon_filter(pool, [&](std::size_t n) { return table.case_loss(n, case_index); });
        if (trace != nullptr) {
            trace->cases.push_back(case_index);
            trace->pool_sizes.push_back(pool.size());
        }
    }
    auto chosen = pool[uniform_index(rng, pool.size())];
    if (trace != nullptr) {
        trace->selected = chosen;
    }
    return chosen;
}

enum class FlexBranch : std::uint8_t { GroupLoss, GroupFairness };

struct FlexCase {
    std::size_t group { 0 };
    FlexBranch branch { FlexBranch::GroupLoss };
    friend auto operator==(const FlexCase&, const FlexCase&) -> bool = default;
};

struct FlexTrace {
    std::vector<FlexCase> cases;
    std::vector<std::size_t> pool_sizes; // after each case
    std::size_t selected { 0 };
};

// One filtering step on a protected-group case. Groups without members
// are skipped without filtering.
inline void flex_filter(const FitnessTable& table, std::vector<std::size_t>& pool, FlexCase c)
{
    if (!table.group_empty.empty() && table.group_empty[c.group]) {
        return;
    }
    auto const& values = c.branch == FlexBranch::GroupLoss ? table.group_loss : table.group_fairness;
    detail::epsilon_filter(pool, [&](std::size_t n) { return values(n, c.group); });
}

// Runs a fixed sequence of cases until the pool has one member or the
// sequence ends. Returns the surviving pool.
inline auto flex_winnow(const FitnessTable& table, std::span<const FlexCase> script, FlexTrace* trace = nullptr)
    -> std::vector<std::size_t>
{
    auto pool = detail::initial_pool(table);
    for (std::size_t k = 0; k < script.size() && pool.size() > 1; ++k) {
        flex_filter(table, pool, script[k]);
        if (trace != nullptr) {
            trace->cases.push_back(script[k]);
            trace->pool_sizes.push_back(pool.size());
        }
    }
    return pool;
}

// Fair epsilon-lexicase: cases are protected groups drawn without
// replacement; each case is scored by group loss or by group fairness with
// equal probability. Returns a uniform pick from the surviving pool.
inline auto flex_select(const FitnessTable& table, Rng& rng, FlexTrace* trace = nullptr) -> std::size_t
{
    auto const groups = table.group_count();
    expect(groups >= 1, "fair lexicase needs at least one protected group");
    expect(table.group_loss.rows() == table.size(), "group loss table does not match population size");
    auto pool = detail::initial_pool(table);
    std::vector<std::size_t> remaining(groups);
    std::iota(remaining.begin(), remaining.end(), 0);
    while (!remaining.empty() && pool.size() > 1) {
        auto pick = uniform_index(rng, remaining.size());
        auto group = remaining[pick];
        auto branch = uniform01(rng) < 0.5 ? FlexBranch::GroupLoss : FlexBranch::GroupFairness;
        flex_filter(table, pool, { group, branch });
        if (trace != nullptr) {
            trace->cases.push_back({ group, branch });
            trace->pool_sizes.push_back(pool.size());
        }
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    auto chosen = pool[uniform_index(rng, pool.size())];
    if (trace != nullptr) {
        trace->selected = chosen;
    }
    return chosen;
}

// Best overall loss among k draws with replacement; ties uniform among the
// tied draws. Trivial individuals lose to any non-trivial one.
inline auto tournament_select(const FitnessTable& table, std::size_t k, Rng& rng) -> std::size_t
{
    expect(k >= 1, "tournament size must be at least 1");
    expect(table.size() >= 1, "selection from an empty population");
    auto key = [&](std::size_t i) {
        return std::pair { table.is_trivial(i) ? 1 : 0, table.overall[i] };
    };
    std::vector<std::size_t> best;
    for (std::size_t draw = 0; draw < k; ++draw) {
        auto i = uniform_index(rng, table.size());
        if (best.empty() || key(i) < key(best.front())) {
            best.assign(1, i);
        } else if (key(i) == key(best.front())) {
            best.push_back(i);
        }
    }
    return best.size() == 1 ? best.front() : best[uniform_index(rng, best.size())];
}

// --- NSGA-II --------------------------------------------------------------

// a dominates b: no worse everywhere, strictly better somewhere (minimizing).
inline auto dominates(std::span<const double> a, std::span<const double> b) -> bool
{
    bool strictly = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] > b[k]) {
            return false;
        }
        strictly = strictly || a[k] < b[k];
    }
    return strictly;
}

// Fast non-dominated sort. Each front lists indices in ascending order.
inline auto nondominated_sort(const std::vector<std::vector<double>>& objectives) -> std::vector<std::vector<std::size_t>>
{
    expect(!objectives.empty(), "non-dominated sort of an empty set");
    auto const n = objectives.size();
    for (auto const& o : objectives) {
        expect(o.size() == objectives.front().size(), "objective vectors differ in length");
    }
    std::vector<std::vector<std::size_t>> dominated(n);
    std::vector<std::size_t> dominators(n, 0);
    std::vector<std::vector<std::size_t>> fronts(1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            if (dominates(objectives[i], objectives[j])) {
                dominated[i].push_back(j);
            } else if (dominates(objectives[j], objectives[i])) {
                ++dominators[i];
            }
        }
        if (dominators[i] == 0) {
            fronts[0].push_back(i);
        }
    }
    while (!fronts.back().empty()) {
        std::vector<std::size_t> next;
        for (auto i : fronts.back()) {
            for (auto j : dominated[i]) {
                if (--dominators[j] == 0) {
                    next.push_back(j);
                }
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(next));
    }
    fronts.pop_back();
    return fronts;
}

// Crowding distance within one front. Per objective, boundary members get
// infinity and interior members add the neighbor gap (next - previous)
// divided by twice the objective's range on the front.
inline auto crowding_distance(const std::vector<std::vector<double>>& front) -> std::vector<double>
{
    expect(!front.empty(), "crowding distance of an empty front");
    auto const n = front.size();
    auto const inf = std::numeric_limits<double>::infinity();
    std::vector<double> distance(n, 0.0);
    if (n <= 2) {
        std::fill(distance.begin(), distance.end(), inf);
        return distance;
    }
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < front.front().size(); ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return front[a][k] < front[b][k]; });
        auto lo = front[order.front()][k];
        auto hi = front[order.back()][k];
        distance[order.front()] = inf;
        distance[order.back()] = inf;
        auto range = hi - lo;
        if (range <= 0.0) {
            continue;
        }
        for (std::size_t r = 1; r + 1 < n; ++r) {
            distance[order[r]] += (front[order[r + 1]][k] - front[order[r - 1]][k]) / (2.0 * range);
        }
    }
    return distance;
}

struct Nsga2Ranking {
    std::vector<std::size_t> rank;
    std::vector<double> crowding;
};

// Pareto rank and within-front crowding distance for every individual.
// Trivial individuals are ranked behind every non-trivial one.
inline auto nsga2_rank(const std::vector<std::vector<double>>& objectives, const std::vector<bool>& trivial = {})
    -> Nsga2Ranking
{
    auto const n = objectives.size();
    Nsga2Ranking out { std::vector<std::size_t>(n, 0), std::vector<double>(n, 0.0) };
    std::vector<std::size_t> normal;
    std::vector<std::size_t> worst;
    for (std::size_t i = 0; i < n; ++i) {
        (!trivial.empty() && trivial[i] ? worst : normal).push_back(i);
    }
    std::size_t next_rank = 0;
    for (auto const* subset : { &normal, &worst }) {
        if (subset->empty()) {
            continue;
        }
        std::vector<std::vector<double>> objs;
        for (auto i : *subset) {
            objs.push_back(objectives[i]);
        }
        auto fronts = nondominated_sort(objs);
        for (auto const& front : fronts) {
            std::vector<std::vector<double>> fobjs;
            for (auto k : front) {
                fobjs.push_back(objs[k]);
            }
            auto cd = crowding_distance(fobjs);
            for (std::size_t r = 0; r < front.size(); ++r) {
                auto idx = (*subset)[front[r]];
                out.rank[idx] = next_rank;
                out.crowding[idx] = cd[r];
            }
            ++next_rank;
        }
    }
    return out;
}

// Fills survivors front by front; the last admitted front is truncated by
// descending crowding distance, ties broken by a seeded shuffle.
inline auto nsga2_survive(const std::vector<std::vector<double>>& objectives, std::size_t n_survivors, Rng& rng,
    const std::vector<bool>& trivial = {}) -> std::vector<std::size_t>
{
    expect(objectives.size() >= n_survivors, "survival pool smaller than the survivor count");
    auto ranking = nsga2_rank(objectives, trivial);
    std::vector<std::size_t> order(objectives.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(std::span(order), rng);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (ranking.rank[a] != ranking.rank[b]) {
            return ranking.rank[a] < ranking.rank[b];
        }
        return ranking.crowding[a] > ranking.crowding[b];
    });
    order.resize(n_survivors);
    std::sort(order.begin(), order.end());
    return order;
}

// Binary tournament on (rank, -crowding).
inline auto crowded_tournament_select(const Nsga2Ranking& ranking, Rng& rng) -> std::size_t
{
    auto const n = ranking.rank.size();
    expect(n >= 1, "selection from an empty population");
    auto a = uniform_index(rng, n);
    auto b = uniform_index(rng, n);
    auto better = [&](std::size_t x, std::size_t y) {
        if (ranking.rank[x] != ranking.rank[y]) {
            return ranking.rank[x] < ranking.rank[y];
        }
        return ranking.crowding[x] > ranking.crowding[y];
    };
    if (better(a, b)) {
        return a;
    }
    if (better(b, a)) {
        return b;
    }
    return uniform_index(rng, 2) == 0 ? a : b;
}

// --- traces ---------------------------------------------------------------

inline auto to_json(const FlexTrace& t) -> nlohmann::json
{
    auto cases = nlohmann::json::array();
    for (auto const& c : t.cases) {
        cases.push_back({ c.group, c.branch == FlexBranch::GroupLoss ? "loss" : "fairness" });
    }
    return { { "method", "FLEX" }, { "case_sequence", cases }, { "pool_sizes", t.pool_sizes }, { "selected", t.selected } };
}

inline auto to_json(const LexicaseTrace& t) -> nlohmann::json
{
    return { { "method", "LEX" }, { "case_sequence", t.cases }, { "pool_sizes", t.pool_sizes }, { "selected", t.selected } };
}

} // namespace fairgp
