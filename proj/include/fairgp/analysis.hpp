#pragma once

// Pareto fronts over (accuracy, violation), 2-D hypervolume, and paired
// statistics across methods.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/core.hpp"

namespace fairgp {

struct SolutionPoint {
    double accuracy { 0.0 };  // Accuracy or APS, maximized
    double violation { 0.0 }; // FP- or FN-violation, minimized
    std::size_t individual_id { 0 };
    std::string method;
};

// Maximal points under (max accuracy, min violation), duplicates collapsed
// to their first occurrence, sorted by violation ascending.
inline auto pareto_front(std::span<const SolutionPoint> points) -> std::vector<SolutionPoint>
{
    expect(!points.empty(), "pareto_front of an empty point set");
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a].violation != points[b].violation) {
            return points[a].violation < points[b].violation;
        }
        return points[a].accuracy > points[b].accuracy;
    });
    std::vector<SolutionPoint> front;
    for (auto i : order) {
        // Sorted by violation, so only strictly better accuracy survives.
        if (front.empty() || points[i].accuracy > front.back().accuracy) {
            front.push_back(points[i]);
        }
    }
    return front;
}

// Area dominated by `points` in (violation, 1 - accuracy) space, bounded by
// the reference corner. Points must lie inside the box [0, ref].
inline auto hypervolume_2d(std::span<const SolutionPoint> points, double ref_violation = 1.0, double ref_error = 1.0)
    -> double
{
    if (points.empty()) {
        return 0.0;
    }
    for (auto const& p : points) {
        auto err = 1.0 - p.accuracy;
        expect(p.violation >= 0.0 && p.violation <= ref_violation && err >= 0.0 && err <= ref_error,
            "hypervolume point outside the reference box");
    }
    auto front = pareto_front(points);
    double area = 0.0;
    double previous_error = ref_error;
    for (auto const& p : front) {
        auto err = 1.0 - p.accuracy;
        area += (ref_violation - p.violation) * (previous_error - err);
        previous_error = err;
    }
    return area;
}

// Scales violations by the largest one present; all-zero input is unchanged.
inline auto normalize_violations(std::vector<SolutionPoint> points) -> std::vector<SolutionPoint>
{
    expect(!points.empty(), "normalize_violations of an empty point set");
    double top = 0.0;
    for (auto const& p : points) {
        top = std::max(top, p.violation);
    }
    if (top > 0.0) {
        for (auto& p : points) {
            p.violation /= top;
        }
    }
    return points;
}

enum class ObjectivePair : std::uint8_t { FpAccuracy, FpAps, FnAccuracy, FnAps };

inline constexpr std::array kAllObjectivePairs { ObjectivePair::FpAccuracy, ObjectivePair::FpAps,
    ObjectivePair::FnAccuracy, ObjectivePair::FnAps };

inline auto to_string(ObjectivePair p) -> std::string
{
    switch (p) {
    case ObjectivePair::FpAccuracy: return "hv_fp_acc";
    case ObjectivePair::FpAps: return "hv_fp_aps";
    case ObjectivePair::FnAccuracy: return "hv_fn_acc";
    case ObjectivePair::FnAps: return "hv_fn_aps";
    }
    return "?";
}

struct HypervolumeReport {
    std::string method;
    ObjectivePair pair { ObjectivePair::FpAccuracy };
    double hypervolume { 0.0 };
    std::vector<SolutionPoint> front;
};

// Normalizes violations jointly over every method's points, then computes
// one report per method. `points_by_method` keeps the caller's order.
inline auto hypervolume_reports(const std::vector<std::pair<std::string, std::vector<SolutionPoint>>>& points_by_method,
    ObjectivePair pair) -> std::vector<HypervolumeReport>
{
    std::vector<SolutionPoint> all;
    for (auto const& [method, pts] : points_by_method) {
        all.insert(all.end(), pts.begin(), pts.end());
    }
    expect(!all.empty(), "no solution points to report");
    all = normalize_violations(std::move(all));
    std::vector<HypervolumeReport> out;
    std::size_t offset = 0;
    for (auto const& [method, pts] : points_by_method) {
        std::span<const SolutionPoint> mine(all.data() + offset, pts.size());
        offset += pts.size();
        HypervolumeReport r;
        r.method = method;
        r.pair = pair;
        if (!mine.empty()) {
            r.front = pareto_front(mine);
            r.hypervolume = hypervolume_2d(r.front);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline auto to_json(const SolutionPoint& p) -> nlohmann::json
{
    return { { "individual_id", p.individual_id }, { "accuracy", p.accuracy }, { "violation", p.violation } };
}

inline auto to_json(const HypervolumeReport& r) -> nlohmann::json
{
    auto front = nlohmann::json::array();
    for (auto const& p : r.front) {
        front.push_back(to_json(p));
    }
    return { { "method", r.method }, { "pair", to_string(r.pair) }, { "hypervolume", r.hypervolume }, { "front", front } };
}

// --- paired statistics -----------------------------------------------------

namespace detail {
    // Average ranks (1-based) of |d|, ties sharing the mean rank.
    inline auto absolute_ranks(std::span<const double> d) -> std::vector<double>
    {
        std::vector<std::size_t> order(d.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
        std::vector<double> ranks(d.size());
        for (std::size_t i = 0; i < order.size();) {
            auto j = i;
            while (j < order.size() && std::abs(d[order[j]]) == std::abs(d[order[i]])) {
                ++j;
            }
            auto r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (auto k = i; k < j; ++k) {
                ranks[order[k]] = r;
            }
            i = j;
        }
        return ranks;
    }

    inline auto nonzero_differences(std::span<const double> a, std::span<const double> b) -> std::vector<double>
    {
        expect(a.size() == b.size(), "paired samples must have equal lengths");
        std::vector<double> d;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i]) {
                d.push_back(a[i] - b[i]);
            }
        }
        return d;
    }
} // namespace detail

// Two-sided exact p-value: counts all 2^n sign assignments through a
// distribution over doubled ranks (integers even with half-rank ties).
inline auto wilcoxon_exact(std::span<const double> differences) -> double
{
    auto const n = differences.size();
    if (n == 0) {
        return 1.0;
    }
    auto ranks = detail::absolute_ranks(differences);
    std::vector<std::size_t> doubled(n);
    std::size_t total = 0;
    std::size_t w_plus = 0;
    for (std::size_t i = 0; i < n; ++i) {
        doubled[i] = static_cast<std::size_t>(std::lround(2.0 * ranks[i]));
        total += doubled[i];
        if (differences[i] > 0) {
            w_plus += doubled[i];
        }
    }
    std::vector<double> counts(total + 1, 0.0);
    counts[0] = 1.0;
    for (auto r : doubled) {
        for (auto s = total; s >= r; --s) {
            counts[s] += counts[s - r];
        }
    }
    auto const assignments = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0.0;
    double upper = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
        if (s <= w_plus) {
            lower += counts[s];
        }
        if (s >= w_plus) {
            upper += counts[s];
        }
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / assignments);
}

// Normal approximation with tie-corrected variance and continuity
// correction.
inline auto wilcoxon_normal(std::span<const double> differences) -> double
{
    auto const n = static_cast<double>(differences.size());
    if (differences.empty()) {
        return 1.0;
    }
    auto ranks = detail::absolute_ranks(differences);
    double w_plus = 0.0;
    for (std::size_t i = 0; i < differences.size(); ++i) {
        if (differences[i] > 0) {
            w_plus += ranks[i];
        }
    }
    auto mean = n * (n + 1.0) / 4.0;
    auto var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    std::map<double, std::size_t> ties;
    for (auto r : ranks) {
        ++ties[r];
    }
    for (auto const& [rank, t] : ties) {
        auto tt = static_cast<double>(t);
        var -= (tt * tt * tt - tt) / 48.0;
    }
    if (var <= 0.0) {
        return 1.0;
    }
    auto z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

inline constexpr std::size_t kExactWilcoxonLimit = 20;

// Two-sided signed-rank test on paired samples. Zero differences are
// dropped; if none remain the p-value is 1.
inline auto wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) -> double
{
    auto d = detail::nonzero_differences(a, b);
    if (d.empty()) {
        return 1.0;
    }
    if (d.size() < 5) {
        warn("signed-rank test on fewer than 5 non-zero differences");
    }
    return d.size() <= kExactWilcoxonLimit ? wilcoxon_exact(d) : wilcoxon_normal(d);
}

inline auto bonferroni(std::span<const double> p_values, std::size_t comparisons) -> std::vector<double>
{
    expect(comparisons >= 1, "Bonferroni needs at least one comparison");
    std::vector<double> out;
    out.reserve(p_values.size());
    for (auto p : p_values) {
        expect(p >= 0.0 && p <= 1.0, "p-value outside [0, 1]");
        out.push_back(std::min(1.0, p * static_cast<double>(comparisons)));
    }
    return out;
}

// Rows are trials, columns methods; higher scores rank first. Ties share the
// average rank. Returns each method's mean rank.
inline auto mean_ranks(const std::vector<std::vector<double>>& scores) -> std::vector<double>
{
    expect(!scores.empty(), "mean_ranks needs at least one trial");
    auto const k = scores.front().size();
    std::vector<double> total(k, 0.0);
    for (auto const& row : scores) {
        expect(row.size() == k, "ragged score table");
        std::vector<double> negated(row.size());
        std::transform(row.begin(), row.end(), negated.begin(), [](double v) { return -v; });
        std::vector<std::size_t> order(k);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return negated[a] < negated[b]; });
        for (std::size_t i = 0; i < k;) {
            auto j = i;
            while (j < k && negated[order[j]] == negated[order[i]]) {
                ++j;
            }
            auto r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
            for (auto q = i; q < j; ++q) {
                total[order[q]] += r;
            }
            i = j;
        }
    }
    for (auto& t : total) {
        t /= static_cast<double>(scores.size());
    }
    return total;
}

} // namespace fairgp
