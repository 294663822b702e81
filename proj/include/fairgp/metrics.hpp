#pragma once

// Group fairness and accuracy measures over fitted classifiers.

#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fairgp/core.hpp"
#include "fairgp/data.hpp"

namespace fairgp {

enum class ErrorMode : std::uint8_t { FalsePositive, FalseNegative };

inline auto to_string(ErrorMode mode) -> std::string
{
    return mode == ErrorMode::FalsePositive ? "FP" : "FN";
}

// Absolute gap between overall fitness and fitness on one group.
inline auto fairness(double f_overall, double f_group) -> double
{
    return std::abs(f_overall - f_group);
}

// Mean of the per-group gaps.
inline auto marginal_fairness(std::span<const double> per_group_fairness) -> double
{
    expect(!per_group_fairness.empty(), "marginal fairness over an empty group set");
    return std::accumulate(per_group_fairness.begin(), per_group_fairness.end(), 0.0)
        / static_cast<double>(per_group_fairness.size());
}

inline auto accuracy(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) -> double
{
    expect(predictions.size() == labels.size(), "prediction and label lengths differ");
    expect(!labels.empty(), "accuracy of an empty sample");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predictions[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Step-sum area under the precision-recall curve, thresholding at every
// distinct score from high to low. Tied scores share one step. nullopt when
// there are no positive labels.
inline auto average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) -> std::optional<double>
{
    expect(scores.size() == labels.size(), "score and label lengths differ");
    auto const positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t { 1 }));
    if (positives == 0) {
        return std::nullopt;
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double previous_recall = 0.0;
    std::size_t tp = 0;
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < order.size();) {
        auto threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            tp += labels[order[i]];
            ++predicted;
            ++i;
        }
        auto recall = static_cast<double>(tp) / static_cast<double>(positives);
        auto precision = static_cast<double>(tp) / static_cast<double>(predicted);
        ap += (recall - previous_recall) * precision;
        previous_recall = recall;
    }
    return ap;
}

struct RateEntry {
    std::size_t count { 0 };
    std::size_t positives { 0 };
    std::size_t negatives { 0 };
    std::size_t false_positives { 0 };
    std::size_t false_negatives { 0 };
    std::optional<double> fp_rate; // unset when the group has no negatives
    std::optional<double> fn_rate; // unset when the group has no positives

    [[nodiscard]] auto rate(ErrorMode mode) const -> std::optional<double>
    {
        return mode == ErrorMode::FalsePositive ? fp_rate : fn_rate;
    }
};

struct GroupRates {
    RateEntry overall;
    std::vector<RateEntry> groups; // parallel to the GroupSet
};

namespace detail {
    inline void finish(RateEntry& e)
    {
        if (e.negatives > 0) {
            e.fp_rate = static_cast<double>(e.false_positives) / static_cast<double>(e.negatives);
        }
        if (e.positives > 0) {
            e.fn_rate = static_cast<double>(e.false_negatives) / static_cast<double>(e.positives);
        }
    }
    inline void tally(RateEntry& e, std::uint8_t predicted, std::uint8_t label)
    {
        ++e.count;
        if (label == 1) {
            ++e.positives;
            e.false_negatives += predicted == 0 ? 1 : 0;
        } else {
            ++e.negatives;
            e.false_positives += predicted == 1 ? 1 : 0;
        }
    }
} // namespace detail

inline auto group_rates(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
    const GroupSet& groups, const Dataset& ds) -> GroupRates
{
    expect(predictions.size() == labels.size() && labels.size() == ds.rows(), "inconsistent lengths");
    GroupRates out;
    out.groups.resize(groups.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        detail::tally(out.overall, predictions[i], labels[i]);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto member = group_membership(groups[g], ds);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (member[i] != 0) {
                detail::tally(out.groups[g], predictions[i], labels[i]);
            }
        }
        detail::finish(out.groups[g]);
    }
    detail::finish(out.overall);
    return out;
}

// Marginal fairness with the FP or FN rate as the fitness measure. Groups
// whose rate is undefined are left out of the mean (with a warning);
// nullopt when no group, or the overall rate, is defined.
inline auto marginal_rate_fairness(const GroupRates& rates, ErrorMode mode) -> std::optional<double>
{
    auto overall = rates.overall.rate(mode);
    if (!overall) {
        return std::nullopt;
    }
    std::vector<double> gaps;
    std::size_t skipped = 0;
    for (auto const& g : rates.groups) {
        if (auto r = g.rate(mode); r) {
            gaps.push_back(fairness(*overall, *r));
        } else {
            ++skipped;
        }
    }
    if (skipped > 0) {
        warn(std::to_string(skipped) + " group(s) with an undefined " + to_string(mode)
            + " rate excluded from marginal fairness");
    }
    if (gaps.empty()) {
        return std::nullopt;
    }
    return marginal_fairness(gaps);
}

} // namespace fairgp
