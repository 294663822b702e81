#pragma once

// Rich-subgroup auditing: exact search for the conjunction of simple groups
// with the largest FP- or FN-violation (group weight times rate disparity).

#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/core.hpp"
#include "fairgp/data.hpp"
#include "fairgp/metrics.hpp"

namespace fairgp {

// AND of simple groups over distinct sensitive attributes, kept sorted by
// attribute. No terms means every row is a member.
struct ConjunctionGroup {
    std::vector<SimpleGroup> terms;

    [[nodiscard]] auto contains_row(const Dataset& ds, std::size_t row) const -> bool
    {
        return std::all_of(terms.begin(), terms.end(),
            [&](const SimpleGroup& g) { return g.contains(ds.sensitive(row, g.sensitive_index)); });
    }

    [[nodiscard]] auto membership(const Dataset& ds) const -> std::vector<std::uint8_t>
    {
        std::vector<std::uint8_t> out(ds.rows());
        for (std::size_t i = 0; i < ds.rows(); ++i) {
            out[i] = contains_row(ds, i) ? 1 : 0;
        }
        return out;
    }

    friend auto operator==(const ConjunctionGroup&, const ConjunctionGroup&) -> bool = default;
};

// Lexicographic order over term lists; a proper prefix sorts first.
inline auto lexicographically_less(const ConjunctionGroup& a, const ConjunctionGroup& b) -> bool
{
    return std::lexicographical_compare(a.terms.begin(), a.terms.end(), b.terms.begin(), b.terms.end(),
        [](const SimpleGroup& x, const SimpleGroup& y) { return (x <=> y) < 0; });
}

struct AuditResult {
    ConjunctionGroup worst_group;
    double violation { 0.0 };
    ErrorMode mode { ErrorMode::FalsePositive };
    double alpha { 0.0 }; // fraction of all rows in the group and in the relevant class
    double beta { 0.0 };  // |overall rate - group rate|
};

namespace detail {
    struct ViolationParts {
        double alpha { 0.0 };
        double beta { 0.0 };
        double violation { 0.0 };
    };

    // Counts: rows overall, relevant-class rows overall / in group, errors
    // among them overall / in group.
    inline auto violation_from_counts(std::size_t m, std::size_t relevant, std::size_t relevant_errors,
        std::size_t group_relevant, std::size_t group_errors) -> ViolationParts
    {
        if (group_relevant == 0 || relevant == 0) {
            return {};
        }
        ViolationParts v;
        v.alpha = static_cast<double>(group_relevant) / static_cast<double>(m);
        auto overall_rate = static_cast<double>(relevant_errors) / static_cast<double>(relevant);
        auto group_rate = static_cast<double>(group_errors) / static_cast<double>(group_relevant);
        v.beta = std::abs(overall_rate - group_rate);
        v.violation = v.alpha * v.beta;
        return v;
    }

    inline auto relevant_label(ErrorMode mode) -> std::uint8_t { return mode == ErrorMode::FalsePositive ? 0 : 1; }
    inline auto is_error(ErrorMode mode, std::uint8_t predicted) -> bool
    {
        return mode == ErrorMode::FalsePositive ? predicted == 1 : predicted == 0;
    }

    class RowMask {
    public:
        RowMask() = default;
        explicit RowMask(std::size_t n)
            : words_((n + 63) / 64, 0)
        {
        }
        void set(std::size_t i) { words_[i / 64] |= std::uint64_t { 1 } << (i % 64); }
        [[nodiscard]] auto count() const -> std::size_t
        {
            std::size_t c = 0;
            for (auto w : words_) {
                c += static_cast<std::size_t>(std::popcount(w));
            }
            return c;
        }
        [[nodiscard]] auto operator&(const RowMask& other) const -> RowMask
        {
            RowMask out;
            out.words_.resize(words_.size());
            for (std::size_t i = 0; i < words_.size(); ++i) {
                out.words_[i] = words_[i] & other.words_[i];
            }
            return out;
        }

    private:
        std::vector<std::uint64_t> words_;
    };
} // namespace detail

inline auto violation(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
    const ConjunctionGroup& g, const Dataset& ds, ErrorMode mode) -> double
{
    expect(predictions.size() == labels.size() && labels.size() == ds.rows(), "inconsistent lengths");
    auto const target = detail::relevant_label(mode);
    std::size_t relevant = 0;
    std::size_t errors = 0;
    std::size_t group_relevant = 0;
    std::size_t group_errors = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != target) {
            continue;
        }
        bool err = detail::is_error(mode, predictions[i]);
        ++relevant;
        errors += err ? 1 : 0;
        if (g.contains_row(ds, i)) {
            ++group_relevant;
            group_errors += err ? 1 : 0;
        }
    }
    return detail::violation_from_counts(ds.rows(), relevant, errors, group_relevant, group_errors).violation;
}

// Exact maximizer over all conjunctions of at most `max_terms` simple groups
// on distinct attributes. Conjunctions with no relevant-class rows have zero
// violation and are pruned along with their extensions. Ties go to the
// lexicographically smallest term list, so the universal group wins when
// nothing is violated.
inline auto audit_exhaustive(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
    const GroupSet& groups, const Dataset& ds, ErrorMode mode, std::size_t max_terms) -> AuditResult
{
    expect(max_terms >= 1, "max_terms must be at least 1");
    expect(predictions.size() == labels.size() && labels.size() == ds.rows(), "inconsistent lengths");
    auto const m = ds.rows();
    auto const target = detail::relevant_label(mode);

    detail::RowMask relevant_mask(m);
    detail::RowMask error_mask(m);
    std::size_t relevant = 0;
    std::size_t errors = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (labels[i] == target) {
            relevant_mask.set(i);
            ++relevant;
            if (detail::is_error(mode, predictions[i])) {
                error_mask.set(i);
                ++errors;
            }
        }
    }

    // Groups bucketed by attribute, each bucket sorted by level.
    auto const p = ds.sensitive_count();
    std::vector<std::vector<std::size_t>> by_attribute(p);
    std::vector<detail::RowMask> masks;
    masks.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        expect(groups[g].sensitive_index < p, "group refers to a sensitive attribute out of range");
        by_attribute[groups[g].sensitive_index].push_back(g);
        auto member = group_membership(groups[g], ds);
        detail::RowMask mask(m);
        for (std::size_t i = 0; i < m; ++i) {
            if (member[i] != 0) {
                mask.set(i);
            }
        }
        masks.push_back(relevant_mask & mask);
    }
    for (auto& bucket : by_attribute) {
        std::sort(bucket.begin(), bucket.end(), [&](std::size_t a, std::size_t b) { return (groups[a] <=> groups[b]) < 0; });
    }

    AuditResult best;
    best.mode = mode;
    best.alpha = static_cast<double>(relevant) / static_cast<double>(m);

    ConjunctionGroup current;
    auto consider = [&](const detail::RowMask& rel) {
        auto group_relevant = rel.count();
        auto group_errors = (rel & error_mask).count();
        auto parts = detail::violation_from_counts(m, relevant, errors, group_relevant, group_errors);
        if (parts.violation > best.violation
            || (parts.violation == best.violation && lexicographically_less(current, best.worst_group))) {
            best.worst_group = current;
            best.violation = parts.violation;
            best.alpha = parts.alpha;
            best.beta = parts.beta;
        }
    };

    auto search = [&](auto&& self, std::size_t first_attribute, const detail::RowMask* so_far) -> void {
        for (std::size_t a = first_attribute; a < p; ++a) {
            for (auto g : by_attribute[a]) {
                auto rel = so_far == nullptr ? masks[g] : (*so_far & masks[g]);
                if (rel.count() == 0) {
                    continue;
                }
                current.terms.push_back(groups[g]);
                consider(rel);
                if (current.terms.size() < max_terms) {
                    self(self, a + 1, &rel);
                }
                current.terms.pop_back();
            }
        }
    };
    search(search, 0, nullptr);
    return best;
}

// One audit per prediction vector, in order. Failures are recorded per item.
struct AuditOutcome {
    std::optional<AuditResult> result;
    std::string error;
};

inline auto audit_all(const std::vector<std::vector<std::uint8_t>>& population_predictions,
    std::span<const std::uint8_t> labels, const GroupSet& groups, const Dataset& ds, ErrorMode mode,
    std::size_t max_terms, std::size_t threads = 1) -> std::vector<AuditOutcome>
{
    expect(!population_predictions.empty(), "audit_all needs at least one prediction vector");
    std::vector<AuditOutcome> out(population_predictions.size());
    parallel_for(out.size(), threads, [&](std::size_t i) {
        try {
            out[i].result = audit_exhaustive(population_predictions[i], labels, groups, ds, mode, max_terms);
        } catch (const std::exception& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

inline auto to_json(const ConjunctionGroup& g, const Dataset& ds) -> nlohmann::json
{
    auto arr = nlohmann::json::array();
    for (auto const& t : g.terms) {
        nlohmann::json item { { "sensitive_name", ds.sensitive_names.at(t.sensitive_index) }, { "level", t.level } };
        if (t.bin) {
            item["lower"] = std::isinf(t.bin->lower) ? nlohmann::json(nullptr) : nlohmann::json(t.bin->lower);
            item["upper"] = std::isinf(t.bin->upper) ? nlohmann::json(nullptr) : nlohmann::json(t.bin->upper);
        }
        arr.push_back(std::move(item));
    }
    return arr;
}

inline auto to_json(const AuditResult& r, const Dataset& ds) -> nlohmann::json
{
    return {
        { "mode", to_string(r.mode) },
        { "violation", r.violation },
        { "alpha", r.alpha },
        { "beta", r.beta },
        { "group", to_json(r.worst_group, ds) },
    };
}

} // namespace fairgp
