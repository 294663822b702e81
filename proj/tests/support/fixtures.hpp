#pragma once

// Small hand-built datasets and fitness tables shared by several tests.

#include <cstdint>
#include <vector>

#include "fairgp/data.hpp"
#include "fairgp/selection.hpp"

namespace fixtures {

// Two binary sensitive attributes, race (0 black, 1 white) and sex (0 male,
// 1 female), plus one ordinary feature. Every cell holds 10 negatives and 5
// positives. Predictions put 5 false positives in black-male and 5 in
// white-female, so each single attribute level sees an FP rate of 1/4, the
// same as overall, while the two planted cells are at 1/2 and the other two
// at 0.
struct Gerrymander {
    fairgp::Dataset data;
    std::vector<std::uint8_t> predictions;
};

inline auto gerrymander() -> Gerrymander
{
    std::vector<std::vector<double>> rows;
    std::vector<std::uint8_t> labels;
    std::vector<std::uint8_t> preds;
    for (int race = 0; race < 2; ++race) {
        for (int sex = 0; sex < 2; ++sex) {
            bool planted = (race == 0 && sex == 0) || (race == 1 && sex == 1);
            for (int k = 0; k < 15; ++k) {
                bool positive = k >= 10;
                rows.push_back({ static_cast<double>(race), static_cast<double>(sex), static_cast<double>(k) });
                labels.push_back(positive ? 1 : 0);
                preds.push_back(positive || (planted && k < 5) ? 1 : 0);
            }
        }
    }
    auto ds = fairgp::make_dataset(fairgp::Matrix::from_rows(rows), labels, { "race", "sex", "score" }, { "race", "sex" }, "y");
    return { std::move(ds), std::move(preds) };
}

// Five individuals by four protected groups: the selection-event example.
// Rows n1..n5, columns g1..g4.
inline auto flex_example() -> fairgp::FitnessTable
{
    std::vector<std::vector<double>> loss {
        { 0.9, 0.5, 0.5, 0.1 },
        { 0.8, 0.5, 0.9, 0.15 },
        { 0.7, 0.5, 0.0, 0.8 },
        { 0.1, 0.2, 0.3, 0.9 },
        { 0.1, 0.6, 0.3, 0.7 },
    };
    std::vector<double> overall;
    for (auto const& r : loss) {
        overall.push_back((r[0] + r[1] + r[2] + r[3]) / 4.0);
    }
    return fairgp::FitnessTable::from_group_losses(overall, fairgp::Matrix::from_rows(loss));
}

} // namespace fixtures
