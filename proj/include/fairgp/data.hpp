#pragma once

// Tabular datasets with designated sensitive columns, simple protected
// groups over those columns, and seeded train/test splitting.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/core.hpp"

namespace fairgp {

// Feature matrix plus binary labels. Sensitive attributes are a subset of
// the feature columns, referenced by index.
struct Dataset {
    Matrix features;                            // m x d
    std::vector<std::uint8_t> labels;           // m values in {0,1}
    std::vector<std::string> feature_names;     // d
    std::vector<std::size_t> sensitive_columns; // p indices into features
    std::vector<std::string> sensitive_names;   // p
    std::string label_name { "label" };

    [[nodiscard]] auto rows() const noexcept { return features.rows(); }
    [[nodiscard]] auto cols() const noexcept { return features.cols(); }
    [[nodiscard]] auto sensitive_count() const noexcept { return sensitive_columns.size(); }
    [[nodiscard]] auto sensitive(std::size_t row, std::size_t k) const -> double
    {
        return features(row, sensitive_columns[k]);
    }
    [[nodiscard]] auto sensitive_column(std::size_t k) const -> std::vector<double>
    {
        return features.column(sensitive_columns[k]);
    }

    // Throws validation_error when an invariant does not hold.
    void validate() const
    {
        if (rows() < 1) {
            throw validation_error("dataset has no rows");
        }
        if (cols() < 1) {
            throw validation_error("dataset has no feature columns");
        }
        if (labels.size() != rows()) {
            throw validation_error("label count does not match row count");
        }
        if (feature_names.size() != cols()) {
            throw validation_error("feature name count does not match column count");
        }
        if (sensitive_columns.size() != sensitive_names.size() || sensitive_columns.size() > cols()) {
            throw validation_error("inconsistent sensitive column designation");
        }
        for (std::size_t k = 0; k < sensitive_columns.size(); ++k) {
            if (sensitive_columns[k] >= cols() || feature_names[sensitive_columns[k]] != sensitive_names[k]) {
                throw validation_error("sensitive column '" + sensitive_names[k] + "' is not a feature column");
            }
        }
        for (auto y : labels) {
            if (y > 1) {
                throw validation_error("labels must be 0 or 1");
            }
        }
    }

    [[nodiscard]] auto subset(std::span<const std::size_t> rows_to_keep) const -> Dataset
    {
        Dataset out;
        out.features = Matrix(rows_to_keep.size(), cols());
        out.labels.resize(rows_to_keep.size());
        for (std::size_t i = 0; i < rows_to_keep.size(); ++i) {
            auto src = features.row(rows_to_keep[i]);
            std::copy(src.begin(), src.end(), out.features.row(i).begin());
            out.labels[i] = labels[rows_to_keep[i]];
        }
        out.feature_names = feature_names;
        out.sensitive_columns = sensitive_columns;
        out.sensitive_names = sensitive_names;
        out.label_name = label_name;
        return out;
    }

    [[nodiscard]] auto has_missing() const -> bool
    {
        return std::any_of(features.data().begin(), features.data().end(), [](double v) { return std::isnan(v); });
    }
};

// Assembles and validates a dataset from in-memory columns.
inline auto make_dataset(Matrix features, std::vector<std::uint8_t> labels, std::vector<std::string> feature_names,
    const std::vector<std::string>& sensitive_names, std::string label_name = "label") -> Dataset
{
    Dataset ds;
    ds.features = std::move(features);
    ds.labels = std::move(labels);
    ds.feature_names = std::move(feature_names);
    ds.label_name = std::move(label_name);
    for (auto const& name : sensitive_names) {
        auto it = std::find(ds.feature_names.begin(), ds.feature_names.end(), name);
        if (it == ds.feature_names.end()) {
            throw schema_error("sensitive column '" + name + "' not found");
        }
        ds.sensitive_columns.push_back(static_cast<std::size_t>(it - ds.feature_names.begin()));
        ds.sensitive_names.push_back(name);
    }
    ds.validate();
    return ds;
}

// --- CSV ------------------------------------------------------------------

namespace detail {
    inline auto split_csv_line(std::string_view line) -> std::vector<std::string>
    {
        std::vector<std::string> cells;
        std::string cell;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cell += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                cells.push_back(std::move(cell));
                cell.clear();
            } else {
                cell += c;
            }
        }
        cells.push_back(std::move(cell));
        for (auto& s : cells) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            s = (b == std::string::npos) ? std::string {} : s.substr(b, e - b + 1);
        }
        return cells;
    }

    inline auto is_missing_token(std::string_view s) -> bool
    {
        return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == "?" || s == "null";
    }

    inline auto parse_number(std::string_view s) -> std::optional<double>
    {
        if (!s.empty() && s.front() == '+') {
            s.remove_prefix(1);
        }
        double value {};
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
        if (ec != std::errc {} || ptr != s.data() + s.size() || !std::isfinite(value)) {
            return std::nullopt;
        }
        return value;
    }
} // namespace detail

// Reads a comma-delimited table with a header row. Every column except the
// label becomes a feature. Rows missing a sensitive value or the label are
// dropped with a warning; other missing cells are stored as NaN for later
// imputation.
inline auto read_csv(std::istream& in, const std::vector<std::string>& sensitive_names, const std::string& label_name)
    -> Dataset
{
    std::string line;
    if (!std::getline(in, line)) {
        throw schema_error("missing header row");
    }
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
        line.erase(0, 3); // UTF-8 BOM
    }
    auto header = detail::split_csv_line(line);
    auto label_it = std::find(header.begin(), header.end(), label_name);
    if (label_it == header.end()) {
        throw schema_error("label column '" + label_name + "' not found");
    }
    auto const label_col = static_cast<std::size_t>(label_it - header.begin());

    std::vector<std::string> feature_names;
    std::vector<std::size_t> feature_src;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c != label_col) {
            feature_names.push_back(header[c]);
            feature_src.push_back(c);
        }
    }
    std::vector<std::size_t> sensitive_cols;
    for (auto const& name : sensitive_names) {
        auto it = std::find(feature_names.begin(), feature_names.end(), name);
        if (it == feature_names.end()) {
            throw schema_error("sensitive column '" + name + "' not found");
        }
        sensitive_cols.push_back(static_cast<std::size_t>(it - feature_names.begin()));
    }

    std::vector<double> values;
    std::vector<std::uint8_t> labels;
    std::size_t file_row = 1;
    std::size_t dropped = 0;
    while (std::getline(in, line)) {
        ++file_row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw parse_error(file_row, cells.size(), "expected " + std::to_string(header.size()) + " cells");
        }
        auto const& label_cell = cells[label_col];
        if (detail::is_missing_token(label_cell)) {
            ++dropped;
            continue;
        }
        auto label = detail::parse_number(label_cell);
        if (!label) {
            throw parse_error(file_row, label_col + 1, "non-numeric label '" + label_cell + "'");
        }
        if (*label != 0.0 && *label != 1.0) {
            throw validation_error("non-binary label value '" + label_cell + "' at row " + std::to_string(file_row));
        }
        bool missing_sensitive = std::any_of(sensitive_cols.begin(), sensitive_cols.end(),
            [&](std::size_t k) { return detail::is_missing_token(cells[feature_src[k]]); });
        if (missing_sensitive) {
            ++dropped;
            continue;
        }
        for (std::size_t j = 0; j < feature_src.size(); ++j) {
            auto const& cell = cells[feature_src[j]];
            if (detail::is_missing_token(cell)) {
                values.push_back(std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            auto v = detail::parse_number(cell);
            if (!v) {
                throw parse_error(file_row, feature_src[j] + 1, "non-numeric value '" + cell + "' in column '" + header[feature_src[j]] + "'");
            }
            values.push_back(*v);
        }
        labels.push_back(static_cast<std::uint8_t>(*label));
    }
    if (dropped > 0) {
        warn(std::to_string(dropped) + " row(s) with a missing label or sensitive value were dropped");
    }

    Dataset ds;
    auto const m = labels.size();
    ds.features = Matrix(m, feature_names.size(), std::move(values));
    ds.labels = std::move(labels);
    ds.feature_names = std::move(feature_names);
    ds.sensitive_columns = std::move(sensitive_cols);
    ds.sensitive_names = sensitive_names;
    ds.label_name = label_name;
    ds.validate();
    return ds;
}

inline auto load_csv(const std::string& path, const std::vector<std::string>& sensitive_names,
    const std::string& label_name) -> Dataset
{
    std::ifstream in(path);
    if (!in) {
        throw schema_error("cannot open '" + path + "'");
    }
    return read_csv(in, sensitive_names, label_name);
}

// Writes features in column order followed by the label column.
inline void write_csv(std::ostream& out, const Dataset& ds)
{
    for (auto const& name : ds.feature_names) {
        out << name << ',';
    }
    out << ds.label_name << '\n';
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        for (std::size_t j = 0; j < ds.cols(); ++j) {
            auto v = ds.features(i, j);
            out << (std::isnan(v) ? std::string("NA") : format_double(v)) << ',';
        }
        out << static_cast<int>(ds.labels[i]) << '\n';
    }
}

// Fills NaN cells with per-column medians computed on `reference` and
// applied to every dataset in `targets`. Returns the medians (NaN for
// columns that are entirely missing in the reference, which become 0).
inline auto impute_missing(const Dataset& reference, std::initializer_list<Dataset*> targets) -> std::vector<double>
{
    std::vector<double> medians(reference.cols(), 0.0);
    for (std::size_t j = 0; j < reference.cols(); ++j) {
        std::vector<double> present;
        for (std::size_t i = 0; i < reference.rows(); ++i) {
            if (!std::isnan(reference.features(i, j))) {
                present.push_back(reference.features(i, j));
            }
        }
        medians[j] = present.empty() ? 0.0 : median(std::move(present));
    }
    for (auto* ds : targets) {
        for (std::size_t i = 0; i < ds->rows(); ++i) {
            for (std::size_t j = 0; j < ds->cols(); ++j) {
                if (std::isnan(ds->features(i, j))) {
                    ds->features(i, j) = medians[j];
                }
            }
        }
    }
    return medians;
}

// --- protected groups ----------------------------------------------------

// Half-open value range (lower, upper]; infinite ends are open.
struct BinRange {
    double lower { -std::numeric_limits<double>::infinity() };
    double upper { std::numeric_limits<double>::infinity() };
    friend auto operator==(const BinRange&, const BinRange&) -> bool = default;
};

// Membership indicator for one level of one sensitive attribute. For
// discretized continuous attributes `level` is the bin ordinal and `bin`
// holds its value range.
struct SimpleGroup {
    std::size_t sensitive_index { 0 };
    double level { 0 };
    std::optional<BinRange> bin;

    [[nodiscard]] auto contains(double value) const -> bool
    {
        if (bin) {
            return value > bin->lower && value <= bin->upper;
        }
        return value == level;
    }

    friend auto operator==(const SimpleGroup& a, const SimpleGroup& b) -> bool
    {
        return a.sensitive_index == b.sensitive_index && a.level == b.level && a.bin == b.bin;
    }
    // Lexicographic by (attribute, level); levels are unique per attribute.
    friend auto operator<=>(const SimpleGroup& a, const SimpleGroup& b) -> std::partial_ordering
    {
        if (auto c = a.sensitive_index <=> b.sensitive_index; c != 0) {
            return c;
        }
        return a.level <=> b.level;
    }
};

struct GroupSet {
    std::vector<SimpleGroup> groups;
    std::vector<std::string> sensitive_names;

    [[nodiscard]] auto size() const noexcept { return groups.size(); }
    [[nodiscard]] auto empty() const noexcept { return groups.empty(); }
    [[nodiscard]] auto operator[](std::size_t i) const -> const SimpleGroup& { return groups[i]; }
    friend auto operator==(const GroupSet&, const GroupSet&) -> bool = default;
};

inline auto group_membership(const SimpleGroup& g, const Dataset& ds) -> std::vector<std::uint8_t>
{
    expect(g.sensitive_index < ds.sensitive_count(), "group refers to a sensitive attribute out of range");
    std::vector<std::uint8_t> member(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        member[i] = g.contains(ds.sensitive(i, g.sensitive_index)) ? 1 : 0;
    }
    return member;
}

struct GroupOptions {
    std::size_t max_bins { 5 };
    // Integer-valued attributes with at most this many distinct values are
    // treated as categorical even when they exceed max_bins.
    std::size_t max_categorical_levels { 32 };
};

// One group per distinct level of a categorical sensitive attribute and one
// per equal-frequency bin of a continuous one. Empty groups are dropped.
inline auto build_simple_groups(const Dataset& ds, GroupOptions options) -> GroupSet
{
    expect(options.max_bins >= 1, "max_bins must be positive");
    GroupSet out;
    out.sensitive_names = ds.sensitive_names;
    if (ds.sensitive_count() == 0) {
        warn("no sensitive attributes; the protected group set is empty");
        return out;
    }
    for (std::size_t k = 0; k < ds.sensitive_count(); ++k) {
        auto column = ds.sensitive_column(k);
        std::set<double> distinct(column.begin(), column.end());
        bool integral = std::all_of(distinct.begin(), distinct.end(), [](double v) { return v == std::floor(v); });
        bool categorical = distinct.size() <= options.max_bins
            || (integral && distinct.size() <= options.max_categorical_levels);
        if (categorical) {
            for (double level : distinct) {
                out.groups.push_back({ k, level, std::nullopt });
            }
            continue;
        }
        std::sort(column.begin(), column.end());
        auto const m = column.size();
        std::vector<double> cuts;
        for (std::size_t b = 1; b < options.max_bins; ++b) {
            auto idx = (b * m + options.max_bins - 1) / options.max_bins; // ceil(b*m/B)
            auto cut = column[std::max<std::size_t>(idx, 1) - 1];
            if (cuts.empty() || cut > cuts.back()) {
                cuts.push_back(cut);
            }
        }
        std::vector<BinRange> bins;
        double lower = -std::numeric_limits<double>::infinity();
        for (double c : cuts) {
            bins.push_back({ lower, c });
            lower = c;
        }
        bins.push_back({ lower, std::numeric_limits<double>::infinity() });
        double ordinal = 0;
        for (auto const& bin : bins) {
            bool occupied = std::any_of(column.begin(), column.end(), [&](double v) { return v > bin.lower && v <= bin.upper; });
            if (occupied) {
                out.groups.push_back({ k, ordinal, bin });
                ordinal += 1;
            }
        }
    }
    return out;
}

inline auto build_simple_groups(const Dataset& ds, std::size_t max_bins = 5) -> GroupSet
{
    return build_simple_groups(ds, GroupOptions { max_bins, GroupOptions {}.max_categorical_levels });
}

// [{sensitive_name, level}] with bin edges for discretized attributes
// (null for an open end).
inline auto to_json(const GroupSet& gs) -> nlohmann::json
{
    auto arr = nlohmann::json::array();
    for (auto const& g : gs.groups) {
        nlohmann::json item { { "sensitive_name", gs.sensitive_names.at(g.sensitive_index) }, { "level", g.level } };
        if (g.bin) {
            item["lower"] = std::isinf(g.bin->lower) ? nlohmann::json(nullptr) : nlohmann::json(g.bin->lower);
            item["upper"] = std::isinf(g.bin->upper) ? nlohmann::json(nullptr) : nlohmann::json(g.bin->upper);
        }
        arr.push_back(std::move(item));
    }
    return arr;
}

// Resolves names against the dataset's sensitive attributes.
inline auto group_set_from_json(const nlohmann::json& arr, const Dataset& ds) -> GroupSet
{
    GroupSet gs;
    gs.sensitive_names = ds.sensitive_names;
    for (auto const& item : arr) {
        auto name = item.at("sensitive_name").get<std::string>();
        auto it = std::find(ds.sensitive_names.begin(), ds.sensitive_names.end(), name);
        if (it == ds.sensitive_names.end()) {
            throw schema_error("group refers to unknown sensitive column '" + name + "'");
        }
        SimpleGroup g { static_cast<std::size_t>(it - ds.sensitive_names.begin()), item.at("level").get<double>(), std::nullopt };
        if (item.contains("lower") || item.contains("upper")) {
            BinRange bin;
            if (item.contains("lower") && !item["lower"].is_null()) {
                bin.lower = item["lower"].get<double>();
            }
            if (item.contains("upper") && !item["upper"].is_null()) {
                bin.upper = item["upper"].get<double>();
            }
            g.bin = bin;
        }
        gs.groups.push_back(g);
    }
    return gs;
}

// --- splitting -----------------------------------------------------------

struct Split {
    Dataset train;
    Dataset test;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

// Partitions rows into ceil(fraction*m) training rows and the rest,
// stratified by label. Rows keep their original relative order.
inline auto train_test_split(const Dataset& ds, double fraction, std::uint64_t seed) -> Split
{
    expect(fraction > 0.0 && fraction < 1.0, "split fraction must lie in (0, 1)");
    auto const m = ds.rows();
    expect(m >= 2, "splitting requires at least two rows");
    auto const n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(m) - 1e-9));
    expect(n_train >= 1 && n_train < m, "split fraction leaves one side empty");

    auto rng = make_stream(seed, 0x5e11ULL);
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < m; ++i) {
        by_class[ds.labels[i]].push_back(i);
    }
    std::vector<std::size_t> train_rows;
    if (by_class[0].empty() || by_class[1].empty()) {
        warn("only one label class present; falling back to an unstratified split");
        std::vector<std::size_t> all(m);
        std::iota(all.begin(), all.end(), 0);
        shuffle(std::span(all), rng);
        train_rows.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    } else {
        // Largest-remainder allocation of the training quota across classes.
        std::array<std::size_t, 2> quota {};
        std::array<double, 2> remainder {};
        for (std::size_t c = 0; c < 2; ++c) {
            double exact = fraction * static_cast<double>(by_class[c].size());
            quota[c] = static_cast<std::size_t>(std::floor(exact));
            remainder[c] = exact - static_cast<double>(quota[c]);
        }
        std::size_t assigned = quota[0] + quota[1];
        while (assigned < n_train) {
            std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
            if (quota[c] >= by_class[c].size()) {
                c = 1 - c;
            }
            ++quota[c];
            remainder[c] = -1.0;
            ++assigned;
        }
        for (std::size_t c = 0; c < 2; ++c) {
            shuffle(std::span(by_class[c]), rng);
            train_rows.insert(train_rows.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
        }
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::vector<std::size_t> test_rows;
    test_rows.reserve(m - n_train);
    std::size_t t = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (t < train_rows.size() && train_rows[t] == i) {
            ++t;
        } else {
            test_rows.push_back(i);
        }
    }
    Split out { ds.subset(train_rows), ds.subset(test_rows), std::move(train_rows), std::move(test_rows) };
    return out;
}

} // namespace fairgp
