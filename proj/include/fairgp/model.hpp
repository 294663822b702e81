#pragma once

// A candidate classifier: a set of feature programs whose standardized
// outputs feed a logistic-regression head trained by full-batch gradient
// descent.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/core.hpp"
#include "fairgp/data.hpp"
#include "fairgp/program.hpp"

namespace fairgp {

inline constexpr double kProbabilityFloor = 1e-9;
inline constexpr double kProbabilityCeiling = 1.0 - 1e-9;

struct Standardization {
    std::vector<double> means;
    std::vector<double> stds;
    friend auto operator==(const Standardization&, const Standardization&) -> bool = default;
};

struct TrainingMeta {
    std::size_t iterations { 0 };
    double final_loss { std::numeric_limits<double>::quiet_NaN() };
    std::vector<double> loss_history; // loss before the first step, then after each accepted step
};

struct Individual {
    std::vector<Program> features;
    std::vector<double> weights; // one per feature, bias last
    Standardization scaling;
    TrainingMeta meta;

    [[nodiscard]] auto dim() const noexcept { return features.size(); }
    [[nodiscard]] auto bias() const -> double { return weights.back(); }

    // Total node count across all feature programs.
    [[nodiscard]] auto complexity() const -> std::size_t
    {
        std::size_t n = 0;
        for (auto const& p : features) {
            n += p.size();
        }
        return n;
    }

    void validate(std::size_t max_dim, std::size_t max_depth) const
    {
        expect(!features.empty() && features.size() <= max_dim, "feature count outside [1, max_dim]");
        expect(weights.size() == features.size() + 1, "weight vector must have one entry per feature plus bias");
        expect(scaling.means.size() == features.size() && scaling.stds.size() == features.size(),
            "standardization size mismatch");
        for (auto w : weights) {
            expect(std::isfinite(w), "non-finite weight");
        }
        for (auto const& p : features) {
            expect(p.depth() <= max_depth, "program exceeds max depth");
        }
    }
};

// Zero weights and identity standardization.
inline auto make_individual(std::vector<Program> features) -> Individual
{
    Individual ind;
    auto const k = features.size();
    ind.features = std::move(features);
    ind.weights.assign(k + 1, 0.0);
    ind.scaling.means.assign(k, 0.0);
    ind.scaling.stds.assign(k, 1.0);
    return ind;
}

inline auto logistic(double z) noexcept -> double
{
    return 1.0 / (1.0 + std::exp(-z));
}

inline auto clamp_probability(double p) noexcept -> double
{
    return std::clamp(p, kProbabilityFloor, kProbabilityCeiling);
}

inline auto sample_loss(double p, std::uint8_t y) noexcept -> double
{
    auto q = clamp_probability(p);
    return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

// Raw program outputs, m x k.
inline auto feature_outputs(const Individual& ind, const Dataset& ds) -> Matrix
{
    Matrix out(ds.rows(), ind.dim());
    for (std::size_t j = 0; j < ind.dim(); ++j) {
        auto col = eval_program(ind.features[j], ds);
        for (std::size_t i = 0; i < ds.rows(); ++i) {
            out(i, j) = col[i];
        }
    }
    return out;
}

// Per-column mean and population standard deviation. Near-constant columns
// get unit scale.
inline auto fit_standardization(const Matrix& raw) -> Standardization
{
    Standardization s;
    auto const m = static_cast<double>(raw.rows());
    for (std::size_t j = 0; j < raw.cols(); ++j) {
        double scale = 0.0;
        for (std::size_t i = 0; i < raw.rows(); ++i) {
            scale = std::max(scale, std::abs(raw(i, j)));
        }
        if (scale == 0.0) {
            s.means.push_back(0.0);
            s.stds.push_back(1.0);
            continue;
        }
        double mean = 0.0;
        for (std::size_t i = 0; i < raw.rows(); ++i) {
            mean += raw(i, j) / scale;
        }
        mean /= m;
        double var = 0.0;
        for (std::size_t i = 0; i < raw.rows(); ++i) {
            auto d = raw(i, j) / scale - mean;
            var += d * d;
        }
        var /= m;
        auto sd = std::sqrt(var) * scale;
        s.means.push_back(mean * scale);
        s.stds.push_back(sd > 1e-12 * scale && sd > 1e-300 ? sd : 1.0);
    }
    return s;
}

inline auto standardize(const Matrix& raw, const Standardization& s) -> Matrix
{
    Matrix z(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        for (std::size_t j = 0; j < raw.cols(); ++j) {
            z(i, j) = (raw(i, j) - s.means[j]) / s.stds[j];
        }
    }
    return z;
}

inline auto linear_response(const Matrix& design, std::span<const double> weights, std::size_t row) -> double
{
    auto const k = design.cols();
    double z = weights[k];
    for (std::size_t j = 0; j < k; ++j) {
        z += weights[j] * design(row, j);
    }
    return z;
}

// Mean logistic loss of the head on a standardized design matrix.
inline auto logistic_loss(const Matrix& design, std::span<const std::uint8_t> labels, std::span<const double> weights)
    -> double
{
    double total = 0.0;
    for (std::size_t i = 0; i < design.rows(); ++i) {
        total += sample_loss(logistic(linear_response(design, weights, i)), labels[i]);
    }
    return total / static_cast<double>(design.rows());
}

struct LossGradient {
    double loss { 0.0 };
    std::vector<double> gradient; // same layout as weights
};

inline auto logistic_loss_gradient(const Matrix& design, std::span<const std::uint8_t> labels,
    std::span<const double> weights) -> LossGradient
{
    auto const k = design.cols();
    auto const m = static_cast<double>(design.rows());
    LossGradient out { 0.0, std::vector<double>(k + 1, 0.0) };
    for (std::size_t i = 0; i < design.rows(); ++i) {
        auto p = logistic(linear_response(design, weights, i));
        out.loss += sample_loss(p, labels[i]);
        auto residual = p - static_cast<double>(labels[i]);
        for (std::size_t j = 0; j < k; ++j) {
            out.gradient[j] += residual * design(i, j);
        }
        out.gradient[k] += residual;
    }
    out.loss /= m;
    for (auto& g : out.gradient) {
        g /= m;
    }
    return out;
}

inline auto predict_proba(const Individual& ind, const Dataset& ds) -> std::vector<double>
{
    auto design = standardize(feature_outputs(ind, ds), ind.scaling);
    std::vector<double> p(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        p[i] = clamp_probability(logistic(linear_response(design, ind.weights, i)));
    }
    return p;
}

inline auto predict(const Individual& ind, const Dataset& ds) -> std::vector<std::uint8_t>
{
    auto p = predict_proba(ind, ds);
    std::vector<std::uint8_t> out(p.size());
    std::transform(p.begin(), p.end(), out.begin(), [](double v) -> std::uint8_t { return v >= 0.5 ? 1 : 0; });
    return out;
}

// Per-sample losses, probabilities and hard labels.
struct LossMatrix {
    std::vector<double> loss;
    std::vector<double> probability;
    std::vector<std::uint8_t> predicted;

    [[nodiscard]] auto mean_loss() const -> double
    {
        return std::accumulate(loss.begin(), loss.end(), 0.0) / static_cast<double>(loss.size());
    }
    // Mean loss over member rows; nullopt when there are none.
    [[nodiscard]] auto mean_loss(std::span<const std::uint8_t> membership) const -> std::optional<double>
    {
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < loss.size(); ++i) {
            if (membership[i] != 0) {
                total += loss[i];
                ++count;
            }
        }
        if (count == 0) {
            return std::nullopt;
        }
        return total / static_cast<double>(count);
    }
};

inline auto evaluate(const Individual& ind, const Dataset& ds) -> LossMatrix
{
    LossMatrix out;
    out.probability = predict_proba(ind, ds);
    out.loss.resize(ds.rows());
    out.predicted.resize(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        out.loss[i] = sample_loss(out.probability[i], ds.labels[i]);
        out.predicted[i] = out.probability[i] >= 0.5 ? 1 : 0;
    }
    return out;
}

inline auto loss_overall(const Individual& ind, const Dataset& ds) -> double
{
    return evaluate(ind, ds).mean_loss();
}

// nullopt signals an empty group.
inline auto loss_on_group(const Individual& ind, const Dataset& ds, const SimpleGroup& g) -> std::optional<double>
{
    auto membership = group_membership(g, ds);
    return evaluate(ind, ds).mean_loss(membership);
}

// Refits the standardization on `ds`, then runs up to `iters` full-batch
// gradient steps from the current weights. A step that would raise the loss
// halves the learning rate (at most five times); if it still raises the
// loss, training stops early.
inline auto fit_weights(Individual ind, const Dataset& ds, std::size_t iters, double lr) -> Individual
{
    expect(lr > 0.0, "learning rate must be positive");
    expect(ind.weights.size() == ind.dim() + 1, "weight vector size mismatch");
    auto raw = feature_outputs(ind, ds);
    ind.scaling = fit_standardization(raw);
    auto design = standardize(raw, ind.scaling);

    ind.meta = {};
    auto current = logistic_loss_gradient(design, ds.labels, ind.weights);
    ind.meta.loss_history.push_back(current.loss);
    std::vector<double> candidate(ind.weights.size());
    for (std::size_t it = 0; it < iters; ++it) {
        double candidate_loss = 0.0;
        bool accepted = false;
        for (int halvings = 0; halvings <= 5; ++halvings) {
            for (std::size_t j = 0; j < candidate.size(); ++j) {
                candidate[j] = ind.weights[j] - lr * current.gradient[j];
            }
            candidate_loss = logistic_loss(design, ds.labels, candidate);
            if (candidate_loss <= current.loss && std::isfinite(candidate_loss)) {
                accepted = true;
                break;
            }
            if (halvings < 5) {
                lr *= 0.5;
            }
        }
        if (!accepted) {
            break;
        }
        ind.weights = candidate;
        current = logistic_loss_gradient(design, ds.labels, ind.weights);
        ind.meta.loss_history.push_back(current.loss);
        ++ind.meta.iterations;
    }
    ind.meta.final_loss = current.loss;
    return ind;
}

// --- serialization -------------------------------------------------------

inline auto to_json(const Individual& ind) -> nlohmann::json
{
    auto programs = nlohmann::json::array();
    for (auto const& p : ind.features) {
        programs.push_back(p.to_string());
    }
    return {
        { "features", programs },
        { "weights", ind.weights },
        { "standardization", { { "means", ind.scaling.means }, { "stds", ind.scaling.stds } } },
    };
}

inline auto individual_from_json(const nlohmann::json& j) -> Individual
{
    Individual ind;
    for (auto const& text : j.at("features")) {
        ind.features.push_back(Program::parse(text.get<std::string>()));
    }
    ind.weights = j.at("weights").get<std::vector<double>>();
    ind.scaling.means = j.at("standardization").at("means").get<std::vector<double>>();
    ind.scaling.stds = j.at("standardization").at("stds").get<std::vector<double>>();
    if (ind.weights.size() != ind.dim() + 1 || ind.scaling.means.size() != ind.dim() || ind.scaling.stds.size() != ind.dim()) {
        throw schema_error("model JSON has inconsistent feature, weight and standardization sizes");
    }
    return ind;
}

} // namespace fairgp
