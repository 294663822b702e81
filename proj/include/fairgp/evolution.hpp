#pragma once

// The generational loop for the six strategy variants: tournament,
// epsilon-lexicase, fair lexicase, NSGA-II, fair-lexicase parents with
// NSGA-II survival, and random search.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fairgp/core.hpp"
#include "fairgp/data.hpp"
#include "fairgp/metrics.hpp"
#include "fairgp/model.hpp"
#include "fairgp/program.hpp"
#include "fairgp/selection.hpp"

namespace fairgp {

enum class Method : std::uint8_t { Tourn, Lex, Flex, Nsga2, FlexNsga2, Random };

inline constexpr std::array kAllMethods { Method::Tourn, Method::Lex, Method::Flex, Method::Nsga2, Method::FlexNsga2,
    Method::Random };

inline auto to_string(Method m) -> std::string
{
    switch (m) {
    case Method::Tourn: return "Tourn";
    case Method::Lex: return "LEX";
    case Method::Flex: return "FLEX";
    case Method::Nsga2: return "NSGA2";
    case Method::FlexNsga2: return "FLEX-NSGA2";
    case Method::Random: return "Random";
    }
    return "?";
}

inline auto parse_method(std::string_view name) -> Method
{
    for (auto m : kAllMethods) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

// Parent selector for the hybrid: fair lexicase (default) or plain
// epsilon-lexicase.
enum class HybridParents : std::uint8_t { Flex, Lex };

struct EvolutionConfig {
    Method method { Method::Flex };
    std::size_t generations { 100 };
    std::size_t population { 100 };
    std::size_t max_depth { 6 };
    std::size_t max_dim { 20 };
    double crossover_rate { 0.5 };
    double feature_edit_rate { 0.25 };
    std::size_t tournament_size { 2 };
    std::size_t gd_iters { 10 };
    double gd_lr { 0.1 };
    bool complexity_objective { true };
    HybridParents hybrid_parents { HybridParents::Flex };
    // Attempts at producing a non-constant individual before falling back.
    std::size_t trivial_retries { 10 };
    std::size_t threads { 1 };
    std::uint64_t seed { 0 };

    void validate() const
    {
        expect(population >= 2, "population must be at least 2");
        expect(max_depth >= 1 && max_dim >= 1, "max_depth and max_dim must be positive");
        expect(crossover_rate >= 0.0 && crossover_rate <= 1.0, "crossover_rate must lie in [0, 1]");
        expect(feature_edit_rate >= 0.0 && feature_edit_rate <= 1.0, "feature_edit_rate must lie in [0, 1]");
        expect(tournament_size >= 1, "tournament size must be positive");
        expect(gd_lr > 0.0, "gradient-descent learning rate must be positive");
    }
};

// Training-set view of one individual, cached alongside it.
struct Evaluation {
    LossMatrix train;
    double overall_loss { 0.0 };
    std::vector<double> group_loss; // NaN for groups without training rows
    double marginal_fairness { 0.0 };
    std::size_t complexity { 0 };
    bool trivial { false };
};

struct Population {
    std::vector<Individual> individuals;
    std::vector<Evaluation> evaluations;
    // Lowest training loss seen so far; reported only, never reinserted.
    std::optional<Individual> hall_of_fame;
    double hall_of_fame_loss { std::numeric_limits<double>::infinity() };

    [[nodiscard]] auto size() const noexcept { return individuals.size(); }
};

struct GenerationStats {
    std::size_t generation { 0 };
    double best_loss { 0.0 };
    double median_loss { 0.0 };
    double best_marginal_fairness { 0.0 };
    double mean_program_size { 0.0 };
};

struct RunHooks {
    std::function<void(const GenerationStats&)> on_generation;
    std::ostream* selection_trace { nullptr }; // JSON lines
};

// Bundles the training data and protected groups with precomputed
// memberships.
class TrainingContext {
public:
    TrainingContext(const Dataset& train, const GroupSet& groups)
        : train_(&train)
        , groups_(&groups)
    {
        for (auto const& g : groups.groups) {
            memberships_.push_back(group_membership(g, train));
        }
    }
    [[nodiscard]] auto data() const -> const Dataset& { return *train_; }
    [[nodiscard]] auto groups() const -> const GroupSet& { return *groups_; }
    [[nodiscard]] auto membership(std::size_t g) const -> const std::vector<std::uint8_t>& { return memberships_[g]; }

private:
    const Dataset* train_;
    const GroupSet* groups_;
    std::vector<std::vector<std::uint8_t>> memberships_;
};

inline auto is_constant_output(const std::vector<std::uint8_t>& predicted) -> bool
{
    return std::adjacent_find(predicted.begin(), predicted.end(), std::not_equal_to<>()) == predicted.end();
}

inline auto evaluate_individual(const Individual& ind, const TrainingContext& ctx) -> Evaluation
{
    Evaluation e;
    e.train = evaluate(ind, ctx.data());
    e.overall_loss = e.train.mean_loss();
    std::vector<double> gaps;
    for (std::size_t g = 0; g < ctx.groups().size(); ++g) {
        auto loss = e.train.mean_loss(ctx.membership(g));
        e.group_loss.push_back(loss.value_or(std::numeric_limits<double>::quiet_NaN()));
        if (loss) {
            gaps.push_back(fairness(e.overall_loss, *loss));
        }
    }
    e.marginal_fairness = gaps.empty() ? 0.0 : marginal_fairness(gaps);
    e.complexity = ind.complexity();
    e.trivial = is_constant_output(e.train.predicted);
    return e;
}

inline auto objective_vector(const Evaluation& e, const EvolutionConfig& cfg) -> std::vector<double>
{
    std::vector<double> o { e.overall_loss, e.marginal_fairness };
    if (cfg.complexity_objective) {
        o.push_back(static_cast<double>(e.complexity));
    }
    return o;
}

inline auto build_fitness_table(const std::vector<Evaluation>& evals, const EvolutionConfig& cfg) -> FitnessTable
{
    auto const n = evals.size();
    auto const groups = n == 0 ? 0 : evals.front().group_loss.size();
    std::vector<double> overall(n);
    Matrix group_loss(n, groups);
    for (std::size_t i = 0; i < n; ++i) {
        overall[i] = evals[i].overall_loss;
        for (std::size_t g = 0; g < groups; ++g) {
            group_loss(i, g) = evals[i].group_loss[g];
        }
    }
    auto table = FitnessTable::from_group_losses(std::move(overall), std::move(group_loss));
    if (cfg.method == Method::Lex || (cfg.method == Method::FlexNsga2 && cfg.hybrid_parents == HybridParents::Lex)) {
        auto const m = n == 0 ? 0 : evals.front().train.loss.size();
        Matrix cases(n, m);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(evals[i].train.loss.begin(), evals[i].train.loss.end(), cases.row(i).begin());
        }
        table.case_loss = std::move(cases);
    }
    table.trivial.resize(n);
    table.objectives.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        table.trivial[i] = evals[i].trivial;
        table.objectives[i] = objective_vector(evals[i], cfg);
    }
    return table;
}

namespace detail {
    // Random-stream purposes, keyed alongside generation and slot.
    enum StreamPurpose : std::uint64_t { kInitStream = 1, kOffspringStream = 2, kSurvivalStream = 3 };

    inline auto random_individual(const EvolutionConfig& cfg, std::size_t n_features, Rng& rng) -> Individual
    {
        auto dim = 1 + uniform_index(rng, cfg.max_dim);
        std::vector<Program> programs;
        programs.reserve(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            programs.push_back(random_program(n_features, cfg.max_depth, rng));
        }
        return make_individual(std::move(programs));
    }

    // Edits the feature set of `child` in place. With probability
    // feature_edit_rate a whole feature is added or deleted; otherwise one
    // feature program is crossed with a program from `other` or mutated.
    inline void vary(Individual& child, const Individual& other, const EvolutionConfig& cfg, std::size_t n_features, Rng& rng)
    {
        if (uniform01(rng) < cfg.feature_edit_rate && cfg.max_dim > 1) {
            bool can_add = child.dim() < cfg.max_dim;
            bool can_delete = child.dim() > 1;
            bool add = can_add && (!can_delete || uniform_index(rng, 2) == 0);
            if (add) {
                child.features.push_back(random_program(n_features, cfg.max_depth, rng));
                child.weights.insert(child.weights.end() - 1, 0.0);
                child.scaling.means.push_back(0.0);
                child.scaling.stds.push_back(1.0);
            } else {
                auto k = uniform_index(rng, child.dim());
                auto offset = static_cast<std::ptrdiff_t>(k);
                child.features.erase(child.features.begin() + offset);
                child.weights.erase(child.weights.begin() + offset);
                child.scaling.means.erase(child.scaling.means.begin() + offset);
                child.scaling.stds.erase(child.scaling.stds.begin() + offset);
            }
            return;
        }
        auto k = uniform_index(rng, child.dim());
        if (uniform01(rng) < cfg.crossover_rate) {
            auto const& donor = other.features[uniform_index(rng, other.dim())];
            child.features[k] = crossover(child.features[k], donor, cfg.max_depth, rng);
        } else {
            child.features[k] = mutate(child.features[k], n_features, cfg.max_depth, rng);
        }
    }

    inline void update_hall_of_fame(Population& pop)
    {
        for (std::size_t i = 0; i < pop.size(); ++i) {
            if (pop.evaluations[i].overall_loss < pop.hall_of_fame_loss) {
                pop.hall_of_fame_loss = pop.evaluations[i].overall_loss;
                pop.hall_of_fame = pop.individuals[i];
            }
        }
    }
} // namespace detail

// N random individuals with 1..max_dim programs each, fitted on the
// training data. Constant-output individuals are redrawn up to
// trivial_retries times.
inline auto init_population(const EvolutionConfig& cfg, const TrainingContext& ctx) -> Population
{
    cfg.validate();
    Population pop;
    pop.individuals.resize(cfg.population);
    pop.evaluations.resize(cfg.population);
    auto const d = ctx.data().cols();
    parallel_for(cfg.population, cfg.threads, [&](std::size_t slot) {
        auto rng = make_stream(cfg.seed, detail::kInitStream, 0, slot);
        for (std::size_t attempt = 0;; ++attempt) {
            auto ind = fit_weights(detail::random_individual(cfg, d, rng), ctx.data(), cfg.gd_iters, cfg.gd_lr);
            auto eval = evaluate_individual(ind, ctx);
            if (!eval.trivial || attempt >= cfg.trivial_retries) {
                pop.individuals[slot] = std::move(ind);
                pop.evaluations[slot] = std::move(eval);
                break;
            }
        }
    });
    std::size_t trivial = 0;
    for (auto const& e : pop.evaluations) {
        trivial += e.trivial ? 1 : 0;
    }
    if (trivial > 0) {
        warn(std::to_string(trivial) + " initial individual(s) still predict a constant label");
    }
    detail::update_hall_of_fame(pop);
    return pop;
}

namespace detail {
    struct Parents {
        std::size_t primary;
        std::size_t secondary;
    };

    inline auto select_parent(const FitnessTable& table, const Nsga2Ranking* ranking, const EvolutionConfig& cfg, Rng& rng,
        std::vector<nlohmann::json>* traces) -> std::size_t
    {
        auto use_lex = cfg.method == Method::Lex || (cfg.method == Method::FlexNsga2 && cfg.hybrid_parents == HybridParents::Lex);
        auto use_flex = cfg.method == Method::Flex || (cfg.method == Method::FlexNsga2 && cfg.hybrid_parents == HybridParents::Flex);
        if (use_flex && table.group_count() > 0) {
            FlexTrace trace;
            auto chosen = flex_select(table, rng, traces != nullptr ? &trace : nullptr);
            if (traces != nullptr) {
                traces->push_back(to_json(trace));
            }
            return chosen;
        }
        if (use_lex) {
            LexicaseTrace trace;
            auto chosen = epsilon_lexicase_select(table, rng, traces != nullptr ? &trace : nullptr);
            if (traces != nullptr) {
                traces->push_back(to_json(trace));
            }
            return chosen;
        }
        if (cfg.method == Method::Nsga2 && ranking != nullptr) {
            return crowded_tournament_select(*ranking, rng);
        }
        return tournament_select(table, cfg.tournament_size, rng);
    }
} // namespace detail

// One generation. Random search is the identity. Tournament, lexicase and
// fair lexicase produce N offspring that replace the parents. The NSGA-II
// variants pool parents and offspring and keep N survivors. Offspring that
// predict a constant label are regenerated, falling back to a copy of the
// primary parent.
inline auto step_generation(const Population& pop, const EvolutionConfig& cfg, const TrainingContext& ctx,
    std::size_t generation, const RunHooks& hooks = {}) -> Population
{
    if (cfg.method == Method::Random) {
        return pop;
    }
    auto const n = pop.size();
    auto const d = ctx.data().cols();
    auto table = build_fitness_table(pop.evaluations, cfg);
    std::optional<Nsga2Ranking> ranking;
    if (cfg.method == Method::Nsga2) {
        ranking = nsga2_rank(table.objectives, table.trivial);
    }

    std::vector<Individual> offspring(n);
    std::vector<Evaluation> offspring_eval(n);
    std::vector<std::vector<nlohmann::json>> traces(hooks.selection_trace != nullptr ? n : 0);
    parallel_for(n, cfg.threads, [&](std::size_t slot) {
        auto rng = make_stream(cfg.seed, detail::kOffspringStream, generation, slot);
        auto* trace = traces.empty() ? nullptr : &traces[slot];
        for (std::size_t attempt = 0;; ++attempt) {
            auto p1 = detail::select_parent(table, ranking ? &*ranking : nullptr, cfg, rng, trace);
            auto p2 = detail::select_parent(table, ranking ? &*ranking : nullptr, cfg, rng, trace);
            auto child = pop.individuals[p1];
            detail::vary(child, pop.individuals[p2], cfg, d, rng);
            child = fit_weights(std::move(child), ctx.data(), cfg.gd_iters, cfg.gd_lr);
            auto eval = evaluate_individual(child, ctx);
            if (!eval.trivial) {
                offspring[slot] = std::move(child);
                offspring_eval[slot] = std::move(eval);
                break;
            }
            if (attempt + 1 >= cfg.trivial_retries && !pop.evaluations[p1].trivial) {
                offspring[slot] = pop.individuals[p1];
                offspring_eval[slot] = pop.evaluations[p1];
                break;
            }
            if (attempt > cfg.trivial_retries * 4) {
                offspring[slot] = std::move(child);
                offspring_eval[slot] = std::move(eval);
                break;
            }
        }
    });
    if (hooks.selection_trace != nullptr) {
        for (auto const& slot : traces) {
            for (auto const& line : slot) {
                nlohmann::json rec = line;
                rec["generation"] = generation;
                *hooks.selection_trace << rec.dump() << '\n';
            }
        }
    }

    Population next;
    next.hall_of_fame = pop.hall_of_fame;
    next.hall_of_fame_loss = pop.hall_of_fame_loss;
    if (cfg.method == Method::Nsga2 || cfg.method == Method::FlexNsga2) {
        std::vector<std::vector<double>> objectives;
        std::vector<bool> trivial;
        objectives.reserve(2 * n);
        for (auto const* evals : std::array<const std::vector<Evaluation>*, 2> { &pop.evaluations, &offspring_eval }) {
            for (auto const& e : *evals) {
                objectives.push_back(objective_vector(e, cfg));
                trivial.push_back(e.trivial);
            }
        }
        auto rng = make_stream(cfg.seed, detail::kSurvivalStream, generation);
        auto survivors = nsga2_survive(objectives, n, rng, trivial);
        for (auto idx : survivors) {
            if (idx < n) {
                next.individuals.push_back(pop.individuals[idx]);
                next.evaluations.push_back(pop.evaluations[idx]);
            } else {
                next.individuals.push_back(std::move(offspring[idx - n]));
                next.evaluations.push_back(std::move(offspring_eval[idx - n]));
            }
        }
    } else {
        next.individuals = std::move(offspring);
        next.evaluations = std::move(offspring_eval);
    }
    detail::update_hall_of_fame(next);
    return next;
}

inline auto generation_stats(const Population& pop, std::size_t generation) -> GenerationStats
{
    GenerationStats s;
    s.generation = generation;
    std::vector<double> losses;
    double size_total = 0.0;
    std::size_t programs = 0;
    s.best_marginal_fairness = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pop.size(); ++i) {
        losses.push_back(pop.evaluations[i].overall_loss);
        s.best_marginal_fairness = std::min(s.best_marginal_fairness, pop.evaluations[i].marginal_fairness);
        for (auto const& p : pop.individuals[i].features) {
            size_total += static_cast<double>(p.size());
            ++programs;
        }
    }
    s.best_loss = *std::min_element(losses.begin(), losses.end());
    s.median_loss = median(losses);
    s.mean_program_size = programs == 0 ? 0.0 : size_total / static_cast<double>(programs);
    return s;
}

// Runs the configured method and returns the final population, which is
// the method's solution set.
inline auto run(const EvolutionConfig& cfg, const Dataset& train, const GroupSet& groups, const RunHooks& hooks = {})
    -> Population
{
    cfg.validate();
    TrainingContext ctx(train, groups);
    auto pop = init_population(cfg, ctx);
    if (hooks.on_generation) {
        hooks.on_generation(generation_stats(pop, 0));
    }
    if (cfg.method == Method::Random) {
        return pop;
    }
    for (std::size_t g = 1; g <= cfg.generations; ++g) {
        pop = step_generation(pop, cfg, ctx, g, hooks);
        if (hooks.on_generation) {
            hooks.on_generation(generation_stats(pop, g));
        }
    }
    return pop;
}

} // namespace fairgp
