#pragma once

// Experiment orchestration behind the command-line tool: configuration,
// per-trial runs across methods, report files, auditing of external
// predictions, and pairwise statistics over the aggregate table.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <cstdlib>
#include <map>
#include <set>
#include <tuple>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairgp/analysis.hpp"
#include "fairgp/auditor.hpp"
#include "fairgp/core.hpp"
#include "fairgp/data.hpp"
#include "fairgp/evolution.hpp"
#include "fairgp/metrics.hpp"
#include "fairgp/model.hpp"

namespace fairgp {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitPartialFailure = 1, kExitUsage = 2 };

struct ExperimentConfig {
    std::string dataset_path;
    std::string dataset_name;
    std::vector<std::string> sensitive;
    std::string label;
    std::vector<Method> methods { kAllMethods.begin(), kAllMethods.end() };
    std::size_t trials { 50 };
    double split_fraction { 0.5 };
    std::uint64_t seed { 0 };
    std::size_t jobs { 1 };
    std::string outdir;
    std::size_t max_terms { 3 };
    std::size_t max_bins { 5 };
    EvolutionConfig evolution;

    void validate() const
    {
        if (dataset_path.empty()) {
            throw validation_error("config: dataset.path is required");
        }
        if (label.empty()) {
            throw validation_error("config: dataset.label is required");
        }
        if (methods.empty()) {
            throw validation_error("config: methods must not be empty");
        }
        if (trials < 1) {
            throw validation_error("config: trials must be at least 1");
        }
        if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
            throw validation_error("config: split_fraction must lie in (0, 1)");
        }
        if (max_terms < 1) {
            throw validation_error("config: max_terms must be at least 1");
        }
        if (jobs < 1) {
            throw validation_error("config: jobs must be at least 1");
        }
        try {
            evolution.validate();
        } catch (const contract_violation& e) {
            throw validation_error(std::string("config: ") + e.what());
        }
    }
};

namespace detail {
    template <typename T>
    void read_if(const nlohmann::json& j, const char* key, T& into)
    {
        if (j.contains(key)) {
            into = j.at(key).get<T>();
        }
    }
} // namespace detail

inline auto config_from_json(const nlohmann::json& j) -> ExperimentConfig
{
    ExperimentConfig c;
    try {
        auto const& d = j.at("dataset");
        c.dataset_path = d.at("path").get<std::string>();
        c.label = d.at("label").get<std::string>();
        detail::read_if(d, "sensitive", c.sensitive);
        c.dataset_name = d.value("name", fs::path(c.dataset_path).stem().string());
        if (j.contains("methods")) {
            c.methods.clear();
            for (auto const& m : j.at("methods")) {
                c.methods.push_back(parse_method(m.get<std::string>()));
            }
        }
        detail::read_if(j, "trials", c.trials);
        detail::read_if(j, "split_fraction", c.split_fraction);
        detail::read_if(j, "seed", c.seed);
        detail::read_if(j, "jobs", c.jobs);
        detail::read_if(j, "outdir", c.outdir);
        detail::read_if(j, "max_terms", c.max_terms);
        detail::read_if(j, "max_bins", c.max_bins);
        if (j.contains("evolution")) {
            auto const& e = j.at("evolution");
            auto& ev = c.evolution;
            detail::read_if(e, "generations", ev.generations);
            detail::read_if(e, "population", ev.population);
            detail::read_if(e, "max_depth", ev.max_depth);
            detail::read_if(e, "max_dim", ev.max_dim);
            detail::read_if(e, "crossover_rate", ev.crossover_rate);
            detail::read_if(e, "feature_edit_rate", ev.feature_edit_rate);
            detail::read_if(e, "tournament_size", ev.tournament_size);
            detail::read_if(e, "gd_iters", ev.gd_iters);
            detail::read_if(e, "gd_lr", ev.gd_lr);
            detail::read_if(e, "complexity_objective", ev.complexity_objective);
            if (e.contains("hybrid_parents")) {
                auto p = e.at("hybrid_parents").get<std::string>();
                if (p != "FLEX" && p != "LEX") {
                    throw validation_error("config: evolution.hybrid_parents must be FLEX or LEX");
                }
                ev.hybrid_parents = p == "LEX" ? HybridParents::Lex : HybridParents::Flex;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw validation_error(std::string("config: ") + e.what());
    }
    return c;
}

inline auto load_config(const std::string& path) -> ExperimentConfig
{
    std::ifstream in(path);
    if (!in) {
        throw validation_error("cannot open config '" + path + "'");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("config '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

// Seed of one method's run within a trial; depends on the method, not its
// position in the method list.
inline auto method_seed(std::uint64_t trial_seed, Method m) -> std::uint64_t
{
    return splitmix64(trial_seed ^ splitmix64(static_cast<std::uint64_t>(m) + 0x3c6ef372ULL));
}

inline auto trial_seed(const ExperimentConfig& cfg, std::size_t trial) -> std::uint64_t
{
    return cfg.seed + trial;
}

// Everything one trial's methods share: the split and the protected groups
// (built on the training half).
struct TrialData {
    Dataset train;
    Dataset test;
    GroupSet groups;
};

inline auto prepare_trial(const Dataset& full, const ExperimentConfig& cfg, std::size_t trial) -> TrialData
{
    auto split = train_test_split(full, cfg.split_fraction, trial_seed(cfg, trial));
    TrialData t { std::move(split.train), std::move(split.test), {} };
    impute_missing(t.train, { &t.train, &t.test });
    t.groups = build_simple_groups(t.train, cfg.max_bins);
    return t;
}

struct IndividualMetrics {
    std::size_t id { 0 };
    double accuracy { 0.0 };
    double aps { 0.0 };
    AuditResult fp;
    AuditResult fn;
    double marginal_fairness { 0.0 };
};

// Test-set scores of one fitted individual.
inline auto score_individual(const Individual& ind, std::size_t id, const TrialData& t, std::size_t max_terms)
    -> IndividualMetrics
{
    IndividualMetrics out;
    out.id = id;
    auto eval = evaluate(ind, t.test);
    out.accuracy = accuracy(eval.predicted, t.test.labels);
    auto aps = average_precision(eval.probability, t.test.labels);
    if (!aps) {
        warn("test split has no positive labels; APS recorded as 0");
    }
    out.aps = aps.value_or(0.0);
    out.fp = audit_exhaustive(eval.predicted, t.test.labels, t.groups, t.test, ErrorMode::FalsePositive, max_terms);
    out.fn = audit_exhaustive(eval.predicted, t.test.labels, t.groups, t.test, ErrorMode::FalseNegative, max_terms);
    auto overall = eval.mean_loss();
    std::vector<double> gaps;
    for (auto const& g : t.groups.groups) {
        if (auto loss = eval.mean_loss(group_membership(g, t.test)); loss) {
            gaps.push_back(fairness(overall, *loss));
        }
    }
    out.marginal_fairness = gaps.empty() ? 0.0 : marginal_fairness(gaps);
    return out;
}

inline auto solution_points(const std::vector<IndividualMetrics>& metrics, ObjectivePair pair, const std::string& method)
    -> std::vector<SolutionPoint>
{
    std::vector<SolutionPoint> pts;
    for (auto const& m : metrics) {
        bool fp = pair == ObjectivePair::FpAccuracy || pair == ObjectivePair::FpAps;
        bool acc = pair == ObjectivePair::FpAccuracy || pair == ObjectivePair::FnAccuracy;
        pts.push_back({ acc ? m.accuracy : m.aps, fp ? m.fp.violation : m.fn.violation, m.id, method });
    }
    return pts;
}

// --- file output -----------------------------------------------------------

inline void write_text_atomic(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot write '" + tmp.string() + "'");
        }
        out << text;
        if (!out.flush()) {
            throw std::runtime_error("failed writing '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path);
}

inline auto metrics_csv(const std::vector<IndividualMetrics>& metrics, std::size_t trial, Method method) -> std::string
{
    std::ostringstream out;
    out << "trial,method,individual_id,accuracy,aps,fp_violation,fn_violation,marginal_fairness\n";
    for (auto const& m : metrics) {
        out << trial << ',' << to_string(method) << ',' << m.id << ',' << format_double(m.accuracy) << ','
            << format_double(m.aps) << ',' << format_double(m.fp.violation) << ',' << format_double(m.fn.violation) << ','
            << format_double(m.marginal_fairness) << '\n';
    }
    return out.str();
}

inline auto method_trial_dir(const fs::path& root, const ExperimentConfig& cfg, Method m, std::size_t trial) -> fs::path
{
    return root / cfg.dataset_name / to_string(m) / ("trial_" + std::to_string(trial));
}

// Writes models/, metrics.csv and audit.json for one method's final
// population and returns its test metrics.
inline auto write_method_artifacts(const fs::path& dir, const Population& pop, const TrialData& t, std::size_t trial,
    Method method, std::size_t max_terms) -> std::vector<IndividualMetrics>
{
    std::vector<IndividualMetrics> metrics;
    auto audits = nlohmann::json::array();
    for (std::size_t i = 0; i < pop.size(); ++i) {
        write_text_atomic(dir / "models" / ("model_" + std::to_string(i) + ".json"), to_json(pop.individuals[i]).dump(2) + "\n");
        metrics.push_back(score_individual(pop.individuals[i], i, t, max_terms));
        audits.push_back({ { "individual_id", i }, { "audits", { to_json(metrics.back().fp, t.test), to_json(metrics.back().fn, t.test) } } });
    }
    write_text_atomic(dir / "metrics.csv", metrics_csv(metrics, trial, method));
    write_text_atomic(dir / "audit.json", audits.dump(2) + "\n");
    return metrics;
}

inline auto run_method(const TrialData& t, const ExperimentConfig& cfg, Method method, std::size_t trial,
    const RunHooks& hooks = {}) -> Population
{
    auto ev = cfg.evolution;
    ev.method = method;
    ev.seed = method_seed(trial_seed(cfg, trial), method);
    ev.threads = 1;
    return run(ev, t.train, t.groups, hooks);
}

// --- experiment ------------------------------------------------------------

inline auto resolve_outdir(const ExperimentConfig& cfg) -> fs::path
{
    if (!cfg.outdir.empty()) {
        return cfg.outdir;
    }
    if (auto const* env = std::getenv("FAIRGP_OUTDIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return "results";
}

inline auto trial_report_path(const fs::path& root, const ExperimentConfig& cfg, std::size_t trial) -> fs::path
{
    return root / cfg.dataset_name / ("trial_" + std::to_string(trial) + ".json");
}

// Runs every method on one trial's split and writes the trial report last,
// so its presence marks the trial complete.
inline void run_trial(const Dataset& full, const ExperimentConfig& cfg, std::size_t trial, const fs::path& root)
{
    auto t = prepare_trial(full, cfg, trial);
    std::vector<std::pair<std::string, std::vector<IndividualMetrics>>> results;
    for (auto m : cfg.methods) {
        auto pop = run_method(t, cfg, m, trial);
        results.emplace_back(to_string(m), write_method_artifacts(method_trial_dir(root, cfg, m, trial), pop, t, trial, m, cfg.max_terms));
    }
    nlohmann::json report { { "trial", trial }, { "seed", trial_seed(cfg, trial) } };
    nlohmann::json methods = nlohmann::json::object();
    for (auto pair : kAllObjectivePairs) {
        std::vector<std::pair<std::string, std::vector<SolutionPoint>>> pts;
        for (auto const& [name, metrics] : results) {
            pts.emplace_back(name, solution_points(metrics, pair, name));
        }
        for (auto const& r : hypervolume_reports(pts, pair)) {
            methods[r.method][to_string(pair)] = to_json(r);
        }
    }
    report["methods"] = methods;
    write_text_atomic(trial_report_path(root, cfg, trial), report.dump(2) + "\n");
}

inline auto summary_header() -> std::string
{
    return "dataset,trial,method,hv_fp_acc,hv_fp_aps,hv_fn_acc,hv_fn_aps\n";
}

// Aggregate rows for completed trials, in trial then configured-method order.
inline auto build_summary(const ExperimentConfig& cfg, const fs::path& root, const std::vector<std::size_t>& trials) -> std::string
{
    std::ostringstream out;
    out << summary_header();
    for (auto t : trials) {
        std::ifstream in(trial_report_path(root, cfg, t));
        auto report = nlohmann::json::parse(in);
        for (auto m : cfg.methods) {
            auto const& entry = report.at("methods").at(to_string(m));
            out << cfg.dataset_name << ',' << t << ',' << to_string(m);
            for (auto pair : kAllObjectivePairs) {
                out << ',' << format_double(entry.at(to_string(pair)).at("hypervolume").get<double>());
            }
            out << '\n';
        }
    }
    return out.str();
}

inline auto load_experiment_data(const ExperimentConfig& cfg) -> Dataset
{
    auto ds = load_csv(cfg.dataset_path, cfg.sensitive, cfg.label);
    ds.validate();
    return ds;
}

inline auto trial_is_complete(const ExperimentConfig& cfg, const fs::path& root, std::size_t trial) -> bool
{
    auto path = trial_report_path(root, cfg, trial);
    if (!fs::exists(path)) {
        return false;
    }
    try {
        std::ifstream in(path);
        auto report = nlohmann::json::parse(in);
        for (auto m : cfg.methods) {
            for (auto pair : kAllObjectivePairs) {
                (void)report.at("methods").at(to_string(m)).at(to_string(pair)).at("hypervolume").get<double>();
            }
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

// Returns the exit code. Failed trials leave an error record next to the
// trial reports and are excluded from the aggregate.
inline auto cmd_experiment(const ExperimentConfig& cfg, std::ostream& log) -> int
{
    cfg.validate();
    auto root = resolve_outdir(cfg);
    auto full = load_experiment_data(cfg);

    std::vector<std::size_t> pending;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        if (trial_is_complete(cfg, root, t)) {
            log << "trial " << t << ": already complete, skipped\n";
        } else {
            pending.push_back(t);
        }
    }
    std::vector<std::string> errors(pending.size());
    parallel_for(pending.size(), cfg.jobs, [&](std::size_t k) {
        try {
            run_trial(full, cfg, pending[k], root);
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    });

    std::vector<std::size_t> completed;
    bool any_failed = false;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        auto it = std::find(pending.begin(), pending.end(), t);
        if (it != pending.end() && !errors[static_cast<std::size_t>(it - pending.begin())].empty()) {
            auto const& what = errors[static_cast<std::size_t>(it - pending.begin())];
            any_failed = true;
            log << "trial " << t << ": failed: " << what << '\n';
            nlohmann::json rec { { "trial", t }, { "seed", trial_seed(cfg, t) }, { "error", what } };
            write_text_atomic(root / cfg.dataset_name / ("trial_" + std::to_string(t) + ".error.json"), rec.dump(2) + "\n");
            continue;
        }
        completed.push_back(t);
    }
    write_text_atomic(root / cfg.dataset_name / "summary.csv", build_summary(cfg, root, completed));
    return any_failed ? kExitPartialFailure : kExitOk;
}

// --- train -----------------------------------------------------------------

// One method on one trial's split. Besides the per-method artifacts this
// writes the test split and the group definitions so that exported models
// can be audited independently.
inline auto cmd_train(const ExperimentConfig& cfg, Method method, std::size_t trial, std::ostream* trace) -> int
{
    cfg.validate();
    auto root = resolve_outdir(cfg);
    auto full = load_experiment_data(cfg);
    auto t = prepare_trial(full, cfg, trial);
    auto dir = method_trial_dir(root, cfg, method, trial);

    std::ostringstream generations;
    generations << "generation,best_loss,median_loss,best_marginal_fairness,mean_program_size\n";
    RunHooks hooks;
    hooks.selection_trace = trace;
    hooks.on_generation = [&](const GenerationStats& s) {
        generations << s.generation << ',' << format_double(s.best_loss) << ',' << format_double(s.median_loss) << ','
                    << format_double(s.best_marginal_fairness) << ',' << format_double(s.mean_program_size) << '\n';
    };
    auto pop = run_method(t, cfg, method, trial, hooks);
    write_method_artifacts(dir, pop, t, trial, method, cfg.max_terms);
    write_text_atomic(dir / "generations.csv", generations.str());
    write_text_atomic(dir / "groups.json", to_json(t.groups).dump(2) + "\n");
    std::ostringstream test_csv;
    write_csv(test_csv, t.test);
    write_text_atomic(dir / "test.csv", test_csv.str());
    return kExitOk;
}

// --- audit -----------------------------------------------------------------

struct PredictionRow {
    double probability { 0.0 };
    std::uint8_t label { 0 };
};

// Headerless two-column CSV: probability, hard label.
inline auto read_predictions(std::istream& in) -> std::vector<PredictionRow>
{
    std::vector<PredictionRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 2) {
            throw parse_error(line_no, 0, "expected two columns (probability, label)");
        }
        auto p = detail::parse_number(cells[0]);
        auto y = detail::parse_number(cells[1]);
        if (!p) {
            throw parse_error(line_no, 1, "probability is not a number");
        }
        if (!y || (*y != 0.0 && *y != 1.0)) {
            throw parse_error(line_no, 2, "label must be 0 or 1");
        }
        rows.push_back({ *p, static_cast<std::uint8_t>(*y) });
    }
    return rows;
}

// Audits the hard labels against the dataset's true labels, FP then FN.
inline auto audit_predictions(const Dataset& ds, const std::vector<PredictionRow>& preds, const GroupSet& groups,
    std::size_t max_terms) -> nlohmann::json
{
    if (preds.size() != ds.rows()) {
        throw validation_error("predictions have " + std::to_string(preds.size()) + " rows but the dataset has "
            + std::to_string(ds.rows()));
    }
    std::vector<std::uint8_t> hard(preds.size());
    std::transform(preds.begin(), preds.end(), hard.begin(), [](const PredictionRow& r) { return r.label; });
    auto out = nlohmann::json::array();
    for (auto mode : { ErrorMode::FalsePositive, ErrorMode::FalseNegative }) {
        out.push_back(to_json(audit_exhaustive(hard, ds.labels, groups, ds, mode, max_terms), ds));
    }
    return out;
}

// --- stats -----------------------------------------------------------------

struct SummaryTable {
    std::vector<std::string> methods; // first-appearance order
    // measure -> method -> trial -> value
    std::map<std::string, std::map<std::string, std::map<std::size_t, double>>> values;
};

inline auto read_summary(std::istream& in) -> SummaryTable
{
    SummaryTable table;
    std::string line;
    if (!std::getline(in, line)) {
        throw validation_error("summary CSV is empty");
    }
    auto header = detail::split_csv_line(line);
    auto find = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw schema_error("summary CSV lacks column '" + name + "'");
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    auto trial_col = find("trial");
    auto method_col = find("method");
    std::vector<std::pair<std::string, std::size_t>> measures;
    for (auto pair : kAllObjectivePairs) {
        measures.emplace_back(to_string(pair), find(to_string(pair)));
    }
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) {
            continue;
        }
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw parse_error(row, 0, "wrong number of columns");
        }
        auto trial = detail::parse_number(cells[trial_col]);
        if (!trial) {
            throw parse_error(row, trial_col + 1, "trial is not a number");
        }
        auto const& method = cells[method_col];
        if (std::find(table.methods.begin(), table.methods.end(), method) == table.methods.end()) {
            table.methods.push_back(method);
        }
        for (auto const& [name, col] : measures) {
            auto v = detail::parse_number(cells[col]);
            if (!v) {
                throw parse_error(row, col + 1, "hypervolume is not a number");
            }
            table.values[name][method][static_cast<std::size_t>(*trial)] = *v;
        }
    }
    return table;
}

inline constexpr std::size_t kMinStatsTrials = 5;

// Long-format table: one row per measure and method pair with raw and
// Bonferroni-adjusted two-sided p-values.
inline auto pairwise_stats(const SummaryTable& table) -> std::string
{
    std::ostringstream out;
    out << "measure,row_method,col_method,p_raw,p_adjusted\n";
    auto const k = table.methods.size();
    auto const comparisons = std::max<std::size_t>(1, k * (k - 1) / 2);
    for (auto pair : kAllObjectivePairs) {
        auto const measure = to_string(pair);
        auto mit = table.values.find(measure);
        if (mit == table.values.end()) {
            continue;
        }
        auto const& by_method = mit->second;
        std::vector<std::tuple<std::string, std::string, double>> rows;
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) {
                auto const& a = by_method.at(table.methods[i]);
                auto const& b = by_method.at(table.methods[j]);
                std::vector<double> xa;
                std::vector<double> xb;
                for (auto const& [trial, v] : a) {
                    if (auto it = b.find(trial); it != b.end()) {
                        xa.push_back(v);
                        xb.push_back(it->second);
                    }
                }
                if (xa.size() < kMinStatsTrials) {
                    throw validation_error("methods " + table.methods[i] + " and " + table.methods[j] + " share only "
                        + std::to_string(xa.size()) + " trials; at least " + std::to_string(kMinStatsTrials) + " are needed");
                }
                rows.emplace_back(table.methods[i], table.methods[j], wilcoxon_signed_rank(xa, xb));
            }
        }
        for (auto const& [row_method, col_method, p] : rows) {
            std::array raw { p };
            out << measure << ',' << row_method << ',' << col_method << ',' << format_double(p) << ','
                << format_double(bonferroni(raw, comparisons).front()) << '\n';
        }
    }
    return out.str();
}

// Counts distinct trials in the table.
inline auto trial_count(const SummaryTable& table) -> std::size_t
{
    std::set<std::size_t> trials;
    for (auto const& [measure, by_method] : table.values) {
        for (auto const& [method, by_trial] : by_method) {
            for (auto const& [t, v] : by_trial) {
                trials.insert(t);
            }
        }
    }
    return trials.size();
}

} // namespace fairgp
