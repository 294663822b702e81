// Command-line front end: train, experiment, audit, stats.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fairgp/harness.hpp"

namespace {

using namespace fairgp;

struct Overrides {
    std::string config;
    std::string method;
    std::optional<std::size_t> trials;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string outdir;
    std::optional<std::size_t> max_terms;
};

void add_common(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--config", o.config, "JSON experiment configuration")->required();
    cmd->add_option("--trials", o.trials, "number of trials");
    cmd->add_option("--seed", o.seed, "base seed");
    cmd->add_option("--jobs", o.jobs, "trials run in parallel");
    cmd->add_option("--outdir", o.outdir, "output directory (default $FAIRGP_OUTDIR, then ./results)");
    cmd->add_option("--max-terms", o.max_terms, "largest conjunction the auditor considers");
}

auto resolve(const Overrides& o) -> ExperimentConfig
{
    auto cfg = load_config(o.config);
    if (o.trials) {
        cfg.trials = *o.trials;
    }
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    if (o.jobs) {
        cfg.jobs = *o.jobs;
    }
    if (!o.outdir.empty()) {
        cfg.outdir = o.outdir;
    }
    if (o.max_terms) {
        cfg.max_terms = *o.max_terms;
    }
    if (!o.method.empty()) {
        try {
            cfg.methods = { parse_method(o.method) };
        } catch (const std::invalid_argument& e) {
            throw validation_error(e.what());
        }
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app { "Fair symbolic classifiers: training, experiments and subgroup audits" };
    app.require_subcommand(1);

    Overrides train_opts;
    std::size_t train_trial = 0;
    std::string trace_path;
    auto* train = app.add_subcommand("train", "run one method on one trial split and export its models");
    add_common(train, train_opts);
    train->add_option("--method", train_opts.method, "Tourn, LEX, FLEX, NSGA2, FLEX-NSGA2 or Random")->required();
    train->add_option("--trial", train_trial, "trial index selecting the split (default 0)");
    train->add_option("--trace", trace_path, "write selection events as JSON lines");

    Overrides exp_opts;
    auto* experiment = app.add_subcommand("experiment", "run every configured method over repeated trials");
    add_common(experiment, exp_opts);
    experiment->add_option("--method", exp_opts.method, "restrict the run to one method");

    std::string audit_data;
    std::string audit_preds;
    std::string audit_config;
    std::string audit_groups;
    std::vector<std::string> audit_sensitive;
    std::string audit_label;
    std::size_t audit_terms = 3;
    std::size_t audit_bins = 5;
    auto* audit = app.add_subcommand("audit", "audit external predictions for subgroup FP/FN violations");
    audit->add_option("dataset", audit_data, "dataset CSV")->required();
    audit->add_option("predictions", audit_preds, "headerless CSV of probability,label rows")->required();
    audit->add_option("--config", audit_config, "take sensitive/label columns and max_terms from this config");
    audit->add_option("--sensitive", audit_sensitive, "sensitive column names")->delimiter(',');
    audit->add_option("--label", audit_label, "label column name");
    audit->add_option("--groups", audit_groups, "group definitions exported by train");
    auto* terms_opt = audit->add_option("--max-terms", audit_terms, "largest conjunction considered");

    std::string stats_input;
    std::string stats_output;
    auto* stats = app.add_subcommand("stats", "pairwise signed-rank tests over an aggregate CSV");
    stats->add_option("summary", stats_input, "summary.csv written by experiment")->required();
    stats->add_option("--output", stats_output, "write here instead of standard output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        auto code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) {
            auto cfg = resolve(train_opts);
            std::optional<std::ofstream> trace;
            if (!trace_path.empty()) {
                trace.emplace(trace_path);
                if (!*trace) {
                    throw validation_error("cannot open trace file '" + trace_path + "'");
                }
            }
            return cmd_train(cfg, cfg.methods.front(), train_trial, trace ? &*trace : nullptr);
        }
        if (experiment->parsed()) {
            return cmd_experiment(resolve(exp_opts), std::cerr);
        }
        if (audit->parsed()) {
            auto sensitive = audit_sensitive;
            auto label = audit_label;
            if (!audit_config.empty()) {
                auto cfg = load_config(audit_config);
                if (sensitive.empty()) {
                    sensitive = cfg.sensitive;
                }
                if (label.empty()) {
                    label = cfg.label;
                }
                if (terms_opt->count() == 0) {
                    audit_terms = cfg.max_terms;
                }
                audit_bins = cfg.max_bins;
            }
            if (label.empty()) {
                throw validation_error("audit needs --label or --config");
            }
            auto ds = load_csv(audit_data, sensitive, label);
            ds.validate();
            std::ifstream preds_in(audit_preds);
            if (!preds_in) {
                throw validation_error("cannot open predictions '" + audit_preds + "'");
            }
            auto preds = read_predictions(preds_in);
            GroupSet groups;
            if (audit_groups.empty()) {
                groups = build_simple_groups(ds, audit_bins);
            } else {
                std::ifstream gin(audit_groups);
                if (!gin) {
                    throw validation_error("cannot open groups '" + audit_groups + "'");
                }
                groups = group_set_from_json(nlohmann::json::parse(gin), ds);
            }
            std::cout << audit_predictions(ds, preds, groups, audit_terms).dump(2) << '\n';
            return kExitOk;
        }
        if (stats->parsed()) {
            std::ifstream in(stats_input);
            if (!in) {
                throw validation_error("cannot open '" + stats_input + "'");
            }
            auto table = read_summary(in);
            if (trial_count(table) < kMinStatsTrials) {
                throw validation_error("stats needs at least " + std::to_string(kMinStatsTrials) + " trials, found "
                    + std::to_string(trial_count(table)));
            }
            auto text = pairwise_stats(table);
            if (stats_output.empty()) {
                std::cout << text;
            } else {
                write_text_atomic(stats_output, text);
            }
            return kExitOk;
        }
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const schema_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const contract_violation& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitPartialFailure;
    }
    return kExitOk;
}
