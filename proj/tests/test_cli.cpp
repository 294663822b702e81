#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fairgp/harness.hpp"
#include "student_synth.hpp"

namespace fs = std::filesystem;
using namespace fairgp;

namespace {

struct Result {
    int code { -1 };
    std::string out;
    std::string err;
};

auto slurp(const fs::path& p) -> std::string
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override
    {
        auto name = std::string(::testing::UnitTest::GetInstance()->current_test_info()->name());
        dir_ = fs::temp_directory_path() / ("fairgp_cli_" + std::to_string(::getpid()) + "_" + name);
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream(dir_ / "student.csv") << demo::student_synthetic_csv();
    }
    void TearDown() override { fs::remove_all(dir_); }

    auto run(const std::string& args) -> Result
    {
        auto out = dir_ / "stdout.txt";
        auto err = dir_ / "stderr.txt";
        auto cmd = std::string(FAIRGP_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
        auto status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    auto write_config(const std::string& name, nlohmann::json cfg) -> fs::path
    {
        auto path = dir_ / name;
        std::ofstream(path) << cfg.dump(2);
        return path;
    }

    auto small_config(std::vector<std::string> methods, std::size_t trials = 2) -> nlohmann::json
    {
        return {
            { "dataset", { { "path", (dir_ / "student.csv").string() }, { "name", "student" },
                             { "sensitive", demo::kStudentSensitive }, { "label", demo::kStudentLabel } } },
            { "methods", methods },
            { "trials", trials },
            { "seed", 7 },
            { "evolution", { { "population", 6 }, { "generations", 2 }, { "max_dim", 4 }, { "gd_iters", 3 } } },
        };
    }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, MissingSubcommandIsUsageError)
{
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("bogus").code, 2);
}

TEST_F(Cli, InvalidSensitiveColumnIsNamed)
{
    auto cfg = small_config({ "Random" });
    cfg["dataset"]["sensitive"] = { "sex", "nope" };
    auto path = write_config("bad.json", cfg);
    auto r = run("train --config " + path.string() + " --method Random --outdir " + (dir_ / "out").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("nope"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownMethodIsUsageError)
{
    auto path = write_config("cfg.json", small_config({ "Random" }));
    auto r = run("train --config " + path.string() + " --method Greedy --outdir " + (dir_ / "out").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Greedy"), std::string::npos);
}

TEST_F(Cli, TrainRandomWritesEveryModelReproducibly)
{
    auto cfg = small_config({ "Random" });
    cfg["evolution"] = { { "population", 100 } };
    auto path = write_config("cfg.json", cfg);
    ASSERT_EQ(run("train --config " + path.string() + " --method Random --outdir " + (dir_ / "a").string()).code, 0);
    ASSERT_EQ(run("train --config " + path.string() + " --method Random --outdir " + (dir_ / "b").string()).code, 0);
    auto a = dir_ / "a" / "student" / "Random" / "trial_0";
    auto b = dir_ / "b" / "student" / "Random" / "trial_0";
    std::size_t models = 0;
    for (auto const& entry : fs::directory_iterator(a / "models")) {
        ++models;
        EXPECT_EQ(slurp(entry.path()), slurp(b / "models" / entry.path().filename()));
    }
    EXPECT_EQ(models, 100u);
    auto metrics = slurp(a / "metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 101);
    EXPECT_EQ(metrics, slurp(b / "metrics.csv"));
    EXPECT_TRUE(fs::exists(a / "audit.json"));
    EXPECT_TRUE(fs::exists(a / "generations.csv"));
}

TEST_F(Cli, ExperimentWritesSummaryAndResumes)
{
    auto path = write_config("cfg.json", small_config({ "Random", "Tourn" }));
    auto out = dir_ / "out";
    auto first = run("experiment --config " + path.string() + " --outdir " + out.string());
    ASSERT_EQ(first.code, 0) << first.err;
    auto summary = slurp(out / "student" / "summary.csv");
    std::istringstream lines(summary);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "dataset,trial,method,hv_fp_acc,hv_fp_aps,hv_fn_acc,hv_fn_aps");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 4u);
    EXPECT_TRUE(fs::exists(out / "student" / "Tourn" / "trial_1" / "metrics.csv"));

    auto second = run("experiment --config " + path.string() + " --outdir " + out.string());
    ASSERT_EQ(second.code, 0);
    EXPECT_NE(second.err.find("trial 0: already complete"), std::string::npos);
    EXPECT_NE(second.err.find("trial 1: already complete"), std::string::npos);
    EXPECT_EQ(slurp(out / "student" / "summary.csv"), summary);

    fs::remove(out / "student" / "trial_1.json");
    auto third = run("experiment --config " + path.string() + " --outdir " + out.string());
    ASSERT_EQ(third.code, 0);
    EXPECT_NE(third.err.find("trial 0: already complete"), std::string::npos);
    EXPECT_EQ(third.err.find("trial 1: already complete"), std::string::npos);
    EXPECT_EQ(slurp(out / "student" / "summary.csv"), summary);
}

TEST_F(Cli, OutdirFromEnvironment)
{
    auto path = write_config("cfg.json", small_config({ "Random" }, 1));
    auto env_dir = dir_ / "env_out";
    ::setenv("FAIRGP_OUTDIR", env_dir.string().c_str(), 1);
    auto cmd_result = run("experiment --config " + path.string());
    ::unsetenv("FAIRGP_OUTDIR");
    EXPECT_EQ(cmd_result.code, 0);
    EXPECT_TRUE(fs::exists(env_dir / "student" / "summary.csv"));
}

TEST_F(Cli, AuditRejectsLengthMismatch)
{
    auto path = write_config("cfg.json", small_config({ "Random" }));
    std::ofstream(dir_ / "preds.csv") << "0.9,1\n0.1,0\n";
    auto r = run("audit " + (dir_ / "student.csv").string() + " " + (dir_ / "preds.csv").string() + " --config " + path.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("rows"), std::string::npos);
}

TEST_F(Cli, AuditOfExportedModelMatchesMetrics)
{
    auto path = write_config("cfg.json", small_config({ "FLEX" }));
    auto out = dir_ / "out";
    ASSERT_EQ(run("train --config " + path.string() + " --method FLEX --outdir " + out.string()).code, 0);
    auto run_dir = out / "student" / "FLEX" / "trial_0";
    auto test = load_csv((run_dir / "test.csv").string(), demo::kStudentSensitive, demo::kStudentLabel);

    std::ifstream metrics_in(run_dir / "metrics.csv");
    std::string line;
    std::getline(metrics_in, line);
    std::size_t checked = 0;
    while (std::getline(metrics_in, line)) {
        auto cells = fairgp::detail::split_csv_line(line);
        auto id = cells[2];
        std::ifstream model_in(run_dir / "models" / ("model_" + id + ".json"));
        auto model = individual_from_json(nlohmann::json::parse(model_in));
        auto eval = evaluate(model, test);
        std::ostringstream preds;
        for (std::size_t i = 0; i < test.rows(); ++i) {
            preds << format_double(eval.probability[i]) << ',' << int(eval.predicted[i]) << '\n';
        }
        std::ofstream(dir_ / "preds.csv") << preds.str();
        auto r = run("audit " + (run_dir / "test.csv").string() + " " + (dir_ / "preds.csv").string() + " --config "
            + path.string() + " --groups " + (run_dir / "groups.json").string());
        ASSERT_EQ(r.code, 0) << r.err;
        auto audits = nlohmann::json::parse(r.out);
        EXPECT_EQ(audits[0].at("violation").get<double>(), std::stod(cells[5])) << "model " << id;
        EXPECT_EQ(audits[1].at("violation").get<double>(), std::stod(cells[6])) << "model " << id;
        ++checked;
    }
    EXPECT_EQ(checked, 6u);
}

TEST_F(Cli, StatsNeedsFiveTrials)
{
    std::ofstream(dir_ / "summary.csv") << "dataset,trial,method,hv_fp_acc,hv_fp_aps,hv_fn_acc,hv_fn_aps\n"
                                        << "d,0,A,0.1,0.2,0.3,0.4\nd,0,B,0.2,0.2,0.3,0.4\n";
    auto r = run("stats " + (dir_ / "summary.csv").string());
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, StatsWithOneMethodIsEmpty)
{
    std::ofstream csv(dir_ / "summary.csv");
    csv << "dataset,trial,method,hv_fp_acc,hv_fp_aps,hv_fn_acc,hv_fn_aps\n";
    for (int t = 0; t < 6; ++t) {
        csv << "d," << t << ",A,0.1,0.2,0.3,0.4\n";
    }
    csv.close();
    auto r = run("stats " + (dir_ / "summary.csv").string());
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "measure,row_method,col_method,p_raw,p_adjusted\n");
}

TEST_F(Cli, StatsOfIdenticalColumnsIsOne)
{
    std::ofstream csv(dir_ / "summary.csv");
    csv << "dataset,trial,method,hv_fp_acc,hv_fp_aps,hv_fn_acc,hv_fn_aps\n";
    for (int t = 0; t < 6; ++t) {
        auto v = 0.1 * (t + 1);
        csv << "d," << t << ",A," << v << ",0.5,0.5,0.5\n";
        csv << "d," << t << ",B," << v << ",0.5,0.5,0.5\n";
        csv << "d," << t << ",C," << v + 0.01 * (t + 1) << ",0.5,0.5,0.5\n";
    }
    csv.close();
    auto r = run("stats " + (dir_ / "summary.csv").string() + " --output " + (dir_ / "p.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    auto text = slurp(dir_ / "p.csv");
    EXPECT_NE(text.find("hv_fp_acc,A,B,1,1\n"), std::string::npos) << text;
    // Six positive differences: 0.03125, times three comparisons.
    EXPECT_NE(text.find("hv_fp_acc,A,C,0.03125,0.09375\n"), std::string::npos) << text;
}
