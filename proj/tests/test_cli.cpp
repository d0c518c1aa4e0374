// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "fixtures.hpp"
#include "stream_compare.hpp"
#include "lorasched/config.hpp"

using namespace lorasched;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) { return sim::read_file(path); }

const std::string kData = LORASCHED_DATA_DIR;

}  // namespace

TEST(Cli, NoCommandIsUsageError) { EXPECT_EQ(invoke({}).code, 2); }

TEST(Cli, HelpIsSuccess) { EXPECT_EQ(invoke({"--help"}).code, 0); }

TEST(Cli, ScheduleSingleTask) {
    const auto dir = test::scratch_dir("cli_sched1");
    const auto inst = dir + "/one.json";
    std::ofstream(inst) << R"({"G":4,"tasks":[{"task_id":0,"duration":5,"gpus":2}]})";
    const auto r = invoke({"schedule", "--instance", inst});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("C_max 5\n"), std::string::npos);
}

TEST(Cli, ScheduleMethodsAgreeOnBundledInstances) {
    for (const auto& e : fs::directory_iterator(kData + "/instances")) {
        if (e.path().extension() != ".json") continue;
        const auto exact = invoke({"schedule", "--instance", e.path().string(), "--method", "exact"});
        const auto oracle = invoke({"schedule", "--instance", e.path().string(), "--method", "oracle"});
        ASSERT_EQ(exact.code, 0) << exact.err;
        ASSERT_EQ(oracle.code, 0) << oracle.err;
        auto cmax = [](const std::string& s) { return s.substr(s.find("C_max")); };
        EXPECT_EQ(cmax(exact.out).substr(0, cmax(exact.out).find('\n')),
                  cmax(oracle.out).substr(0, cmax(oracle.out).find('\n')))
            << e.path();
    }
}

TEST(Cli, ScheduleRejectsOversizedTask) {
    const auto dir = test::scratch_dir("cli_sched2");
    const auto inst = dir + "/bad.json";
    std::ofstream(inst) << R"({"G":2,"tasks":[{"task_id":0,"duration":5,"gpus":4}]})";
    EXPECT_EQ(invoke({"schedule", "--instance", inst}).code, 2);
    EXPECT_EQ(invoke({"schedule", "--instance", inst, "--method", "bogus"}).code, 2);
}

TEST(Cli, SimulateWritesArtifacts) {
    const auto dir = test::scratch_dir("cli_sim");
    ASSERT_EQ(invoke({"suite", "--kind", "cluster", "--seed", "3", "--out", dir}).code, 0);
    const auto r = invoke({"simulate", "--workload", dir + "/workload.json", "--cluster", dir + "/cluster.json", "--seed",
                        "3", "--out", dir + "/run"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"report.json", "gantt.csv", "samples_saved.csv", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(dir + "/run/" + f)) << f;
    }
}

TEST(Cli, SimulateMissingWorkloadNamesPath) {
    const auto r = invoke({"simulate", "--workload", "/no/such/file.json", "--cluster", "/no/such/c.json"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/no/such/file.json"), std::string::npos);
}

TEST(Cli, SimulateBadFlags) {
    const auto dir = test::scratch_dir("cli_flags");
    ASSERT_EQ(invoke({"suite", "--kind", "cluster", "--out", dir}).code, 0);
    EXPECT_EQ(invoke({"simulate", "--workload", dir + "/workload.json", "--cluster", dir + "/cluster.json", "--flags",
                   "b,zz", "--out", dir + "/run"})
                  .code,
              2);
}

TEST(Cli, AblateWritesFourReports) {
    const auto dir = test::scratch_dir("cli_ablate");
    ASSERT_EQ(invoke({"suite", "--kind", "cluster", "--seed", "1", "--out", dir}).code, 0);
    const auto r = invoke({"simulate", "--workload", dir + "/workload.json", "--cluster", dir + "/cluster.json", "--seed",
                        "1", "--out", dir + "/run", "--ablate"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"report_b.json", "report_b_s.json", "report_b_ee.json", "report_b_s_ee.json", "ablation.json"})
        EXPECT_TRUE(fs::exists(dir + "/run/" + f)) << f;
    EXPECT_NE(r.out.find("ratio b/b_s_ee="), std::string::npos);
}

TEST(Cli, DetectBundledDivergingTrace) {
    const auto r = invoke({"detect", "--trace", kData + "/traces/diverging.csv"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(test::compare_streams(r.out, slurp(kData + "/traces/diverging.expected.csv")), "");
}

TEST(Cli, DetectConvergingTraceNeverExits) {
    const auto dir = test::scratch_dir("cli_detect");
    std::ofstream f(dir + "/conv.csv");
    f << "step,train_loss,val_loss\n";
    for (int s = 1; s <= 100; ++s) {
        f << s << "," << 2.0 / s + 0.5 << ",";
        if (s % 10 == 0) f << 2.0 / s + 0.52;
        f << "\n";
    }
    f.close();
    const auto r = invoke({"detect", "--trace", dir + "/conv.csv"});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(r.out.find("exit_"), std::string::npos);
}

TEST(Cli, DetectMalformedTrace) {
    const auto dir = test::scratch_dir("cli_detect_bad");
    std::ofstream(dir + "/bad.csv") << "step,train_loss,val_loss\n1,abc,\n";
    EXPECT_EQ(invoke({"detect", "--trace", dir + "/bad.csv"}).code, 2);
    EXPECT_EQ(invoke({"detect", "--trace", dir + "/missing.csv"}).code, 2);
}

TEST(Cli, AnalyzeWarmupOrderPreserving) {
    const auto dir = test::scratch_dir("cli_warm");
    for (int i = 0; i < 8; ++i) {
        std::ofstream f(dir + "/run" + std::to_string(i) + ".csv");
        f << "step,train_loss,val_loss\n";
        for (int s = 1; s <= 100; ++s) {
            const double v = 1.0 + 0.1 * i + 1.0 / s;
            f << s << "," << v << ",";
            if (s % 5 == 0) f << v;
            f << "\n";
        }
    }
    const auto r = invoke({"analyze-warmup", "--traces", dir, "--fractions", "0.05,0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "fraction,rho,top_quartile_coverage,best_in_top_quartile,skipped\n"
                     "0.050000000000000003,1,1,1,0\n"
                     "0.5,1,1,1,0\n");
}

TEST(Cli, AnalyzeWarmupEmptyDir) {
    const auto dir = test::scratch_dir("cli_warm_empty");
    EXPECT_EQ(invoke({"analyze-warmup", "--traces", dir}).code, 2);
}

TEST(Cli, GemmCheckDefaultsPass) {
    const auto r = invoke({"gemm-check", "--specs", "3", "--ranks", "16,32,64"});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, GemmCheckImpossibleDims) {
    EXPECT_EQ(invoke({"gemm-check", "--ranks", "128", "--d-in", "64"}).code, 2);
    EXPECT_EQ(invoke({"gemm-check", "--adapters", "0"}).code, 2);
}

TEST(Cli, RerunsAreByteIdentical) {
    const auto dir = test::scratch_dir("cli_det");
    ASSERT_EQ(invoke({"suite", "--kind", "early-exit", "--out", dir}).code, 0);
    for (const char* sub : {"a", "b"}) {
        ASSERT_EQ(invoke({"simulate", "--workload", dir + "/workload.json", "--cluster", dir + "/cluster.json", "--seed",
                       "5", "--flags", "b,ee", "--out", dir + "/" + sub})
                      .code,
                  0);
    }
    for (const char* f : {"report.json", "gantt.csv", "samples_saved.csv"})
        EXPECT_EQ(slurp(dir + "/a/" + f), slurp(dir + "/b/" + f)) << f;
}
