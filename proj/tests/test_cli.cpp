// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test
{
  protected:
    void SetUp() override
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() /
               ("cascadelab_cli_" + std::to_string(::getpid()) + "_" + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write_config(const std::string& name, Json doc, const std::string& out = "out")
    {
        if (!doc.contains("output"))
            doc["output"] = Json::object();
        if (!doc["output"].contains("dir"))
            doc["output"]["dir"] = (dir_ / out).string();
        const fs::path p = dir_ / name;
        std::ofstream(p) << doc.dump(2);
        return p;
    }

    // Runs the CLI and returns its exit status; stdout goes to out_.
    int run(const std::string& args, const std::string& env = "")
    {
        const fs::path out = dir_ / "stdout.txt";
        const std::string cmd = env + " " + CASCADELAB_CLI + " " + args + " > " + out.string() + " 2> " +
                                (dir_ / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        out_ = slurp(out);
        err_ = slurp(dir_ / "stderr.txt");
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    static Json cascade_doc()
    {
        return Json::parse(R"({
          "experiment": "cascade",
          "seed": 42,
          "replicates": 60,
          "model": {"family": "poisson_cluster", "displacement": {"law": "gaussian", "d": 1}},
          "cascade": {"c": 1.0, "window": {"box": {"lo": [0], "hi": [6]}}, "padding": "auto",
                      "padding_pilot": 500, "n_max": 6, "r": [1.0]},
          "figures": {"cascade_steps": [0, 2], "palm_fb_steps": 3, "palm_direct_spine_depth": 3},
          "output": {"prefix": "small"}
        })");
    }

    fs::path dir_;
    std::string out_, err_;
};

} // namespace

TEST_F(Cli, ValidatePrintsKindAndHash)
{
    const auto cfg = write_config("c.json", cascade_doc());
    EXPECT_EQ(run("validate " + cfg.string()), 0);
    EXPECT_EQ(out_.rfind("ok cascade config_hash=", 0), 0u) << out_;
    EXPECT_EQ(out_.size(), std::string("ok cascade config_hash=").size() + 16 + 1);
    EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(Cli, HashIgnoresThreads)
{
    auto doc = cascade_doc();
    const auto a = write_config("a.json", doc);
    ASSERT_EQ(run("validate " + a.string()), 0);
    const std::string ha = out_;
    doc["threads"] = 3;
    const auto b = write_config("b.json", doc);
    ASSERT_EQ(run("validate " + b.string()), 0);
    EXPECT_EQ(out_, ha);
    doc["seed"] = 43;
    const auto c = write_config("c.json", doc);
    ASSERT_EQ(run("validate " + c.string()), 0);
    EXPECT_NE(out_, ha);
}

TEST_F(Cli, InvalidConfigsExitWithTwoAndWriteNothing)
{
    std::ofstream(dir_ / "broken.json") << "{\"experiment\": ";
    EXPECT_EQ(run("run " + (dir_ / "broken.json").string()), 2);
    EXPECT_EQ(run("run " + (dir_ / "missing.json").string()), 2);

    auto unknown = cascade_doc();
    unknown["cascade"]["colour"] = 1;
    EXPECT_EQ(run("run " + write_config("unknown.json", unknown).string()), 2);
    EXPECT_NE(err_.find("colour"), std::string::npos) << err_;

    auto negative = cascade_doc();
    negative["cascade"]["c"] = -1.0;
    EXPECT_EQ(run("run " + write_config("negative.json", negative).string()), 2);

    auto wrong_dim = cascade_doc();
    wrong_dim["cascade"]["window"] = Json::parse(R"({"box": {"lo": [0, 0], "hi": [1, 1]}})");
    EXPECT_EQ(run("run " + write_config("dim.json", wrong_dim).string()), 2);

    auto subcritical = cascade_doc();
    subcritical["model"] = Json::parse(R"({"family": "no_displacement", "d": 1,
                                          "count": {"law": "poisson", "mean": 0.5}})");
    EXPECT_EQ(run("run " + write_config("sub.json", subcritical).string()), 2);

    auto no_palm = cascade_doc();
    no_palm["experiment"] = "palm_fb";
    no_palm.erase("cascade");
    no_palm["model"] = Json::parse(R"({"family": "deterministic", "x0": [1.0]})");
    EXPECT_EQ(run("run " + write_config("nopalm.json", no_palm).string()), 2);

    EXPECT_EQ(run("frobnicate x.json"), 2);
    EXPECT_EQ(run("run"), 2);
    EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(Cli, BadThreadOverrideIsAConfigError)
{
    const auto cfg = write_config("c.json", cascade_doc());
    EXPECT_EQ(run("run " + cfg.string(), "CASCADELAB_THREADS=zero"), 2);
    EXPECT_EQ(run("run " + cfg.string(), "CASCADELAB_THREADS=0"), 2);
    EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(Cli, UnwritableOutputIsARuntimeError)
{
    std::ofstream(dir_ / "blocker") << "x";
    const auto cfg = write_config("c.json", cascade_doc(), "blocker/sub");
    EXPECT_EQ(run("run " + cfg.string()), 3);
}

TEST_F(Cli, RunWritesStampedOutputs)
{
    const auto cfg = write_config("c.json", cascade_doc());
    ASSERT_EQ(run("validate " + cfg.string()), 0);
    const std::string hash = out_.substr(out_.find('=') + 1, 16);
    ASSERT_EQ(run("run " + cfg.string()), 0) << err_;
    const fs::path out = dir_ / "out";
    for (const char* f : {"small.csv", "small.json", "small.timing.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    for (const auto& e : fs::directory_iterator(out))
        EXPECT_NE(e.path().extension(), ".tmp");

    const std::string csv = slurp(out / "small.csv");
    EXPECT_EQ(csv.rfind("config_hash,seed,experiment,quantity,", 0), 0u) << csv.substr(0, 80);
    std::istringstream rows(csv);
    std::string line;
    std::getline(rows, line);
    std::size_t n = 0;
    while (std::getline(rows, line)) {
        ++n;
        EXPECT_EQ(line.rfind(hash + ",42,cascade,", 0), 0u) << line;
    }
    EXPECT_GT(n, 7u);

    const auto summary = Json::parse(slurp(out / "small.json"));
    EXPECT_EQ(summary["config_hash"], hash);
    EXPECT_EQ(summary["seed"], 42);
    const auto timing = Json::parse(slurp(out / "small.timing.json"));
    EXPECT_TRUE(timing.contains("wall_seconds"));
    EXPECT_TRUE(timing.contains("threads"));
}

TEST_F(Cli, OutputsAreIdenticalAcrossRunsAndThreadCounts)
{
    const auto cfg = write_config("c.json", cascade_doc());
    int i = 0;
    for (const char* env : {"CASCADELAB_THREADS=1", "CASCADELAB_THREADS=1", "CASCADELAB_THREADS=8"}) {
        ASSERT_EQ(run("run " + cfg.string(), env), 0) << err_;
        fs::rename(dir_ / "out", dir_ / ("run" + std::to_string(i++)));
    }
    for (const char* f : {"small.csv", "small.json"}) {
        const std::string ref = slurp(dir_ / "run0" / f);
        EXPECT_FALSE(ref.empty());
        EXPECT_TRUE(ref == slurp(dir_ / "run1" / f)) << f << " differs between identical runs";
        EXPECT_TRUE(ref == slurp(dir_ / "run2" / f)) << f << " differs between 1 and 8 threads";
    }
    EXPECT_EQ(Json::parse(slurp(dir_ / "run2" / "small.timing.json"))["threads"], 8);
}

TEST_F(Cli, DifferentSeedsGiveDifferentOutputs)
{
    auto doc = cascade_doc();
    ASSERT_EQ(run("run " + write_config("a.json", doc, "a").string()), 0);
    doc["seed"] = 43;
    ASSERT_EQ(run("run " + write_config("b.json", doc, "b").string()), 0);
    EXPECT_FALSE(slurp(dir_ / "a" / "small.csv") == slurp(dir_ / "b" / "small.csv"));
}

TEST_F(Cli, FiguresWritesNodeTables)
{
    const auto cfg = write_config("c.json", cascade_doc());
    ASSERT_EQ(run("figures " + cfg.string()), 0) << err_;
    const fs::path out = dir_ / "out";
    for (const char* f : {"small_cascade_n0.csv", "small_cascade_n2.csv", "small_palm_fb.csv",
                          "small_palm_direct.csv", "small_figures.json", "small_figures.timing.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
    EXPECT_EQ(slurp(out / "small_cascade_n0.csv").rfind("config_hash,seed,replicate,n,immigrant_id,", 0), 0u);
    EXPECT_EQ(slurp(out / "small_palm_fb.csv").rfind("config_hash,seed,step,move,L,node_id,", 0), 0u);
    const auto fig = Json::parse(slurp(out / "small_figures.json"));
    EXPECT_EQ(fig["files"].size(), 4u);
    const std::string first = slurp(out / "small_palm_direct.csv");
    ASSERT_EQ(run("figures " + cfg.string()), 0);
    EXPECT_TRUE(first == slurp(out / "small_palm_direct.csv"));
}

TEST_F(Cli, EveryExperimentKindRuns)
{
    const char* docs[] = {
        R"({"experiment": "palm_fb", "seed": 1, "replicates": 200,
            "model": {"family": "compound", "count": {"law": "table", "pmf": [0.5, 0.0, 0.5]},
                      "displacement": {"law": "gaussian", "d": 1}},
            "palm": {"n_max": 2, "r": [1.0]}})",
        R"({"experiment": "palm_direct", "seed": 2, "replicates": 50,
            "model": {"family": "poisson_cluster", "displacement": {"law": "gaussian", "d": 3}},
            "palm": {"n_max": 2, "r": [1.0], "schedule": [0, 2, 4], "gen_cap": 30, "node_cap": 2000}})",
        R"({"experiment": "truncation", "seed": 3, "replicates": 100,
            "model": {"family": "poisson_cluster", "displacement": {"law": "gaussian", "d": 2}},
            "truncation": {"n": [1, 2], "r": [1.0], "k": [1, 2]}})",
        R"({"experiment": "criteria", "seed": 4,
            "model": {"family": "poisson_cluster", "displacement": {"law": "stable", "d": 3, "alpha": 1.0}},
            "criteria": {"recurrence_replicates": 50, "convolution_replicates": 50,
                         "recurrence_horizons": [4, 8, 16], "convolution_horizons": [4, 8, 16]}})",
    };
    int i = 0;
    for (const char* d : docs) {
        auto doc = Json::parse(d);
        const std::string kind = doc["experiment"];
        const auto cfg = write_config("k" + std::to_string(i++) + ".json", doc);
        ASSERT_EQ(run("run " + cfg.string()), 0) << kind << ": " << err_;
        EXPECT_TRUE(fs::exists(dir_ / "out" / (kind + ".csv"))) << kind;
        const auto summary = Json::parse(slurp(dir_ / "out" / (kind + ".json")));
        EXPECT_EQ(summary["experiment"], kind);
    }
}

TEST_F(Cli, ShippedConfigsValidate)
{
    for (const auto& e : fs::directory_iterator(fs::path(CASCADELAB_SOURCE_DIR) / "configs"))
        EXPECT_EQ(run("validate " + e.path().string()), 0) << e.path() << ": " << err_;
}
