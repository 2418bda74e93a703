#include <gtest/gtest.h>

#include <fstream>

#include "sticky/cli_io.hpp"
#include "sticky/measure_builder.hpp"

using namespace sticky;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("sticky_cli_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

json constant_config() {
    return {{"model", {{"process", "constant"}, {"params", {{"value", 2.0}}}, {"steps", 4}, {"n_paths", 50}}},
            {"tree", {{"branching", 3}}},
            {"approximation", {{"chi", 0.5}}}};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Sha256, KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, IniMatchesJson) {
    const std::string ini = R"(name = "demo"
# comment
[model]
process = levy
T = 1.0
steps = 4
n_paths = 100
seed = 3   # trailing comment

[model.params]
sigma = 0.5
jumps = [{"size": 0.3, "rate": 1.0}]

[tree]
branching = [3, 3, 2, 2]
absorb_one_sided = true

[approximation]
chi = 3
budget = min_cost
)";
    const auto a = ExperimentConfig::from_ini(ini);
    const json j = {{"name", "demo"},
                    {"model",
                     {{"process", "levy"},
                      {"T", 1.0},
                      {"steps", 4},
                      {"n_paths", 100},
                      {"seed", 3},
                      {"params", {{"sigma", 0.5}, {"jumps", json::array({{{"size", 0.3}, {"rate", 1.0}}})}}}}},
                    {"tree", {{"branching", {3, 3, 2, 2}}, {"absorb_one_sided", true}}},
                    {"approximation", {{"chi", 3}, {"budget", "min_cost"}}}};
    EXPECT_EQ(a.doc, ExperimentConfig::from_json(j).doc);
    EXPECT_EQ(a.stages(), (std::vector<std::string>{"simulate", "tree", "approximate"}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto bad = [](json j) { EXPECT_THROW(ExperimentConfig::from_json(j), InvalidArgument) << j.dump(); };
    json j = constant_config();
    j["model"]["colour"] = "red";
    bad(j);
    j = constant_config();
    j["extra"] = json::object();
    bad(j);
    j = constant_config();
    j["model"]["params"]["hurst"] = 0.5;
    bad(j);
    j = constant_config();
    j["approximation"]["budget"] = "cheap";
    bad(j);
    j = constant_config();
    j["tree"]["branching"] = {3, 3};
    bad(j);
    j = constant_config();
    j["model"]["steps"] = 0;
    bad(j);
    j = constant_config();
    j["stages"] = {"tree", "dance"};
    bad(j);
    j = constant_config();
    j["na2"] = {{"alpha", 2.0}, {"beta", 2.5}};
    bad(j);
    j = constant_config();
    j.erase("model");
    bad(j);
    EXPECT_THROW(ExperimentConfig::from_ini("[model]\nprocess = fbm\nprocess = fbm\n"), InvalidArgument);
    EXPECT_THROW(ExperimentConfig::from_ini("stray = 1\n"), InvalidArgument);
    EXPECT_THROW(ExperimentConfig::from_ini("[model\n"), InvalidArgument);
}

TEST(Fixtures, AllNamesLoad) {
    for (const auto& n : fixture_names()) EXPECT_NO_THROW(fixtures(n)) << n;
    EXPECT_THROW(fixtures("nope"), InvalidArgument);
    EXPECT_EQ(fixtures("alma").doc["approximation"]["chi"], 0.25);
    EXPECT_EQ(fixtures("skew").doc["model"]["params"]["beta"], 0.5);
    EXPECT_EQ(fixtures("brownian").doc["model"]["params"]["hurst"], 0.5);
}

TEST(Run, ConstantProcessKeepsP) {
    const auto out = scratch("constant");
    const auto b = run(ExperimentConfig::from_json(constant_config()), {out});
    const auto& a = b.reports["approximation"];
    EXPECT_EQ(a["method"], "identity");
    EXPECT_EQ(a["achieved"], 0.0);
    EXPECT_TRUE(b.violations.empty());
    EXPECT_TRUE(std::filesystem::exists(out / "measure.csv"));
    for (const auto& art : b.artifacts) EXPECT_EQ(sha256_hex(slurp(out / art.name)), art.sha256);
}

TEST(Run, AlmaSeparates) {
    const auto b = run(fixtures("alma"), {scratch("alma")});
    const auto& c = b.reports["counterexample"];
    EXPECT_TRUE(c["separated"].get<bool>());
    EXPECT_GE(c["p_martingale_min"].get<double>(), 0.24);
    EXPECT_LT(c["q_achieved"].get<double>(), 0.25);
}

TEST(Run, RerunIsByteIdentical) {
    json cfg = fixtures("levy").doc;
    cfg["model"]["n_paths"] = 500;
    const auto c = ExperimentConfig::from_json(cfg);
    RunOptions o1{scratch("det1")}, o2{scratch("det2")};
    o2.sim.threads = 3;
    const auto a = run(c, o1);
    const auto b = run(c, o2);
    EXPECT_EQ(slurp(o1.out / "manifest.json"), slurp(o2.out / "manifest.json"));
    ASSERT_EQ(a.artifacts.size(), b.artifacts.size());
    for (std::size_t i = 0; i < a.artifacts.size(); ++i) EXPECT_EQ(a.artifacts[i].sha256, b.artifacts[i].sha256);
}

TEST(Run, SeedOverrideChangesPaths) {
    json cfg = fixtures("levy").doc;
    cfg["model"]["n_paths"] = 200;
    cfg.erase("approximation");
    const auto c = ExperimentConfig::from_json(cfg);
    RunOptions o1{scratch("seed1")}, o2{scratch("seed2")};
    o2.seed = 99;
    EXPECT_NE(run(c, o1).artifacts[0].sha256, run(c, o2).artifacts[0].sha256);
}

TEST(Run, OnlyRunsRequestedStagesAndDependencies) {
    RunOptions o{scratch("only")};
    o.only = {"tree"};
    json cfg = fixtures("levy").doc;
    cfg["model"]["n_paths"] = 200;
    const auto b = run(ExperimentConfig::from_json(cfg), o);
    EXPECT_TRUE(b.reports.contains("simulate"));
    EXPECT_TRUE(b.reports.contains("tree"));
    EXPECT_FALSE(b.reports.contains("approximation"));
    o.only = {"localize"};
    EXPECT_THROW(run(ExperimentConfig::from_json(cfg), o), InvalidArgument);
}

TEST(Run, StageErrorsCarryStageAndExitCode) {
    json cfg = constant_config();
    cfg["model"] = {{"process", "uniform_terminal"}, {"params", {{"atoms", 101}}}};
    cfg["approximation"] = {{"chi", 0.25}, {"allow_noise", false}};
    cfg.erase("tree");
    try {
        run(ExperimentConfig::from_json(cfg), {scratch("err")});
        FAIL() << "expected a geometry error";
    } catch (const ConstructionError& e) {
        EXPECT_NE(std::string(e.what()).find("stage 'approximate'"), std::string::npos) << e.what();
        EXPECT_EQ(exit_code_for(e), 3);
    }
    EXPECT_EQ(exit_code_for(InvalidArgument("x")), 2);
    EXPECT_EQ(exit_code_for(BoundViolation("x")), 4);
    EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}
