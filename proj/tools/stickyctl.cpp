// Command-line runner: simulate -> tree -> sticky -> approximate -> localize -> certify.

#include <iostream>

#include <CLI11.hpp>

#include "sticky/cli_io.hpp"

using namespace sticky;

namespace {

struct Common {
    std::string config;
    std::string fixture;
    std::string out = "out";
    std::int64_t seed = -1;
    int threads = 0;
    bool serial = false;
};

ExperimentConfig load(const Common& c) {
    if (!c.config.empty() && !c.fixture.empty()) throw InvalidArgument("give a config file or --fixture, not both");
    if (!c.fixture.empty()) return fixtures(c.fixture);
    if (c.config.empty()) throw InvalidArgument("missing config file (or --fixture NAME)");
    return ExperimentConfig::load(c.config);
}

int execute(const Common& c, std::vector<std::string> only) {
    const auto cfg = load(c);
    RunOptions o;
    o.out = c.out;
    if (cfg.doc.contains("output") && cfg.doc["output"].contains("dir") && c.out == "out")
        o.out = cfg.doc["output"]["dir"].get<std::string>();
    o.sim.threads = c.serial ? 1 : c.threads;
    o.sim.serial = c.serial;
    if (c.seed >= 0) o.seed = static_cast<std::uint64_t>(c.seed);
    o.only = std::move(only);
    const auto b = run(cfg, o);
    for (const auto& a : b.artifacts) std::cout << a.sha256 << "  " << (o.out / a.name).string() << "\n";
    for (const auto& v : b.violations) std::cerr << "violation: " << v << "\n";
    return b.violations.empty() ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stickyctl: martingale approximation experiments on scenario trees"};
    app.require_subcommand(1);
    Common c;
    app.add_option("--out", c.out, "Output directory")->capture_default_str();
    app.add_option("--seed", c.seed, "Override the model and tree seed");
    app.add_option("--threads", c.threads, "Simulation threads (0 = all cores)");
    app.add_flag("--serial", c.serial, "Single-threaded, bit-reproducible run");

    struct Verb {
        const char* name;
        const char* help;
        std::vector<std::string> only;
    };
    const std::vector<Verb> verbs = {
        {"simulate", "Simulate the model's path ensemble", {"simulate"}},
        {"tree", "Build the scenario tree", {"tree"}},
        {"sticky", "Check stickiness of the tree", {"sticky"}},
        {"approximate", "Construct Q and the martingale S~", {"approximate"}},
        {"localize", "Localized construction over hitting levels", {"localize"}},
        {"certify", "NA2 dual certificate", {"certify"}},
        {"run", "All stages named in the config", {}},
    };
    std::vector<std::string> chosen;
    for (const auto& v : verbs) {
        auto* sub = app.add_subcommand(v.name, v.help);
        sub->add_option("config", c.config, "Config file (.json or [section] key = value)");
        sub->add_option("--fixture", c.fixture, "Use a pinned fixture config instead of a file");
        sub->callback([&chosen, only = v.only] { chosen = only; });
    }

    std::string fixture_name;
    bool fixture_run = false;
    auto* fx = app.add_subcommand("fixtures", "List fixtures, print one, or run it with --run");
    fx->add_option("name", fixture_name, "Fixture name");
    fx->add_flag("--run", fixture_run, "Run the fixture");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (fx->parsed()) {
            if (fixture_name.empty()) {
                for (const auto& n : fixture_names()) std::cout << n << "\n";
                return 0;
            }
            if (!fixture_run) {
                std::cout << fixtures(fixture_name).doc.dump(2) << "\n";
                return 0;
            }
            c.fixture = fixture_name;
            return execute(c, {});
        }
        return execute(c, chosen);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
