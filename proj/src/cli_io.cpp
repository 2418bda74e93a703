#include "sticky/cli_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "sticky/fixtures.hpp"
#include "sticky/measure_builder.hpp"
#include "sticky/na2_certify.hpp"
#include "sticky/stickiness.hpp"

namespace sticky {

using nlohmann::json;

namespace {

const std::vector<std::string> kStages = {"simulate",       "tree",     "sticky", "approximate",
                                          "counterexample", "localize", "certify"};

const std::map<std::string, std::set<std::string>> kSectionKeys = {
    {"model", {"process", "params", "T", "steps", "n_paths", "seed"}},
    {"tree", {"branching", "absorb_one_sided", "min_paths", "seed", "lloyd_iterations", "noise"}},
    {"sticky", {"kappa", "coordinate", "smallball_t_index", "smallball_kappa"}},
    {"approximation",
     {"g_p", "chi", "eps_grid", "f_min", "p_floor", "budget", "allow_noise", "min_cost_fallback", "rungs", "ratio"}},
    {"counterexample", {"step"}},
    {"localization", {"levels", "eps", "chi", "g_p", "validate_martingale", "budget"}},
    {"na2", {"H", "alpha", "beta", "chi", "eps_grid", "budget"}},
    {"output", {"dir"}},
};

const std::map<std::string, std::set<std::string>> kParamKeys = {
    {"constant", {"value"}},
    {"fbm", {"hurst"}},
    {"sde", {"drift", "vol", "x0"}},
    {"levy", {"drift", "sigma", "jumps"}},
    {"skew", {"beta", "scheme"}},
    {"inverse_bessel", {"time_change", "rate", "table_paths", "table_steps", "horizon"}},
    {"uniform_terminal", {"atoms"}},
    {"binomial", {"step"}},
};

bool tree_level_process(const std::string& p) { return p == "uniform_terminal" || p == "binomial"; }

[[noreturn]] void config_error(const std::string& what) { throw InvalidArgument("config: " + what); }

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) config_error(where + " must be an object");
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k)) config_error("unknown key '" + k + "' in " + where);
}

double num(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) config_error("'" + key + "' must be a number");
    return obj[key].get<double>();
}

long integer(const json& obj, const std::string& key, long fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number_integer()) config_error("'" + key + "' must be an integer");
    return obj[key].get<long>();
}

bool flag(const json& obj, const std::string& key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_boolean()) config_error("'" + key + "' must be true or false");
    return obj[key].get<bool>();
}

std::string text(const json& obj, const std::string& key, const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_string()) config_error("'" + key + "' must be a string");
    return obj[key].get<std::string>();
}

Vec numbers(const json& obj, const std::string& key) {
    if (!obj.contains(key)) return {};
    const auto& a = obj[key];
    if (!a.is_array()) config_error("'" + key + "' must be an array of numbers");
    Vec out;
    for (const auto& x : a) {
        if (!x.is_number()) config_error("'" + key + "' must be an array of numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

double positive(const json& obj, const std::string& key, double fallback) {
    const double v = num(obj, key, fallback);
    if (!(v > 0.0)) config_error("'" + key + "' must be positive");
    return v;
}

void validate_model(const json& m) {
    check_keys(m, kSectionKeys.at("model"), "[model]");
    const std::string p = text(m, "process", "");
    if (p.empty()) config_error("[model] needs a process");
    const auto it = kParamKeys.find(p);
    if (it == kParamKeys.end()) config_error("unknown process '" + p + "'");
    const json params = m.value("params", json::object());
    check_keys(params, it->second, "[model.params]");
    positive(m, "T", 1.0);
    if (integer(m, "steps", 1) < 1) config_error("'steps' must be >= 1");
    if (integer(m, "n_paths", 1) < 1) config_error("'n_paths' must be >= 1");
    if (integer(m, "seed", 0) < 0) config_error("'seed' must be nonnegative");
    if (p == "fbm") {
        const double h = num(params, "hurst", 0.5);
        if (!(h > 0.0 && h < 1.0)) config_error("hurst must lie in (0, 1)");
    } else if (p == "skew") {
        const double b = num(params, "beta", 0.0);
        if (!(std::abs(b) < 1.0)) config_error("skew beta must satisfy |beta| < 1");
        const auto s = text(params, "scheme", "exact");
        if (s != "exact" && s != "euler") config_error("skew scheme must be exact or euler");
    } else if (p == "levy") {
        num(params, "drift", 0.0);
        if (num(params, "sigma", 0.0) < 0.0) config_error("levy sigma must be nonnegative");
        if (params.contains("jumps")) {
            if (!params["jumps"].is_array()) config_error("levy jumps must be an array");
            for (const auto& j : params["jumps"]) {
                check_keys(j, {"size", "rate"}, "levy jump");
                num(j, "size", 0.0);
                positive(j, "rate", 1.0);
            }
        }
    } else if (p == "sde") {
        text(params, "drift", "zero");
        text(params, "vol", "identity");
        if (params.contains("x0") && numbers(params, "x0").empty()) config_error("sde x0 must be nonempty");
    } else if (p == "inverse_bessel") {
        text(params, "time_change", "bessel_r");
        num(params, "rate", 0.0);
        if (integer(params, "table_paths", 100000) < 1) config_error("table_paths must be >= 1");
        if (integer(params, "table_steps", 400) < 1) config_error("table_steps must be >= 1");
        positive(params, "horizon", 10.0);
    } else if (p == "uniform_terminal") {
        if (integer(params, "atoms", 101) < 2) config_error("atoms must be >= 2");
    } else if (p == "binomial") {
        positive(params, "step", 0.1);
        if (integer(m, "steps", 1) > 20) config_error("binomial trees take at most 20 steps");
    } else if (p == "constant") {
        num(params, "value", 0.0);
    }
}

void validate_budget(const json& s) {
    if (s.contains("budget")) budget_rule_from_string(text(s, "budget", ""));
}

}  // namespace

void validate_config(const json& doc) {
    if (!doc.is_object()) config_error("top level must be an object");
    for (const auto& [k, v] : doc.items())
        if (k != "name" && k != "stages" && !kSectionKeys.count(k)) config_error("unknown section '" + k + "'");
    if (!doc.contains("model")) config_error("missing [model] section");
    if (doc.contains("name") && !doc["name"].is_string()) config_error("'name' must be a string");
    if (doc.contains("stages")) {
        if (!doc["stages"].is_array()) config_error("'stages' must be an array");
        for (const auto& s : doc["stages"])
            if (!s.is_string() || std::find(kStages.begin(), kStages.end(), s.get<std::string>()) == kStages.end())
                config_error("unknown stage " + s.dump());
    }
    validate_model(doc["model"]);

    if (doc.contains("tree")) {
        const auto& t = doc["tree"];
        check_keys(t, kSectionKeys.at("tree"), "[tree]");
        if (t.contains("branching")) {
            const auto& b = t["branching"];
            if (b.is_number_integer()) {
                if (b.get<long>() < 1) config_error("branching must be >= 1");
            } else {
                const Vec v = numbers(t, "branching");
                const long steps = integer(doc["model"], "steps", 1);
                if (static_cast<long>(v.size()) != steps) config_error("branching needs one entry per step");
                for (double x : v)
                    if (!(x >= 1.0) || x != std::floor(x)) config_error("branching entries must be integers >= 1");
            }
        }
        flag(t, "absorb_one_sided", false);
        if (integer(t, "min_paths", 1) < 1) config_error("min_paths must be >= 1");
        if (integer(t, "seed", 0) < 0) config_error("tree seed must be nonnegative");
        if (integer(t, "lloyd_iterations", 50) < 1) config_error("lloyd_iterations must be >= 1");
        if (t.contains("noise")) {
            check_keys(t["noise"], {"amplitude", "atoms", "scale"}, "[tree.noise]");
            NoiseSpec n{positive(t["noise"], "amplitude", 0.1), static_cast<int>(integer(t["noise"], "atoms", 3)),
                        positive(t["noise"], "scale", 1.0)};
            n.validate();
        }
    }
    if (doc.contains("sticky")) {
        const auto& s = doc["sticky"];
        check_keys(s, kSectionKeys.at("sticky"), "[sticky]");
        positive(s, "kappa", 1.0);
        const auto c = text(s, "coordinate", "S");
        if (c != "S" && c != "Y") config_error("coordinate must be S or Y");
        if (s.contains("smallball_kappa")) positive(s, "smallball_kappa", 1.0);
        if (integer(s, "smallball_t_index", 0) < 0) config_error("smallball_t_index must be nonnegative");
    }
    if (doc.contains("approximation")) {
        const auto& a = doc["approximation"];
        check_keys(a, kSectionKeys.at("approximation"), "[approximation]");
        if (num(a, "g_p", 1.0) < 1.0) config_error("g_p must be >= 1");
        positive(a, "chi", 1.0);
        for (double e : numbers(a, "eps_grid"))
            if (!(e > 0.0)) config_error("eps_grid entries must be positive");
        positive(a, "f_min", 1e-8);
        positive(a, "p_floor", 1e-6);
        validate_budget(a);
        flag(a, "allow_noise", true);
        flag(a, "min_cost_fallback", true);
        if (integer(a, "rungs", 12) < 1) config_error("rungs must be >= 1");
        const double r = num(a, "ratio", 0.5);
        if (!(r > 0.0 && r < 1.0)) config_error("ratio must lie in (0, 1)");
    }
    if (doc.contains("counterexample")) {
        check_keys(doc["counterexample"], kSectionKeys.at("counterexample"), "[counterexample]");
        positive(doc["counterexample"], "step", 0.005);
    }
    if (doc.contains("localization")) {
        const auto& l = doc["localization"];
        check_keys(l, kSectionKeys.at("localization"), "[localization]");
        if (numbers(l, "levels").empty()) config_error("[localization] needs levels");
        positive(l, "eps", 0.1);
        positive(l, "chi", 0.1);
        if (num(l, "g_p", 1.0) < 1.0) config_error("g_p must be >= 1");
        flag(l, "validate_martingale", true);
        validate_budget(l);
    }
    if (doc.contains("na2")) {
        const auto& n = doc["na2"];
        check_keys(n, kSectionKeys.at("na2"), "[na2]");
        CostSpec c{num(n, "H", 1.0), num(n, "alpha", 2.0)};
        c.validate();
        na2_exponents(c, num(n, "beta", 1.5));
        positive(n, "chi", 1.0);
        for (double e : numbers(n, "eps_grid"))
            if (!(e > 0.0)) config_error("na2 eps_grid entries must be positive");
        validate_budget(n);
    }
    if (doc.contains("output")) {
        check_keys(doc["output"], kSectionKeys.at("output"), "[output]");
        text(doc["output"], "dir", "");
    }
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    validate_config(j);
    return {j};
}

ExperimentConfig ExperimentConfig::from_ini(const std::string& body) {
    json doc = json::object();
    json* section = nullptr;
    std::istringstream in(body);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = "line " + std::to_string(lineno);
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') config_error(where + ": unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) config_error(where + ": empty section name");
            section = &doc;
            std::size_t start = 0;
            while (true) {
                const auto dot = name.find('.', start);
                const std::string part = name.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
                if (part.empty()) config_error(where + ": bad section name '" + name + "'");
                json& next = (*section)[part];
                if (next.is_null()) next = json::object();
                if (!next.is_object()) config_error(where + ": '" + part + "' is not a section");
                section = &next;
                if (dot == std::string::npos) break;
                start = dot + 1;
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) config_error(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = line.substr(eq + 1);
        if (const auto hash = value.find(" #"); hash != std::string::npos) value.erase(hash);
        value = trim(value);
        if (key.empty()) config_error(where + ": empty key");
        json* target = section;
        if (!target) {
            if (key != "name" && key != "stages") config_error(where + ": key outside a section");
            target = &doc;
        }
        if (target->contains(key)) config_error(where + ": duplicate key '" + key + "'");
        json v = json::parse(value, nullptr, false);
        (*target)[key] = v.is_discarded() ? json(value) : v;
    }
    return from_json(doc);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidArgument("config: cannot read " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (file.extension() == ".json") {
        const json j = json::parse(ss.str(), nullptr, false);
        if (j.is_discarded()) throw InvalidArgument("config: " + file.string() + " is not valid JSON");
        return from_json(j);
    }
    return from_ini(ss.str());
}

std::vector<std::string> ExperimentConfig::stages() const {
    if (doc.contains("stages")) return doc["stages"].get<std::vector<std::string>>();
    std::vector<std::string> out;
    if (!tree_level_process(doc["model"]["process"].get<std::string>())) out.push_back("simulate");
    out.push_back("tree");
    if (has("sticky")) out.push_back("sticky");
    if (has("approximation")) out.push_back("approximate");
    if (has("counterexample")) out.push_back("counterexample");
    if (has("localization")) out.push_back("localize");
    if (has("na2")) out.push_back("certify");
    return out;
}

std::vector<std::string> fixture_names() { return {"alma", "brownian", "skew", "levy", "fbm", "inverse_bessel"}; }

ExperimentConfig fixtures(const std::string& name) {
    json d;
    if (name == "alma") {
        d = {{"name", "alma"},
             {"model", {{"process", "uniform_terminal"}, {"params", {{"atoms", 101}}}, {"T", 1.0}, {"steps", 1}}},
             {"approximation", {{"g_p", 1.0}, {"chi", 0.25}}},
             {"counterexample", {{"step", 0.005}}}};
    } else if (name == "brownian") {
        d = {{"name", "brownian"},
             {"model",
              {{"process", "fbm"}, {"params", {{"hurst", 0.5}}}, {"T", 1.0}, {"steps", 32}, {"n_paths", 10000},
               {"seed", 7}}},
             {"tree", {{"branching", 3}, {"absorb_one_sided", true}, {"seed", 7}}},
             {"sticky", {{"kappa", 0.5}, {"smallball_t_index", 0}, {"smallball_kappa", 1.0}}},
             {"approximation", {{"g_p", 1.0}, {"chi", 3.0}, {"eps_grid", {0.5, 0.25, 0.125}}}},
             {"na2", {{"H", 1.0}, {"alpha", 2.0}, {"beta", 1.5}, {"chi", 0.3}, {"eps_grid", {0.5, 0.25, 0.125}}}}};
    } else if (name == "skew") {
        d = {{"name", "skew"},
             {"model",
              {{"process", "skew"}, {"params", {{"beta", 0.5}}}, {"T", 1.0}, {"steps", 8}, {"n_paths", 5000},
               {"seed", 3}}},
             {"tree", {{"branching", 3}, {"absorb_one_sided", true}, {"seed", 3}}},
             {"sticky", {{"kappa", 1.0}}},
             {"approximation", {{"g_p", 1.0}, {"chi", 3.0}}}};
    } else if (name == "levy") {
        d = {{"name", "levy"},
             {"model",
              {{"process", "levy"},
               {"params",
                {{"drift", 0.0},
                 {"sigma", 0.5},
                 {"jumps", json::array({{{"size", 0.3}, {"rate", 1.0}}, {{"size", -0.3}, {"rate", 1.0}}})}}},
               {"T", 1.0},
               {"steps", 8},
               {"n_paths", 5000},
               {"seed", 5}}},
             {"tree", {{"branching", 3}, {"absorb_one_sided", true}, {"seed", 5}}},
             {"sticky", {{"kappa", 1.0}}},
             {"approximation", {{"g_p", 1.0}, {"chi", 3.0}}}};
    } else if (name == "fbm") {
        d = {{"name", "fbm"},
             {"model",
              {{"process", "fbm"}, {"params", {{"hurst", 0.3}}}, {"T", 1.0}, {"steps", 8}, {"n_paths", 5000},
               {"seed", 9}}},
             {"tree", {{"branching", 3}, {"absorb_one_sided", true}, {"seed", 9}}},
             {"sticky", {{"kappa", 1.0}}},
             {"approximation", {{"g_p", 1.0}, {"chi", 4.0}, {"eps_grid", {1.0, 0.5, 0.25}}}}};
    } else if (name == "inverse_bessel") {
        d = {{"name", "inverse_bessel"},
             {"model",
              {{"process", "inverse_bessel"},
               {"params", {{"time_change", "bessel_r"}, {"table_paths", 20000}}},
               {"T", 1.0},
               {"steps", 6},
               {"n_paths", 3000},
               {"seed", 11}}},
             {"tree", {{"branching", 3}, {"absorb_one_sided", true}, {"seed", 11}}},
             {"localization",
              {{"levels", {1.5, 2.0, 3.0}}, {"eps", 0.25}, {"chi", 0.5}, {"validate_martingale", false}}}};
    } else {
        throw InvalidArgument("unknown fixture '" + name + "'");
    }
    return ExperimentConfig::from_json(d);
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

int exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const InvalidArgument*>(&e) || dynamic_cast<const json::exception*>(&e)) return 2;
    if (dynamic_cast<const ConstructionError*>(&e)) return 3;
    if (dynamic_cast<const BoundViolation*>(&e)) return 4;
    return 1;
}

namespace {

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json vec_json(const Vec& v) { return json(v); }

json checks_json(const MeasureChecks& c) {
    return {{"q_sum_error", c.q_sum_error},       {"min_q", c.min_q},
            {"normalization_error", c.normalization_error}, {"martingale_error", c.martingale_error},
            {"root_pin_error", c.root_pin_error}, {"leaf_pin_error", c.leaf_pin_error},
            {"ok", c.ok()}};
}

json optional_json(const std::optional<double>& x) { return x ? json(*x) : json(nullptr); }

json report_json(const ApproximationReport& r) {
    std::map<std::string, int> methods;
    for (const auto& a : r.audit) ++methods[a.weights.method];
    return {{"eps", r.eps},
            {"chi", r.chi},
            {"g_p", r.g.p},
            {"noise_used", r.noise_used},
            {"method", r.method},
            {"achieved", r.achieved},
            {"bound", r.bound},
            {"bound_ok", r.bound_ok()},
            {"achieved_y", optional_json(r.achieved_y)},
            {"bound_y", optional_json(r.bound_y)},
            {"budget_sum", r.budget_sum},
            {"budget_ok", r.budget_ok},
            {"max_sup", optional_json(r.max_sup)},
            {"pathwise_bound", optional_json(r.pathwise_bound)},
            {"tv", optional_json(r.tv)},
            {"stages", r.stages},
            {"tilted_nodes", r.audit.size()},
            {"tilt_methods", methods},
            {"checks", checks_json(r.checks)}};
}

json attempts_json(const std::vector<Attempt>& attempts) {
    json out = json::array();
    for (const auto& at : attempts)
        out.push_back(
            {{"eps", at.eps}, {"noise", at.noise}, {"outcome", at.outcome}, {"achieved", optional_json(at.achieved)}});
    return out;
}

json levels_json(const std::vector<LevelOutcome>& levels) {
    json out = json::array();
    for (const auto& l : levels)
        out.push_back({{"level", l.level},
                       {"hit_probability", l.hit_probability},
                       {"tv", optional_json(l.tv)},
                       {"achieved", optional_json(l.achieved)},
                       {"bound", optional_json(l.bound)},
                       {"outcome", l.outcome}});
    return out;
}

json tree_json(const ScenarioTree& t, const TreeBuild* build) {
    json nodes = json::array();
    for (std::size_t v = 0; v < t.size(); ++v) {
        const auto& n = t.nodes[v];
        json j = {{"id", v}, {"k", n.k}, {"s", vec_json(n.s)}, {"parent", n.parent}, {"probs", vec_json(n.probs)}};
        if (!n.w.empty()) j["w"] = vec_json(n.w);
        nodes.push_back(std::move(j));
    }
    const auto val = validate_tree(t);
    json out = {{"T", t.grid.horizon},
                {"steps", t.grid.steps},
                {"dim", t.dim},
                {"node_count", t.size()},
                {"leaf_count", t.leaves().size()},
                {"valid", val.ok()},
                {"violations", val.violations},
                {"nodes", std::move(nodes)}};
    if (build) {
        out["clusters_reduced"] = build->clusters_reduced;
        out["reduced_nodes"] = build->reduced_nodes;
        out["absorbed_nodes"] = build->absorbed_nodes;
    }
    return out;
}

MeasureOptions measure_options(const json& s) {
    MeasureOptions m;
    m.f_min = num(s, "f_min", m.f_min);
    m.p_floor = num(s, "p_floor", m.p_floor);
    if (s.contains("budget")) m.budget = budget_rule_from_string(s["budget"].get<std::string>());
    return m;
}

class Runner {
public:
    Runner(const ExperimentConfig& c, const RunOptions& o) : doc_(c.doc), opt_(o) {
        if (opt_.seed) {
            doc_["model"]["seed"] = *opt_.seed;
            if (doc_.contains("tree")) doc_["tree"]["seed"] = *opt_.seed;
        }
        std::filesystem::create_directories(opt_.out);
    }

    ExperimentBundle go(const std::vector<std::string>& stages) {
        for (const auto& s : stages) {
            try {
                stage(s);
            } catch (const GeometryViolation& e) {
                throw GeometryViolation(e.node(), "stage '" + s + "' at node " + std::to_string(e.node()) + ": " +
                                                      e.what());
            } catch (const InfeasibleTilt& e) {
                throw InfeasibleTilt(e.node(), e.smallest_feasible_eta(),
                                     "stage '" + s + "' at node " + std::to_string(e.node()) + ": " + e.what());
            } catch (const InvalidArgument& e) {
                throw InvalidArgument("stage '" + s + "': " + e.what());
            } catch (const ConstructionError& e) {
                throw ConstructionError("stage '" + s + "': " + e.what());
            }
        }
        json files = json::array();
        for (const auto& a : b_.artifacts) files.push_back({{"name", a.name}, {"sha256", a.sha256}, {"bytes", a.bytes}});
        b_.manifest = {{"name", doc_.value("name", "")},
                       {"config", doc_},
                       {"stages", stages},
                       {"artifacts", files},
                       {"violations", b_.violations}};
        write_file("manifest.json", b_.manifest.dump(2) + "\n", false);
        return std::move(b_);
    }

private:
    void write_file(const std::string& name, const std::string& body, bool record = true) {
        std::ofstream out(opt_.out / name, std::ios::binary);
        if (!out) throw Error("cannot write " + (opt_.out / name).string());
        out << body;
        if (record) b_.artifacts.push_back({name, sha256_hex(body), body.size()});
    }

    void write_json(const std::string& name, const json& j) {
        b_.reports[name.substr(0, name.find('.'))] = j;
        write_file(name, j.dump(2) + "\n");
    }

    const ScenarioTree& base_tree() const {
        if (!tree_) throw InvalidArgument("no tree; add the 'tree' stage");
        return *tree_;
    }

    void stage(const std::string& s) {
        if (s == "simulate") simulate();
        else if (s == "tree") build();
        else if (s == "sticky") sticky();
        else if (s == "approximate") approximate_stage();
        else if (s == "counterexample") counterexample();
        else if (s == "localize") localize();
        else if (s == "certify") certify_stage();
    }

    void simulate() {
        const auto& m = doc_["model"];
        const std::string p = m["process"];
        if (tree_level_process(p)) throw InvalidArgument("process '" + p + "' has no path simulator");
        const json params = m.value("params", json::object());
        const TimeGrid g(num(m, "T", 1.0), static_cast<int>(integer(m, "steps", 1)));
        const int n = static_cast<int>(integer(m, "n_paths", 1));
        const auto seed = static_cast<std::uint64_t>(integer(m, "seed", 0));
        if (p == "constant") {
            PathEnsemble e(g, 1, n);
            std::fill(e.data.begin(), e.data.end(), num(params, "value", 0.0));
            e.model = "constant";
            ens_ = std::move(e);
        } else if (p == "fbm") {
            ens_ = simulate_fbm(num(params, "hurst", 0.5), g, n, seed, opt_.sim);
        } else if (p == "sde") {
            Vec x0 = numbers(params, "x0");
            if (x0.empty()) x0 = {0.0};
            ens_ = simulate_sde(text(params, "drift", "zero"), text(params, "vol", "identity"), x0, g, n, seed,
                                opt_.sim);
        } else if (p == "levy") {
            levy_ = LevyParams{num(params, "drift", 0.0), num(params, "sigma", 0.0), {}};
            for (const auto& j : params.value("jumps", json::array()))
                levy_->jumps.push_back({j["size"].get<double>(), j["rate"].get<double>()});
            ens_ = simulate_levy(*levy_, g, n, seed, opt_.sim);
        } else if (p == "skew") {
            ens_ = simulate_skew_bm(num(params, "beta", 0.0), g, n, seed, opt_.sim,
                                    text(params, "scheme", "exact") == "euler" ? SkewScheme::Euler : SkewScheme::Exact);
        } else if (p == "inverse_bessel") {
            BesselOptions bo;
            bo.table_paths = static_cast<int>(integer(params, "table_paths", bo.table_paths));
            bo.table_steps = static_cast<int>(integer(params, "table_steps", bo.table_steps));
            bo.horizon = num(params, "horizon", bo.horizon);
            ens_ = simulate_strict_local_martingale({text(params, "time_change", "bessel_r"), num(params, "rate", 0.0)},
                                                    g, n, seed, bo, opt_.sim);
        }
        json marg = json::array();
        for (int i = 0; i <= g.steps; ++i) {
            const Vec x = ens_->marginal(i, 0);
            double mean = 0.0, sq = 0.0;
            for (double v : x) mean += v / x.size();
            for (double v : x) sq += (v - mean) * (v - mean) / x.size();
            const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
            marg.push_back({{"t", g.time(i)}, {"mean", mean}, {"sd", std::sqrt(sq)}, {"min", *lo}, {"max", *hi}});
        }
        write_json("simulate.json", {{"model", ens_->model},
                                     {"params", ens_->params},
                                     {"T", g.horizon},
                                     {"steps", g.steps},
                                     {"dim", ens_->dim},
                                     {"n_paths", ens_->n_paths},
                                     {"seed", seed},
                                     {"finite", ens_->all_finite()},
                                     {"marginals", marg}});
    }

    void build() {
        const auto& m = doc_["model"];
        const std::string p = m["process"];
        const json params = m.value("params", json::object());
        if (p == "uniform_terminal") {
            tree_ = uniform_terminal_tree(static_cast<int>(integer(params, "atoms", 101)), num(m, "T", 1.0));
            write_json("tree.json", tree_json(*tree_, nullptr));
            return;
        }
        if (p == "binomial") {
            tree_ = binomial_tree(static_cast<int>(integer(m, "steps", 1)), num(params, "step", 0.1), num(m, "T", 1.0));
            write_json("tree.json", tree_json(*tree_, nullptr));
            return;
        }
        if (!ens_) simulate();
        const json t = doc_.value("tree", json::object());
        std::vector<int> branching;
        if (t.contains("branching") && t["branching"].is_array()) {
            for (double b : numbers(t, "branching")) branching.push_back(static_cast<int>(b));
        } else {
            branching.assign(ens_->grid.steps, static_cast<int>(integer(t, "branching", 3)));
        }
        TreeBuildOptions o;
        o.seed = static_cast<std::uint64_t>(integer(t, "seed", 0));
        o.lloyd_iterations = static_cast<int>(integer(t, "lloyd_iterations", o.lloyd_iterations));
        o.absorb_one_sided = flag(t, "absorb_one_sided", false);
        o.min_paths = static_cast<int>(integer(t, "min_paths", 1));
        auto b = build_tree(*ens_, branching, o);
        if (t.contains("noise")) {
            const auto& n = t["noise"];
            b.tree = product_tree(b.tree, {num(n, "amplitude", 0.1), static_cast<int>(integer(n, "atoms", 3)),
                                           num(n, "scale", 1.0)});
        }
        tree_ = b.tree;
        write_json("tree.json", tree_json(*tree_, &b));
    }

    void sticky() {
        const auto& s = doc_["sticky"];
        const double kappa = num(s, "kappa", 1.0);
        const Coordinate c = text(s, "coordinate", "S") == "Y" ? Coordinate::Y : Coordinate::S;
        const auto r = check_sticky_tree(base_tree(), kappa, c);
        std::vector<NodeId> shown(r.failures.begin(), r.failures.begin() + std::min<std::size_t>(r.failures.size(), 50));
        json out = {{"kappa", kappa},
                    {"coordinate", c == Coordinate::S ? "S" : "Y"},
                    {"sticky", r.sticky},
                    {"failure_count", r.failures.size()},
                    {"failures", shown}};
        if (levy_) {
            double small = 0.0;
            bool left = false, right = false;
            for (const auto& j : levy_->jumps)
                if (std::abs(j.size) <= 1.0) small += std::abs(j.size) * j.rate;
            const auto v = classify_levy_stickiness(*levy_, small, left, right);
            out["levy"] = {{"verdict", to_string(v.verdict)}, {"reason", v.reason}};
        }
        if (ens_ && s.contains("smallball_kappa")) {
            const int ti = static_cast<int>(integer(s, "smallball_t_index", 0));
            const double k = num(s, "smallball_kappa", 1.0);
            const auto sb = estimate_smallball(*ens_, ti, k, single_bin(*ens_, ti));
            json bins = json::array();
            for (const auto& bin : sb.bins)
                bins.push_back({{"lo", bin.lo},
                                {"hi", bin.hi},
                                {"count", bin.count},
                                {"hits", bin.hits},
                                {"estimate", optional_json(bin.estimate)},
                                {"se", bin.se}});
            out["smallball"] = {{"t_index", ti}, {"kappa", k}, {"markov", sb.markov}, {"bins", bins}};
        }
        write_json("sticky.json", out);
    }

    void approximate_stage() {
        const auto& a = doc_["approximation"];
        ApproxOptions o;
        o.measure = measure_options(a);
        o.eps_grid = numbers(a, "eps_grid");
        o.rungs = static_cast<int>(integer(a, "rungs", o.rungs));
        o.ratio = num(a, "ratio", o.ratio);
        o.allow_noise = flag(a, "allow_noise", true);
        o.min_cost_fallback = flag(a, "min_cost_fallback", true);
        const GSpec g{num(a, "g_p", 1.0)};
        try {
            approx_ = sticky::approximate(base_tree(), g, num(a, "chi", 1.0), o);
        } catch (const ExhaustedGrid& e) {
            write_json("approximation.json", {{"exhausted", true}, {"attempts", attempts_json(e.attempts)}});
            throw;
        }
        const auto& r = approx_->report;
        json out = report_json(r);
        out["exhausted"] = false;
        out["budget_rule"] = to_string(approx_->measure.budget);
        out["attempts"] = attempts_json(approx_->attempts);
        write_json("approximation.json", out);
        write_measure_csv();
        if (!r.checks.ok()) b_.violations.push_back("approximate: measure or martingale checks failed");
        if (!r.bound_ok()) b_.violations.push_back("approximate: achieved deviation exceeds the bound");
    }

    void write_measure_csv() {
        const auto& t = approx_->tree_used(base_tree());
        const auto& m = approx_->measure;
        const auto& o = approx_->overlay;
        std::string body = "node,k,t";
        for (int j = 0; j < t.dim; ++j) body += ",s_" + std::to_string(j);
        body += ",p,q,z";
        for (int j = 0; j < t.dim; ++j) body += ",s_tilde_" + std::to_string(j);
        body += "\n";
        for (std::size_t v = 0; v < t.size(); ++v) {
            const auto& n = t.nodes[v];
            body += std::to_string(v) + "," + std::to_string(n.k) + "," + fmt(t.grid.time(n.k));
            for (double x : n.s) body += "," + fmt(x);
            body += "," + fmt(m.p[v]) + "," + fmt(m.q[v]) + "," + fmt(m.z[v]);
            for (double x : o.values[v]) body += "," + fmt(x);
            body += "\n";
        }
        write_file("measure.csv", body);
    }

    void counterexample() {
        const double step = num(doc_.value("counterexample", json::object()), "step", 0.005);
        const auto c = clamp_search(base_tree(), step);
        json out = {{"step", step},
                    {"clamp_lower", c.lower},
                    {"clamp_upper", c.upper},
                    {"p_martingale_min", c.value},
                    {"candidates", c.candidates}};
        if (approx_) {
            const double chi = approx_->report.chi;
            out["chi"] = chi;
            out["q_achieved"] = approx_->report.achieved;
            out["separated"] = c.value >= chi - 0.01 && approx_->report.achieved < chi;
        }
        write_json("counterexample.json", out);
    }

    void localize() {
        const auto& l = doc_["localization"];
        LocalizeOptions o;
        o.measure = measure_options(l);
        o.validate_martingale = flag(l, "validate_martingale", true);
        const GSpec g{num(l, "g_p", 1.0)};
        try {
            const auto r = localize_and_build(base_tree(), g, num(l, "chi", 0.1), num(l, "eps", 0.1),
                                              numbers(l, "levels"), o);
            write_json("localization.json",
                       {{"admissible", true}, {"level_index", r.level_index}, {"levels", levels_json(r.levels)},
                        {"report", report_json(r.report)}});
        } catch (const NoAdmissibleLevel& e) {
            write_json("localization.json", {{"admissible", false}, {"levels", levels_json(e.levels)}});
            throw;
        }
    }

    void certify_stage() {
        const auto& n = doc_["na2"];
        const CostSpec cost{num(n, "H", 1.0), num(n, "alpha", 2.0)};
        const double beta = num(n, "beta", 1.5);
        const double chi = num(n, "chi", 1.0);
        const ScenarioTree& t = approx_ ? approx_->tree_used(base_tree()) : base_tree();
        const MeasureChange m = approx_ ? approx_->measure : identity_measure(t);
        const MartingaleOverlay o = approx_ ? approx_->overlay : close_martingale(t, m);
        const auto c = certify(t, m, o, cost, beta, chi);
        const auto& ex = c.exponents;
        json out = {{"H", cost.H},
                    {"alpha", cost.alpha},
                    {"beta", ex.beta},
                    {"gamma", ex.gamma},
                    {"delta", ex.delta},
                    {"slope", ex.slope},
                    {"C", c.C},
                    {"chi", c.chi},
                    {"measure", approx_ ? "approximation" : "identity"},
                    {"dual_gap", c.dual_gap},
                    {"moment", c.moment},
                    {"z_integrability", c.z_integrability},
                    {"achieved_chi", c.achieved_chi},
                    {"predicted_bound", c.predicted_bound},
                    {"predicted_from_achieved", c.predicted_from_achieved},
                    {"pass", c.pass},
                    {"note", c.note}};
        const Vec grid = numbers(n, "eps_grid");
        if (grid.size() >= 2) {
            const auto law = na2_scaling(base_tree(), cost, beta, grid, measure_options(n));
            out["scaling"] = {{"slope", law.slope}, {"predicted", law.predicted}, {"gap_decreasing", law.gap_decreasing}};
            std::string body = "eps,achieved_chi,dual_gap,bound\n";
            for (const auto& r : law.rows)
                body += fmt(r.eps) + "," + fmt(r.achieved_chi) + "," + fmt(r.dual_gap) + "," + fmt(r.bound) + "\n";
            write_file("scaling.csv", body);
        }
        write_json("certificate.json", out);
    }

    json doc_;
    RunOptions opt_;
    ExperimentBundle b_;
    std::optional<PathEnsemble> ens_;
    std::optional<LevyParams> levy_;
    std::optional<ScenarioTree> tree_;
    std::optional<Approximation> approx_;
};

const std::map<std::string, std::vector<std::string>> kNeeds = {
    {"simulate", {}},
    {"tree", {"simulate"}},
    {"sticky", {"tree"}},
    {"approximate", {"tree"}},
    {"counterexample", {"tree", "approximate"}},
    {"localize", {"tree"}},
    {"certify", {"tree", "approximate"}},
};

}  // namespace

ExperimentBundle run(const ExperimentConfig& config, const RunOptions& options) {
    validate_config(config.doc);
    auto stages = config.stages();
    if (!options.only.empty()) {
        std::set<std::string> keep;
        std::vector<std::string> todo = options.only;
        while (!todo.empty()) {
            const auto s = todo.back();
            todo.pop_back();
            if (!kNeeds.count(s)) throw InvalidArgument("unknown stage '" + s + "'");
            if (keep.insert(s).second)
                for (const auto& d : kNeeds.at(s)) todo.push_back(d);
        }
        for (const auto& s : options.only)
            if (std::find(stages.begin(), stages.end(), s) == stages.end())
                throw InvalidArgument("stage '" + s + "' needs its config section");
        std::erase_if(stages, [&](const std::string& s) { return !keep.count(s); });
    }
    return Runner(config, options).go(stages);
}

}  // namespace sticky
