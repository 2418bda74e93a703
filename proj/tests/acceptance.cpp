// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "sticky/fixtures.hpp"
#include "sticky/measure_builder.hpp"
#include "sticky/na2_certify.hpp"
#include "sticky/stickiness.hpp"

using namespace sticky;

namespace {

// Discretely monitored P(max_{i<=64} |B_{i/64}| < 1), 1e6 paths from oracle_smallball.
constexpr double kSmallBallRef = 0.434111;
constexpr double kSmallBallRefSe = 0.000496;

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// A construction together with the tree it lives on.
struct Built {
    std::string label;
    const ScenarioTree* tree = nullptr;
    StoppingSchedule schedule;
    MeasureChange measure;
    MartingaleOverlay overlay;
    ApproximationReport report;
};

struct Fixtures {
    ScenarioTree brownian;
    std::vector<Built> brownian_runs;
    std::vector<double> brownian_seconds;
    ScenarioTree alma;
    Approximation alma_run;
    double alma_seconds = 0.0;
    ScenarioTree binomial;
    Localization binomial_run;
};

Built brownian_run(const ScenarioTree& t, double eps) {
    Built b;
    b.tree = &t;
    b.schedule = stopping_schedule(t, eps);
    const auto w = MomentFunction::g_combo(1.0, 2.0);
    MeasureOptions o;
    b.label = "brownian eps=" + std::to_string(eps).substr(0, 5);
    try {
        b.measure = build_measure(t, b.schedule, w, o);
    } catch (const InfeasibleTilt&) {
        o.budget = BudgetRule::MinCost;
        b.measure = build_measure(t, b.schedule, w, o);
        b.label += " (min_cost)";
    }
    b.overlay = close_martingale(t, b.measure);
    b.report = verify_bound(t, b.schedule, b.measure, b.overlay, GSpec{1.0});
    return b;
}

std::vector<Built> all_runs(const Fixtures& f) {
    std::vector<Built> out = f.brownian_runs;
    Built a;
    a.label = "alma";
    a.tree = &f.alma_run.tree_used(f.alma);
    a.schedule = f.alma_run.schedule;
    a.measure = f.alma_run.measure;
    a.overlay = f.alma_run.overlay;
    a.report = f.alma_run.report;
    out.push_back(a);
    Built l;
    l.label = "binomial localized";
    l.tree = &f.binomial;
    l.schedule = f.binomial_run.schedule;
    l.measure = f.binomial_run.measure;
    l.overlay = f.binomial_run.overlay;
    l.report = f.binomial_run.report;
    out.push_back(l);
    return out;
}

Verdict criterion1(const Fixtures& f) {
    Verdict v;
    for (std::size_t i = 0; i < f.brownian_runs.size(); ++i) {
        const auto& b = f.brownian_runs[i];
        const double bound = 2.0 * b.schedule.eps + 2.0 * std::sqrt(b.schedule.eps);
        v.detail << " " << b.label << ": " << b.report.achieved << " < " << bound << " in " << f.brownian_seconds[i]
                 << "s;";
        v.require(b.report.achieved < bound, b.label + " bound");
        v.require(f.brownian_seconds[i] < 60.0, b.label + " runtime");
    }
    return v;
}

Verdict criterion2(const Fixtures& f) {
    Verdict v;
    for (const auto& b : all_runs(f)) {
        const double eps = b.schedule.eps;
        v.detail << " " << b.label << ": " << b.report.budget_sum << " vs eps " << eps << ";";
        v.require(b.report.budget_sum < eps + 1e-10, b.label + " budget");
    }
    return v;
}

Verdict criterion3(const Fixtures& f) {
    Verdict v;
    double worst = 0.0, root = 0.0, leaf = 0.0;
    for (const auto& b : all_runs(f)) {
        const auto& t = *b.tree;
        const auto& q = b.measure.q;
        const auto& s = b.overlay.values;
        // Node-wise identity S~(v) = sum_c Q(c) S~(c) / Q(v), recomputed here.
        for (std::size_t u = 0; u < t.size(); ++u) {
            const auto& n = t.nodes[u];
            if (n.is_leaf()) continue;
            for (int j = 0; j < t.dim; ++j) {
                double acc = 0.0;
                for (NodeId c : n.children) acc += q[c] * s[c][j];
                worst = std::max(worst, std::abs(acc / q[u] - s[u][j]));
            }
        }
        const auto x0 = t.value(0, b.overlay.coord);
        for (int j = 0; j < t.dim; ++j) root = std::max(root, std::abs(s[0][j] - x0[j]));
        for (NodeId l : t.leaves()) {
            const auto x = t.value(l, b.overlay.coord);
            for (int j = 0; j < t.dim; ++j) leaf = std::max(leaf, std::abs(s[l][j] - x[j]));
        }
    }
    v.detail << " martingale " << worst << ", root pin " << root << ", leaf pin " << leaf;
    v.require(worst <= 1e-10, "martingale identity");
    v.require(root <= 1e-10, "root pin");
    v.require(leaf == 0.0, "leaf pin");
    return v;
}

Verdict criterion4(const Fixtures& f) {
    Verdict v;
    double min_q = 1.0, sum_err = 0.0, norm_err = 0.0, after = 0.0, density = 0.0;
    for (const auto& b : all_runs(f)) {
        const auto& t = *b.tree;
        const auto& m = b.measure;
        double total = 0.0;
        for (NodeId l : t.leaves()) {
            min_q = std::min(min_q, m.q[l]);
            total += m.q[l];
        }
        sum_err = std::max(sum_err, std::abs(total - 1.0));
        // E_P[Z | stopping node] by walking to the next stopping nodes.
        for (std::size_t u = 0; u < t.size(); ++u) {
            const auto& next = b.schedule.next[u];
            if (b.schedule.stage_of[u] < 0 || next.empty()) continue;
            double acc = 0.0;
            for (NodeId s : next) {
                double p = 1.0;
                for (NodeId x = s; x != static_cast<NodeId>(u); x = t.node(x).parent) {
                    const auto& par = t.node(t.node(x).parent);
                    const auto it = std::find(par.children.begin(), par.children.end(), x);
                    p *= par.probs[it - par.children.begin()];
                }
                acc += p * m.z[s];
            }
            norm_err = std::max(norm_err, std::abs(acc - 1.0));
        }
        // Z = 1 off the stopping nodes and after the path's last stop; dQ/dP is the product of factors.
        for (std::size_t u = 0; u < t.size(); ++u)
            if (b.schedule.stage_of[u] < 1) after = std::max(after, std::abs(m.z[u] - 1.0));
        for (NodeId l : t.leaves()) {
            const auto stops = b.schedule.stops_on_path(t, l);
            const Vec factors = m.path_factors(t, b.schedule, l);
            for (std::size_t n = stops.size() > 0 ? stops.size() - 1 : 0; n < factors.size(); ++n)
                after = std::max(after, std::abs(factors[n] - 1.0));
            double prod = 1.0;
            for (double z : factors) prod *= z;
            density = std::max(density, std::abs(prod * m.p[l] - m.q[l]) / m.q[l]);
        }
    }
    v.detail << " min Q(leaf) " << min_q << ", |sum Q - 1| " << sum_err << ", |E_P Z - 1| " << norm_err
             << ", |Z - 1| after termination " << after << ", density rel err " << density;
    v.require(min_q > 0.0, "Q(leaf) > 0");
    v.require(sum_err <= 1e-10, "sum Q");
    v.require(norm_err <= 1e-10, "E_P Z = 1");
    v.require(after == 0.0, "Z = 1 after termination");
    v.require(density <= 1e-10, "dQ/dP is the product of Z factors");
    return v;
}

Verdict criterion5(const Fixtures& f) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    Vec x, p;
    double mean = 0.0;
    const auto& root = f.alma.node(0);
    for (std::size_t c = 0; c < root.children.size(); ++c) {
        x.push_back(f.alma.node(root.children[c]).s[0]);
        p.push_back(root.probs[c]);
        mean += x.back() * p.back();
    }
    const auto clamp = oracle::clamp_min(x, p, 0.005);
    const double all_phi = oracle::mean_deviation_lower_bound(x, p, 1e-5);
    const auto lib = clamp_search(f.alma, 0.005);
    const double secs = seconds_since(t0) + f.alma_seconds;
    v.detail << " E S_1 " << mean << ", clamp grid min " << clamp << ", bound over all phi " << all_phi
             << ", approximate E_Q dev " << f.alma_run.report.achieved << ", " << secs << "s";
    v.require(std::abs(mean - 0.5) <= 0.005, "E S_1");
    v.require(clamp >= 0.24, "clamp minimum");
    v.require(all_phi >= 0.24, "lower bound over all phi");
    v.require(std::abs(lib.value - clamp) < 1e-12, "library clamp search matches oracle");
    v.require(f.alma_run.report.achieved < 0.25, "approximate");
    v.require(secs < 30.0, "runtime");
    return v;
}

Verdict criterion6(const Fixtures& f) {
    Verdict v;
    const auto& loc = f.binomial_run;
    const auto& t = f.binomial;
    v.detail << " levels";
    for (const auto& l : loc.levels) v.detail << " " << l.level << ":" << (l.tv ? *l.tv : -1.0);
    v.require(martingale_residual(t) <= 1e-12, "S is a P-martingale");
    v.require(loc.report.tv && *loc.report.tv < 0.1, "tv < chi");
    for (std::size_t k = 1; k < loc.levels.size(); ++k)
        v.require(loc.levels[k].tv && loc.levels[k - 1].tv && *loc.levels[k].tv <= *loc.levels[k - 1].tv,
                  "tv nonincreasing");
    // Path enumeration: P and Q per path from transition probabilities and Z factors.
    double tv = 0.0;
    for (const auto& rec : path_table(t)) {
        double p = 1.0;
        for (std::size_t i = 1; i < rec.nodes.size(); ++i) {
            const auto& par = t.node(rec.nodes[i - 1]);
            const auto it = std::find(par.children.begin(), par.children.end(), rec.nodes[i]);
            p *= par.probs[it - par.children.begin()];
        }
        double q = p;
        for (double z : loc.measure.path_factors(t, loc.schedule, rec.leaf)) q *= z;
        tv += std::abs(q - p);
    }
    v.detail << "; chosen level " << loc.levels[loc.level_index].level << " tv " << *loc.report.tv
             << ", enumeration " << tv;
    v.require(std::abs(tv - *loc.report.tv) <= 1e-12, "enumeration");
    return v;
}

Verdict criterion7() {
    Verdict v;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int agree = 0, feasible = 0, constraints = 0;
    auto abs_w = [](double r) { return r; };
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(u(rng) * 4);
        std::vector<double> y, p;
        double ps = 0.0;
        for (int i = 0; i < n; ++i) {
            y.push_back((u(rng) - 0.5) * 2.0 * (i == 0 ? 0.1 : 1.0));
            p.push_back(0.1 + u(rng));
            ps += p.back();
        }
        for (double& q : p) q /= ps;
        const double eta = 0.05 + 0.3 * u(rng);
        AtomicLaw law;
        for (double a : y) law.atoms.push_back({a});
        law.probs = p;
        bool solved = false;
        try {
            const auto t = solve_tilt(law, eta, MomentFunction::abs());
            solved = true;
            constraints += tilt_constraints_hold(t);
        } catch (const ConstructionError&) {
        }
        feasible += solved;
        agree += solved == oracle::tilt_grid_feasible(y, p, eta, +abs_w, 1e-8);
    }
    v.detail << " agree " << agree << "/50, feasible " << feasible << ", constraints hold " << constraints << "/"
             << feasible;
    v.require(agree == 50, "oracle agreement");
    v.require(constraints == feasible, "constraints");
    return v;
}

Verdict criterion8() {
    Verdict v;
    std::mt19937_64 rng(88);
    std::uniform_real_distribution<double> ua(1.1, 4.0), uh(0.1, 5.0), uy(-3.0, 3.0);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const CostSpec c{uh(rng), ua(rng)};
        const double y = uy(rng);
        const double yy[1] = {y};
        const double closed = conjugate(c, yy);
        const double grid = oracle::conjugate_zoom(y, c.H, c.alpha);
        worst = std::max(worst, std::abs(closed - grid) / std::max(1.0, std::abs(grid)));
    }
    v.detail << " worst error (relative above 1) " << worst;
    v.require(worst <= 1e-5, "conjugate");
    return v;
}

Verdict criterion9(const Fixtures& f) {
    Verdict v;
    const CostSpec cost{1.0, 2.0};
    const auto law = na2_scaling(f.brownian, cost, 1.5, {0.5, 0.25, 0.125});
    for (const auto& r : law.rows) v.detail << " eps " << r.eps << ": chi " << r.achieved_chi << " gap " << r.dual_gap << ";";
    v.detail << " slope " << law.slope << " vs " << law.predicted;
    v.require(law.gap_decreasing, "gap decreasing");
    v.require(std::abs(law.slope - law.predicted) <= 0.3, "slope");
    return v;
}

Verdict criterion10() {
    Verdict v;
    struct Case {
        double c, sigma, integral;
        bool left, right;
        Stickiness expected;
    };
    // h = c - integral.
    const Case cases[] = {
        {0.7, 1.0, 0.2, false, false, Stickiness::Sticky},          // sigma != 0
        {0.7, 0.0, INFINITY, false, false, Stickiness::Sticky},     // infinite variation
        {0.5, 0.0, 0.5, false, false, Stickiness::Sticky},          // h = 0
        {1.0, 0.0, 0.5, true, false, Stickiness::Sticky},           // h > 0, opposing mass on the left
        {1.0, 0.0, 0.5, false, true, Stickiness::NotSticky},        // h > 0, no left mass
        {0.0, 0.0, 0.5, false, true, Stickiness::Sticky},           // h < 0, opposing mass on the right
        {0.0, 0.0, 0.5, true, false, Stickiness::NotSticky},        // h < 0, no right mass
        {1.0, 0.0, 0.0, false, false, Stickiness::NotSticky},       // pure drift
    };
    int ok = 0;
    for (const auto& c : cases) ok += classify_levy_stickiness({c.c, c.sigma, {}}, c.integral, c.left, c.right).verdict == c.expected;
    v.detail << " " << ok << "/8 verdicts";
    v.require(ok == 8, "verdicts");
    return v;
}

Verdict criterion11() {
    Verdict v;
    PathEnsemble e(TimeGrid(1.0, 8), 1, 100);
    std::fill(e.data.begin(), e.data.end(), 1.5);
    const auto constant = build_tree(e, std::vector<int>(8, 3)).tree;
    bool all = true;
    for (double kappa : {1e-9, 1e-3, 0.1, 1.0, 10.0}) all = all && check_sticky_tree(constant, kappa).sticky;
    v.require(all, "constant sticky");

    const double c = 1.0, T = 1.0;
    const auto drift = build_tree(simulate_levy({c, 0.0, {}}, TimeGrid(T, 8), 100, 1), std::vector<int>(8, 3)).tree;
    bool none = true;
    for (double kappa : {0.1, 0.5, 0.9}) none = none && !check_sticky_tree(drift, kappa * c * T).sticky;
    v.require(none, "pure drift not sticky below cT");

    const auto bm = simulate_sde("zero", "identity", {0.0}, TimeGrid(1.0, 64), 200000, 2024);
    const auto sb = estimate_smallball(bm, 0, 1.0, single_bin(bm, 0));
    const double est = *sb.bins[0].estimate;
    const double se = std::hypot(sb.bins[0].se, kSmallBallRefSe);
    v.detail << " small ball " << est << " vs " << kSmallBallRef << " (" << std::abs(est - kSmallBallRef) / se << " SE)";
    v.require(std::abs(est - kSmallBallRef) <= 3.0 * se, "small ball");
    return v;
}

}  // namespace

int main() {
    Fixtures f;
    f.brownian = brownian_fixture_tree().tree;
    for (double eps : {0.5, 0.25, 0.125}) {
        const auto t0 = std::chrono::steady_clock::now();
        f.brownian_runs.push_back(brownian_run(f.brownian, eps));
        f.brownian_seconds.push_back(seconds_since(t0));
    }
    f.alma = uniform_terminal_tree(101);
    {
        const auto t0 = std::chrono::steady_clock::now();
        f.alma_run = approximate(f.alma, GSpec{1.0}, 0.25);
        f.alma_seconds = seconds_since(t0);
    }
    f.binomial = binomial_tree(10, 0.1);
    f.binomial_run = localize_and_build(f.binomial, GSpec{1.0}, 0.1, 0.35, {0.45, 0.75, 1.05});

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"bound reproduction", [&] { return criterion1(f); }},
        {"budget", [&] { return criterion2(f); }},
        {"martingale suite", [&] { return criterion3(f); }},
        {"measure suite", [&] { return criterion4(f); }},
        {"counterexample", [&] { return criterion5(f); }},
        {"total variation", [&] { return criterion6(f); }},
        {"tilting oracle", [] { return criterion7(); }},
        {"conjugate", [] { return criterion8(); }},
        {"na2 scaling", [&] { return criterion9(f); }},
        {"levy classifier", [] { return criterion10(); }},
        {"stickiness", [] { return criterion11(); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail << " [exception: " << e.what() << "]";
        }
        failed += !v.pass;
        std::printf("%s %zu %s:%s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.str().c_str());
    }
    return failed == 0 ? 0 : 1;
}
