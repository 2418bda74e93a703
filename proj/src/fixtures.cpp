#include "sticky/fixtures.hpp"

#include <algorithm>
#include <limits>

namespace sticky {

TreeBuild brownian_fixture_tree(const BrownianFixture& f) {
    const auto e = simulate_sde("zero", "identity", {0.0}, TimeGrid(f.horizon, f.steps), f.paths, f.seed);
    TreeBuildOptions o;
    o.seed = f.seed;
    o.absorb_one_sided = true;
    return build_tree(e, std::vector<int>(f.steps, f.branching), o);
}

ScenarioTree uniform_terminal_tree(int atoms, double horizon) {
    if (atoms < 2) throw InvalidArgument("uniform terminal tree: need at least two atoms");
    ScenarioTree t;
    t.grid = TimeGrid(horizon, 1);
    t.add_node(0, {0.0}, kNoNode, 1.0);
    for (int i = 0; i < atoms; ++i) t.add_node(1, {static_cast<double>(i) / (atoms - 1)}, 0, 1.0 / atoms);
    return t;
}

ScenarioTree binomial_tree(int steps, double step, double horizon) {
    if (!(step > 0.0)) throw InvalidArgument("binomial tree: step must be positive");
    if (steps > 20) throw InvalidArgument("binomial tree: at most 20 steps");
    ScenarioTree t;
    t.grid = TimeGrid(horizon, steps);
    t.add_node(0, {0.0}, kNoNode, 1.0);
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        if (t.nodes[i].k == steps) continue;
        const double s = t.nodes[i].s[0];
        const int k = t.nodes[i].k + 1;
        t.add_node(k, {s - step}, static_cast<NodeId>(i), 0.5);
        t.add_node(k, {s + step}, static_cast<NodeId>(i), 0.5);
    }
    return t;
}

ClampSearch clamp_search(const ScenarioTree& tree, double step, double lo, double hi) {
    if (tree.grid.steps != 1 || tree.dim != 1) throw InvalidArgument("clamp search: need a one-step scalar tree");
    if (!(step > 0.0) || !(hi >= lo)) throw InvalidArgument("clamp search: bad grid");
    Vec x, p;
    const auto& root = tree.node(0);
    for (std::size_t c = 0; c < root.children.size(); ++c) {
        x.push_back(tree.node(root.children[c]).s[0]);
        p.push_back(root.probs[c]);
    }
    const double s0 = tree.node(0).s[0];
    const long n = std::lround((hi - lo) / step);
    ClampSearch best;
    best.value = std::numeric_limits<double>::infinity();
    for (long i = 0; i <= n; ++i) {
        const double a = lo + i * step;
        for (long j = i; j <= n; ++j) {
            const double b = lo + j * step;
            double m = 0.0;
            for (std::size_t r = 0; r < x.size(); ++r) m += p[r] * std::clamp(x[r], a, b);
            double v = 0.0;
            for (std::size_t r = 0; r < x.size(); ++r)
                v += p[r] * std::max(std::abs(m - s0), std::abs(std::clamp(x[r], a, b) - x[r]));
            ++best.candidates;
            if (v < best.value) {
                best.value = v;
                best.lower = a;
                best.upper = b;
            }
        }
    }
    return best;
}

TreeBuild inverse_bessel_tree(const InverseBesselFixture& f) {
    const auto e = simulate_strict_local_martingale({"bessel_r", 0.0}, TimeGrid(f.horizon, f.steps), f.paths, f.seed,
                                                    f.bessel);
    TreeBuildOptions o;
    o.seed = f.seed;
    o.absorb_one_sided = true;
    return build_tree(e, std::vector<int>(f.steps, f.branching), o);
}

}  // namespace sticky
