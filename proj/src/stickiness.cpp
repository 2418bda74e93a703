#include "sticky/stickiness.hpp"

#include <algorithm>
#include <cmath>

namespace sticky {

namespace {

bool inside(const Vec& a, const Vec& b, double kappa) { return distance(a, b) < kappa; }

// Depth-first search for a leaf whose path stays inside the ball around `origin`.
NodeId find_witness(const ScenarioTree& tree, NodeId v, double kappa, Coordinate c) {
    const Vec origin = tree.value(v, c);
    std::vector<NodeId> stack{v};
    while (!stack.empty()) {
        const NodeId u = stack.back();
        stack.pop_back();
        if (!inside(tree.value(u, c), origin, kappa)) continue;
        const auto& n = tree.node(u);
        if (n.is_leaf()) return u;
        for (std::size_t k = n.children.size(); k-- > 0;) stack.push_back(n.children[k]);
    }
    return kNoNode;
}

}  // namespace

StickyReport check_sticky_tree(const ScenarioTree& tree, double kappa, Coordinate c) {
    return check_sticky_tree(tree, Vec(tree.size(), kappa), c);
}

StickyReport check_sticky_tree(const ScenarioTree& tree, const Vec& kappa, Coordinate c) {
    if (kappa.size() != tree.size()) throw InvalidArgument("sticky: need one radius per node");
    for (double k : kappa)
        if (!(k > 0.0)) throw InvalidArgument("sticky: radius must be positive");
    StickyReport r;
    r.kappa = kappa;
    r.witness.assign(tree.size(), kNoNode);
    for (std::size_t v = 0; v < tree.size(); ++v) {
        r.witness[v] = find_witness(tree, static_cast<NodeId>(v), kappa[v], c);
        if (r.witness[v] == kNoNode) r.failures.push_back(static_cast<NodeId>(v));
    }
    r.sticky = r.failures.empty();
    return r;
}

bool witness_holds(const ScenarioTree& tree, NodeId node, NodeId leaf, double kappa, Coordinate c) {
    if (leaf == kNoNode || !tree.node(leaf).is_leaf()) return false;
    const Vec origin = tree.value(node, c);
    for (NodeId u = leaf;; u = tree.node(u).parent) {
        if (u == kNoNode) return false;
        if (!inside(tree.value(u, c), origin, kappa)) return false;
        if (u == node) return true;
    }
}

SmallBallTable estimate_smallball(const PathEnsemble& e, int t_index, double kappa, const Vec& edges) {
    if (!(kappa > 0.0)) throw InvalidArgument("smallball: kappa must be positive");
    if (t_index < 0 || t_index > e.grid.steps) throw InvalidArgument("smallball: time index out of range");
    if (edges.size() < 2) throw InvalidArgument("smallball: need at least two bin edges");
    for (std::size_t b = 1; b < edges.size(); ++b)
        if (!(edges[b] > edges[b - 1])) throw InvalidArgument("smallball: bin edges must increase");

    SmallBallTable out;
    out.t_index = t_index;
    out.kappa = kappa;
    out.markov = e.model != "fbm" && e.model.rfind("compose", 0) != 0;
    const int nb = static_cast<int>(edges.size()) - 1;
    out.bins.resize(nb);
    for (int b = 0; b < nb; ++b) {
        out.bins[b].lo = edges[b];
        out.bins[b].hi = edges[b + 1];
    }
    for (int m = 0; m < e.n_paths; ++m) {
        const double x = e.at(m, t_index, 0);
        if (x < edges.front() || x > edges.back())
            throw InvalidArgument("smallball: bins do not cover observed value " + std::to_string(x));
        int b = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()) - 1;
        b = std::min(b, nb - 1);
        const auto origin = e.point(m, t_index);
        bool stays = true;
        for (int i = t_index + 1; i <= e.grid.steps && stays; ++i) stays = distance(e.point(m, i), origin) < kappa;
        ++out.bins[b].count;
        out.bins[b].hits += stays;
    }
    for (auto& bin : out.bins) {
        if (bin.count == 0) continue;
        const double p = static_cast<double>(bin.hits) / bin.count;
        bin.estimate = p;
        bin.se = std::sqrt(p * (1.0 - p) / bin.count);
    }
    return out;
}

Vec single_bin(const PathEnsemble& e, int t_index) {
    const Vec x = e.marginal(t_index, 0);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    return {*lo, *hi > *lo ? *hi : *lo + 1.0};
}

}  // namespace sticky
