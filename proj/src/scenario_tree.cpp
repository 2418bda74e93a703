#include "sticky/scenario_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace sticky {

namespace {

double dist2(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
}

struct Clustering {
    std::vector<int> assign;
    std::vector<Vec> centroids;
    std::vector<int> counts;
};

std::size_t count_distinct(std::vector<Vec> pts) {
    std::sort(pts.begin(), pts.end());
    return static_cast<std::size_t>(std::unique(pts.begin(), pts.end()) - pts.begin());
}

// Lloyd iterations with farthest-point seeding; ties go to the lowest index.
Clustering lloyd(const std::vector<Vec>& pts, int requested, std::uint64_t seed, int iterations) {
    const int n = static_cast<int>(pts.size());
    const int d = static_cast<int>(pts.front().size());
    const int k = static_cast<int>(std::min<std::size_t>(requested, count_distinct(pts)));

    std::vector<Vec> centers;
    std::mt19937_64 rng(seed);
    centers.push_back(pts[std::uniform_int_distribution<int>(0, n - 1)(rng)]);
    std::vector<double> nearest(n);
    for (int i = 0; i < n; ++i) nearest[i] = dist2(pts[i], centers[0]);
    while (static_cast<int>(centers.size()) < k) {
        int best = 0;
        for (int i = 1; i < n; ++i)
            if (nearest[i] > nearest[best]) best = i;
        centers.push_back(pts[best]);
        for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(pts[i], centers.back()));
    }

    std::vector<int> assign(n, -1);
    for (int it = 0; it < std::max(1, iterations); ++it) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(pts[i], centers[0]);
            for (int c = 1; c < k; ++c) {
                const double dd = dist2(pts[i], centers[c]);
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<Vec> sums(k, Vec(d, 0.0));
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (int j = 0; j < d; ++j) sums[assign[i]][j] += pts[i][j];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0)
                for (int j = 0; j < d; ++j) centers[c][j] = sums[c][j] / counts[c];
        if (!changed) break;
    }

    // Exact means of the final assignment, empty clusters dropped, sorted by centroid.
    std::vector<Vec> sums(k, Vec(d, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (int j = 0; j < d; ++j) sums[assign[i]][j] += pts[i][j];
    }
    std::vector<int> order;
    for (int c = 0; c < k; ++c)
        if (counts[c] > 0) {
            for (int j = 0; j < d; ++j) sums[c][j] /= counts[c];
            order.push_back(c);
        }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sums[a] < sums[b]; });
    std::vector<int> remap(k, -1);
    Clustering out;
    for (std::size_t r = 0; r < order.size(); ++r) {
        remap[order[r]] = static_cast<int>(r);
        out.centroids.push_back(sums[order[r]]);
        out.counts.push_back(counts[order[r]]);
    }
    out.assign.resize(n);
    for (int i = 0; i < n; ++i) out.assign[i] = remap[assign[i]];
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

Vec NoiseSpec::increments() const {
    if (atoms == 1) return {0.0};
    Vec out(atoms);
    for (int j = 0; j < atoms; ++j) out[j] = amplitude * (2.0 * j / (atoms - 1) - 1.0);
    out[atoms / 2] = 0.0;
    return out;
}

void NoiseSpec::validate() const {
    if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw InvalidArgument("noise: amplitude must be positive");
    if (atoms < 1 || atoms % 2 == 0) throw InvalidArgument("noise: atom count must be odd");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("noise: scale must be positive");
}

Vec ScenarioTree::value(NodeId id, Coordinate c) const {
    const auto& n = node(id);
    if (c == Coordinate::S || n.w.empty()) return n.s;
    Vec y = n.s;
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += n.w[j];
    return y;
}

std::vector<NodeId> ScenarioTree::leaves() const {
    std::vector<NodeId> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].is_leaf()) out.push_back(static_cast<NodeId>(i));
    return out;
}

Vec ScenarioTree::node_probabilities() const {
    Vec p(nodes.size(), 0.0);
    if (nodes.empty()) return p;
    p[0] = 1.0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        for (std::size_t c = 0; c < nodes[i].children.size(); ++c) p[nodes[i].children[c]] = p[i] * nodes[i].probs[c];
    return p;
}

std::vector<NodeId> ScenarioTree::ancestry(NodeId id) const {
    std::vector<NodeId> out;
    for (NodeId v = id; v != kNoNode; v = node(v).parent) out.push_back(v);
    std::reverse(out.begin(), out.end());
    return out;
}

NodeId ScenarioTree::add_node(int k, Vec s, NodeId parent, double prob, Vec w) {
    const auto id = static_cast<NodeId>(nodes.size());
    TreeNode n;
    n.k = k;
    n.s = std::move(s);
    n.w = std::move(w);
    n.parent = parent;
    nodes.push_back(std::move(n));
    if (parent != kNoNode) {
        nodes[parent].children.push_back(id);
        nodes[parent].probs.push_back(prob);
    }
    return id;
}

std::vector<PathRecord> path_table(const ScenarioTree& tree) {
    std::vector<PathRecord> out;
    const Vec p = tree.node_probabilities();
    for (NodeId leaf : tree.leaves()) out.push_back({leaf, tree.ancestry(leaf), p[leaf]});
    return out;
}

TreeBuild build_tree(const PathEnsemble& e, const std::vector<int>& branching, const TreeBuildOptions& options) {
    const int N = e.grid.steps;
    if (static_cast<int>(branching.size()) != N)
        throw InvalidArgument("build_tree: branching has " + std::to_string(branching.size()) + " entries, expected " +
                              std::to_string(N));
    for (int b : branching)
        if (b < 1) throw InvalidArgument("build_tree: branching entries must be >= 1");
    if (e.n_paths < 1) throw InvalidArgument("build_tree: empty ensemble");

    TreeBuild out;
    ScenarioTree& tree = out.tree;
    tree.grid = e.grid;
    tree.dim = e.dim;
    const int d = e.dim;

    Vec root(d, 0.0);
    for (int m = 0; m < e.n_paths; ++m)
        for (int j = 0; j < d; ++j) root[j] += e.at(m, 0, j);
    for (double& v : root) v /= e.n_paths;
    tree.add_node(0, root, kNoNode, 1.0);

    struct Group {
        NodeId id;
        std::vector<int> paths;
        bool frozen;
    };
    std::vector<Group> groups(1);
    groups[0] = {0, std::vector<int>(e.n_paths), false};
    std::iota(groups[0].paths.begin(), groups[0].paths.end(), 0);

    for (int k = 0; k < N; ++k) {
        std::vector<Group> next;
        for (auto& g : groups) {
            const Vec parent_s = tree.node(g.id).s;
            if (g.frozen) {
                next.push_back({tree.add_node(k + 1, parent_s, g.id, 1.0), std::move(g.paths), true});
                continue;
            }
            std::vector<Vec> inc(g.paths.size(), Vec(d));
            for (std::size_t r = 0; r < g.paths.size(); ++r)
                for (int j = 0; j < d; ++j) inc[r][j] = e.at(g.paths[r], k + 1, j) - e.at(g.paths[r], k, j);
            const auto cl = lloyd(inc, branching[k], path_seed(options.seed, static_cast<std::uint64_t>(g.id)),
                                  options.lloyd_iterations);
            const int nc = static_cast<int>(cl.centroids.size());
            if (nc < branching[k]) {
                out.clusters_reduced = true;
                out.reduced_nodes.push_back(g.id);
            }
            const double total = static_cast<double>(g.paths.size());
            if (static_cast<int>(g.paths.size()) < options.min_paths) {
                out.absorbed_nodes.push_back(g.id);
                next.push_back({tree.add_node(k + 1, parent_s, g.id, 1.0), std::move(g.paths), true});
                continue;
            }
            if (options.absorb_one_sided) {
                AtomicLaw law;
                law.atoms = cl.centroids;
                for (int c = 0; c < nc; ++c) law.probs.push_back(cl.counts[c] / total);
                if (!support_geometry(law).zero_in_relative_interior) {
                    out.absorbed_nodes.push_back(g.id);
                    next.push_back({tree.add_node(k + 1, parent_s, g.id, 1.0), std::move(g.paths), true});
                    continue;
                }
            }
            std::vector<Group> kids(nc);
            for (int c = 0; c < nc; ++c) {
                Vec s = parent_s;
                for (int j = 0; j < d; ++j) s[j] += cl.centroids[c][j];
                kids[c] = {tree.add_node(k + 1, std::move(s), g.id, cl.counts[c] / total), {}, false};
            }
            for (std::size_t r = 0; r < g.paths.size(); ++r) kids[cl.assign[r]].paths.push_back(g.paths[r]);
            for (auto& kid : kids) next.push_back(std::move(kid));
        }
        groups = std::move(next);
    }
    out.leaf_of_path.assign(e.n_paths, kNoNode);
    for (const auto& g : groups)
        for (int m : g.paths) out.leaf_of_path[m] = g.id;
    return out;
}

ScenarioTree product_tree(const ScenarioTree& base, const NoiseSpec& noise, std::size_t node_cap) {
    noise.validate();
    const int d = base.dim;
    const Vec xi = noise.increments();
    const int n = static_cast<int>(xi.size());
    const double combos = std::pow(static_cast<double>(n), d);

    double count = 0.0;
    for (const auto& nd : base.nodes) count += std::pow(combos, nd.k);
    if (count > static_cast<double>(node_cap))
        throw ConstructionError("product tree would have " + fmt(count) + " nodes (cap " + std::to_string(node_cap) +
                                "); use smaller branching, fewer steps or fewer noise atoms");

    ScenarioTree out;
    out.grid = base.grid;
    out.dim = d;
    out.noise = noise;
    out.nodes.reserve(static_cast<std::size_t>(count));
    std::vector<NodeId> base_of;
    std::vector<Vec> walk;
    out.add_node(0, base.node(0).s, kNoNode, 1.0, Vec(d, 0.0));
    base_of.push_back(0);
    walk.push_back(Vec(d, 0.0));

    const int total = static_cast<int>(combos);
    for (std::size_t i = 0; i < out.nodes.size(); ++i) {
        const auto& b = base.node(base_of[i]);
        for (std::size_t c = 0; c < b.children.size(); ++c) {
            const NodeId bc = b.children[c];
            for (int code = 0; code < total; ++code) {
                Vec B = walk[i], w(d);
                int rest = code;
                for (int j = 0; j < d; ++j) {
                    B[j] += xi[rest % n];
                    rest /= n;
                    w[j] = noise.amplitude * std::tanh(noise.scale * B[j]);
                }
                out.add_node(b.k + 1, base.node(bc).s, static_cast<NodeId>(i), b.probs[c] / combos, std::move(w));
                base_of.push_back(bc);
                walk.push_back(std::move(B));
            }
        }
    }
    return out;
}

ValidationReport validate_tree(const ScenarioTree& tree, double tol) {
    ValidationReport rep;
    auto fail = [&](NodeId id, const std::string& what) {
        rep.violations.push_back("node " + std::to_string(id) + ": " + what);
    };
    if (tree.nodes.empty()) {
        rep.violations.push_back("tree has no nodes");
        return rep;
    }
    const auto n = static_cast<NodeId>(tree.nodes.size());
    int roots = 0;
    for (NodeId id = 0; id < n; ++id) {
        const auto& nd = tree.nodes[id];
        if (nd.parent == kNoNode) {
            ++roots;
            if (nd.k != 0) fail(id, "root at time index " + std::to_string(nd.k));
        } else if (nd.parent < 0 || nd.parent >= id) {
            fail(id, "parent " + std::to_string(nd.parent) + " does not precede node");
        }
        if (static_cast<int>(nd.s.size()) != tree.dim) fail(id, "value has wrong dimension");
        for (double v : nd.s)
            if (!std::isfinite(v)) fail(id, "non-finite value");
        for (double v : nd.w)
            if (!std::isfinite(v)) fail(id, "non-finite noise value");
        if (nd.children.size() != nd.probs.size()) fail(id, "children and probabilities differ in length");
        if (nd.is_leaf()) {
            if (nd.k != tree.grid.steps)
                fail(id, "leaf at time index " + std::to_string(nd.k) + " < " + std::to_string(tree.grid.steps));
            continue;
        }
        if (nd.k >= tree.grid.steps) fail(id, "children beyond the horizon");
        double sum = 0.0;
        for (std::size_t c = 0; c < nd.children.size() && c < nd.probs.size(); ++c) {
            const NodeId ch = nd.children[c];
            if (nd.probs[c] <= 0.0 || !std::isfinite(nd.probs[c])) fail(id, "non-positive child probability " + fmt(nd.probs[c]));
            sum += nd.probs[c];
            if (ch <= id || ch >= n) {
                fail(id, "child id " + std::to_string(ch) + " out of order");
                continue;
            }
            if (tree.nodes[ch].parent != id) fail(id, "child " + std::to_string(ch) + " has a different parent");
            if (tree.nodes[ch].k != nd.k + 1) fail(id, "child " + std::to_string(ch) + " not at the next time index");
        }
        if (std::abs(sum - 1.0) > tol) fail(id, "probs sum " + fmt(sum) + " != 1");
    }
    if (roots != 1) rep.violations.push_back("expected exactly one root, found " + std::to_string(roots));
    if (rep.ok()) {
        CompensatedSum total;
        for (const auto& p : path_table(tree)) total.add(p.prob);
        if (std::abs(total.value() - 1.0) > tol) rep.violations.push_back("leaf probabilities sum " + fmt(total.value()) + " != 1");
    }
    return rep;
}

StopLaw stop_law(const ScenarioTree& tree, NodeId from, const std::vector<NodeId>& stops, Coordinate c,
                 double merge_tol) {
    const auto n = static_cast<NodeId>(tree.size());
    if (from < 0 || from >= n) throw InvalidArgument("stop law: node " + std::to_string(from) + " out of range");
    std::vector<int> index(tree.size(), -1);
    for (std::size_t i = 0; i < stops.size(); ++i) {
        const NodeId s = stops[i];
        if (s < 0 || s >= n) throw InvalidArgument("stop law: stop node " + std::to_string(s) + " out of range");
        if (index[s] >= 0) throw InvalidArgument("stop law: stop node " + std::to_string(s) + " listed twice");
        index[s] = static_cast<int>(i);
    }

    StopLaw out;
    out.stops = stops;
    out.stop_probs.assign(stops.size(), 0.0);
    std::vector<bool> reached(stops.size(), false);
    // Depth-first walk carrying the conditional probability and the stop hit so far.
    struct Frame {
        NodeId id;
        double p;
        int hit;
    };
    std::vector<Frame> stack{{from, 1.0, -1}};
    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        int hit = f.hit;
        if (index[f.id] >= 0) {
            if (hit >= 0)
                throw InvalidArgument("stop law: stop nodes " + std::to_string(stops[hit]) + " and " +
                                      std::to_string(f.id) + " overlap on one path");
            hit = index[f.id];
            out.stop_probs[hit] = f.p;
            reached[hit] = true;
        }
        const auto& nd = tree.node(f.id);
        if (nd.is_leaf()) {
            if (hit < 0) throw InvalidArgument("stop law: leaf " + std::to_string(f.id) + " is not covered");
            continue;
        }
        for (std::size_t k = nd.children.size(); k-- > 0;) stack.push_back({nd.children[k], f.p * nd.probs[k], hit});
    }
    for (std::size_t i = 0; i < stops.size(); ++i)
        if (!reached[i])
            throw InvalidArgument("stop law: stop node " + std::to_string(stops[i]) + " is not a descendant of " +
                                  std::to_string(from));

    return aggregate_stop_law(tree, from, stops, std::move(out.stop_probs), c, merge_tol);
}

StopLaw aggregate_stop_law(const ScenarioTree& tree, NodeId from, const std::vector<NodeId>& stops, Vec stop_probs,
                           Coordinate c, double merge_tol) {
    if (stop_probs.size() != stops.size()) throw InvalidArgument("stop law: one probability per stop required");
    StopLaw out;
    out.stops = stops;
    out.stop_probs = std::move(stop_probs);
    const Vec base = tree.value(from, c);
    std::vector<Vec> inc(stops.size());
    for (std::size_t i = 0; i < stops.size(); ++i) {
        inc[i] = tree.value(stops[i], c);
        for (std::size_t j = 0; j < base.size(); ++j) inc[i][j] -= base[j];
    }
    std::vector<int> order(stops.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return inc[a] < inc[b]; });
    out.atom_of_stop.assign(stops.size(), -1);
    auto close = [&](const Vec& a, const Vec& b) {
        for (std::size_t j = 0; j < a.size(); ++j)
            if (std::abs(a[j] - b[j]) > merge_tol) return false;
        return true;
    };
    for (int i : order) {
        int atom = -1;
        // Compare against recent atoms; sorted order keeps equal values adjacent in 1-d.
        for (int a = static_cast<int>(out.law.atoms.size()) - 1; a >= 0 && a >= static_cast<int>(out.law.atoms.size()) - 8; --a)
            if (close(out.law.atoms[a], inc[i])) {
                atom = a;
                break;
            }
        if (atom < 0) {
            atom = static_cast<int>(out.law.atoms.size());
            out.law.atoms.push_back(inc[i]);
            out.law.probs.push_back(0.0);
        }
        out.law.probs[atom] += out.stop_probs[i];
        out.atom_of_stop[i] = atom;
    }
    double total = 0.0;
    for (double p : out.law.probs) total += p;
    for (double& p : out.law.probs) p /= total;
    return out;
}

}  // namespace sticky
