#include <gtest/gtest.h>

#include <map>

#include "sticky/scenario_tree.hpp"

using namespace sticky;

namespace {

// Binary tree with deterministic +-step moves and equal probabilities.
ScenarioTree binary_tree(int steps, double step) {
    ScenarioTree t;
    t.grid = TimeGrid(1.0, steps);
    t.dim = 1;
    t.add_node(0, {0.0}, kNoNode, 1.0);
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        if (t.nodes[i].k == steps) continue;
        const double s = t.nodes[i].s[0];
        const int k = t.nodes[i].k;
        t.add_node(k + 1, {s - step}, static_cast<NodeId>(i), 0.5);
        t.add_node(k + 1, {s + step}, static_cast<NodeId>(i), 0.5);
    }
    return t;
}

ScenarioTree chain(int steps) {
    ScenarioTree t;
    t.grid = TimeGrid(1.0, steps);
    t.add_node(0, {0.0}, kNoNode, 1.0);
    for (int k = 1; k <= steps; ++k) t.add_node(k, {0.0}, k - 1, 1.0);
    return t;
}

double leaf_sum(const ScenarioTree& t) {
    double s = 0.0;
    for (const auto& p : path_table(t)) s += p.prob;
    return s;
}

}  // namespace

TEST(BuildTree, ConstantPathsGiveChain) {
    PathEnsemble e(TimeGrid(1.0, 4), 1, 20);
    for (double& v : e.data) v = 3.0;
    const auto b = build_tree(e, {3, 3, 3, 3});
    EXPECT_EQ(b.tree.size(), 5u);
    for (const auto& n : b.tree.nodes) {
        if (!n.is_leaf()) EXPECT_EQ(n.probs, Vec{1.0});
        EXPECT_EQ(n.s, Vec{3.0});
    }
    EXPECT_TRUE(b.clusters_reduced);
}

TEST(BuildTree, TwoDeterministicPaths) {
    PathEnsemble e(TimeGrid(1.0, 3), 1, 2);
    for (int i = 0; i <= 3; ++i) {
        e.at(0, i) = i;
        e.at(1, i) = -i;
    }
    const auto b = build_tree(e, {2, 2, 2});
    EXPECT_EQ(b.tree.leaves().size(), 2u);
    EXPECT_EQ(b.tree.node(0).probs, (Vec{0.5, 0.5}));
    EXPECT_NE(b.leaf_of_path[0], b.leaf_of_path[1]);
    EXPECT_DOUBLE_EQ(b.tree.node(b.leaf_of_path[0]).s[0], 3.0);
    EXPECT_DOUBLE_EQ(b.tree.node(b.leaf_of_path[1]).s[0], -3.0);
}

TEST(BuildTree, SparseNodesFreeze) {
    PathEnsemble e(TimeGrid(1.0, 3), 1, 2);
    for (int i = 0; i <= 3; ++i) {
        e.at(0, i) = i;
        e.at(1, i) = -i;
    }
    TreeBuildOptions o;
    o.min_paths = 3;
    const auto b = build_tree(e, {2, 2, 2}, o);
    EXPECT_EQ(b.tree.size(), 4u);
    EXPECT_EQ(b.absorbed_nodes, std::vector<NodeId>{0});
    for (const auto& n : b.tree.nodes) EXPECT_EQ(n.s, Vec{0.0});
}

TEST(BuildTree, NodeIncrementsAreClusterMeans) {
    const auto e = simulate_fbm(0.5, TimeGrid(1.0, 3), 10000, 77);
    const auto b = build_tree(e, {3, 3, 3}, {5});
    EXPECT_TRUE(validate_tree(b.tree).ok());
    // Recompute each node's mean increment from the path-to-leaf assignment.
    std::map<NodeId, std::pair<double, int>> acc;
    for (int m = 0; m < e.n_paths; ++m) {
        const auto anc = b.tree.ancestry(b.leaf_of_path[m]);
        for (std::size_t k = 1; k < anc.size(); ++k) {
            auto& a = acc[anc[k]];
            a.first += e.at(m, static_cast<int>(k)) - e.at(m, static_cast<int>(k) - 1);
            a.second += 1;
        }
    }
    for (const auto& [id, a] : acc) {
        const auto& n = b.tree.node(id);
        EXPECT_NEAR(n.s[0] - b.tree.node(n.parent).s[0], a.first / a.second, 1e-12);
    }
    for (int k = 0; k <= 3; ++k) {
        const Vec p = b.tree.node_probabilities();
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i)
            if (b.tree.nodes[i].k == k) s += p[i];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(BuildTree, DeterministicAndSeeded) {
    const auto e = simulate_fbm(0.5, TimeGrid(1.0, 4), 2000, 3);
    const auto a = build_tree(e, {3, 3, 3, 3}, {1});
    const auto b = build_tree(e, {3, 3, 3, 3}, {1});
    ASSERT_EQ(a.tree.size(), b.tree.size());
    for (std::size_t i = 0; i < a.tree.size(); ++i) EXPECT_EQ(a.tree.nodes[i].s, b.tree.nodes[i].s);
    EXPECT_EQ(a.leaf_of_path, b.leaf_of_path);
}

TEST(BuildTree, AbsorbsOneSidedNodes) {
    const auto e = simulate_fbm(0.5, TimeGrid(1.0, 16), 300, 4);
    TreeBuildOptions o;
    o.absorb_one_sided = true;
    const auto b = build_tree(e, std::vector<int>(16, 3), o);
    EXPECT_TRUE(validate_tree(b.tree).ok());
    EXPECT_FALSE(b.absorbed_nodes.empty());
    for (std::size_t i = 0; i < b.tree.size(); ++i) {
        const auto& n = b.tree.nodes[i];
        if (n.is_leaf()) continue;
        AtomicLaw law;
        for (std::size_t c = 0; c < n.children.size(); ++c) {
            law.atoms.push_back({b.tree.node(n.children[c]).s[0] - n.s[0]});
            law.probs.push_back(n.probs[c]);
        }
        EXPECT_TRUE(support_geometry(law).zero_in_relative_interior) << "node " << i;
    }
}

TEST(BuildTree, RejectsBadBranching) {
    PathEnsemble e(TimeGrid(1.0, 2), 1, 3);
    EXPECT_THROW(build_tree(e, {2}), InvalidArgument);
    EXPECT_THROW(build_tree(e, {2, 0}), InvalidArgument);
}

TEST(ProductTree, DegenerateNoiseIsIsomorphic) {
    const auto base = binary_tree(3, 1.0);
    NoiseSpec ns{0.1, 1, 1.0};
    const auto p = product_tree(base, ns);
    ASSERT_EQ(p.size(), base.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_EQ(p.nodes[i].s, base.nodes[i].s);
        EXPECT_EQ(p.nodes[i].w, Vec{0.0});
        EXPECT_EQ(p.nodes[i].probs, base.nodes[i].probs);
    }
}

TEST(ProductTree, ChainWithThreeAtoms) {
    const auto p = product_tree(chain(2), {0.2, 3, 2.0});
    const auto leaves = p.leaves();
    ASSERT_EQ(leaves.size(), 9u);
    const Vec probs = p.node_probabilities();
    for (NodeId l : leaves) EXPECT_NEAR(probs[l], 1.0 / 9.0, 1e-15);
    for (const auto& n : p.nodes) EXPECT_LT(std::abs(n.w[0]), 0.2);
    EXPECT_TRUE(validate_tree(p).ok());
}

TEST(ProductTree, PreservesStageMarginalsOfS) {
    const auto e = simulate_fbm(0.5, TimeGrid(1.0, 3), 500, 8);
    const auto base = build_tree(e, {3, 2, 3}).tree;
    const auto p = product_tree(base, {0.05, 3, 1.0});
    const Vec pb = base.node_probabilities(), pp = p.node_probabilities();
    for (int k = 0; k <= 3; ++k) {
        std::map<double, double> mb, mp;
        for (std::size_t i = 0; i < base.size(); ++i)
            if (base.nodes[i].k == k) mb[base.nodes[i].s[0]] += pb[i];
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p.nodes[i].k == k) mp[p.nodes[i].s[0]] += pp[i];
        ASSERT_EQ(mb.size(), mp.size());
        for (const auto& [v, q] : mb) EXPECT_NEAR(mp[v], q, 1e-12);
    }
    EXPECT_NEAR(leaf_sum(p), 1.0, 1e-12);
}

TEST(ProductTree, CapAdvisesSmallerBranching) {
    try {
        product_tree(binary_tree(6, 1.0), {0.1, 5, 1.0}, 1000);
        FAIL();
    } catch (const ConstructionError& e) {
        EXPECT_NE(std::string(e.what()).find("smaller branching"), std::string::npos);
    }
}

TEST(ValidateTree, ChainIsClean) { EXPECT_TRUE(validate_tree(chain(3)).ok()); }

TEST(ValidateTree, ReportsBadProbabilitySum) {
    ScenarioTree t;
    t.grid = TimeGrid(1.0, 1);
    t.add_node(0, {0.0}, kNoNode, 1.0);
    t.add_node(1, {1.0}, 0, 0.6);
    t.add_node(1, {-1.0}, 0, 0.5);
    const auto r = validate_tree(t);
    ASSERT_FALSE(r.ok());
    EXPECT_EQ(r.violations.front(), "node 0: probs sum 1.1 != 1");
}

TEST(ValidateTree, EarlyLeafFlagged) {
    ScenarioTree t;
    t.grid = TimeGrid(1.0, 2);
    t.add_node(0, {0.0}, kNoNode, 1.0);
    t.add_node(1, {0.0}, 0, 1.0);
    EXPECT_FALSE(validate_tree(t).ok());
}

TEST(ValidateTree, BrownianPipeline) {
    const auto e = simulate_sde("zero", "identity", {0.0}, TimeGrid(1.0, 5), 10000, 12);
    EXPECT_TRUE(validate_tree(build_tree(e, {3, 3, 3, 3, 3}).tree).ok());
}

TEST(StopLaw, ChildrenGiveOneStepIncrements) {
    const auto t = binary_tree(2, 1.0);
    const auto law = conditional_increment_law(t, 0, t.node(0).children);
    EXPECT_EQ(law.atoms, (std::vector<Vec>{{-1.0}, {1.0}}));
    EXPECT_EQ(law.probs, (Vec{0.5, 0.5}));
}

TEST(StopLaw, ChainToLeaf) {
    auto t = chain(3);
    t.nodes[3].s = {2.5};
    const auto law = conditional_increment_law(t, 1, {3});
    EXPECT_EQ(law.atoms, std::vector<Vec>{{2.5}});
    EXPECT_EQ(law.probs, Vec{1.0});
}

TEST(StopLaw, GrandchildrenAggregate) {
    const auto t = binary_tree(2, 1.0);
    std::vector<NodeId> grand;
    for (NodeId c : t.node(0).children)
        for (NodeId g : t.node(c).children) grand.push_back(g);
    const auto law = conditional_increment_law(t, 0, grand);
    EXPECT_EQ(law.atoms, (std::vector<Vec>{{-2.0}, {0.0}, {2.0}}));
    EXPECT_EQ(law.probs, (Vec{0.25, 0.5, 0.25}));
}

TEST(StopLaw, MixedDepthMeanMatchesEnumeration) {
    const auto e = simulate_fbm(0.5, TimeGrid(1.0, 3), 400, 21);
    const auto t = build_tree(e, {3, 3, 2}).tree;
    // Stop at the first child, otherwise at the leaves.
    const NodeId first = t.node(0).children[0];
    std::vector<NodeId> stops{first};
    for (NodeId l : t.leaves())
        if (t.ancestry(l)[1] != first) stops.push_back(l);
    const auto sl = stop_law(t, 0, stops);
    double total = 0.0, mean = 0.0;
    for (std::size_t a = 0; a < sl.law.size(); ++a) {
        total += sl.law.probs[a];
        mean += sl.law.probs[a] * sl.law.atoms[a][0];
    }
    const Vec p = t.node_probabilities();
    double direct = 0.0;
    for (NodeId s : stops) direct += p[s] * (t.node(s).s[0] - t.node(0).s[0]);
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(mean, direct, 1e-12);
}

TEST(StopLaw, RejectsBadStoppingSets) {
    const auto t = binary_tree(2, 1.0);
    const auto kids = t.node(0).children;
    EXPECT_THROW(conditional_increment_law(t, 0, {kids[0]}), InvalidArgument);
    std::vector<NodeId> overlap = kids;
    overlap.push_back(t.node(kids[0]).children[0]);
    EXPECT_THROW(conditional_increment_law(t, 0, overlap), InvalidArgument);
    EXPECT_THROW(conditional_increment_law(t, kids[0], {kids[1]}), InvalidArgument);
}
