#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sticky/core.hpp"
#include "sticky/process_sim.hpp"
#include "sticky/tilting.hpp"

namespace sticky {

struct TreeNode {
    int k = 0;
    Vec s;
    // Bounded noise W; empty unless the tree came from product_tree.
    Vec w;
    NodeId parent = kNoNode;
    std::vector<NodeId> children;
    Vec probs;

    bool is_leaf() const noexcept { return children.empty(); }
};

/// Which process a construction reads: the original S or the enlarged Y = S + W.
enum class Coordinate { S, Y };

struct NoiseSpec {
    double amplitude = 0.0;
    int atoms = 3;
    double scale = 1.0;

    /// Walk increments: `atoms` equally spaced values on [-amplitude, amplitude].
    Vec increments() const;
    double lipschitz() const noexcept { return amplitude * scale; }
    void validate() const;
};

/// Finite filtered probability space. Node 0 is the root; parents precede children.
struct ScenarioTree {
    TimeGrid grid;
    int dim = 1;
    std::vector<TreeNode> nodes;
    std::optional<NoiseSpec> noise;

    std::size_t size() const noexcept { return nodes.size(); }
    const TreeNode& node(NodeId id) const { return nodes.at(static_cast<std::size_t>(id)); }
    bool has_noise() const noexcept { return noise.has_value(); }
    Vec value(NodeId id, Coordinate c = Coordinate::S) const;
    std::vector<NodeId> leaves() const;
    /// Unconditional P-probability of reaching each node.
    Vec node_probabilities() const;
    /// Nodes on the path root -> id.
    std::vector<NodeId> ancestry(NodeId id) const;
    NodeId add_node(int k, Vec s, NodeId parent, double prob, Vec w = {});
};

struct PathRecord {
    NodeId leaf = kNoNode;
    std::vector<NodeId> nodes;
    double prob = 0.0;
};

std::vector<PathRecord> path_table(const ScenarioTree& tree);

struct TreeBuildOptions {
    std::uint64_t seed = 0;
    int lloyd_iterations = 50;
    // Freeze nodes whose clustered one-step law lacks 0 in its relative interior.
    bool absorb_one_sided = false;
    // Freeze nodes carrying fewer than this many paths.
    int min_paths = 1;
};

struct TreeBuild {
    ScenarioTree tree;
    std::vector<NodeId> leaf_of_path;
    bool clusters_reduced = false;
    std::vector<NodeId> reduced_nodes;
    std::vector<NodeId> absorbed_nodes;
};

/// Recursive Lloyd clustering of one-step increments; branching[k] clusters at stage k.
TreeBuild build_tree(const PathEnsemble& ensemble, const std::vector<int>& branching,
                     const TreeBuildOptions& options = {});

/// Tensors every transition with an independent noise walk B (per coordinate)
/// and stores W = a tanh(s B). Throws ConstructionError above `node_cap` nodes.
ScenarioTree product_tree(const ScenarioTree& base, const NoiseSpec& noise, std::size_t node_cap = 2000000);

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate_tree(const ScenarioTree& tree, double tol = 1e-12);

/// Conditional law of value(stop) - value(from) over a stopping antichain.
struct StopLaw {
    AtomicLaw law;
    std::vector<NodeId> stops;
    // Conditional probability of each stop and the atom it maps to.
    Vec stop_probs;
    std::vector<int> atom_of_stop;
};

StopLaw stop_law(const ScenarioTree& tree, NodeId from, const std::vector<NodeId>& stops,
                 Coordinate c = Coordinate::S, double merge_tol = 1e-12);

/// Merges stop increments into atoms without the covering checks; `stop_probs` are
/// conditional probabilities given `from`.
StopLaw aggregate_stop_law(const ScenarioTree& tree, NodeId from, const std::vector<NodeId>& stops, Vec stop_probs,
                           Coordinate c = Coordinate::S, double merge_tol = 1e-12);

inline AtomicLaw conditional_increment_law(const ScenarioTree& tree, NodeId from, const std::vector<NodeId>& stops,
                                           Coordinate c = Coordinate::S) {
    return stop_law(tree, from, stops, c).law;
}

}  // namespace sticky
