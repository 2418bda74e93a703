#pragma once

#include <optional>
#include <vector>

#include "sticky/process_sim.hpp"
#include "sticky/scenario_tree.hpp"

namespace sticky {

struct StickyReport {
    bool sticky = false;
    // Per node: a leaf whose path from the node stays inside the open kappa-ball, or kNoNode.
    std::vector<NodeId> witness;
    std::vector<NodeId> failures;
    // Radius used at each node.
    Vec kappa;
};

StickyReport check_sticky_tree(const ScenarioTree& tree, double kappa, Coordinate c = Coordinate::S);

/// Per-node radii (one entry per node, all positive).
StickyReport check_sticky_tree(const ScenarioTree& tree, const Vec& kappa, Coordinate c = Coordinate::S);

/// True when every node on the path node -> leaf stays strictly within kappa of the node value.
bool witness_holds(const ScenarioTree& tree, NodeId node, NodeId leaf, double kappa, Coordinate c = Coordinate::S);

struct SmallBallBin {
    double lo = 0.0;
    double hi = 0.0;
    int count = 0;
    int hits = 0;
    std::optional<double> estimate;
    double se = 0.0;
};

struct SmallBallTable {
    int t_index = 0;
    double kappa = 0.0;
    std::vector<SmallBallBin> bins;
    // False for non-Markov models, where binning on S_t is only a proxy for the conditioning.
    bool markov = true;
};

/// Per bin of S_t (first coordinate), the fraction of paths with
/// sup_{u >= t} |S_u - S_t| < kappa and its binomial standard error.
/// `bin_edges` must be increasing and cover the observed S_t range; the last bin is closed.
SmallBallTable estimate_smallball(const PathEnsemble& ensemble, int t_index, double kappa, const Vec& bin_edges);

/// Edges of a single bin spanning the observed S_t range.
Vec single_bin(const PathEnsemble& ensemble, int t_index);

}  // namespace sticky
