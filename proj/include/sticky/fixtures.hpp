#pragma once

#include <cstdint>

#include "sticky/process_sim.hpp"
#include "sticky/scenario_tree.hpp"

namespace sticky {

struct BrownianFixture {
    double horizon = 1.0;
    int steps = 32;
    int paths = 10000;
    int branching = 3;
    std::uint64_t seed = 7;
};

/// Clustered tree of driftless Brownian paths from 0, with one-sided nodes absorbed.
TreeBuild brownian_fixture_tree(const BrownianFixture& f = {});

/// One step: S_0 = 0, S_T uniform on {0, 1/(atoms-1), ..., 1}.
ScenarioTree uniform_terminal_tree(int atoms = 101, double horizon = 1.0);

/// Symmetric +-step random walk from 0 (non-recombining).
ScenarioTree binomial_tree(int steps, double step, double horizon = 1.0);

struct ClampSearch {
    double lower = 0.0;
    double upper = 0.0;
    // min over clamps of E_P max(|E phi(S_T)|, |phi(S_T) - S_T|)
    double value = 0.0;
    std::size_t candidates = 0;
};

/// For a one-step tree from 0: searches phi(x) = clamp(x, a, b) with a <= b on a grid of
/// `step` over [lo, hi]. Martingales under P with S~_T = phi(S_T) start at E phi.
ClampSearch clamp_search(const ScenarioTree& tree, double step = 0.005, double lo = 0.0, double hi = 1.0);

struct InverseBesselFixture {
    double horizon = 1.0;
    int steps = 6;
    int paths = 3000;
    int branching = 3;
    std::uint64_t seed = 11;
    BesselOptions bessel;
};

/// Clustered tree of M = 1/R sampled along the "bessel_r" time change.
TreeBuild inverse_bessel_tree(const InverseBesselFixture& f = {});

}  // namespace sticky
