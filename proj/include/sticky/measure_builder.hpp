#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sticky/scenario_tree.hpp"
#include "sticky/tilting.hpp"

namespace sticky {

struct Attempt {
    double eps = 0.0;
    bool noise = false;
    std::string outcome;
    std::optional<double> achieved;
};

class ExhaustedGrid : public ConstructionError {
public:
    ExhaustedGrid(const std::string& what, std::optional<double> best_achieved, std::vector<Attempt> attempts = {})
        : ConstructionError(what), best_achieved(best_achieved), attempts(std::move(attempts)) {}
    std::optional<double> best_achieved;
    std::vector<Attempt> attempts;
};

class PersistentGeometryViolation : public ConstructionError {
public:
    PersistentGeometryViolation(const std::string& what, NodeId node) : ConstructionError(what), node(node) {}
    NodeId node;
};

struct LevelOutcome {
    double level = 0.0;
    double hit_probability = 0.0;
    std::optional<double> tv;
    std::optional<double> achieved;
    std::optional<double> bound;
    std::string outcome;
};

class NoAdmissibleLevel : public ConstructionError {
public:
    NoAdmissibleLevel(const std::string& what, std::vector<LevelOutcome> levels)
        : ConstructionError(what), levels(std::move(levels)) {}
    std::vector<LevelOutcome> levels;
};

/// Power function g(x) = x^p with p >= 1.
struct GSpec {
    double p = 1.0;
    double operator()(double x) const;
};

struct StoppingSchedule {
    double eps = 0.0;
    Coordinate coord = Coordinate::S;
    // stages[0] is the start antichain.
    std::vector<std::vector<NodeId>> stages;
    // Per node: stage index when the node is a stopping node, else -1.
    std::vector<int> stage_of;
    // Per stopping node: the stopping node it follows (kNoNode at stage 0).
    std::vector<NodeId> previous;
    // Per stopping node: its stopping descendants at the next stage (empty at leaves).
    std::vector<std::vector<NodeId>> next;

    std::size_t stage_count() const noexcept { return stages.size(); }
    /// Stopping nodes visited on the path root -> leaf.
    std::vector<NodeId> stops_on_path(const ScenarioTree& tree, NodeId leaf) const;
};

/// From every stopping node, the next one is the first strictly later node where the
/// coordinate moves by at least eps, or the leaf.
StoppingSchedule stopping_schedule(const ScenarioTree& tree, double eps, Coordinate c = Coordinate::S,
                                   const std::vector<NodeId>& start = {0});

enum class BudgetRule {
    // eta_n = eps / 2^n divided by the likelihood ratio dQ/dP accumulated at the node.
    LikelihoodScaled,
    // eta_n = eps / 2^n at every node.
    Uniform,
    // Backward induction: each node minimizes E_Q[w(increment) + cost-to-go] under the
    // mass, mean and floor constraints. No per-node eta.
    MinCost,
};

std::string to_string(BudgetRule r);
BudgetRule budget_rule_from_string(const std::string& s);

struct MeasureOptions {
    double f_min = 1e-8;
    double p_floor = 1e-6;
    BudgetRule budget = BudgetRule::LikelihoodScaled;
};

struct TiltAudit {
    NodeId node = kNoNode;
    int stage = 0;
    int atoms = 0;
    // Per-node budget; under MinCost the optimal cost-to-go at the node.
    double eta = 0.0;
    double likelihood = 1.0;
    TiltWeights weights;
};

struct MeasureChange {
    double eps = 0.0;
    MomentFunction w;
    BudgetRule budget = BudgetRule::LikelihoodScaled;
    // Per node: Z factor at stopping nodes after stage 0, 1 elsewhere.
    Vec z;
    // Per node: log of the product of Z factors on the path root -> node.
    Vec log_density;
    Vec p;
    Vec q;
    std::vector<TiltAudit> audit;

    /// Z factors along the path to `leaf`, one per stage 1..stage_count-1, padded with 1 after the path ends.
    Vec path_factors(const ScenarioTree& tree, const StoppingSchedule& schedule, NodeId leaf) const;
};

MeasureChange build_measure(const ScenarioTree& tree, const StoppingSchedule& schedule, const MomentFunction& w,
                            const MeasureOptions& options = {});

/// Q = P.
MeasureChange identity_measure(const ScenarioTree& tree);

struct MartingaleOverlay {
    Coordinate coord = Coordinate::S;
    std::vector<Vec> values;
};

MartingaleOverlay close_martingale(const ScenarioTree& tree, const MeasureChange& measure,
                                   Coordinate c = Coordinate::S);

struct MeasureChecks {
    double q_sum_error = 0.0;
    double min_q = 0.0;
    double normalization_error = 0.0;
    double martingale_error = 0.0;
    double root_pin_error = 0.0;
    double leaf_pin_error = 0.0;
    bool ok(double tol = 1e-10) const;
};

/// Measure sanity, E_P[Z|stop] = 1 and the Q-martingale identity of the overlay.
MeasureChecks check_measure(const ScenarioTree& tree, const StoppingSchedule& schedule, const MeasureChange& measure,
                            const MartingaleOverlay& overlay);

struct ApproximationReport {
    double eps = 0.0;
    double chi = 0.0;
    GSpec g;
    bool noise_used = false;
    std::string method;  // "identity" or "tilted"
    // E_Q g(sup_t |S_t - S~_t|).
    double achieved = 0.0;
    double bound = 0.0;
    // On noise runs: E_Q g(2 sup_t |Y_t - S~_t|) against g(4 eps) + 2 sqrt(eps).
    std::optional<double> achieved_y;
    std::optional<double> bound_y;
    // Sum over stages of E_Q w(M_n - M_{n-1}) on the schedule coordinate.
    double budget_sum = 0.0;
    bool budget_ok = false;
    // Pathwise sup deviation, checked when every one-step increment is at most eps.
    std::optional<double> max_sup;
    std::optional<double> pathwise_bound;
    std::optional<double> tv;
    int stages = 0;
    std::vector<TiltAudit> audit;
    MeasureChecks checks;

    bool bound_ok() const noexcept { return achieved <= bound && (!achieved_y || *achieved_y <= *bound_y); }
};

double bare_bound(const GSpec& g, double eps);
double noise_bound(const GSpec& g, double eps);

ApproximationReport verify_bound(const ScenarioTree& tree, const StoppingSchedule& schedule,
                                 const MeasureChange& measure, const MartingaleOverlay& overlay, const GSpec& g);

/// Per leaf: sup_t |S_t - S~_t|.
Vec sup_deviation(const ScenarioTree& tree, const MartingaleOverlay& overlay, Coordinate c = Coordinate::S);

/// Sum over leaves of |Q - P|.
double total_variation(const ScenarioTree& tree, const MeasureChange& measure);

struct LpMomentReport {
    double p = 1.0;
    double kappa = 1.0;
    double moment = 0.0;  // E_Q sup_t |S_t - S~_t|^p
    double stage_sum = 0.0;  // sum_n (E_Q |M_n - M_{n-1}|^kappa)^(1/kappa)
};

LpMomentReport lp_moment_report(const ScenarioTree& tree, const StoppingSchedule& schedule,
                                const MeasureChange& measure, const MartingaleOverlay& overlay, double p,
                                double kappa = 1.0);

/// Max over internal nodes of |E_P[S(child)|node] - S(node)|, restricted to `mask` when given.
double martingale_residual(const ScenarioTree& tree, Coordinate c = Coordinate::S,
                           const std::vector<bool>* mask = nullptr);

struct ApproxOptions {
    MeasureOptions measure;
    // Explicit decreasing eps grid; empty means eps_0 = oscillation / 4, ratio 1/2.
    Vec eps_grid;
    int rungs = 12;
    double ratio = 0.5;
    int noise_atoms = 3;
    double noise_fraction = 0.25;
    std::size_t node_cap = 2000000;
    bool allow_noise = true;
    // Rebuild with BudgetRule::MinCost when a per-node eta tilt is infeasible.
    bool min_cost_fallback = true;
};

struct Approximation {
    // Set on noise runs; the construction lives on this tree.
    std::optional<ScenarioTree> noise_tree;
    StoppingSchedule schedule;
    MeasureChange measure;
    MartingaleOverlay overlay;
    ApproximationReport report;
    std::vector<Attempt> attempts;

    const ScenarioTree& tree_used(const ScenarioTree& base) const { return noise_tree ? *noise_tree : base; }
};

Vec default_eps_grid(const ScenarioTree& tree, int rungs = 12, double ratio = 0.5);

Approximation approximate(const ScenarioTree& tree, const GSpec& g, double chi, const ApproxOptions& options = {});


struct LocalizeOptions {
    MeasureOptions measure;
    bool validate_martingale = true;
    bool min_cost_fallback = true;
    double martingale_tol = 1e-10;
};

struct Localization {
    std::size_t level_index = 0;
    StoppingSchedule schedule;
    MeasureChange measure;
    MartingaleOverlay overlay;
    ApproximationReport report;
    std::vector<LevelOutcome> levels;
};

/// First nodes with |S| >= level on each path, plus the leaves of paths that never get there.
std::vector<NodeId> hitting_antichain(const ScenarioTree& tree, double level);

Localization localize_and_build(const ScenarioTree& tree, const GSpec& g, double chi, double eps, const Vec& levels,
                                const LocalizeOptions& options = {});

}  // namespace sticky
