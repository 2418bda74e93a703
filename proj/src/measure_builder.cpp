#include "sticky/measure_builder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sticky {

namespace {

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

std::vector<Vec> coordinate_values(const ScenarioTree& tree, Coordinate c) {
    std::vector<Vec> v(tree.size());
    for (std::size_t i = 0; i < tree.size(); ++i) v[i] = tree.value(static_cast<NodeId>(i), c);
    return v;
}

Vec diff(const Vec& a, const Vec& b) {
    Vec d(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) d[j] = a[j] - b[j];
    return d;
}

// log P(node) as a compensated running sum of log edge probabilities.
Vec log_probabilities(const ScenarioTree& tree) {
    std::vector<CompensatedSum> acc(tree.size());
    Vec out(tree.size(), 0.0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const auto& n = tree.nodes[i];
        for (std::size_t k = 0; k < n.children.size(); ++k) {
            const NodeId c = n.children[k];
            acc[c] = acc[i];
            acc[c].add(std::log(n.probs[k]));
        }
        out[i] = acc[i].value();
    }
    return out;
}

void check_schedule(const ScenarioTree& tree, const StoppingSchedule& s) {
    if (s.stage_of.size() != tree.size() || s.next.size() != tree.size() || s.previous.size() != tree.size())
        throw InvalidArgument("schedule does not match the tree");
}

// Fills log_density, p and q from z.
void finish_measure(const ScenarioTree& tree, const Vec& logp, MeasureChange& m) {
    const std::size_t n = tree.size();
    std::vector<CompensatedSum> ld(n);
    m.log_density.assign(n, 0.0);
    m.p.assign(n, 0.0);
    m.q.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const NodeId par = tree.nodes[i].parent;
        if (par != kNoNode) ld[i] = ld[par];
        if (m.z[i] != 1.0) ld[i].add(std::log(m.z[i]));
        m.log_density[i] = ld[i].value();
        m.p[i] = std::exp(logp[i]);
    }
    for (std::size_t i = n; i-- > 0;) {
        const auto& nd = tree.nodes[i];
        if (nd.is_leaf()) {
            m.q[i] = std::exp(logp[i] + m.log_density[i]);
            continue;
        }
        CompensatedSum s;
        for (NodeId c : nd.children) s.add(m.q[c]);
        m.q[i] = s.value();
    }
}

struct StopData {
    AtomicLaw per_stop;  // one atom per stop, unmerged
    StopLaw merged;
};

StopData stop_data(const ScenarioTree& tree, const StoppingSchedule& s, const Vec& logp, NodeId v) {
    const auto& stops = s.next[v];
    Vec probs(stops.size());
    CompensatedSum total;
    for (std::size_t i = 0; i < stops.size(); ++i) {
        probs[i] = std::exp(logp[stops[i]] - logp[v]);
        total.add(probs[i]);
    }
    for (double& p : probs) p /= total.value();
    StopData d;
    d.merged = aggregate_stop_law(tree, v, stops, probs, s.coord);
    const Vec base = tree.value(v, s.coord);
    d.per_stop.probs = probs;
    for (NodeId u : stops) d.per_stop.atoms.push_back(diff(tree.value(u, s.coord), base));
    return d;
}

}  // namespace

double GSpec::operator()(double x) const { return std::pow(x, p); }

std::vector<NodeId> StoppingSchedule::stops_on_path(const ScenarioTree& tree, NodeId leaf) const {
    std::vector<NodeId> out;
    for (NodeId u : tree.ancestry(leaf))
        if (stage_of[u] >= 0) out.push_back(u);
    return out;
}

StoppingSchedule stopping_schedule(const ScenarioTree& tree, double eps, Coordinate c,
                                   const std::vector<NodeId>& start) {
    if (!(eps > 0.0)) throw InvalidArgument("schedule: eps must be positive");
    if (tree.size() == 0) throw InvalidArgument("schedule: empty tree");
    if (c == Coordinate::Y && !tree.has_noise()) throw InvalidArgument("schedule: tree has no noise coordinate");
    // The start set must meet every root-to-leaf path exactly once.
    std::vector<char> is_start(tree.size(), 0);
    for (NodeId s : start) {
        if (s < 0 || static_cast<std::size_t>(s) >= tree.size())
            throw InvalidArgument("schedule: start node " + std::to_string(s) + " out of range");
        is_start[s] = 1;
    }
    std::vector<int> seen(tree.size(), 0);
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId par = tree.nodes[i].parent;
        seen[i] = (par == kNoNode ? 0 : seen[par]) + is_start[i];
        if (seen[i] > 1) throw InvalidArgument("schedule: start nodes overlap at node " + std::to_string(i));
        if (tree.nodes[i].is_leaf() && seen[i] == 0)
            throw InvalidArgument("schedule: leaf " + std::to_string(i) + " not covered by the start antichain");
    }

    const auto val = coordinate_values(tree, c);
    StoppingSchedule s;
    s.eps = eps;
    s.coord = c;
    s.stage_of.assign(tree.size(), -1);
    s.previous.assign(tree.size(), kNoNode);
    s.next.assign(tree.size(), {});
    s.stages.push_back(start);
    for (NodeId v : start) s.stage_of[v] = 0;
    std::vector<NodeId> stack;
    for (std::size_t n = 0; n < s.stages.size(); ++n) {
        std::vector<NodeId> following;
        for (NodeId v : s.stages[n]) {
            const auto& nd = tree.node(v);
            for (std::size_t k = nd.children.size(); k-- > 0;) stack.push_back(nd.children[k]);
            while (!stack.empty()) {
                const NodeId u = stack.back();
                stack.pop_back();
                const auto& un = tree.node(u);
                if (un.is_leaf() || distance(val[u], val[v]) >= eps) {
                    s.next[v].push_back(u);
                    s.previous[u] = v;
                    s.stage_of[u] = static_cast<int>(n + 1);
                    following.push_back(u);
                    continue;
                }
                for (std::size_t k = un.children.size(); k-- > 0;) stack.push_back(un.children[k]);
            }
        }
        if (!following.empty()) s.stages.push_back(std::move(following));
    }
    return s;
}

std::string to_string(BudgetRule r) {
    switch (r) {
        case BudgetRule::LikelihoodScaled: return "likelihood_scaled";
        case BudgetRule::Uniform: return "uniform";
        case BudgetRule::MinCost: return "min_cost";
    }
    return "?";
}

BudgetRule budget_rule_from_string(const std::string& s) {
    if (s == "likelihood_scaled") return BudgetRule::LikelihoodScaled;
    if (s == "uniform") return BudgetRule::Uniform;
    if (s == "min_cost") return BudgetRule::MinCost;
    throw InvalidArgument("unknown budget rule '" + s + "' (likelihood_scaled, uniform, min_cost)");
}

Vec MeasureChange::path_factors(const ScenarioTree& tree, const StoppingSchedule& schedule, NodeId leaf) const {
    Vec out(schedule.stage_count() > 0 ? schedule.stage_count() - 1 : 0, 1.0);
    for (NodeId u : schedule.stops_on_path(tree, leaf)) {
        const int n = schedule.stage_of[u];
        if (n >= 1) out[n - 1] = z[u];
    }
    return out;
}

MeasureChange identity_measure(const ScenarioTree& tree) {
    MeasureChange m;
    m.z.assign(tree.size(), 1.0);
    finish_measure(tree, log_probabilities(tree), m);
    return m;
}

MeasureChange build_measure(const ScenarioTree& tree, const StoppingSchedule& schedule, const MomentFunction& w,
                            const MeasureOptions& options) {
    check_schedule(tree, schedule);
    MeasureChange m;
    m.eps = schedule.eps;
    m.w = w;
    m.budget = options.budget;
    m.z.assign(tree.size(), 1.0);
    const Vec logp = log_probabilities(tree);
    const TiltOptions base{options.p_floor, kNoNode};

    if (options.budget == BudgetRule::MinCost) {
        Vec cost_to_go(tree.size(), 0.0);
        for (std::size_t n = schedule.stage_count(); n-- > 0;) {
            for (NodeId v : schedule.stages[n]) {
                if (schedule.next[v].empty()) continue;
                const StopData d = stop_data(tree, schedule, logp, v);
                Vec cost(d.per_stop.size());
                for (std::size_t i = 0; i < cost.size(); ++i)
                    cost[i] = w(d.per_stop.atoms[i]) + cost_to_go[schedule.next[v][i]];
                TiltOptions o = base;
                o.node = v;
                TiltAudit a{v, static_cast<int>(n + 1), static_cast<int>(d.merged.law.size()), 0.0, 1.0,
                            min_cost_tilt(d.per_stop, cost, w, options.f_min, o)};
                CompensatedSum ctg;
                for (std::size_t i = 0; i < cost.size(); ++i) {
                    const NodeId s = schedule.next[v][i];
                    m.z[s] = a.weights.f[i];
                    ctg.add(a.weights.f[i] * d.per_stop.probs[i] * cost[i]);
                }
                cost_to_go[v] = ctg.value();
                a.eta = cost_to_go[v];
                m.audit.push_back(std::move(a));
            }
        }
        std::reverse(m.audit.begin(), m.audit.end());
        finish_measure(tree, logp, m);
        for (auto& a : m.audit) a.likelihood = std::exp(m.log_density[a.node]);
        return m;
    }

    // Forward pass: the likelihood at a stage-n node is known once stage n-1 is tilted.
    std::vector<CompensatedSum> ld(tree.size());
    for (std::size_t n = 0; n + 1 < schedule.stage_count(); ++n) {
        const double eta_n = schedule.eps / std::ldexp(1.0, static_cast<int>(n + 1));
        for (NodeId v : schedule.stages[n]) {
            if (schedule.next[v].empty()) continue;
            const StopData d = stop_data(tree, schedule, logp, v);
            const double lik = std::exp(ld[v].value());
            const double eta = options.budget == BudgetRule::LikelihoodScaled ? eta_n / lik : eta_n;
            TiltOptions o = base;
            o.node = v;
            TiltAudit a{v, static_cast<int>(n + 1), static_cast<int>(d.merged.law.size()), eta, lik,
                        tilt_or_identity(d.merged.law, eta, w, options.f_min, o)};
            for (std::size_t i = 0; i < schedule.next[v].size(); ++i) {
                const NodeId s = schedule.next[v][i];
                m.z[s] = a.weights.f[d.merged.atom_of_stop[i]];
                ld[s] = ld[v];
                ld[s].add(std::log(m.z[s]));
            }
            m.audit.push_back(std::move(a));
        }
    }
    finish_measure(tree, logp, m);
    return m;
}

MartingaleOverlay close_martingale(const ScenarioTree& tree, const MeasureChange& measure, Coordinate c) {
    MartingaleOverlay o;
    o.coord = c;
    o.values.resize(tree.size());
    for (std::size_t i = tree.size(); i-- > 0;) {
        const auto& nd = tree.nodes[i];
        if (nd.is_leaf()) {
            o.values[i] = tree.value(static_cast<NodeId>(i), c);
            continue;
        }
        std::vector<CompensatedSum> acc(tree.dim);
        for (NodeId ch : nd.children) {
            const double q = measure.q[ch] / measure.q[i];
            for (int j = 0; j < tree.dim; ++j) acc[j].add(q * o.values[ch][j]);
        }
        o.values[i].resize(tree.dim);
        for (int j = 0; j < tree.dim; ++j) o.values[i][j] = acc[j].value();
    }
    return o;
}

bool MeasureChecks::ok(double tol) const {
    return q_sum_error <= tol && min_q > 0.0 && normalization_error <= tol && martingale_error <= tol &&
           root_pin_error <= tol && leaf_pin_error == 0.0;
}

MeasureChecks check_measure(const ScenarioTree& tree, const StoppingSchedule& schedule, const MeasureChange& measure,
                            const MartingaleOverlay& overlay) {
    MeasureChecks r;
    r.min_q = std::numeric_limits<double>::infinity();
    CompensatedSum total;
    for (NodeId l : tree.leaves()) {
        total.add(measure.q[l]);
        r.min_q = std::min(r.min_q, measure.q[l]);
        const Vec v = tree.value(l, overlay.coord);
        for (int j = 0; j < tree.dim; ++j)
            r.leaf_pin_error = std::max(r.leaf_pin_error, std::abs(v[j] - overlay.values[l][j]));
    }
    r.q_sum_error = std::abs(total.value() - 1.0);
    for (std::size_t v = 0; v < tree.size(); ++v) {
        const auto& stops = schedule.next[v];
        if (!stops.empty()) {
            CompensatedSum e;
            for (NodeId s : stops) e.add(measure.p[s] / measure.p[v] * measure.z[s]);
            r.normalization_error = std::max(r.normalization_error, std::abs(e.value() - 1.0));
        }
        const auto& nd = tree.nodes[v];
        if (nd.is_leaf()) continue;
        for (int j = 0; j < tree.dim; ++j) {
            CompensatedSum acc;
            for (NodeId ch : nd.children) acc.add(measure.q[ch] / measure.q[v] * overlay.values[ch][j]);
            r.martingale_error = std::max(r.martingale_error, std::abs(acc.value() - overlay.values[v][j]));
        }
    }
    const Vec root = tree.value(0, overlay.coord);
    for (int j = 0; j < tree.dim; ++j) r.root_pin_error = std::max(r.root_pin_error, std::abs(root[j] - overlay.values[0][j]));
    return r;
}

double bare_bound(const GSpec& g, double eps) { return g(2.0 * eps) + 2.0 * std::sqrt(eps); }

double noise_bound(const GSpec& g, double eps) {
    return (g(4.0 * eps) + 2.0 * std::sqrt(eps)) / 2.0 + g(2.0 * eps) / 2.0;
}

Vec sup_deviation(const ScenarioTree& tree, const MartingaleOverlay& overlay, Coordinate c) {
    Vec run(tree.size(), 0.0);
    Vec out;
    for (std::size_t i = 0; i < tree.size(); ++i) {
        const NodeId par = tree.nodes[i].parent;
        const double dev = distance(tree.value(static_cast<NodeId>(i), c), overlay.values[i]);
        run[i] = std::max(par == kNoNode ? 0.0 : run[par], dev);
        if (tree.nodes[i].is_leaf()) out.push_back(run[i]);
    }
    return out;
}

double total_variation(const ScenarioTree& tree, const MeasureChange& measure) {
    CompensatedSum s;
    for (NodeId l : tree.leaves()) s.add(std::abs(measure.q[l] - measure.p[l]));
    return s.value();
}

ApproximationReport verify_bound(const ScenarioTree& tree, const StoppingSchedule& schedule,
                                 const MeasureChange& measure, const MartingaleOverlay& overlay, const GSpec& g) {
    check_schedule(tree, schedule);
    ApproximationReport r;
    r.eps = schedule.eps;
    r.g = g;
    r.noise_used = overlay.coord == Coordinate::Y;
    r.method = measure.audit.empty() ? "identity" : "tilted";
    r.stages = static_cast<int>(schedule.stage_count());
    r.audit = measure.audit;
    const double eps = schedule.eps;
    const auto leaves = tree.leaves();

    const Vec sup_s = sup_deviation(tree, overlay, Coordinate::S);
    CompensatedSum ach;
    for (std::size_t i = 0; i < leaves.size(); ++i) ach.add(measure.q[leaves[i]] * g(sup_s[i]));
    r.achieved = ach.value();
    if (r.noise_used) {
        const Vec sup_y = sup_deviation(tree, overlay, Coordinate::Y);
        CompensatedSum ay;
        for (std::size_t i = 0; i < leaves.size(); ++i) ay.add(measure.q[leaves[i]] * g(2.0 * sup_y[i]));
        r.achieved_y = ay.value();
        r.bound_y = g(4.0 * eps) + 2.0 * std::sqrt(eps);
        r.bound = noise_bound(g, eps);
    } else {
        r.bound = bare_bound(g, eps);
    }

    // Sum over stages of E_Q w(M_n - M_{n-1}) with the moment function used for the tilts.
    const auto val = coordinate_values(tree, schedule.coord);
    CompensatedSum budget;
    double overshoot = 0.0;
    for (std::size_t u = 0; u < tree.size(); ++u) {
        const NodeId prev = schedule.previous[u];
        if (prev == kNoNode) continue;
        const Vec d = diff(val[u], val[prev]);
        budget.add(measure.q[u] * measure.w(d));
        overshoot = std::max(overshoot, norm(d) - eps);
    }
    r.budget_sum = budget.value();
    r.budget_ok = r.budget_sum < eps;

    double max_step = 0.0;
    for (std::size_t u = 1; u < tree.size(); ++u)
        max_step = std::max(max_step, distance(val[u], val[tree.nodes[u].parent]));
    if (max_step <= eps) {
        const Vec sup_c = sup_deviation(tree, overlay, schedule.coord);
        r.max_sup = sup_c.empty() ? 0.0 : *std::max_element(sup_c.begin(), sup_c.end());
        r.pathwise_bound = 2.0 * eps + std::max(0.0, overshoot);
    }
    r.checks = check_measure(tree, schedule, measure, overlay);
    return r;
}

LpMomentReport lp_moment_report(const ScenarioTree& tree, const StoppingSchedule& schedule,
                                const MeasureChange& measure, const MartingaleOverlay& overlay, double p,
                                double kappa) {
    if (!(p >= 1.0) || !(kappa >= 1.0)) throw InvalidArgument("lp report: p and kappa must be >= 1");
    LpMomentReport r;
    r.p = p;
    r.kappa = kappa;
    const auto leaves = tree.leaves();
    const Vec sup = sup_deviation(tree, overlay, Coordinate::S);
    CompensatedSum m;
    for (std::size_t i = 0; i < leaves.size(); ++i) m.add(measure.q[leaves[i]] * std::pow(sup[i], p));
    r.moment = m.value();
    const auto val = coordinate_values(tree, schedule.coord);
    for (std::size_t n = 1; n < schedule.stage_count(); ++n) {
        CompensatedSum s;
        for (NodeId u : schedule.stages[n])
            s.add(measure.q[u] * std::pow(distance(val[u], val[schedule.previous[u]]), kappa));
        r.stage_sum += std::pow(s.value(), 1.0 / kappa);
    }
    return r;
}

double martingale_residual(const ScenarioTree& tree, Coordinate c, const std::vector<bool>* mask) {
    double worst = 0.0;
    for (std::size_t v = 0; v < tree.size(); ++v) {
        const auto& nd = tree.nodes[v];
        if (nd.is_leaf() || (mask && !(*mask)[v])) continue;
        const Vec base = tree.value(static_cast<NodeId>(v), c);
        for (int j = 0; j < tree.dim; ++j) {
            CompensatedSum acc;
            for (std::size_t k = 0; k < nd.children.size(); ++k)
                acc.add(nd.probs[k] * (tree.value(nd.children[k], c)[j] - base[j]));
            worst = std::max(worst, std::abs(acc.value()));
        }
    }
    return worst;
}

Vec default_eps_grid(const ScenarioTree& tree, int rungs, double ratio) {
    if (rungs < 1 || !(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("eps grid: need rungs >= 1, ratio in (0,1)");
    double osc = 0.0;
    for (const auto& rec : path_table(tree)) {
        std::vector<Vec> pts;
        for (NodeId u : rec.nodes) pts.push_back(tree.value(u));
        for (std::size_t a = 0; a < pts.size(); ++a)
            for (std::size_t b = a + 1; b < pts.size(); ++b) osc = std::max(osc, distance(pts[a], pts[b]));
    }
    Vec grid(rungs);
    grid[0] = osc > 0.0 ? osc / 4.0 : 1.0;
    for (int i = 1; i < rungs; ++i) grid[i] = grid[i - 1] * ratio;
    return grid;
}

namespace {

struct Run {
    StoppingSchedule schedule;
    MeasureChange measure;
    MartingaleOverlay overlay;
    ApproximationReport report;
};

Run run_once(const ScenarioTree& tree, double eps, Coordinate c, const GSpec& g, const MomentFunction& w,
             const MeasureOptions& mo, const std::vector<NodeId>& start = {0}) {
    Run r;
    r.schedule = stopping_schedule(tree, eps, c, start);
    r.measure = build_measure(tree, r.schedule, w, mo);
    r.overlay = close_martingale(tree, r.measure, c);
    r.report = verify_bound(tree, r.schedule, r.measure, r.overlay, g);
    return r;
}

// Per-node eta first; the min-cost rule when some node cannot meet its eta.
Run run_with_fallback(const ScenarioTree& tree, double eps, Coordinate c, const GSpec& g, const MomentFunction& w,
                      MeasureOptions mo, bool fallback, std::vector<Attempt>* log, bool noise,
                      const std::vector<NodeId>& start = {0}) {
    try {
        return run_once(tree, eps, c, g, w, mo, start);
    } catch (const InfeasibleTilt& e) {
        if (!fallback || mo.budget == BudgetRule::MinCost) throw;
        if (log) log->push_back({eps, noise, std::string("infeasible tilt, retry with min_cost: ") + e.what(), {}});
        mo.budget = BudgetRule::MinCost;
        return run_once(tree, eps, c, g, w, mo, start);
    }
}

bool run_ok(const ApproximationReport& r) { return r.checks.ok() && r.budget_ok && r.bound_ok(); }

}  // namespace

Approximation approximate(const ScenarioTree& tree, const GSpec& g, double chi, const ApproxOptions& options) {
    if (!(chi > 0.0)) throw InvalidArgument("approximate: chi must be positive");
    if (!(g.p >= 1.0)) throw InvalidArgument("approximate: g(x) = x^p needs p >= 1");
    const Vec grid = options.eps_grid.empty() ? default_eps_grid(tree, options.rungs, options.ratio) : options.eps_grid;
    Approximation out;

    if (martingale_residual(tree) <= 1e-12) {
        out.schedule = stopping_schedule(tree, grid.front());
        out.measure = identity_measure(tree);
        out.measure.eps = grid.front();
        out.measure.w = MomentFunction::g_combo(g.p, 2.0);
        out.overlay.coord = Coordinate::S;
        for (std::size_t i = 0; i < tree.size(); ++i) out.overlay.values.push_back(tree.nodes[i].s);
        out.report = verify_bound(tree, out.schedule, out.measure, out.overlay, g);
        out.report.chi = chi;
        out.report.method = "identity";
        out.attempts.push_back({grid.front(), false, "P is already a martingale measure", out.report.achieved});
        return out;
    }

    std::optional<double> best;
    auto note = [&](const Run& r) {
        if (!best || r.report.achieved < *best) best = r.report.achieved;
    };
    for (double eps : grid) {
        if (noise_bound(g, eps) >= chi) {
            out.attempts.push_back({eps, false, "bound " + fmt(noise_bound(g, eps)) + " >= chi", {}});
            continue;
        }
        Run run;
        bool have = false;
        try {
            run = run_with_fallback(tree, eps, Coordinate::S, g, MomentFunction::g_combo(g.p, 2.0), options.measure,
                                    options.min_cost_fallback, &out.attempts, false);
            have = true;
        } catch (const GeometryViolation& e) {
            out.attempts.push_back({eps, false, e.what(), {}});
            if (!options.allow_noise)
                throw PersistentGeometryViolation(std::string(e.what()) + " (noise retry disabled)", e.node());
            const double a = eps * options.noise_fraction;
            const NoiseSpec spec{a, options.noise_atoms, 1.0 / a};
            ScenarioTree nt = product_tree(tree, spec, options.node_cap);
            try {
                run = run_with_fallback(nt, eps, Coordinate::Y, g, MomentFunction::g_combo(g.p, 4.0),
                                        options.measure, options.min_cost_fallback, &out.attempts, true);
            } catch (const GeometryViolation& e2) {
                throw PersistentGeometryViolation(std::string("after noise retry: ") + e2.what(), e2.node());
            } catch (const InfeasibleTilt& e2) {
                out.attempts.push_back({eps, true, e2.what(), {}});
                continue;
            }
            note(run);
            run.report.chi = chi;
            out.attempts.push_back({eps, true, run_ok(run.report) ? "ok" : "checks failed", run.report.achieved});
            if (run_ok(run.report) && run.report.achieved < chi) {
                out.noise_tree = std::move(nt);
                out.schedule = std::move(run.schedule);
                out.measure = std::move(run.measure);
                out.overlay = std::move(run.overlay);
                out.report = std::move(run.report);
                return out;
            }
            continue;
        } catch (const InfeasibleTilt& e) {
            out.attempts.push_back({eps, false, e.what(), {}});
            continue;
        }
        if (have) {
            note(run);
            run.report.chi = chi;
            out.attempts.push_back({eps, false, run_ok(run.report) ? "ok" : "checks failed", run.report.achieved});
            if (run_ok(run.report) && run.report.achieved < chi) {
                out.schedule = std::move(run.schedule);
                out.measure = std::move(run.measure);
                out.overlay = std::move(run.overlay);
                out.report = std::move(run.report);
                return out;
            }
        }
    }
    throw ExhaustedGrid("approximate: no eps on the grid meets chi=" + fmt(chi) +
                            (best ? "; best achieved " + fmt(*best) : std::string("; no successful construction")),
                        best, std::move(out.attempts));
}

std::vector<NodeId> hitting_antichain(const ScenarioTree& tree, double level) {
    std::vector<NodeId> out;
    std::vector<NodeId> stack{0};
    while (!stack.empty()) {
        const NodeId u = stack.back();
        stack.pop_back();
        const auto& nd = tree.node(u);
        if (norm(nd.s) >= level || nd.is_leaf()) {
            out.push_back(u);
            continue;
        }
        for (std::size_t k = nd.children.size(); k-- > 0;) stack.push_back(nd.children[k]);
    }
    return out;
}

Localization localize_and_build(const ScenarioTree& tree, const GSpec& g, double chi, double eps, const Vec& levels,
                                const LocalizeOptions& options) {
    if (!(chi > 0.0) || !(eps > 0.0)) throw InvalidArgument("localize: chi and eps must be positive");
    if (levels.empty()) throw InvalidArgument("localize: need at least one level");
    for (std::size_t k = 1; k < levels.size(); ++k)
        if (!(levels[k] > levels[k - 1])) throw InvalidArgument("localize: levels must increase");

    Localization out;
    std::optional<std::size_t> chosen;
    const Vec p_node = tree.node_probabilities();
    for (std::size_t k = 0; k < levels.size(); ++k) {
        LevelOutcome lo;
        lo.level = levels[k];
        const auto start = hitting_antichain(tree, levels[k]);
        std::vector<bool> before(tree.size(), false);
        for (NodeId s : start) {
            if (norm(tree.node(s).s) >= levels[k]) lo.hit_probability += p_node[s];
            for (NodeId u = tree.node(s).parent; u != kNoNode; u = tree.node(u).parent) before[u] = true;
        }
        if (options.validate_martingale) {
            const double res = martingale_residual(tree, Coordinate::S, &before);
            if (res > options.martingale_tol)
                throw InvalidArgument("localize: S is not a P-martingale before the level " + fmt(levels[k]) +
                                      " hitting time (residual " + fmt(res) + ")");
        }
        try {
            Run run = run_with_fallback(tree, eps, Coordinate::S, g, MomentFunction::g_combo(g.p, 2.0),
                                        options.measure, options.min_cost_fallback, nullptr, false, start);
            run.report.chi = chi;
            run.report.tv = total_variation(tree, run.measure);
            lo.tv = run.report.tv;
            lo.achieved = run.report.achieved;
            lo.bound = run.report.bound;
            const bool ok = run_ok(run.report) && *lo.tv < chi && run.report.achieved < chi;
            lo.outcome = ok                              ? "ok"
                         : !run.report.checks.ok()       ? "measure or martingale checks failed"
                         : !run.report.budget_ok         ? "budget not below eps"
                         : *lo.tv >= chi                 ? "tv not below chi"
                                                         : "bound not met";
            if (ok && !chosen) {
                chosen = k;
                out.level_index = k;
                out.schedule = std::move(run.schedule);
                out.measure = std::move(run.measure);
                out.overlay = std::move(run.overlay);
                out.report = std::move(run.report);
            }
        } catch (const ConstructionError& e) {
            lo.outcome = e.what();
        }
        out.levels.push_back(std::move(lo));
    }
    if (!chosen) throw NoAdmissibleLevel("localize: no level gives tv < chi=" + fmt(chi), out.levels);
    return out;
}

}  // namespace sticky
