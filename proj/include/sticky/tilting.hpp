#pragma once

#include <string>
#include <vector>

#include "sticky/core.hpp"

namespace sticky {

/// A finite law on R^d: distinct atoms with strictly positive probabilities.
struct AtomicLaw {
    std::vector<Vec> atoms;
    Vec probs;

    std::size_t size() const noexcept { return atoms.size(); }
    int dim() const noexcept { return atoms.empty() ? 0 : static_cast<int>(atoms.front().size()); }

    /// Throws InvalidArgument unless probabilities are positive and sum to 1 within `tol`.
    void validate(double tol = 1e-12) const;
    /// True when the law is the point mass at the origin (within `tol`).
    bool is_dirac_at_zero(double tol = 1e-12) const;
    Vec mean() const;
};

struct SupportGeometry {
    int affine_dim = 0;
    bool zero_in_relative_interior = false;

    /// Probability of the closed ball B(0, r).
    double mass_in_ball(double r) const;

    // Atom norms and probabilities backing mass_in_ball.
    Vec atom_norms;
    Vec atom_probs;
};

SupportGeometry support_geometry(const AtomicLaw& law);

/// Weight functions w with w(0) = 0 and w(x) >= |x|.
///   Abs:    w(x) = |x|
///   GCombo: w(x) = (scale |x|)^(2 exponent) + |x|        (g(x) = x^exponent, scale 2)
///   Na2:    w(x) = (scale |x|)^(2 exponent) + 2 |x|      (exponent = delta, scale 4)
struct MomentFunction {
    enum class Form { Abs, GCombo, Na2 };
    Form form = Form::Abs;
    double exponent = 1.0;
    double scale = 1.0;

    static MomentFunction abs() { return {}; }
    static MomentFunction g_combo(double p, double scale = 2.0) { return {Form::GCombo, p, scale}; }
    static MomentFunction na2(double delta, double scale = 4.0) { return {Form::Na2, delta, scale}; }

    double of_norm(double r) const;
    double operator()(std::span<const double> y) const { return of_norm(norm(y)); }

    /// Checks continuity-free invariants w(0) = 0 and w(x) >= |x| on a sample grid.
    bool satisfies_invariants() const;
    std::string describe() const;
};

struct TiltWeights {
    Vec f;
    double mass = 0.0;
    Vec mean;
    double w_moment = 0.0;
    double tail_mass = 0.0;
    double eta = 0.0;
    double f_min = 0.0;
    bool cap_hit = false;
    // "identity", "staged" (two-part construction) or "direct" (minimax LP fallback)
    std::string method;
};

struct TiltOptions {
    double p_floor = 1e-6;
    // Node id reported in errors.
    NodeId node = kNoNode;
};

/// Strictly positive reweighting f with E f = 1, E f Y = 0, E f w(Y) < eta,
/// E f 1{|Y| >= eta} < eta and f >= f_min.
TiltWeights solve_tilt(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min = 1e-8,
                       const TiltOptions& options = {});

/// All-ones weights for the Dirac law at 0, otherwise solve_tilt.
TiltWeights tilt_or_identity(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min = 1e-8,
                             const TiltOptions& options = {});

/// Recomputes the achieved quadruple for the given weights.
void evaluate_tilt(const AtomicLaw& law, const MomentFunction& w, TiltWeights& weights);

/// True when all five constraint inequalities hold (mass and mean within `tol`).
bool tilt_constraints_hold(const TiltWeights& weights, double tol = 1e-10);

/// Exact LP feasibility decision for the tilt constraints at budget eta.
bool tilt_feasible(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min = 1e-8);

/// Minimizes sum_i q_i cost_i over q >= f_min p with sum q = 1 and sum q y = 0; f = q / p.
/// Atoms may repeat. Only the geometry precondition is checked; eta is reported as +inf.
TiltWeights min_cost_tilt(const AtomicLaw& law, const Vec& cost, const MomentFunction& w, double f_min = 1e-8,
                          const TiltOptions& options = {});

}  // namespace sticky
