#pragma once

#include <string>
#include <vector>

#include "sticky/measure_builder.hpp"

namespace sticky {

/// Power trading cost G(x) = H |x|^alpha.
struct CostSpec {
    double H = 1.0;
    double alpha = 2.0;
    std::string form = "power";

    /// Throws InvalidArgument unless H > 0, alpha > 1 and form is "power".
    void validate() const;
    double operator()(std::span<const double> x) const;
};

/// C with G*(y) = C |y|^(alpha/(alpha-1)); an equality for power costs.
double conjugate_growth_constant(const CostSpec& cost);

/// G*(y) = sup_x (x y - G(x)), closed form.
double conjugate(const CostSpec& cost, std::span<const double> y);

bool check_superlinearity(const CostSpec& cost);

struct Na2Exponents {
    double beta = 0.0;
    double gamma = 0.0;    // beta / (beta - 1)
    double moment = 0.0;   // beta alpha / (alpha - beta)
    double delta = 0.0;    // max(gamma, moment)
    double slope = 0.0;    // alpha / ((alpha - 1) delta)
};

/// Throws InvalidArgument unless 1 < beta < alpha.
Na2Exponents na2_exponents(const CostSpec& cost, double beta);

struct Na2Certificate {
    Na2Exponents exponents;
    double chi = 0.0;
    double C = 0.0;
    // E_Q sum_t G*(S~_t - S_t) dt, left Riemann sum.
    double dual_gap = 0.0;
    // E_Q sum_t (1 + |S_t|)^(beta alpha / (alpha - beta)) dt.
    double moment = 0.0;
    // E_Q |Z_T|^gamma with Z = (1, S~).
    double z_integrability = 0.0;
    // E_Q sup_t |S_t - S~_t|^delta.
    double achieved_chi = 0.0;
    // T C chi^slope for the requested chi and for the achieved one.
    double predicted_bound = 0.0;
    double predicted_from_achieved = 0.0;
    bool pass = false;
    std::string note;
};

Na2Certificate certify(const ScenarioTree& tree, const MeasureChange& measure, const MartingaleOverlay& overlay,
                       const CostSpec& cost, double beta, double chi);

struct ScalingRow {
    double eps = 0.0;
    double achieved_chi = 0.0;
    double dual_gap = 0.0;
    double bound = 0.0;
};

struct ScalingLaw {
    std::vector<ScalingRow> rows;
    double slope = 0.0;        // least-squares slope of log gap on log chi
    double predicted = 0.0;    // alpha / ((alpha - 1) delta)
    bool gap_decreasing = false;
};

/// Builds the measure for each eps with w = (4|x|)^(2 delta) + 2|x| and certifies it.
ScalingLaw na2_scaling(const ScenarioTree& tree, const CostSpec& cost, double beta, const Vec& eps_grid,
                       const MeasureOptions& options = {});

/// Least-squares slope of y on x.
double regression_slope(const Vec& x, const Vec& y);

}  // namespace sticky
