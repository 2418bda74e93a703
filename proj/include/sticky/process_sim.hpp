#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sticky/core.hpp"

namespace sticky {

/// M sampled d-dimensional paths on a uniform grid.
/// Storage is path-major: value (m, i, j) lives at (m * (N + 1) + i) * d + j.
struct PathEnsemble {
    TimeGrid grid;
    int dim = 1;
    int n_paths = 0;
    std::vector<double> data;
    std::vector<std::uint64_t> seeds;
    std::string model;
    nlohmann::json params = nlohmann::json::object();

    PathEnsemble() = default;
    PathEnsemble(TimeGrid g, int d, int m);

    int points() const noexcept { return grid.steps + 1; }
    double& at(int m, int i, int j = 0) { return data[(static_cast<std::size_t>(m) * points() + i) * dim + j]; }
    double at(int m, int i, int j = 0) const { return data[(static_cast<std::size_t>(m) * points() + i) * dim + j]; }
    std::span<const double> point(int m, int i) const {
        return {data.data() + (static_cast<std::size_t>(m) * points() + i) * dim, static_cast<std::size_t>(dim)};
    }
    /// Values of coordinate j at grid index i across all paths.
    Vec marginal(int i, int j = 0) const;
    bool all_finite() const;
};

/// Per-path seed derived from the run seed (splitmix64 finaliser over seed and index).
std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index) noexcept;

struct SimOptions {
    // 0 picks hardware concurrency.
    int threads = 0;
    bool serial = false;
};

struct LevyAtom {
    double size = 0.0;  // jump size theta
    double rate = 0.0;  // intensity lambda > 0
};

struct LevyParams {
    double drift = 0.0;
    double sigma = 0.0;
    std::vector<LevyAtom> jumps;

    void validate() const;
};

PathEnsemble simulate_levy(const LevyParams& params, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                           const SimOptions& options = {});

PathEnsemble simulate_fbm(double hurst, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                          const SimOptions& options = {});

/// Euler-Maruyama with registered coefficients.
///   drift: "zero", "mean_revert" (b(x) = -x), "unit" (b = 1 per coordinate)
///   vol:   "identity", "half", "double" (scalar multiples of the identity)
PathEnsemble simulate_sde(const std::string& drift_id, const std::string& vol_id, const Vec& x0,
                          const TimeGrid& grid, int n_paths, std::uint64_t seed, const SimOptions& options = {});

/// Exact: grid marginals of Y sampled exactly via the reflected modulus and
/// zero-hitting probability. Euler: plain Euler step with f = alpha at Y = 0.
enum class SkewScheme { Exact, Euler };

/// Skew Brownian motion with skewness beta, |beta| < 1: Y solves dY = f(Y) dW
/// and X = s^{-1}(Y).
PathEnsemble simulate_skew_bm(double beta, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                              const SimOptions& options = {}, SkewScheme scheme = SkewScheme::Exact);

double skew_alpha(double beta) noexcept;
double skew_scale(double x, double alpha) noexcept;
double skew_scale_inverse(double y, double alpha) noexcept;

/// Nonincreasing time change m with m(0) = 1.
///   "constant": m = 1
///   "bessel_r": m(t) = E(1 / R_t) for the 3-d Bessel process from 1
///   "linear":   m(t) = 1 - rate t
///   "exp":      m(t) = exp(-rate t)
struct TimeChange {
    std::string id = "constant";
    double rate = 0.0;

    double operator()(double t) const;
    void validate() const;
};

struct BesselOptions {
    int table_paths = 100000;
    int table_steps = 400;
    double horizon = 10.0;
    std::uint64_t table_seed = 0x5eed;
};

/// Monte Carlo table of r(u) = E(1 / R_u) on [0, horizon], forced nonincreasing.
struct BesselTable {
    double du = 0.0;
    Vec r;
    Vec se;

    double value(double u) const;
    /// Smallest u with r(u) <= m. Throws InvalidArgument outside [r.back(), 1].
    double inverse(double m) const;
};

BesselTable tabulate_bessel_inverse_moment(const BesselOptions& options, const SimOptions& sim = {});

/// M_t = 1 / R_{u(t)} with u = r^{-1}(m(t)).
PathEnsemble simulate_strict_local_martingale(const TimeChange& m, const TimeGrid& grid, int n_paths,
                                              std::uint64_t seed, const BesselOptions& bessel = {},
                                              const SimOptions& options = {});

/// Pointwise f(x, l). Registered ids: "first", "sum", "difference", "cbrt_abs".
PathEnsemble compose(const PathEnsemble& x, const PathEnsemble& l, const std::string& f_id);

enum class Stickiness { Sticky, NotSticky, Undetermined };

struct StickinessVerdict {
    Stickiness verdict = Stickiness::Undetermined;
    std::string reason;
};

const char* to_string(Stickiness s) noexcept;

/// small_jump_integral is the integral of |x| over [-1, 1] against the Levy
/// measure (may be +infinity); the flags say whether it charges every (-e, 0)
/// and (0, e).
StickinessVerdict classify_levy_stickiness(const LevyParams& params, double small_jump_integral,
                                           bool small_jump_left_mass, bool small_jump_right_mass);

}  // namespace sticky
