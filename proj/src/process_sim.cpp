#include "sticky/process_sim.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

namespace sticky {

namespace {

using Rng = std::mt19937_64;

int thread_count(const SimOptions& o, int work) {
    if (o.serial) return 1;
    int t = o.threads > 0 ? o.threads : static_cast<int>(std::thread::hardware_concurrency());
    return std::clamp(t, 1, std::max(1, work));
}

// Runs fn(k) for k in [0, count), strided over worker threads.
template <class F>
void parallel_for(int count, const SimOptions& o, F&& fn) {
    const int n = thread_count(o, count);
    if (n == 1) {
        for (int k = 0; k < count; ++k) fn(k);
        return;
    }
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (int t = 0; t < n; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int k = t; k < count; k += n) fn(k);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

void check_paths(int n_paths) {
    if (n_paths < 1) throw InvalidArgument("n_paths must be >= 1");
}

PathEnsemble make_ensemble(const TimeGrid& grid, int dim, int n_paths, std::uint64_t seed, std::string model) {
    PathEnsemble e(grid, dim, n_paths);
    for (int m = 0; m < n_paths; ++m) e.seeds[m] = path_seed(seed, static_cast<std::uint64_t>(m));
    e.model = std::move(model);
    e.params["seed"] = seed;
    return e;
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

PathEnsemble::PathEnsemble(TimeGrid g, int d, int m) : grid(g), dim(d), n_paths(m) {
    if (d < 1) throw InvalidArgument("PathEnsemble: dim must be >= 1");
    if (m < 0) throw InvalidArgument("PathEnsemble: negative path count");
    data.assign(static_cast<std::size_t>(m) * (g.steps + 1) * d, 0.0);
    seeds.assign(m, 0);
}

Vec PathEnsemble::marginal(int i, int j) const {
    Vec out(n_paths);
    for (int m = 0; m < n_paths; ++m) out[m] = at(m, i, j);
    return out;
}

bool PathEnsemble::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index) noexcept {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void LevyParams::validate() const {
    if (!std::isfinite(drift)) throw InvalidArgument("levy: drift must be finite");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("levy: sigma must be >= 0");
    for (const auto& a : jumps) {
        if (!(a.rate > 0.0) || !std::isfinite(a.rate)) throw InvalidArgument("levy: jump rates must be positive");
        if (!std::isfinite(a.size)) throw InvalidArgument("levy: jump sizes must be finite");
    }
}

PathEnsemble simulate_levy(const LevyParams& params, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                           const SimOptions& options) {
    params.validate();
    check_paths(n_paths);
    auto e = make_ensemble(grid, 1, n_paths, seed, "levy");
    e.params["drift"] = params.drift;
    e.params["sigma"] = params.sigma;
    for (const auto& a : params.jumps) e.params["jumps"].push_back({a.size, a.rate});

    const double dt = grid.dt();
    const double sdt = std::sqrt(dt);
    double compensator = 0.0;
    for (const auto& a : params.jumps)
        if (std::abs(a.size) < 1.0) compensator += a.size * a.rate * dt;

    parallel_for(n_paths, options, [&](int m) {
        Rng rng(e.seeds[m]);
        std::normal_distribution<double> normal;
        std::vector<std::poisson_distribution<int>> counts;
        for (const auto& a : params.jumps) counts.emplace_back(a.rate * dt);
        double x = 0.0;
        for (int i = 1; i <= grid.steps; ++i) {
            double dx = params.drift * dt - compensator;
            if (params.sigma > 0.0) dx += params.sigma * sdt * normal(rng);
            for (std::size_t j = 0; j < counts.size(); ++j) dx += params.jumps[j].size * counts[j](rng);
            x += dx;
            e.at(m, i) = x;
        }
    });
    return e;
}

PathEnsemble simulate_fbm(double hurst, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                          const SimOptions& options) {
    if (!(hurst > 0.0 && hurst < 1.0)) throw InvalidArgument("fbm: hurst must lie in (0, 1)");
    check_paths(n_paths);
    const int n = grid.steps;
    Eigen::MatrixXd cov(n, n);
    const double h2 = 2.0 * hurst;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double t = grid.time(a + 1), s = grid.time(b + 1);
            cov(a, b) = 0.5 * (std::pow(t, h2) + std::pow(s, h2) - std::pow(std::abs(t - s), h2));
        }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw ConstructionError("fbm: covariance factorization failed on " + std::to_string(n) +
                                " steps; use fewer steps or a hurst index further from 1");
    const Eigen::MatrixXd L = llt.matrixL();

    auto e = make_ensemble(grid, 1, n_paths, seed, "fbm");
    e.params["hurst"] = hurst;
    parallel_for(n_paths, options, [&](int m) {
        Rng rng(e.seeds[m]);
        std::normal_distribution<double> normal;
        Eigen::VectorXd z(n);
        for (int i = 0; i < n; ++i) z(i) = normal(rng);
        const Eigen::VectorXd x = L * z;
        for (int i = 0; i < n; ++i) e.at(m, i + 1) = x(i);
    });
    return e;
}

PathEnsemble simulate_sde(const std::string& drift_id, const std::string& vol_id, const Vec& x0,
                          const TimeGrid& grid, int n_paths, std::uint64_t seed, const SimOptions& options) {
    check_paths(n_paths);
    if (x0.empty()) throw InvalidArgument("sde: x0 must have at least one coordinate");
    double drift_sign = 0.0, drift_const = 0.0;
    if (drift_id == "zero") {
    } else if (drift_id == "mean_revert") {
        drift_sign = -1.0;
    } else if (drift_id == "unit") {
        drift_const = 1.0;
    } else {
        throw InvalidArgument("sde: unknown drift id '" + drift_id + "'");
    }
    double vol = 0.0;
    if (vol_id == "identity")
        vol = 1.0;
    else if (vol_id == "half")
        vol = 0.5;
    else if (vol_id == "double")
        vol = 2.0;
    else
        throw InvalidArgument("sde: unknown vol id '" + vol_id + "'");

    const int d = static_cast<int>(x0.size());
    auto e = make_ensemble(grid, d, n_paths, seed, "sde");
    e.params["drift"] = drift_id;
    e.params["vol"] = vol_id;
    e.params["x0"] = x0;
    const double dt = grid.dt(), sdt = std::sqrt(dt);
    parallel_for(n_paths, options, [&](int m) {
        Rng rng(e.seeds[m]);
        std::normal_distribution<double> normal;
        Vec x = x0;
        for (int j = 0; j < d; ++j) e.at(m, 0, j) = x[j];
        for (int i = 1; i <= grid.steps; ++i)
            for (int j = 0; j < d; ++j) {
                x[j] += (drift_sign * x[j] + drift_const) * dt + vol * sdt * normal(rng);
                e.at(m, i, j) = x[j];
            }
    });
    return e;
}

double skew_alpha(double beta) noexcept { return 0.5 * (beta + 1.0); }

double skew_scale(double x, double alpha) noexcept { return x >= 0.0 ? (1.0 - alpha) * x : alpha * x; }

double skew_scale_inverse(double y, double alpha) noexcept { return y >= 0.0 ? y / (1.0 - alpha) : y / alpha; }

PathEnsemble simulate_skew_bm(double beta, const TimeGrid& grid, int n_paths, std::uint64_t seed,
                              const SimOptions& options, SkewScheme scheme) {
    if (!(std::abs(beta) < 1.0)) throw InvalidArgument("skew: |beta| must be < 1");
    check_paths(n_paths);
    const double alpha = skew_alpha(beta);
    auto e = make_ensemble(grid, 1, n_paths, seed, "skew");
    e.params["beta"] = beta;
    e.params["scheme"] = scheme == SkewScheme::Exact ? "exact" : "euler";
    const double h = grid.dt(), sdt = std::sqrt(h);
    parallel_for(n_paths, options, [&](int m) {
        Rng rng(e.seeds[m]);
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> unif;
        double y = 0.0;
        for (int i = 1; i <= grid.steps; ++i) {
            if (scheme == SkewScheme::Euler) {
                // f = alpha at the single point 0.
                const double f = y > 0.0 ? 1.0 - alpha : alpha;
                y += f * sdt * normal(rng);
                e.at(m, i) = skew_scale_inverse(y, alpha);
                continue;
            }
            // |X| is reflected Brownian motion; the sign is redrawn if it touched 0.
            const double x = skew_scale_inverse(y, alpha);
            const double a = std::abs(x);
            const double b = std::abs(a + sdt * normal(rng));
            const double stay = std::exp(-0.5 * (b - a) * (b - a) / h);
            const double cross = std::exp(-0.5 * (b + a) * (b + a) / h);
            const double p_hit = (a == 0.0) ? 1.0 : 2.0 * cross / (stay + cross);
            double sign = x >= 0.0 ? 1.0 : -1.0;
            if (unif(rng) < p_hit) sign = unif(rng) < alpha ? 1.0 : -1.0;
            y = skew_scale(sign * b, alpha);
            e.at(m, i) = sign * b;
        }
    });
    return e;
}

double TimeChange::operator()(double t) const {
    if (id == "constant") return 1.0;
    if (id == "bessel_r") return t <= 0.0 ? 1.0 : 2.0 * std_normal_cdf(1.0 / std::sqrt(t)) - 1.0;
    if (id == "linear") return 1.0 - rate * t;
    if (id == "exp") return std::exp(-rate * t);
    throw InvalidArgument("time change: unknown id '" + id + "'");
}

void TimeChange::validate() const {
    if (id != "constant" && id != "bessel_r" && id != "linear" && id != "exp")
        throw InvalidArgument("time change: unknown id '" + id + "'");
    if (!(rate >= 0.0) || !std::isfinite(rate)) throw InvalidArgument("time change: rate must be >= 0");
}

double BesselTable::value(double u) const {
    if (u <= 0.0) return r.front();
    const double k = u / du;
    const auto i = static_cast<std::size_t>(k);
    if (i + 1 >= r.size()) return r.back();
    const double w = k - static_cast<double>(i);
    return (1.0 - w) * r[i] + w * r[i + 1];
}

double BesselTable::inverse(double m) const {
    if (!(m <= 1.0) || m < r.back())
        throw InvalidArgument("time change value " + std::to_string(m) + " outside achievable range [" +
                              std::to_string(r.back()) + ", 1]");
    if (m >= r.front()) return 0.0;
    std::size_t k = 1;
    while (r[k] > m) ++k;
    return du * (static_cast<double>(k - 1) + (r[k - 1] - m) / (r[k - 1] - r[k]));
}

BesselTable tabulate_bessel_inverse_moment(const BesselOptions& options, const SimOptions& sim) {
    if (options.table_paths < 2 || options.table_steps < 1 || !(options.horizon > 0.0))
        throw InvalidArgument("bessel table: need >= 2 paths, >= 1 step and a positive horizon");
    const int steps = options.table_steps;
    const double du = options.horizon / steps, sdu = std::sqrt(du);
    // Fixed-size blocks summed in order keep the table independent of thread count.
    constexpr int kBlock = 1000;
    const int blocks = (options.table_paths + kBlock - 1) / kBlock;
    std::vector<Vec> sum(blocks, Vec(steps + 1, 0.0)), sq(blocks, Vec(steps + 1, 0.0));
    parallel_for(blocks, sim, [&](int b) {
        const int lo = b * kBlock, hi = std::min(options.table_paths, lo + kBlock);
        for (int p = lo; p < hi; ++p) {
            Rng rng(path_seed(options.table_seed, static_cast<std::uint64_t>(p)));
            std::normal_distribution<double> normal;
            double x = 1.0, y = 0.0, z = 0.0;
            for (int k = 0; k <= steps; ++k) {
                if (k > 0) {
                    x += sdu * normal(rng);
                    y += sdu * normal(rng);
                    z += sdu * normal(rng);
                }
                const double v = 1.0 / std::sqrt(x * x + y * y + z * z);
                sum[b][k] += v;
                sq[b][k] += v * v;
            }
        }
    });
    BesselTable t;
    t.du = du;
    t.r.assign(steps + 1, 0.0);
    t.se.assign(steps + 1, 0.0);
    const double n = options.table_paths;
    for (int k = 0; k <= steps; ++k) {
        double s = 0.0, s2 = 0.0;
        for (int b = 0; b < blocks; ++b) {
            s += sum[b][k];
            s2 += sq[b][k];
        }
        const double mean = s / n;
        t.r[k] = mean;
        t.se[k] = std::sqrt(std::max(0.0, s2 / n - mean * mean) / (n - 1.0));
    }
    t.r[0] = 1.0;
    for (int k = 1; k <= steps; ++k) t.r[k] = std::min(t.r[k], t.r[k - 1]);
    return t;
}

PathEnsemble simulate_strict_local_martingale(const TimeChange& m, const TimeGrid& grid, int n_paths,
                                              std::uint64_t seed, const BesselOptions& bessel,
                                              const SimOptions& options) {
    m.validate();
    check_paths(n_paths);
    Vec mt(grid.steps + 1);
    for (int i = 0; i <= grid.steps; ++i) {
        mt[i] = m(grid.time(i));
        if (!(mt[i] > 0.0 && mt[i] <= 1.0))
            throw InvalidArgument("time change must take values in (0, 1]; got " + std::to_string(mt[i]));
        if (i > 0 && mt[i] > mt[i - 1]) throw InvalidArgument("time change must be nonincreasing");
    }
    if (mt[0] != 1.0) throw InvalidArgument("time change must satisfy m(0) = 1");

    const BesselTable table = tabulate_bessel_inverse_moment(bessel, options);
    Vec u(grid.steps + 1);
    for (int i = 0; i <= grid.steps; ++i) u[i] = table.inverse(mt[i]);
    for (int i = 1; i <= grid.steps; ++i) u[i] = std::max(u[i], u[i - 1]);

    auto e = make_ensemble(grid, 1, n_paths, seed, "inverse_bessel");
    e.params["time_change"] = m.id;
    e.params["rate"] = m.rate;
    e.params["r_min"] = table.r.back();
    parallel_for(n_paths, options, [&](int p) {
        Rng rng(e.seeds[p]);
        std::normal_distribution<double> normal;
        double x = 1.0, y = 0.0, z = 0.0;
        e.at(p, 0) = 1.0;
        for (int i = 1; i <= grid.steps; ++i) {
            const double h = u[i] - u[i - 1];
            if (h > 0.0) {
                const double s = std::sqrt(h);
                x += s * normal(rng);
                y += s * normal(rng);
                z += s * normal(rng);
            }
            e.at(p, i) = 1.0 / std::sqrt(x * x + y * y + z * z);
        }
    });
    return e;
}

PathEnsemble compose(const PathEnsemble& x, const PathEnsemble& l, const std::string& f_id) {
    if (!(x.grid == l.grid) || x.n_paths != l.n_paths)
        throw InvalidArgument("compose: ensembles must share grid and path count");
    PathEnsemble out = x;
    out.model = "compose:" + f_id;
    out.params = {{"f", f_id}, {"x", x.model}, {"l", l.model}};
    if (f_id == "first") return out;
    if (f_id == "cbrt_abs") {
        for (double& v : out.data) v = std::cbrt(std::abs(v));
        return out;
    }
    if (f_id == "sum" || f_id == "difference") {
        if (x.dim != l.dim) throw InvalidArgument("compose: '" + f_id + "' needs equal dimensions");
        const double s = f_id == "sum" ? 1.0 : -1.0;
        for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += s * l.data[k];
        return out;
    }
    throw InvalidArgument("compose: unknown function id '" + f_id + "'");
}

const char* to_string(Stickiness s) noexcept {
    switch (s) {
        case Stickiness::Sticky: return "Sticky";
        case Stickiness::NotSticky: return "NotSticky";
        case Stickiness::Undetermined: return "Undetermined";
    }
    return "Undetermined";
}

StickinessVerdict classify_levy_stickiness(const LevyParams& params, double small_jump_integral,
                                           bool small_jump_left_mass, bool small_jump_right_mass) {
    if (!(params.sigma >= 0.0) || !std::isfinite(params.drift) || std::isnan(small_jump_integral) ||
        small_jump_integral < 0.0)
        return {Stickiness::Undetermined, "outside_scope"};
    if (params.sigma != 0.0) return {Stickiness::Sticky, "diffusive"};
    if (std::isinf(small_jump_integral)) return {Stickiness::Sticky, "infinite_variation"};
    const double h = params.drift - small_jump_integral;
    const double tol = 1e-12 * std::max(1.0, std::abs(params.drift) + small_jump_integral);
    if (std::abs(h) <= tol) return {Stickiness::Sticky, "h_zero"};
    if (h > 0.0)
        return small_jump_left_mass ? StickinessVerdict{Stickiness::Sticky, "h_positive_left_jumps"}
                                    : StickinessVerdict{Stickiness::NotSticky, "h_positive_no_left_jumps"};
    return small_jump_right_mass ? StickinessVerdict{Stickiness::Sticky, "h_negative_right_jumps"}
                                 : StickinessVerdict{Stickiness::NotSticky, "h_negative_no_right_jumps"};
}

}  // namespace sticky
