#include "sticky/tilting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "sticky/simplex.hpp"

namespace sticky {

namespace {

constexpr double kRankTol = 1e-10;
constexpr double kLambdaMin = 1e-9;

int matrix_rank(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    const double scale = std::max(1.0, s.size() ? s(0) : 0.0);
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > kRankTol * scale) ++r;
    return r;
}

// Coordinates of each atom in an orthonormal basis of the linear span of the atoms.
// Returns a k x n matrix (k = dimension of the span).
Eigen::MatrixXd span_coordinates(const AtomicLaw& law) {
    const int d = law.dim();
    const int n = static_cast<int>(law.size());
    Eigen::MatrixXd Y(d, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) Y(j, i) = law.atoms[i][j];
    if (d == 0 || n == 0) return Eigen::MatrixXd(0, n);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Y, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    const double scale = std::max(1.0, s.size() ? s(0) : 0.0);
    int k = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > kRankTol * scale) ++k;
    return svd.matrixU().leftCols(k).transpose() * Y;
}

struct Prepared {
    Eigen::MatrixXd z;  // k x n span coordinates
    Vec norms;
    Vec w;
};

Prepared prepare(const AtomicLaw& law, const MomentFunction& w) {
    Prepared p;
    p.z = span_coordinates(law);
    p.norms.resize(law.size());
    p.w.resize(law.size());
    for (std::size_t i = 0; i < law.size(); ++i) {
        p.norms[i] = norm(law.atoms[i]);
        p.w[i] = w.of_norm(p.norms[i]);
    }
    return p;
}

// Minimax LP: minimize s = max(E q w - eta, E q 1{|y|>=eta} - eta) over q >= f_min p,
// sum q = 1, sum q z = 0. Returns s* and the optimal q (empty when the equalities
// are infeasible).
std::pair<double, Vec> minimax_tilt(const AtomicLaw& law, const Prepared& prep, double eta, double f_min) {
    const int n = static_cast<int>(law.size());
    const int k = static_cast<int>(prep.z.rows());
    const int m = 1 + k + 2;
    const int cols = n + 4;  // x_i, s+, s-, u1, u2
    lp::Problem prob;
    prob.A = Eigen::MatrixXd::Zero(m, cols);
    prob.b = Eigen::VectorXd::Zero(m);
    prob.c = Eigen::VectorXd::Zero(cols);

    double pw = 0.0, ptail = 0.0;
    Eigen::VectorXd pz = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
        const double p = law.probs[i];
        const bool tail = prep.norms[i] >= eta;
        prob.A(0, i) = 1.0;
        for (int r = 0; r < k; ++r) prob.A(1 + r, i) = prep.z(r, i);
        prob.A(1 + k, i) = prep.w[i];
        prob.A(2 + k, i) = tail ? 1.0 : 0.0;
        pw += p * prep.w[i];
        if (tail) ptail += p;
        if (k) pz += p * prep.z.col(i);
    }
    prob.b(0) = 1.0 - f_min;
    for (int r = 0; r < k; ++r) prob.b(1 + r) = -f_min * pz(r);
    prob.b(1 + k) = eta - f_min * pw;
    prob.b(2 + k) = eta - f_min * ptail;
    for (int row : {1 + k, 2 + k}) {
        prob.A(row, n) = -1.0;
        prob.A(row, n + 1) = 1.0;
    }
    prob.A(1 + k, n + 2) = 1.0;
    prob.A(2 + k, n + 3) = 1.0;
    prob.c(n) = 1.0;
    prob.c(n + 1) = -1.0;

    const lp::Result res = lp::solve(prob);
    if (res.status != lp::Status::Optimal) return {std::numeric_limits<double>::infinity(), {}};
    Vec q(n);
    for (int i = 0; i < n; ++i) q[i] = f_min * law.probs[i] + res.x(i);
    return {res.objective, q};
}

double smallest_feasible_eta(const AtomicLaw& law, const MomentFunction& w, double f_min, double eta) {
    double hi = std::max(eta, 1e-300);
    double max_norm = 0.0, max_w = 0.0;
    for (const auto& a : law.atoms) {
        max_norm = std::max(max_norm, norm(a));
        max_w = std::max(max_w, w(a));
    }
    auto feasible = [&](double e) {
        const Prepared prep = prepare(law, w);
        return minimax_tilt(law, prep, e, f_min).first < 0.0;
    };
    const double cap = 2.0 * std::max({max_norm, max_w, 1.0}) + 1.0;
    while (!feasible(hi)) {
        hi *= 2.0;
        if (hi > cap) {
            if (!feasible(cap)) return std::numeric_limits<double>::infinity();
            hi = cap;
            break;
        }
    }
    double lo = eta;
    for (int it = 0; it < 60 && hi - lo > 1e-12 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (feasible(mid) ? hi : lo) = mid;
    }
    return hi;
}

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

// Two-part construction: concentrate mass near the origin (m), then balance the
// resulting mean with a strictly positive correction (r) of small w-cost.
bool staged_tilt(const AtomicLaw& law, const Prepared& prep, double eta, const MomentFunction& w, double f_min,
                 double p_floor, Vec& f_out) {
    const int n = static_cast<int>(law.size());
    const int k = static_cast<int>(prep.z.rows());
    // w~ = w + |.|
    Vec wt(n);
    for (int i = 0; i < n; ++i) wt[i] = prep.w[i] + prep.norms[i];

    // Radius for the concentrating part: the largest r <= eta with enough mass in
    // B(0, r/2) and sup of w~ over atoms in B(0, r) at most eta/2.
    Vec candidates{eta};
    for (int i = 0; i < n; ++i) {
        const double r = 2.0 * prep.norms[i] * (1.0 + 1e-9);
        if (r > 0.0 && r < eta) candidates.push_back(r);
    }
    for (double r = eta / 2; r > eta * 1e-18; r /= 2) candidates.push_back(r);
    std::sort(candidates.begin(), candidates.end(), std::greater<>());

    double delta = -1.0;
    for (double r : candidates) {
        double mass_half = 0.0, sup_w = 0.0;
        for (int i = 0; i < n; ++i) {
            if (prep.norms[i] <= r / 2) mass_half += law.probs[i];
            if (prep.norms[i] <= r) sup_w = std::max(sup_w, wt[i]);
        }
        if (mass_half >= p_floor && sup_w <= eta / 2) {
            delta = r;
            break;
        }
    }
    if (delta <= 0.0) return false;

    Vec mpart(n, 0.0);
    double ball_mass = 0.0;
    for (int i = 0; i < n; ++i)
        if (prep.norms[i] < delta) ball_mass += law.probs[i];
    if (ball_mass <= 0.0) return false;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i)
        if (prep.norms[i] < delta) {
            mpart[i] = 1.0 / ball_mass;
            if (k) c += law.probs[i] * mpart[i] * prep.z.col(i);
        }

    // r_i = floor + x_i, minimize E r w~ subject to E r z = -c.
    const double floor = f_min * (1.0 + eta) * (1.0 + 1e-6);
    lp::Problem prob;
    prob.A = Eigen::MatrixXd::Zero(k, n);
    prob.b = -c;
    prob.c = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < k; ++r) {
            prob.A(r, i) = law.probs[i] * prep.z(r, i);
            prob.b(r) -= floor * law.probs[i] * prep.z(r, i);
        }
        prob.c(i) = law.probs[i] * wt[i];
    }
    const lp::Result res = lp::solve(prob);
    if (res.status != lp::Status::Optimal) return false;

    double er = 0.0, erw = 0.0, total = 0.0;
    Vec rpart(n);
    for (int i = 0; i < n; ++i) {
        rpart[i] = floor + res.x(i);
        er += law.probs[i] * rpart[i];
        erw += law.probs[i] * rpart[i] * wt[i];
    }
    if (!(er < eta) || !(erw < eta / 2)) return false;
    for (int i = 0; i < n; ++i) total += law.probs[i] * (rpart[i] + mpart[i]);
    f_out.resize(n);
    for (int i = 0; i < n; ++i) f_out[i] = (rpart[i] + mpart[i]) / total;
    (void)w;
    return true;
}

}  // namespace

void AtomicLaw::validate(double tol) const {
    if (atoms.empty()) throw InvalidArgument("AtomicLaw: no atoms");
    if (atoms.size() != probs.size()) throw InvalidArgument("AtomicLaw: atoms/probs size mismatch");
    const std::size_t d = atoms.front().size();
    double s = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        if (atoms[i].size() != d) throw InvalidArgument("AtomicLaw: inconsistent atom dimension");
        for (double x : atoms[i])
            if (!std::isfinite(x)) throw InvalidArgument("AtomicLaw: non-finite atom");
        if (!(probs[i] > 0.0)) throw InvalidArgument("AtomicLaw: probabilities must be positive");
        s += probs[i];
    }
    if (std::abs(s - 1.0) > tol) throw InvalidArgument("AtomicLaw: probabilities sum to " + fmt(s));
}

bool AtomicLaw::is_dirac_at_zero(double tol) const {
    return atoms.size() == 1 && norm(atoms.front()) <= tol;
}

Vec AtomicLaw::mean() const {
    Vec m(dim(), 0.0);
    for (std::size_t i = 0; i < atoms.size(); ++i)
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += probs[i] * atoms[i][j];
    return m;
}

double SupportGeometry::mass_in_ball(double r) const {
    double s = 0.0;
    for (std::size_t i = 0; i < atom_norms.size(); ++i)
        if (atom_norms[i] <= r) s += atom_probs[i];
    return s;
}

SupportGeometry support_geometry(const AtomicLaw& law) {
    SupportGeometry g;
    const int n = static_cast<int>(law.size());
    const int d = law.dim();
    g.atom_probs = law.probs;
    for (const auto& a : law.atoms) g.atom_norms.push_back(norm(a));
    if (n == 0) return g;

    Eigen::MatrixXd centered(d, std::max(0, n - 1));
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < d; ++j) centered(j, i - 1) = law.atoms[i][j] - law.atoms[0][j];
    g.affine_dim = matrix_rank(centered);

    // 0 lies in the relative interior iff it is a convex combination with all
    // weights strictly positive; the margin kLambdaMin makes "strictly" concrete.
    const Eigen::MatrixXd z = span_coordinates(law);
    const int k = static_cast<int>(z.rows());
    const double lmin = std::min(kLambdaMin, 0.5 / n);
    lp::Problem prob;
    prob.A = Eigen::MatrixXd::Zero(1 + k, n);
    prob.b = Eigen::VectorXd::Zero(1 + k);
    prob.c = Eigen::VectorXd::Zero(n);
    prob.b(0) = 1.0 - n * lmin;
    for (int i = 0; i < n; ++i) {
        prob.A(0, i) = 1.0;
        for (int r = 0; r < k; ++r) {
            prob.A(1 + r, i) = z(r, i);
            prob.b(1 + r) -= lmin * z(r, i);
        }
    }
    g.zero_in_relative_interior = lp::solve(prob).status == lp::Status::Optimal;
    return g;
}

double MomentFunction::of_norm(double r) const {
    switch (form) {
        case Form::Abs: return r;
        case Form::GCombo: return std::pow(scale * r, 2.0 * exponent) + r;
        case Form::Na2: return std::pow(scale * r, 2.0 * exponent) + 2.0 * r;
    }
    return r;
}

bool MomentFunction::satisfies_invariants() const {
    if (of_norm(0.0) != 0.0) return false;
    for (int i = 1; i <= 1000; ++i) {
        const double r = 1e-4 * i * i;
        if (of_norm(r) < r) return false;
    }
    return true;
}

std::string MomentFunction::describe() const {
    switch (form) {
        case Form::Abs: return "abs";
        case Form::GCombo: return "g_combo(p=" + fmt(exponent) + ",scale=" + fmt(scale) + ")";
        case Form::Na2: return "na2(delta=" + fmt(exponent) + ",scale=" + fmt(scale) + ")";
    }
    return "?";
}

void evaluate_tilt(const AtomicLaw& law, const MomentFunction& w, TiltWeights& t) {
    CompensatedSum mass, wm, tail;
    std::vector<CompensatedSum> mean(law.dim());
    double fmax = 0.0;
    for (std::size_t i = 0; i < law.size(); ++i) {
        const double q = t.f[i] * law.probs[i];
        const double r = norm(law.atoms[i]);
        mass.add(q);
        wm.add(q * w.of_norm(r));
        if (r >= t.eta) tail.add(q);
        for (int j = 0; j < law.dim(); ++j) mean[j].add(q * law.atoms[i][j]);
        fmax = std::max(fmax, t.f[i]);
    }
    t.mass = mass.value();
    t.w_moment = wm.value();
    t.tail_mass = tail.value();
    t.mean.assign(law.dim(), 0.0);
    for (int j = 0; j < law.dim(); ++j) t.mean[j] = mean[j].value();
    t.cap_hit = t.f_min > 0.0 && fmax > 1.0 / t.f_min;
}

bool tilt_constraints_hold(const TiltWeights& t, double tol) {
    if (std::abs(t.mass - 1.0) > tol) return false;
    for (double m : t.mean)
        if (std::abs(m) > tol) return false;
    if (!(t.w_moment < t.eta) || !(t.tail_mass < t.eta)) return false;
    for (double f : t.f)
        if (!(f >= t.f_min)) return false;
    return true;
}

bool tilt_feasible(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min) {
    law.validate(1e-10);
    if (law.is_dirac_at_zero()) return true;
    if (!support_geometry(law).zero_in_relative_interior) return false;
    const Prepared prep = prepare(law, w);
    return minimax_tilt(law, prep, eta, f_min).first < 0.0;
}

TiltWeights solve_tilt(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min,
                       const TiltOptions& options) {
    if (!(eta > 0.0)) throw InvalidArgument("solve_tilt: eta must be positive");
    if (!(f_min > 0.0) || f_min >= 1.0) throw InvalidArgument("solve_tilt: f_min must lie in (0, 1)");
    law.validate(1e-10);

    TiltWeights t;
    t.eta = eta;
    t.f_min = f_min;
    if (law.is_dirac_at_zero()) {
        t.f.assign(1, 1.0);
        t.method = "identity";
        evaluate_tilt(law, w, t);
        return t;
    }

    const SupportGeometry geom = support_geometry(law);
    if (!geom.zero_in_relative_interior)
        throw GeometryViolation(options.node, "node " + std::to_string(options.node) +
                                                  ": 0 is not in the relative interior of the increment law support");

    bool has_near = false;
    for (const auto& a : law.atoms)
        if (norm(a) < eta) has_near = true;
    if (!has_near) {
        const double best = smallest_feasible_eta(law, w, f_min, eta);
        throw InfeasibleTilt(options.node, best,
                             "node " + std::to_string(options.node) + ": no atom within eta=" + fmt(eta) +
                                 " of 0; smallest feasible eta ~ " + fmt(best));
    }

    const Prepared prep = prepare(law, w);
    Vec f;
    if (staged_tilt(law, prep, eta, w, f_min, options.p_floor, f)) {
        t.f = std::move(f);
        t.method = "staged";
        evaluate_tilt(law, w, t);
        if (tilt_constraints_hold(t)) return t;
    }

    auto [s, q] = minimax_tilt(law, prep, eta, f_min);
    if (!q.empty() && s < 0.0) {
        t.f.resize(law.size());
        // q / p can round to just below f_min.
        for (std::size_t i = 0; i < law.size(); ++i) t.f[i] = std::max(f_min, q[i] / law.probs[i]);
        t.method = "direct";
        evaluate_tilt(law, w, t);
        if (tilt_constraints_hold(t)) return t;
    }
    const double best = smallest_feasible_eta(law, w, f_min, eta);
    throw InfeasibleTilt(options.node, best,
                         "node " + std::to_string(options.node) + ": no tilt meets eta=" + fmt(eta) +
                             "; smallest feasible eta ~ " + fmt(best));
}

TiltWeights tilt_or_identity(const AtomicLaw& law, double eta, const MomentFunction& w, double f_min,
                             const TiltOptions& options) {
    if (law.is_dirac_at_zero()) {
        TiltWeights t;
        t.eta = eta;
        t.f_min = f_min;
        t.f.assign(1, 1.0);
        t.method = "identity";
        evaluate_tilt(law, w, t);
        return t;
    }
    return solve_tilt(law, eta, w, f_min, options);
}

TiltWeights min_cost_tilt(const AtomicLaw& law, const Vec& cost, const MomentFunction& w, double f_min,
                          const TiltOptions& options) {
    if (cost.size() != law.size()) throw InvalidArgument("min_cost_tilt: one cost per atom required");
    if (!(f_min > 0.0) || f_min >= 1.0) throw InvalidArgument("min_cost_tilt: f_min must lie in (0, 1)");
    law.validate(1e-10);
    const int n = static_cast<int>(law.size());

    TiltWeights t;
    t.eta = std::numeric_limits<double>::infinity();
    t.f_min = f_min;
    t.method = "min_cost";
    bool all_zero = true;
    for (const auto& a : law.atoms)
        if (norm(a) > 1e-12) all_zero = false;
    if (all_zero) {
        t.f.assign(n, 1.0);
        t.method = "identity";
        evaluate_tilt(law, w, t);
        return t;
    }
    if (!support_geometry(law).zero_in_relative_interior)
        throw GeometryViolation(options.node, "node " + std::to_string(options.node) +
                                                  ": 0 is not in the relative interior of the increment law support");

    const Eigen::MatrixXd z = span_coordinates(law);
    const int k = static_cast<int>(z.rows());
    lp::Problem prob;
    prob.A = Eigen::MatrixXd::Zero(1 + k, n);
    prob.b = Eigen::VectorXd::Zero(1 + k);
    prob.c = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        prob.A(0, i) = 1.0;
        for (int r = 0; r < k; ++r) {
            prob.A(1 + r, i) = z(r, i);
            prob.b(1 + r) -= f_min * law.probs[i] * z(r, i);
        }
        prob.c(i) = cost[i];
    }
    prob.b(0) = 1.0 - f_min;
    const lp::Result res = lp::solve(prob);
    if (res.status != lp::Status::Optimal)
        throw InfeasibleTilt(options.node, std::numeric_limits<double>::infinity(),
                             "node " + std::to_string(options.node) + ": no positive weights with mean 0 (" +
                                 lp::to_string(res.status) + ")");

    Eigen::VectorXd q(n);
    for (int i = 0; i < n; ++i) q(i) = f_min * law.probs[i] + std::max(0.0, res.x(i));
    // Least-norm correction on the atoms above the floor.
    std::vector<int> free;
    for (int i = 0; i < n; ++i)
        if (res.x(i) > 0.0) free.push_back(i);
    Eigen::MatrixXd A(1 + k, n);
    A.row(0).setOnes();
    A.bottomRows(k) = z;
    Eigen::VectorXd target = Eigen::VectorXd::Zero(1 + k);
    target(0) = 1.0;
    for (int pass = 0; pass < 2 && !free.empty(); ++pass) {
        const Eigen::VectorXd resid = target - A * q;
        Eigen::MatrixXd AB(1 + k, free.size());
        for (std::size_t j = 0; j < free.size(); ++j) AB.col(j) = A.col(free[j]);
        const Eigen::VectorXd dq = AB.completeOrthogonalDecomposition().solve(resid);
        for (std::size_t j = 0; j < free.size(); ++j)
            q(free[j]) = std::max(f_min * law.probs[free[j]], q(free[j]) + dq(j));
    }
    t.f.resize(n);
    for (int i = 0; i < n; ++i) t.f[i] = std::max(f_min, q(i) / law.probs[i]);
    evaluate_tilt(law, w, t);
    return t;
}

}  // namespace sticky
