#include "sticky/simplex.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace sticky::lp {

namespace {

// Row-major tableau with `rows` constraint rows plus one objective row (last).
class Tableau {
public:
    Tableau(int rows, int cols) : rows_(rows), cols_(cols), data_((rows + 1) * (cols + 1), 0.0) {}

    double& at(int r, int c) { return data_[r * (cols_ + 1) + c]; }
    double at(int r, int c) const { return data_[r * (cols_ + 1) + c]; }
    double& rhs(int r) { return at(r, cols_); }
    double rhs(int r) const { return at(r, cols_); }
    double& cost(int c) { return at(rows_, c); }
    double cost(int c) const { return at(rows_, c); }
    int rows() const { return rows_; }
    int cols() const { return cols_; }

    void pivot(int pr, int pc) {
        const double inv = 1.0 / at(pr, pc);
        for (int c = 0; c <= cols_; ++c) at(pr, c) *= inv;
        at(pr, pc) = 1.0;
        for (int r = 0; r <= rows_; ++r) {
            if (r == pr) continue;
            const double f = at(r, pc);
            if (f == 0.0) continue;
            double* row = &data_[r * (cols_ + 1)];
            const double* prow = &data_[pr * (cols_ + 1)];
            for (int c = 0; c <= cols_; ++c) row[c] -= f * prow[c];
            row[pc] = 0.0;
        }
    }

private:
    int rows_;
    int cols_;
    std::vector<double> data_;
};

// Runs simplex iterations on the tableau restricted to columns < `active_cols`.
Status iterate(Tableau& t, std::vector<int>& basis, int active_cols, const Options& opt, int& iterations) {
    int degenerate_run = 0;
    while (true) {
        if (iterations >= opt.max_iterations) return Status::IterationLimit;
        const bool bland = degenerate_run >= opt.degenerate_switch;
        int enter = -1;
        double best = -opt.pivot_tol;
        for (int c = 0; c < active_cols; ++c) {
            const double rc = t.cost(c);
            if (rc < best) {
                enter = c;
                if (bland) break;
                best = rc;
            }
        }
        if (enter < 0) return Status::Optimal;

        int leave = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (int r = 0; r < t.rows(); ++r) {
            const double a = t.at(r, enter);
            if (a <= opt.pivot_tol) continue;
            const double ratio = t.rhs(r) / a;
            if (ratio < best_ratio - 1e-15 ||
                (std::abs(ratio - best_ratio) <= 1e-15 && leave >= 0 && basis[r] < basis[leave])) {
                best_ratio = ratio;
                leave = r;
            }
        }
        if (leave < 0) return Status::Unbounded;
        degenerate_run = (best_ratio <= opt.pivot_tol) ? degenerate_run + 1 : 0;
        t.pivot(leave, enter);
        basis[leave] = enter;
        ++iterations;
    }
}

}  // namespace

Result solve(const Problem& problem, const Options& opt) {
    const int m = static_cast<int>(problem.A.rows());
    const int n = static_cast<int>(problem.A.cols());
    Result result;
    result.x = Eigen::VectorXd::Zero(n);

    if (m == 0) {
        for (int j = 0; j < n; ++j)
            if (problem.c(j) < 0.0) {
                result.status = Status::Unbounded;
                return result;
            }
        result.status = Status::Optimal;
        return result;
    }

    // Columns: n structural, then m artificials.
    Tableau t(m, n + m);
    std::vector<int> basis(m);
    for (int r = 0; r < m; ++r) {
        const double sign = problem.b(r) < 0.0 ? -1.0 : 1.0;
        for (int c = 0; c < n; ++c) t.at(r, c) = sign * problem.A(r, c);
        t.at(r, n + r) = 1.0;
        t.rhs(r) = sign * problem.b(r);
        basis[r] = n + r;
    }
    // Phase 1 objective: sum of artificials, expressed in nonbasic terms.
    for (int c = 0; c <= n + m; ++c) {
        double s = 0.0;
        if (c < n || c == n + m)
            for (int r = 0; r < m; ++r) s += t.at(r, c);
        t.at(m, c) = (c < n) ? -s : (c == n + m ? -s : 0.0);
    }

    int iterations = 0;
    Status st = iterate(t, basis, n + m, opt, iterations);
    if (st == Status::IterationLimit) {
        result.status = st;
        result.iterations = iterations;
        return result;
    }
    double scale = 1.0;
    for (int r = 0; r < m; ++r) scale = std::max(scale, std::abs(problem.b(r)));
    if (-t.rhs(m) > opt.feasibility_tol * scale) {
        result.status = Status::Infeasible;
        result.iterations = iterations;
        return result;
    }

    // Drive remaining artificials out of the basis; rows that cannot pivot are redundant.
    std::vector<bool> redundant(m, false);
    for (int r = 0; r < m; ++r) {
        if (basis[r] < n) continue;
        int pc = -1;
        double best = opt.pivot_tol * 1e3;
        for (int c = 0; c < n; ++c)
            if (std::abs(t.at(r, c)) > best) {
                best = std::abs(t.at(r, c));
                pc = c;
            }
        if (pc >= 0) {
            t.pivot(r, pc);
            basis[r] = pc;
        } else {
            redundant[r] = true;
        }
    }

    // Phase 2 objective row.
    for (int c = 0; c <= n + m; ++c) t.at(m, c) = 0.0;
    for (int c = 0; c < n; ++c) t.cost(c) = problem.c(c);
    for (int r = 0; r < m; ++r) {
        if (redundant[r]) continue;
        const int bc = basis[r];
        if (bc >= n) continue;
        const double cb = problem.c(bc);
        if (cb == 0.0) continue;
        for (int c = 0; c <= n + m; ++c) t.at(m, c) -= cb * t.at(r, c);
    }
    // Artificial columns stay out: restrict pricing to structural columns.
    st = iterate(t, basis, n, opt, iterations);
    result.iterations = iterations;
    if (st != Status::Optimal) {
        result.status = st;
        return result;
    }

    // Recompute basic values from the original data for tight equality residuals.
    std::vector<int> rows, cols;
    for (int r = 0; r < m; ++r)
        if (!redundant[r] && basis[r] < n) {
            rows.push_back(r);
            cols.push_back(basis[r]);
        }
    for (std::size_t i = 0; i < cols.size(); ++i) result.x(cols[i]) = std::max(0.0, t.rhs(rows[i]));
    if (!cols.empty()) {
        // Least-squares solve over all original rows (redundant rows are consistent).
        Eigen::MatrixXd B(m, cols.size());
        for (std::size_t i = 0; i < cols.size(); ++i) B.col(i) = problem.A.col(cols[i]);
        Eigen::VectorXd xb = B.colPivHouseholderQr().solve(problem.b);
        bool ok = xb.allFinite();
        for (Eigen::Index i = 0; ok && i < xb.size(); ++i)
            if (xb(i) < -opt.feasibility_tol) ok = false;
        if (ok)
            for (std::size_t i = 0; i < cols.size(); ++i) result.x(cols[i]) = std::max(0.0, xb(i));
    }
    result.objective = problem.c.dot(result.x);
    result.status = Status::Optimal;
    return result;
}

const char* to_string(Status s) noexcept {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::Unbounded: return "unbounded";
        case Status::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

}  // namespace sticky::lp
