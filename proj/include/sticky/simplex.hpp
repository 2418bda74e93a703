#pragma once

#include <Eigen/Dense>

namespace sticky::lp {

// Standard-form linear program: minimize c'x subject to A x = b, x >= 0.
struct Problem {
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::VectorXd c;
};

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };

struct Options {
    double feasibility_tol = 1e-10;
    double pivot_tol = 1e-12;
    int max_iterations = 200000;
    // Switch from Dantzig pricing to Bland's rule after this many consecutive
    // degenerate pivots.
    int degenerate_switch = 50;
};

struct Result {
    Status status = Status::Infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
    int iterations = 0;
};

/// Dense two-phase primal simplex. Pricing is deterministic (lowest index
/// wins ties), so identical inputs produce identical vertices.
Result solve(const Problem& problem, const Options& options = {});

const char* to_string(Status s) noexcept;

}  // namespace sticky::lp
