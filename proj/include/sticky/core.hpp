#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sticky {

using Vec = std::vector<double>;
using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Error hierarchy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters or configuration (exit code 2).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A construction could not be carried out on the given tree (exit code 3).
class ConstructionError : public Error {
public:
    using Error::Error;
};

/// The conditional increment law at `node` does not contain 0 in the relative
/// interior of its convex hull.
class GeometryViolation : public ConstructionError {
public:
    GeometryViolation(NodeId node, const std::string& what)
        : ConstructionError(what), node_(node) {}
    NodeId node() const noexcept { return node_; }

private:
    NodeId node_;
};

/// No strictly positive reweighting meets the requested budget.
class InfeasibleTilt : public ConstructionError {
public:
    InfeasibleTilt(NodeId node, double smallest_eta, const std::string& what)
        : ConstructionError(what), node_(node), smallest_eta_(smallest_eta) {}
    NodeId node() const noexcept { return node_; }
    /// Infimum of budgets at which the law becomes feasible (+inf if none).
    double smallest_feasible_eta() const noexcept { return smallest_eta_; }

private:
    NodeId node_;
    double smallest_eta_;
};

/// A construction succeeded but a checked invariant failed (exit code 4).
class BoundViolation : public Error {
public:
    using Error::Error;
};

struct TimeGrid {
    double horizon = 1.0;
    int steps = 1;

    TimeGrid() = default;
    TimeGrid(double T, int N) : horizon(T), steps(N) {
        if (!(T > 0.0) || !std::isfinite(T)) throw InvalidArgument("TimeGrid: horizon must be positive");
        if (N < 1) throw InvalidArgument("TimeGrid: steps must be >= 1");
    }

    double dt() const noexcept { return horizon / steps; }
    double time(int i) const noexcept { return i == steps ? horizon : i * horizon / steps; }
    bool operator==(const TimeGrid&) const = default;
};

inline double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
}

/// Neumaier compensated accumulator.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace sticky
