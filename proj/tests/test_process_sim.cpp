#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sticky/process_sim.hpp"

using namespace sticky;

namespace {

Vec column_fn(const PathEnsemble& e, int i, double (*f)(double)) {
    Vec out = e.marginal(i);
    for (double& v : out) v = f(v);
    return out;
}

}  // namespace

TEST(Levy, NoDriverGivesZeroPaths) {
    const auto e = simulate_levy({}, TimeGrid(1.0, 8), 50, 1);
    for (double v : e.data) EXPECT_EQ(v, 0.0);
}

TEST(Levy, PureDrift) {
    const auto e = simulate_levy({1.0, 0.0, {}}, TimeGrid(1.0, 4), 10, 3);
    for (int m = 0; m < 10; ++m)
        for (int i = 0; i <= 4; ++i) EXPECT_DOUBLE_EQ(e.at(m, i), 0.25 * i);
}

TEST(Levy, CompensatedMeanMatchesClosedForm) {
    LevyParams p{0.0, 1.0, {{2.0, 0.5}}};
    const auto e = simulate_levy(p, TimeGrid(1.0, 20), 100000, 42);
    const auto ms = oracle::mean_se(e.marginal(20));
    EXPECT_NEAR(ms.mean, 1.0, 3.0 * ms.se);
}

TEST(Levy, SmallJumpsAreCompensated) {
    LevyParams p{0.0, 0.0, {{0.5, 2.0}, {-0.25, 1.0}}};
    const auto e = simulate_levy(p, TimeGrid(2.0, 40), 100000, 7);
    const auto ms = oracle::mean_se(e.marginal(40));
    EXPECT_NEAR(ms.mean, 0.0, 3.0 * ms.se);
}

TEST(Levy, RejectsNonPositiveRate) {
    EXPECT_THROW(simulate_levy({0.0, 1.0, {{1.0, 0.0}}}, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
    EXPECT_THROW(simulate_levy({0.0, -1.0, {}}, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
}

TEST(Fbm, StartsAtZeroAndHalfIsBrownian) {
    const auto e = simulate_fbm(0.5, TimeGrid(2.0, 16), 20000, 5);
    for (int m = 0; m < e.n_paths; ++m) EXPECT_EQ(e.at(m, 0), 0.0);
    const auto sq = column_fn(e, 16, [](double x) { return x * x; });
    const auto ms = oracle::mean_se(sq);
    EXPECT_NEAR(ms.mean, 2.0, 3.0 * ms.se);
}

TEST(Fbm, CovarianceAtHalfAndFullHorizon) {
    const auto e = simulate_fbm(0.7, TimeGrid(1.0, 16), 50000, 9);
    Vec prod(e.n_paths);
    for (int m = 0; m < e.n_paths; ++m) prod[m] = e.at(m, 8) * e.at(m, 16);
    const auto ms = oracle::mean_se(prod);
    const double expected = 0.5 * (std::pow(0.5, 1.4) + 1.0 - std::pow(0.5, 1.4));
    EXPECT_NEAR(ms.mean, expected, 3.0 * ms.se);
}

TEST(Fbm, RejectsBadHurst) {
    EXPECT_THROW(simulate_fbm(1.0, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
    EXPECT_THROW(simulate_fbm(0.0, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
}

TEST(Sde, BrownianMeanIsZero) {
    const auto e = simulate_sde("zero", "identity", {0.0}, TimeGrid(1.0, 32), 20000, 11);
    const auto ms = oracle::mean_se(e.marginal(32));
    EXPECT_NEAR(ms.mean, 0.0, 3.0 * ms.se);
}

TEST(Sde, BesselInverseMomentBelowOne) {
    const auto e = simulate_sde("zero", "identity", {1.0, 0.0, 0.0}, TimeGrid(1.0, 64), 20000, 13);
    Vec inv(e.n_paths);
    for (int m = 0; m < e.n_paths; ++m) inv[m] = 1.0 / norm(e.point(m, 64));
    const auto ms = oracle::mean_se(inv);
    EXPECT_LT(ms.mean + 3.0 * ms.se, 1.0);
}

TEST(Sde, OrnsteinUhlenbeckVariance) {
    const auto e = simulate_sde("mean_revert", "identity", {0.0}, TimeGrid(1.0, 1000), 20000, 17);
    const auto sq = column_fn(e, 1000, [](double x) { return x * x; });
    const auto ms = oracle::mean_se(sq);
    EXPECT_NEAR(ms.mean, 0.5 * (1.0 - std::exp(-2.0)), 3.0 * ms.se);
}

TEST(Sde, UnknownRegistryId) {
    EXPECT_THROW(simulate_sde("cubic", "identity", {0.0}, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
    EXPECT_THROW(simulate_sde("zero", "sqrt", {0.0}, TimeGrid(1.0, 4), 1, 1), InvalidArgument);
}

TEST(Skew, ScaleMapsAreInverse) {
    const double a = skew_alpha(0.5);
    for (double x : {-2.0, -1.0, 0.0, 1.0, 2.0}) EXPECT_DOUBLE_EQ(skew_scale_inverse(skew_scale(x, a), a), x);
}

TEST(Skew, SymmetricCaseHasZeroMean) {
    const auto e = simulate_skew_bm(0.0, TimeGrid(1.0, 64), 20000, 19);
    const auto ms = oracle::mean_se(e.marginal(64));
    EXPECT_NEAR(ms.mean, 0.0, 3.0 * ms.se);
}

TEST(Skew, PositiveOccupationMatchesAlpha) {
    const auto e = simulate_skew_bm(0.5, TimeGrid(1.0, 64), 100000, 23);
    const auto pos = column_fn(e, 64, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
    const auto ms = oracle::mean_se(pos);
    EXPECT_NEAR(ms.mean, 0.75, 3.0 * ms.se);
}

TEST(Skew, EulerSchemeSymmetricMean) {
    const auto e = simulate_skew_bm(0.0, TimeGrid(1.0, 64), 20000, 19, {}, SkewScheme::Euler);
    const auto ms = oracle::mean_se(e.marginal(64));
    EXPECT_NEAR(ms.mean, 0.0, 3.0 * ms.se);
}

// Occupation at an intermediate time and the scaled mean E s(X_T) = 0.
TEST(Skew, ExactSchemeMartingaleOfScale) {
    const double a = skew_alpha(-0.4);
    const auto e = simulate_skew_bm(-0.4, TimeGrid(1.0, 16), 100000, 37);
    Vec y(e.n_paths), pos(e.n_paths);
    for (int m = 0; m < e.n_paths; ++m) {
        y[m] = skew_scale(e.at(m, 16), a);
        pos[m] = e.at(m, 5) > 0.0 ? 1.0 : 0.0;
    }
    const auto ys = oracle::mean_se(y), ps = oracle::mean_se(pos);
    EXPECT_NEAR(ys.mean, 0.0, 3.0 * ys.se);
    EXPECT_NEAR(ps.mean, a, 3.0 * ps.se);
}

TEST(Skew, RejectsUnitBeta) { EXPECT_THROW(simulate_skew_bm(1.0, TimeGrid(1.0, 4), 1, 1), InvalidArgument); }

TEST(StrictLocalMartingale, ConstantTimeChangeFreezes) {
    BesselOptions b;
    b.table_paths = 2000;
    const auto e = simulate_strict_local_martingale({"constant", 0.0}, TimeGrid(1.0, 8), 100, 29, b);
    for (double v : e.data) EXPECT_EQ(v, 1.0);
}

TEST(StrictLocalMartingale, BesselTimeChangeReproducesMean) {
    const TimeChange m{"bessel_r", 0.0};
    const TimeGrid grid(2.0, 8);
    const auto e = simulate_strict_local_martingale(m, grid, 40000, 31);
    for (double v : e.data) EXPECT_GT(v, 0.0);
    for (int i : {2, 4, 8}) {
        const auto ms = oracle::mean_se(e.marginal(i));
        EXPECT_NEAR(ms.mean, m(grid.time(i)), 3.0 * ms.se + 2e-3) << "t index " << i;
    }
}

TEST(StrictLocalMartingale, TableTracksClosedForm) {
    BesselOptions b;
    b.table_paths = 20000;
    b.table_steps = 100;
    const auto t = tabulate_bessel_inverse_moment(b);
    const TimeChange r{"bessel_r", 0.0};
    for (int k = 0; k <= 100; k += 10) EXPECT_NEAR(t.r[k], r(k * t.du), 4.0 * t.se[k] + 1e-3);
}

TEST(StrictLocalMartingale, OutOfRangeNamesAchievableRange) {
    BesselOptions b;
    b.table_paths = 2000;
    b.horizon = 1.0;
    try {
        simulate_strict_local_martingale({"exp", 5.0}, TimeGrid(1.0, 4), 10, 1, b);
        FAIL();
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("achievable range"), std::string::npos);
    }
}

TEST(Compose, ProjectionsAndTransforms) {
    const TimeGrid g(1.0, 16);
    const auto x = simulate_fbm(0.5, g, 200, 1);
    const auto l = simulate_levy({0.0, 1.0, {}}, g, 200, 2);
    const auto zero = simulate_levy({}, g, 200, 3);
    EXPECT_EQ(compose(x, l, "first").data, x.data);
    EXPECT_EQ(compose(x, zero, "sum").data, x.data);
    const auto c = compose(x, l, "cbrt_abs");
    for (std::size_t k = 0; k < x.data.size(); ++k) EXPECT_EQ(c.data[k], std::cbrt(std::abs(x.data[k])));
    EXPECT_THROW(compose(x, simulate_fbm(0.5, TimeGrid(1.0, 8), 200, 1), "first"), InvalidArgument);
    EXPECT_THROW(compose(x, l, "max"), InvalidArgument);
}

TEST(Determinism, SerialAndThreadedAreBitIdentical) {
    SimOptions serial{0, true}, threaded{4, false};
    const TimeGrid g(1.0, 32);
    EXPECT_EQ(simulate_levy({0.1, 1.0, {{0.5, 1.0}}}, g, 500, 99, serial).data,
              simulate_levy({0.1, 1.0, {{0.5, 1.0}}}, g, 500, 99, threaded).data);
    EXPECT_EQ(simulate_fbm(0.3, g, 500, 99, serial).data, simulate_fbm(0.3, g, 500, 99, threaded).data);
    EXPECT_EQ(simulate_skew_bm(0.2, g, 500, 99, serial).data, simulate_skew_bm(0.2, g, 500, 99).data);
    EXPECT_NE(simulate_fbm(0.3, g, 10, 1).data, simulate_fbm(0.3, g, 10, 2).data);
}

TEST(Distribution, FbmHalfMatchesBrownianSde) {
    const TimeGrid g(1.0, 32);
    const auto a = simulate_fbm(0.5, g, 10000, 1001);
    const auto b = simulate_sde("zero", "identity", {0.0}, g, 10000, 2002);
    for (int i : {8, 16, 32}) EXPECT_LT(oracle::ks_statistic(a.marginal(i), b.marginal(i)), oracle::ks_critical_001(10000, 10000));
}

TEST(LevyClassifier, ReferenceCases) {
    EXPECT_EQ(classify_levy_stickiness({0.0, 1.0, {}}, 0.0, false, false).verdict, Stickiness::Sticky);
    EXPECT_EQ(classify_levy_stickiness({0.3, 0.0, {}}, 0.3, true, true).verdict, Stickiness::Sticky);
    EXPECT_EQ(classify_levy_stickiness({1.0, 0.0, {}}, 0.0, false, false).verdict, Stickiness::NotSticky);
}

TEST(LevyClassifier, SignAndMassTable) {
    struct Case {
        double c;
        bool left, right;
        Stickiness expected;
    };
    // h = c - 0.5 with a finite small-jump integral of 0.5.
    const Case cases[] = {
        {1.0, true, false, Stickiness::Sticky},      {1.0, false, true, Stickiness::NotSticky},
        {1.0, true, true, Stickiness::Sticky},       {1.0, false, false, Stickiness::NotSticky},
        {0.0, false, true, Stickiness::Sticky},      {0.0, true, true, Stickiness::Sticky},
        {0.0, false, false, Stickiness::NotSticky},  {0.0, true, false, Stickiness::NotSticky},
    };
    for (const auto& c : cases)
        EXPECT_EQ(classify_levy_stickiness({c.c, 0.0, {}}, 0.5, c.left, c.right).verdict, c.expected)
            << "c=" << c.c << " left=" << c.left << " right=" << c.right;
    EXPECT_EQ(classify_levy_stickiness({0.0, 0.0, {}}, INFINITY, false, false).verdict, Stickiness::Sticky);
    EXPECT_EQ(classify_levy_stickiness({0.0, 0.0, {}}, NAN, false, false).verdict, Stickiness::Undetermined);
}
