#include "ghzlink/fidelity.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ghzlink;
using ghzlink::testing::rng_for;
using ghzlink::testing::uniform_int;

namespace {

clock_frame const clk(1000, 1);

// Grids for one cycle where every filled bin holds `n` coincidences split by
// the given per-basis correlations.
void fill(basis_grids &g, std::size_t i, std::size_t j, std::array<double, 3> c,
          std::uint64_t n) {
    for (std::size_t b = 0; b < 3; ++b) {
        auto const co = static_cast<std::uint64_t>(std::llround(double(n) * (1 + c[b]) / 2));
        g.co[b].at(i, j) += co;
        g.cross[b].at(i, j) += n - co;
    }
}

auto random_grids(rng_engine &r, grid_geometry const &geo, std::uint64_t max_count)
    -> basis_grids {
    auto g = empty_basis_grids(geo);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < geo.axis_length(); ++i)
            for (std::size_t j = 0; j < geo.axis_length(); ++j) {
                g.co[b].at(i, j) = uniform_int(r, 0, max_count);
                g.cross[b].at(i, j) = uniform_int(r, 0, max_count);
            }
    return g;
}

} // namespace

TEST(DegreeOfCorrelation, Examples) {
    auto const even = degree_of_correlation(50, 50);
    EXPECT_TRUE(even.defined);
    EXPECT_EQ(even.value, 0.0);
    EXPECT_NEAR(even.error.sigma, 0.1, 1e-15);
    EXPECT_FALSE(even.error.degenerate);

    auto const pure = degree_of_correlation(100, 0);
    EXPECT_EQ(pure.value, 1.0);
    EXPECT_EQ(pure.error.sigma, 0.0);
    EXPECT_TRUE(pure.error.degenerate);
    EXPECT_NEAR(pure.error.sigma_floored, 1.0 / 102, 1e-15);

    EXPECT_EQ(degree_of_correlation(0, 30).value, -1.0);
    EXPECT_FALSE(degree_of_correlation(0, 0).defined);
    EXPECT_NEAR(degree_of_correlation(75, 25).value, 0.5, 1e-15);
}

TEST(DegreeOfCorrelation, FourTimesTheCountsHalvesSigma) {
    auto g = rng_for(70);
    for (int i = 0; i < 1000; ++i) {
        double const co = double(uniform_int(g, 1, 10'000));
        double const cr = double(uniform_int(g, 1, 10'000));
        ASSERT_NEAR(propagate_uncertainty(4 * co, 4 * cr).sigma,
                    propagate_uncertainty(co, cr).sigma / 2, 1e-12);
        ASSERT_LE(std::abs(degree_of_correlation(std::uint64_t(co), std::uint64_t(cr)).value),
                  1.0);
    }
    EXPECT_THROW((void)propagate_uncertainty(-1, 2), config_error);
}

TEST(DegreeOfCorrelation, SigmaMatchesMultinomialSpread) {
    // Thinned counts scatter around the same C with the propagated sigma.
    auto g = rng_for(71);
    constexpr int reps = 4000;
    std::binomial_distribution<std::uint64_t> co(2000, 0.8);
    double s = 0, s2 = 0;
    for (int i = 0; i < reps; ++i) {
        auto const c = co(g);
        double const v = degree_of_correlation(c, 2000 - c).value;
        s += v;
        s2 += v * v;
    }
    double const mean = s / reps;
    double const sd = std::sqrt(s2 / reps - mean * mean);
    EXPECT_NEAR(mean, 0.6, 4 * sd / std::sqrt(reps));
    EXPECT_NEAR(sd, propagate_uncertainty(1600, 400).sigma, 0.05 * sd);
}

TEST(Fidelity, FromCorrelations) {
    EXPECT_EQ(fidelity_from_correlations(1, 1, -1), 1.0);
    EXPECT_EQ(fidelity_from_correlations(0, 0, 0), 0.25);
    EXPECT_EQ(fidelity_from_correlations(1, 0, 0), 0.5);
    EXPECT_EQ(fidelity_from_correlations(1, -1, 1), 0.0);
    EXPECT_NEAR(fidelity_sigma(0.1, 0.1, 0.1), std::sqrt(0.03) / 4, 1e-15);
}

TEST(FidelityMap, BinNeedsEveryBasis) {
    grid_geometry const geo(clk, 500, 1);
    auto g = empty_basis_grids(geo);
    fill(g, 0, 1, {1, 1, -1}, 100);
    g.co[0].at(1, 1) = 10; // HV only
    auto const m = make_fidelity_map(g);
    EXPECT_TRUE(m.at(0, 1).defined);
    EXPECT_EQ(m.at(0, 1).value, 1.0);
    EXPECT_EQ(m.at(0, 1).weight, 300u);
    EXPECT_FALSE(m.at(1, 1).defined);
    EXPECT_EQ(m.at(1, 1).weight, 10u);
    EXPECT_FALSE(m.at(0, 0).defined);
}

TEST(FidelityMap, MismatchedGeometryRejected) {
    auto g = empty_basis_grids(grid_geometry(clk, 500, 1));
    g.cross[2] = coincidence_grid(grid_geometry(clk, 250, 1));
    EXPECT_THROW((void)make_fidelity_map(g), config_error);
}

TEST(FidelityMap, NoGateIsIdentityAndGatesNest) {
    auto r = rng_for(72);
    grid_geometry const geo(clk, 50, 1);
    auto const g = random_grids(r, geo, 5);
    auto const a = make_fidelity_map(g);
    auto const b = make_fidelity_map(g, gate_spec::none());
    auto const n = make_fidelity_map(apply_gate(g, gate_spec::window(100, 500)),
                                     gate_spec::window(300, 400));
    auto const w = make_fidelity_map(g, gate_spec::window(300, 300));
    for (std::size_t i = 0; i < a.bins.size(); ++i) {
        ASSERT_EQ(a.bins[i].value, b.bins[i].value);
        ASSERT_EQ(n.bins[i].defined, w.bins[i].defined);
        ASSERT_EQ(n.bins[i].value, w.bins[i].value);
        ASSERT_EQ(n.bins[i].weight, w.bins[i].weight);
    }
}

TEST(RotateToDelay, IsABijectionIndexedByDelay) {
    auto r = rng_for(73);
    for (int rep = 0; rep < 30; ++rep) {
        grid_geometry const geo(clk, static_cast<std::uint32_t>(uniform_int(r, 40, 1000)),
                                static_cast<std::uint32_t>(uniform_int(r, 1, 3)));
        coincidence_grid g(geo);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g.size(); ++j)
                g.at(i, j) = uniform_int(r, 0, 100);
        auto const rot = rotate_to_delay(g);
        auto const n = g.size();
        ASSERT_EQ(rot.columns.size(), 2 * n - 1);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        std::uint64_t total = 0;
        for (std::size_t k = 0; k < rot.columns.size(); ++k)
            for (auto const &c : rot.columns[k]) {
                ASSERT_EQ(static_cast<std::int64_t>(c.col) - static_cast<std::int64_t>(c.row),
                          rot.tau_of(k));
                ASSERT_EQ(c.position, c.row + c.col);
                ASSERT_EQ(c.value, g.at(c.row, c.col));
                ASSERT_TRUE(seen.insert({c.row, c.col}).second);
                total += c.value;
            }
        ASSERT_EQ(seen.size(), n * n);
        ASSERT_EQ(total, g.total());
    }
}

TEST(DelayCurve, CountWeightedColumnMean) {
    grid_geometry const geo(clk, 250, 1); // 4 bins
    auto g = empty_basis_grids(geo);
    // tau = +1: (0,1) perfect with 300 counts, (1,2) classical mix with 102.
    fill(g, 0, 1, {1, 1, -1}, 100);
    fill(g, 1, 2, {1, 0, 0}, 100 / 3 + 1); // 34 per basis: C_DA = C_RL = 0 exactly
    auto const m = make_fidelity_map(g);
    auto const curve = delay_curve(m);
    auto const &p = curve.points[4]; // tau index +1
    ASSERT_EQ(p.tau_index, 1);
    EXPECT_EQ(p.tau_ps, 250.0);
    double const w1 = 300, w2 = 102;
    EXPECT_NEAR(p.value, (w1 * 1.0 + w2 * 0.5) / (w1 + w2), 1e-12);
    double const s2 = m.at(1, 2).sigma;
    EXPECT_NEAR(p.sigma, std::sqrt(w2 * w2 * s2 * s2) / (w1 + w2), 1e-12);
    EXPECT_EQ(p.weight, 402u);
    EXPECT_EQ(curve.peak.tau_index, 1);
    EXPECT_FALSE(curve.points[3].defined); // tau 0 empty
}

TEST(DelayCurve, TiesGoToTheSmallerDelay) {
    grid_geometry const geo(clk, 250, 1);
    auto g = empty_basis_grids(geo);
    fill(g, 0, 2, {1, 1, -1}, 10);
    fill(g, 0, 3, {1, 1, -1}, 10);
    fill(g, 0, 0, {1, 1, -1}, 10);
    EXPECT_EQ(delay_curve(make_fidelity_map(g)).peak.tau_index, 2);
}

TEST(DelayCurve, PeakIgnoresNonPositiveDelays) {
    grid_geometry const geo(clk, 250, 1);
    auto g = empty_basis_grids(geo);
    fill(g, 2, 0, {1, 1, -1}, 10); // tau -2
    EXPECT_THROW((void)delay_curve(make_fidelity_map(g)), analysis_error);
    fill(g, 0, 1, {0, 0, 0}, 10);
    EXPECT_EQ(delay_curve(make_fidelity_map(g)).peak.value, 0.25);
}

TEST(WindowFidelity, PoolsCountsBeforeTakingCorrelations) {
    grid_geometry const geo(clk, 500, 1);
    auto g = empty_basis_grids(geo);
    fill(g, 0, 0, {1, 1, -1}, 100);
    fill(g, 1, 1, {1, 0, 0}, 100);
    auto const all = window_fidelity(g, gate_spec::none());
    EXPECT_NEAR(all.value, (1 + 1 + 0.5 + 0.5) / 4, 1e-12);
    EXPECT_EQ(all.coincidences, 600u);
    EXPECT_NEAR(window_fidelity(g, gate_spec::window(0, 500)).value, 1.0, 1e-12);
    auto empty = empty_basis_grids(geo);
    EXPECT_THROW((void)window_fidelity(empty, gate_spec::none()), analysis_error);
}

TEST(BestWindow, FindsThePlantedRegion) {
    grid_geometry const geo(clk, 10, 1);
    auto g = empty_basis_grids(geo);
    auto inside = [](std::size_t k) { return k >= 30 && k < 40; };
    for (std::size_t i = 0; i < 100; ++i)
        for (std::size_t j = 0; j < 100; ++j)
            fill(g, i, j, inside(i) && inside(j) ? std::array<double, 3>{1, 1, -1}
                                                 : std::array<double, 3>{1, 0, 0},
                 20);
    auto const best = best_window(g, 100);
    EXPECT_EQ(best.offset_ps, 300u);
    EXPECT_NEAR(best.fidelity.value, 1.0, 1e-12);
}

TEST(BestWindow, EqualsTheMaximumOverAllWindowGates) {
    auto r = rng_for(75);
    for (int rep = 0; rep < 10; ++rep) {
        grid_geometry const geo(clk, 25, 1);
        auto const g = random_grids(r, geo, 4);
        auto const w = static_cast<std::uint32_t>(uniform_int(r, 1, 12) * 25);
        auto const best = best_window(g, w);
        double oracle = -1;
        for (std::uint32_t o = 0; o + w <= 1000; o += 25) {
            try {
                oracle = std::max(oracle, window_fidelity(g, gate_spec::window(o, w)).value);
            } catch (analysis_error const &) {
            }
        }
        ASSERT_NEAR(best.fidelity.value, oracle, 1e-12);
        ASSERT_NEAR(window_fidelity(g, gate_spec::window(best.offset_ps, w)).value,
                    best.fidelity.value, 1e-12);
    }
}

TEST(BestWindow, Errors) {
    auto g = empty_basis_grids(grid_geometry(clk, 10, 1));
    EXPECT_THROW((void)best_window(g, 100), analysis_error);
    EXPECT_THROW((void)best_window(g, 0), config_error);
    auto multi = empty_basis_grids(grid_geometry(clk, 10, 2));
    EXPECT_THROW((void)best_window(multi, 100), config_error);
}

TEST(FitOscillation, RecoversAPlantedPeriod) {
    auto r = rng_for(76);
    std::normal_distribution<double> noise(0.0, 0.01);
    for (double period : {600.0, 689.3, 800.0}) {
        std::vector<delay_point> pts;
        for (int k = -5; k <= 40; ++k) {
            double const tau = k * 36.0;
            pts.push_back({k, tau,
                           0.55 + 0.3 * std::cos(2 * std::numbers::pi * tau / period) +
                               noise(r),
                           0.01, 100, true});
        }
        auto const f = fit_oscillation(pts, 400, 1000);
        EXPECT_NEAR(f.period_ps, period, 3.0);
        EXPECT_NEAR(f.offset, 0.55, 0.01);
        EXPECT_NEAR(f.amplitude, 0.3, 0.01);
    }
    std::vector<delay_point> few{{1, 36, 0.5, 0.1, 1, true}};
    EXPECT_THROW((void)fit_oscillation(few, 400, 1000), analysis_error);
}

TEST(StabilitySeries, PeakPerSliceAndClassicalLimit) {
    grid_geometry const geo(clk, 250, 1);
    std::vector<basis_grids> s(2, empty_basis_grids(geo));
    fill(s[0], 0, 1, {1, 1, -1}, 100);
    fill(s[1], 0, 2, {1, 0, 0}, 100); // 0.5: not above the limit
    auto const out = stability_series(s, gate_spec::none());
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].value, 1.0);
    EXPECT_EQ(out[0].tau_ps, 250.0);
    EXPECT_TRUE(out[0].above_classical_limit);
    EXPECT_EQ(out[1].value, 0.5);
    EXPECT_FALSE(out[1].above_classical_limit);
    EXPECT_THROW((void)stability_series({}, gate_spec::none()), config_error);
}
