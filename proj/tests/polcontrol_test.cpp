#include "ghzlink/polcontrol.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace ghzlink;
using ghzlink::testing::rng_for;

namespace {

constexpr double pi = std::numbers::pi;

auto haar_calibration(std::uint64_t i, calibration_options const &opt)
    -> std::pair<polarization_transform, calibration_result> {
    auto g = rng_for(80, i);
    auto const u = polarization_transform::haar_random(g);
    auto const refs = eigenbasis_references(u);
    auto o = opt;
    o.seed = i;
    return {u, calibrate(refs, retarder_stack{}, o)};
}

} // namespace

TEST(RetarderStack, ZeroVoltsIsIdentity) {
    retarder_stack const s;
    auto const v = s.zero_voltages();
    EXPECT_NEAR(s.transform(v).rotation_angle(), 0.0, 1e-12);
    EXPECT_NEAR(pbs_leakage(pol::H, s, v), 0.0, 1e-15);
    EXPECT_NEAR(pbs_leakage(pol::V, s, v), 1.0, 1e-15);
    EXPECT_NEAR(pbs_leakage(pol::D, s, v), 0.5, 1e-15);
    EXPECT_NEAR(pbs_leakage(pol::D, s, v, polarization_basis::da), 0.0, 1e-15);
    EXPECT_NEAR(pbs_leakage(pol::L, s, v, polarization_basis::rl), 1.0, 1e-15);
}

TEST(RetarderStack, HalfWaveAt45SwapsHAndV) {
    retarder_stack const s;
    std::vector<double> const v{0.0, 2.0, 0.0, 0.0}; // pi retardance on the 45 deg plate
    EXPECT_NEAR(pbs_leakage(pol::H, s, v), 1.0, 1e-12);
}

TEST(RetarderStack, LeakageIgnoresGlobalPhase) {
    auto g = rng_for(81);
    retarder_stack const s;
    std::uniform_real_distribution<double> uv(0.0, 5.0);
    std::uniform_real_distribution<double> ph(-pi, pi);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> v{uv(g), uv(g), uv(g), uv(g)};
        auto const in = polarization_transform::haar_random(g).apply(pol::H);
        auto const phase = std::polar(1.0, ph(g));
        jones_vector const rotated{in.h * phase, in.v * phase};
        ASSERT_NEAR(pbs_leakage(in, s, v), pbs_leakage(rotated, s, v), 1e-12);
        double const l = pbs_leakage(in, s, v);
        ASSERT_GE(l, 0.0);
        ASSERT_LE(l, 1.0);
    }
}

TEST(RetarderStack, RangeAndShapeChecked) {
    retarder_stack const s;
    EXPECT_THROW((void)s.transform(std::vector<double>{0, 0, 0}), config_error);
    EXPECT_THROW((void)s.transform(std::vector<double>{0, 5.01, 0, 0}), config_error);
    EXPECT_THROW((void)s.transform(std::vector<double>{-0.1, 0, 0, 0}), config_error);
    retarder_stack bad;
    bad.axes_rad = {0, 1};
    EXPECT_THROW(bad.validate(), config_error);
    bad = {};
    bad.v_max = 0;
    EXPECT_THROW(bad.validate(), config_error);
}

TEST(Calibrate, AlignedReferenceNeedsNoIterations) {
    auto const r = calibrate(pol::H, retarder_stack{}, calibration_options{});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.iterations, 3u);
    EXPECT_LE(r.leakage, 1e-2);
}

TEST(Calibrate, RotatedReferenceConverges) {
    // H turned by 90 degrees in real space is V: maximal leakage at the start.
    auto const r = calibrate(pol::V, retarder_stack{}, calibration_options{});
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.iterations, 200u);
    EXPECT_LE(r.leakage, 1e-2);
    EXPECT_EQ(r.trace.front().leakage, 1.0);
}

TEST(Calibrate, TraceIsBestSoFarAndConvergenceMeansThreshold) {
    calibration_options const opt;
    for (std::uint64_t i = 0; i < 100; ++i) {
        auto const [u, r] = haar_calibration(i, opt);
        ASSERT_EQ(r.trace.size(), r.iterations + 1u);
        for (std::size_t k = 1; k < r.trace.size(); ++k)
            ASSERT_LE(r.trace[k].leakage, r.trace[k - 1].leakage);
        ASSERT_EQ(r.trace.back().leakage, r.leakage);
        bool const below = std::all_of(r.reference_leakage.begin(),
                                       r.reference_leakage.end(),
                                       [&](double x) { return x <= opt.threshold; });
        ASSERT_EQ(r.converged, below);
        for (double v : r.voltages) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 5.0);
        }
    }
}

TEST(Calibrate, HaarRandomChannelsConverge) {
    calibration_options const opt;
    int converged = 0;
    constexpr int n = 1000;
    for (std::uint64_t i = 0; i < n; ++i)
        converged += haar_calibration(i, opt).second.converged;
    EXPECT_GE(converged, 990) << converged << " of " << n;
}

TEST(Calibrate, TwoReferencesFixTheWholeTransform) {
    // With H and D aligned, the third basis is aligned too: the stack undoes
    // the channel up to a small residual rotation.
    calibration_options const opt;
    retarder_stack const s;
    for (std::uint64_t i = 0; i < 50; ++i) {
        auto const [u, r] = haar_calibration(i, opt);
        if (!r.converged)
            continue;
        auto const total = s.transform(r.voltages).after(u);
        EXPECT_LT(pbs_leakage(u.apply(pol::R), s, r.voltages, polarization_basis::rl),
                  4 * opt.threshold);
        EXPECT_LT(total.rotation_angle(), 4 * std::sqrt(opt.threshold));
    }
}

TEST(Calibrate, DeterministicForASeed) {
    calibration_options const opt;
    auto const a = haar_calibration(7, opt).second;
    auto const b = haar_calibration(7, opt).second;
    EXPECT_EQ(a.voltages, b.voltages);
    EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Calibrate, InvalidOptionsRejected) {
    std::vector<calibration_reference> const none;
    EXPECT_THROW((void)calibrate(none, retarder_stack{}, calibration_options{}),
                 config_error);
    calibration_options bad;
    bad.threshold = 0;
    EXPECT_THROW((void)calibrate(pol::H, retarder_stack{}, bad), config_error);
    EXPECT_THROW((void)calibrate(pol::H, retarder_stack{}, calibration_options{},
                                 std::vector<double>{9, 0, 0, 0}),
                 config_error);
}

TEST(CompensateBeforeMeasurement, NoDriftKeepsTheVoltages) {
    std::vector<double> const starts{0, 1e8, 2e8, 3e8};
    auto const steps = compensate_before_measurement(drift_process{1e6, 0.0}, 1,
                                                     retarder_stack{}, starts,
                                                     calibration_options{});
    ASSERT_EQ(steps.size(), 4u);
    for (auto const &s : steps) {
        EXPECT_EQ(s.voltages, steps.front().voltages);
        EXPECT_TRUE(s.calibration.converged);
        EXPECT_EQ(s.calibration.iterations, 0u);
    }
}

TEST(CompensateBeforeMeasurement, LeakageStaysBelowThresholdAtEverySetStart) {
    drift_process const drift{5e6, 0.05};
    std::vector<double> starts;
    for (int k = 0; k < 60; ++k)
        starts.push_back(k * 5.8e7);
    calibration_options const opt;
    auto const steps =
        compensate_before_measurement(drift, 42, retarder_stack{}, starts, opt);
    ASSERT_EQ(steps.size(), starts.size());
    for (std::size_t k = 0; k < steps.size(); ++k) {
        auto const u = drift_at(starts[k], drift, 42);
        ASSERT_EQ(steps[k].start_ps, starts[k]);
        EXPECT_TRUE(steps[k].calibration.converged) << k;
        EXPECT_LE(pbs_leakage(u.apply(pol::H), retarder_stack{}, steps[k].voltages),
                  1e-2)
            << k;
        EXPECT_LE(pbs_leakage(u.apply(pol::D), retarder_stack{}, steps[k].voltages,
                              polarization_basis::da),
                  1e-2)
            << k;
    }
}

TEST(CompensateBeforeMeasurement, StartsMustIncrease) {
    std::vector<double> const starts{0, 10, 10};
    EXPECT_THROW((void)compensate_before_measurement(drift_process{}, 1, retarder_stack{},
                                                     starts, calibration_options{}),
                 config_error);
}
