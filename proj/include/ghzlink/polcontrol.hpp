#pragma once

// Electronic polarization controller: a stack of voltage-driven retarders in
// front of a PBS, and the intensity-feedback loop that aligns it.

#include "errors.hpp"
#include "link.hpp"
#include "polarization.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace ghzlink {

/**
 * \brief Variable retarders with fixed axes, applied in order.
 *
 * Retardance of each element is slope * voltage. The default 0/45/0/45
 * degree stack reaches every rotation once the retardance range spans 2 pi.
 */
struct retarder_stack {
    std::vector<double> axes_rad{0.0, std::numbers::pi / 4, 0.0,
                                 std::numbers::pi / 4};
    double slope_rad_per_v = std::numbers::pi / 2;
    double v_min = 0.0;
    double v_max = 5.0;

    void validate() const {
        if (axes_rad.size() < 3)
            throw config_error("polcontrol.axes_deg", "need at least 3 retarders");
        if (!(v_max > v_min))
            throw config_error("polcontrol.v_max", "must exceed v_min");
        if (!(slope_rad_per_v > 0.0))
            throw config_error("polcontrol.slope_rad_per_v", "must be positive");
    }

    [[nodiscard]] auto size() const noexcept -> std::size_t {
        return axes_rad.size();
    }

    [[nodiscard]] auto transform(std::span<double const> voltages) const
        -> polarization_transform {
        if (voltages.size() != axes_rad.size())
            throw config_error("voltages", "one voltage per retarder required");
        polarization_transform t;
        for (std::size_t k = 0; k < voltages.size(); ++k) {
            if (!(voltages[k] >= v_min && voltages[k] <= v_max))
                throw config_error("voltages[" + std::to_string(k) + "]",
                                   "outside the controller range");
            t = polarization_transform::retarder(
                    axes_rad[k], slope_rad_per_v * voltages[k])
                    .after(t);
        }
        return t;
    }

    [[nodiscard]] auto zero_voltages() const -> std::vector<double> {
        return std::vector<double>(axes_rad.size(), std::max(0.0, v_min));
    }
};

/// Power fraction leaving the suppressed (Q) port of the `basis` PBS when
/// `input` passes the stack at `voltages`.
[[nodiscard]] inline auto pbs_leakage(jones_vector const &input,
                                      retarder_stack const &stack,
                                      std::span<double const> voltages,
                                      polarization_basis basis = polarization_basis::hv)
    -> double {
    auto const out =
        basis_analyzer(basis).after(stack.transform(voltages)).apply(input);
    double const n = out.norm2();
    if (n == 0.0)
        throw config_error("input", "zero polarization vector");
    return std::clamp(std::norm(out.v) / n, 0.0, 1.0);
}

/// A reference state and the basis whose Q port it should not reach.
struct calibration_reference {
    jones_vector input;
    polarization_basis basis = polarization_basis::hv;
};

struct calibration_options {
    double threshold = 1e-2;
    std::uint32_t max_iterations = 200;
    double initial_step_v = 0.5;
    double min_step_v = 1e-3;
    std::uint64_t seed = 0;
};

struct calibration_trace_point {
    std::uint32_t iteration = 0;
    double leakage = 0.0;
};

struct calibration_result {
    std::vector<double> voltages;
    double leakage = 1.0; // mean over references
    std::vector<double> reference_leakage;
    std::uint32_t iterations = 0;
    std::uint32_t restarts = 0;
    bool converged = false;
    std::vector<calibration_trace_point> trace; // best leakage so far
};

/**
 * \brief Minimize PBS leakage over the stack voltages.
 *
 * Derivative-free coordinate descent: each iteration tries +-step on every
 * retarder in turn and keeps the first improvement; a sweep without
 * improvement halves the step. Below min_step the search restarts from
 * random voltages (seeded), keeping the best point found. Converged iff
 * every reference leaks at most `threshold`.
 *
 * With two non-orthogonal references (e.g. H and D) the aligned transform is
 * fixed up to a global phase; one reference fixes it only up to a rotation
 * about that reference.
 */
[[nodiscard]] inline auto calibrate(std::span<calibration_reference const> refs,
                                    retarder_stack const &stack,
                                    calibration_options const &opt,
                                    std::vector<double> start = {})
    -> calibration_result {
    stack.validate();
    if (refs.empty())
        throw config_error("references", "need at least one reference");
    if (!(opt.threshold > 0.0 && opt.threshold < 1.0))
        throw config_error("polcontrol.threshold", "must be in (0, 1)");
    if (start.empty())
        start = stack.zero_voltages();
    (void)stack.transform(start); // range check

    auto per_ref = [&](std::vector<double> const &v) {
        std::vector<double> l;
        l.reserve(refs.size());
        for (auto const &r : refs)
            l.push_back(pbs_leakage(r.input, stack, v, r.basis));
        return l;
    };
    auto mean = [](std::vector<double> const &l) {
        double s = 0;
        for (double x : l)
            s += x;
        return s / double(l.size());
    };
    auto done = [&](std::vector<double> const &l) {
        return std::all_of(l.begin(), l.end(),
                           [&](double x) { return x <= opt.threshold; });
    };

    auto rng = substream(opt.seed, stream_purpose::calibration, 0);
    std::uniform_real_distribution<double> uv(stack.v_min, stack.v_max);

    calibration_result res;
    res.voltages = start;
    res.reference_leakage = per_ref(start);
    res.leakage = mean(res.reference_leakage);
    res.trace.push_back({0, res.leakage});

    auto cur = start;
    double cur_f = res.leakage;
    double step = opt.initial_step_v;

    for (std::uint32_t it = 1; it <= opt.max_iterations; ++it) {
        if (done(res.reference_leakage)) {
            res.converged = true;
            break;
        }
        res.iterations = it;
        bool improved = false;
        for (std::size_t k = 0; k < cur.size() && !improved; ++k) {
            for (double dir : {+1.0, -1.0}) {
                auto v = cur;
                v[k] = std::clamp(v[k] + dir * step, stack.v_min, stack.v_max);
                if (v[k] == cur[k])
                    continue;
                double const f = mean(per_ref(v));
                if (f < cur_f) {
                    cur = std::move(v);
                    cur_f = f;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            step /= 2;
            if (step < opt.min_step_v) {
                for (auto &x : cur)
                    x = uv(rng);
                cur_f = mean(per_ref(cur));
                step = opt.initial_step_v;
                ++res.restarts;
            }
        }
        if (cur_f < res.leakage) {
            res.voltages = cur;
            res.reference_leakage = per_ref(cur);
            res.leakage = cur_f;
        }
        res.trace.push_back({it, res.leakage});
    }
    if (done(res.reference_leakage))
        res.converged = true;
    return res;
}

/// Single-reference form: suppress the V port for `reference`.
[[nodiscard]] inline auto calibrate(jones_vector const &reference,
                                    retarder_stack const &stack,
                                    calibration_options const &opt,
                                    std::vector<double> start = {})
    -> calibration_result {
    calibration_reference const r{reference, polarization_basis::hv};
    return calibrate(std::span<calibration_reference const>(&r, 1), stack, opt,
                     std::move(start));
}

/// H and D references sent through `channel`, i.e. what the controller sees
/// when the reference source replaces the emitter.
[[nodiscard]] inline auto eigenbasis_references(
    polarization_transform const &channel) -> std::vector<calibration_reference> {
    return {{channel.apply(pol::H), polarization_basis::hv},
            {channel.apply(pol::D), polarization_basis::da}};
}

struct compensation_step {
    double start_ps = 0.0;
    std::vector<double> voltages;
    polarization_transform transform;
    calibration_result calibration;
};

/**
 * \brief Recalibrate at the start of every measurement set.
 *
 * At each start time the reference pair is sent through the fiber drift at
 * that moment and the stack is recalibrated, warm-started from the previous
 * voltages. Voltages stay frozen for the rest of the set.
 */
[[nodiscard]] inline auto
compensate_before_measurement(drift_process const &drift,
                              std::uint64_t drift_seed,
                              retarder_stack const &stack,
                              std::span<double const> set_starts_ps,
                              calibration_options const &opt)
    -> std::vector<compensation_step> {
    drift_trajectory traj(drift, drift_seed);
    std::vector<compensation_step> out;
    auto v = stack.zero_voltages();
    for (std::size_t s = 0; s < set_starts_ps.size(); ++s) {
        auto const t = set_starts_ps[s];
        if (s > 0 && !(t > set_starts_ps[s - 1]))
            throw config_error("schedule", "set start times must increase");
        auto const refs = eigenbasis_references(traj.at(t));
        auto o = opt;
        o.seed = opt.seed + s;
        auto cal = calibrate(refs, stack, o, v);
        v = cal.voltages;
        out.push_back({t, v, stack.transform(v), std::move(cal)});
    }
    return out;
}

} // namespace ghzlink
