#pragma once

// Monte-Carlo model of an electrically pulsed quantum-dot pair source.
//
// Each clock cycle the dot is excited with probability pair_probability. The
// excitation time is the positive half of a Gaussian of FWHM reinit_width_ps
// anchored at the cycle start; XX and X photons follow after exponential
// delays. Photons that would be emitted at or after the next cycle start are
// dropped: the next pulse reinitializes the dot. Optionally, a pair whose XX
// photon leaves while its own pulse is still on, or whose X photon leaves as
// the next pulse rises, loses its polarization correlation
// (reinit_dephasing).

#include "errors.hpp"
#include "polarization.hpp"
#include "random.hpp"
#include "timetag.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace ghzlink {

inline constexpr double hbar_ev_s = 6.582119569e-16;
inline constexpr double planck_ev_s = 4.135667696e-15;
inline constexpr double fwhm_per_sigma = 2.3548200450309493; // 2 sqrt(2 ln 2)

struct source_params {
    clock_frame clock{1000, 1};
    double pair_probability = 0.5;
    double tau_xx_ps = 200.0;
    double tau_x_ps = 300.0;
    double reinit_width_ps = 130.0;
    double fss_ueV = 6.0;
    double multi_photon_probability = 0.0;
    double background_rate_cps = 0.0; // per arm, unpolarized
    // Chance that a photon emitted at the peak of an excitation pulse loses
    // its polarization correlation; falls off with the pulse profile.
    double reinit_dephasing = 0.0;

    void validate() const {
        auto prob = [](char const *name, double p) {
            if (!(p >= 0.0 && p <= 1.0))
                throw config_error(std::string("source.") + name,
                                   "must be a probability in [0, 1]");
        };
        prob("pair_probability", pair_probability);
        prob("multi_photon_probability", multi_photon_probability);
        prob("reinit_dephasing", reinit_dephasing);
        if (!(tau_xx_ps > 0.0))
            throw config_error("source.tau_xx_ps", "must be positive");
        if (!(tau_x_ps > 0.0))
            throw config_error("source.tau_x_ps", "must be positive");
        if (!(reinit_width_ps >= 0.0))
            throw config_error("source.reinit_width_ps", "must be >= 0");
        if (!(fss_ueV >= 0.0))
            throw config_error("source.fss_ueV", "must be >= 0");
        if (!(background_rate_cps >= 0.0))
            throw config_error("source.background_rate_cps", "must be >= 0");
    }
};

/// One XX -> X cascade. Times in ps since acquisition start.
struct pair_emission {
    std::uint64_t cycle = 0;
    double cycle_start_ps = 0.0;
    double t_xx_ps = 0.0;
    double t_x_ps = 0.0;
    double phase_rad = 0.0; // relative |VV> phase accumulated during the delay
    bool coherent = true;   // false: scrambled by a reinitialization pulse
};

enum class photon_kind : std::uint8_t {
    extra_x,       // second X photon in a multi-photon cycle
    lone_xx,       // XX photon whose X partner fell past the cycle end
    background_xx, // uncorrelated light in the XX arm
    background_x,  // uncorrelated light in the X arm
};

/// Photon without a polarization partner; detected in either port at 50%.
struct single_emission {
    double t_ps = 0.0;
    photon_kind kind = photon_kind::extra_x;

    [[nodiscard]] auto in_xx_arm() const noexcept -> bool {
        return kind == photon_kind::background_xx ||
               kind == photon_kind::lone_xx;
    }
};

/// Accumulated phase of the |VV> amplitude after `delay_ps` for a splitting
/// of `fss_ueV`. One full turn takes h / S.
[[nodiscard]] inline auto phase_of_delay(double delay_ps, double fss_ueV)
    -> double {
    return (fss_ueV * 1e-6 / hbar_ev_s) * (delay_ps * 1e-12);
}

/// h / S in ps, or infinity for S = 0.
[[nodiscard]] inline auto fss_period_ps(double fss_ueV) -> double {
    return planck_ev_s / (fss_ueV * 1e-6) * 1e12;
}

/// Closed-form outcome probability for the ideal analyzers in `basis`.
[[nodiscard]] inline auto projection_probability(polarization_basis basis,
                                                 outcome xx, outcome x,
                                                 double phase_rad) -> double {
    bool const co = xx == x;
    double const c = std::cos(phase_rad);
    switch (basis) {
    case polarization_basis::hv:
        return co ? 0.5 : 0.0;
    case polarization_basis::da:
        return co ? (1.0 + c) / 4.0 : (1.0 - c) / 4.0;
    case polarization_basis::rl:
        return co ? (1.0 - c) / 4.0 : (1.0 + c) / 4.0;
    }
    return 0.0;
}

struct cycle_emissions {
    std::optional<pair_emission> pair;
    std::vector<single_emission> singles;
};

/// Draw everything emitted in one clock cycle.
[[nodiscard]] inline auto sample_cycle(source_params const &p,
                                       std::uint64_t cycle_index,
                                       rng_engine &rng) -> cycle_emissions {
    cycle_emissions out;
    double const period = p.clock.period_ps();
    double const start = static_cast<double>(cycle_index) * period;
    double const end = start + period;
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    double const sigma = p.reinit_width_ps / fwhm_per_sigma;
    if (uni(rng) < p.pair_probability) {
        std::normal_distribution<double> pulse(0.0, sigma);
        std::exponential_distribution<double> xx_delay(1.0 / p.tau_xx_ps);
        std::exponential_distribution<double> x_delay(1.0 / p.tau_x_ps);
        double const t_exc = start + std::abs(pulse(rng));
        double const t_xx = t_exc + xx_delay(rng);
        double t_x = t_xx + x_delay(rng);
        // X strictly after XX even when the exponential draw is ~0.
        t_x = std::max(t_x, std::nextafter(t_xx, INFINITY));
        if (t_x < end) {
            out.pair = pair_emission{cycle_index, start, t_xx, t_x,
                                     phase_of_delay(t_x - t_xx, p.fss_ueV), true};
            if (p.reinit_dephasing > 0.0) {
                // Pulse profile at the XX emission (this cycle's pulse) and
                // at the X emission (next cycle's pulse).
                auto profile = [&](double d) {
                    return sigma > 0 ? std::exp(-d * d / (2 * sigma * sigma)) : 0.0;
                };
                double const keep = (1 - p.reinit_dephasing * profile(t_xx - start)) *
                                    (1 - p.reinit_dephasing * profile(end - t_x));
                out.pair->coherent = uni(rng) < keep;
            }
        } else if (t_xx < end) {
            out.singles.push_back({t_xx, photon_kind::lone_xx});
        }
        if (uni(rng) < p.multi_photon_probability)
            out.singles.push_back({start + uni(rng) * period,
                                   photon_kind::extra_x});
    }

    if (p.background_rate_cps > 0.0) {
        std::poisson_distribution<int> bg(p.background_rate_cps * period *
                                          1e-12);
        for (auto kind : {photon_kind::background_xx, photon_kind::background_x}) {
            for (int n = bg(rng); n > 0; --n)
                out.singles.push_back({start + uni(rng) * period, kind});
        }
    }
    return out;
}

/// Everything the source emitted, in time order.
struct source_output {
    std::vector<pair_emission> pairs;     // by t_xx
    std::vector<single_emission> singles; // by t_ps
};

inline constexpr std::uint64_t source_block_cycles = 1u << 16;

/**
 * \brief Simulate cycles [first_cycle, first_cycle + n_cycles).
 *
 * Cycles are drawn in fixed blocks of source_block_cycles, each block from
 * its own substream, so any split of a cycle range reproduces the result of
 * the whole range.
 */
[[nodiscard]] inline auto simulate_emissions(source_params const &p,
                                             std::uint64_t first_cycle,
                                             std::uint64_t n_cycles,
                                             std::uint64_t seed)
    -> source_output {
    p.validate();
    source_output out;
    auto const end = first_cycle + n_cycles;
    for (auto block = first_cycle / source_block_cycles;
         block * source_block_cycles < end; ++block) {
        auto rng = substream(seed, stream_purpose::source, block);
        auto const b0 = block * source_block_cycles;
        auto const b1 = std::min(end, b0 + source_block_cycles);
        for (auto c = b0; c < b1; ++c) {
            auto ev = sample_cycle(p, c, rng);
            if (c < first_cycle)
                continue;
            if (ev.pair)
                out.pairs.push_back(*ev.pair);
            for (auto const &s : ev.singles)
                out.singles.push_back(s);
        }
    }
    // Pairs come out in cycle order, which is t_xx order. Singles within one
    // cycle are unordered.
    std::stable_sort(out.singles.begin(), out.singles.end(),
                     [](auto const &a, auto const &b) { return a.t_ps < b.t_ps; });
    return out;
}

/// Detector roles of the four-port polarization analysis.
enum class detector_role : std::uint8_t { xx_p = 0, xx_q = 1, x_p = 2, x_q = 3 };

inline constexpr std::array<detector_role, 4> all_roles{
    detector_role::xx_p, detector_role::xx_q, detector_role::x_p,
    detector_role::x_q};

[[nodiscard]] constexpr auto role_label(detector_role r) noexcept
    -> char const * {
    switch (r) {
    case detector_role::xx_p:
        return role::xx_p;
    case detector_role::xx_q:
        return role::xx_q;
    case detector_role::x_p:
        return role::x_p;
    case detector_role::x_q:
        return role::x_q;
    }
    return "?";
}

[[nodiscard]] constexpr auto role_index(detector_role r) noexcept
    -> std::size_t {
    return static_cast<std::size_t>(r);
}

/// Photon arrival times (ps, unsorted on input to detection) per detector.
struct photon_streams {
    std::array<std::vector<double>, 4> times;

    [[nodiscard]] auto operator[](detector_role r) -> std::vector<double> & {
        return times[role_index(r)];
    }
    [[nodiscard]] auto operator[](detector_role r) const
        -> std::vector<double> const & {
        return times[role_index(r)];
    }

    void sort() {
        for (auto &t : times)
            std::sort(t.begin(), t.end());
    }
};

/**
 * \brief Ideal-analyzer emission streams for one basis.
 *
 * Every emitted photon is routed to its PBS port with outcomes drawn from
 * projection_probability; no loss, no drift, no detector effects.
 */
[[nodiscard]] inline auto simulate_source(source_params const &p,
                                          std::uint64_t n_cycles,
                                          std::uint64_t seed,
                                          polarization_basis basis)
    -> photon_streams {
    if (n_cycles == 0)
        throw config_error("n_cycles", "must be at least 1");
    auto const em = simulate_emissions(p, 0, n_cycles, seed);
    auto rng = substream(seed, stream_purpose::analyzer, 0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    photon_streams out;
    for (auto const &pe : em.pairs) {
        double u = uni(rng);
        int k = 0;
        for (; k < 3; ++k) {
            auto const xo = static_cast<outcome>(k / 2);
            auto const o = static_cast<outcome>(k % 2);
            u -= pe.coherent ? projection_probability(basis, xo, o, pe.phase_rad)
                             : 0.25;
            if (u < 0)
                break;
        }
        out[k / 2 == 0 ? detector_role::xx_p : detector_role::xx_q].push_back(
            pe.t_xx_ps);
        out[k % 2 == 0 ? detector_role::x_p : detector_role::x_q].push_back(
            pe.t_x_ps);
    }
    for (auto const &s : em.singles) {
        bool const p_port = uni(rng) < 0.5;
        if (s.in_xx_arm())
            out[p_port ? detector_role::xx_p : detector_role::xx_q].push_back(
                s.t_ps);
        else
            out[p_port ? detector_role::x_p : detector_role::x_q].push_back(
                s.t_ps);
    }
    out.sort();
    return out;
}

} // namespace ghzlink
