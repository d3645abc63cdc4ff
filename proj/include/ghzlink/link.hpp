#pragma once

// Everything between emission and a recorded time tag: fiber loss, delay and
// polarization drift, the polarization analyzers, and single-photon
// detectors.

#include "cascade_source.hpp"
#include "errors.hpp"
#include "polarization.hpp"
#include "random.hpp"
#include "timetag.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ghzlink {

/// Random walk of the fiber's polarization transform.
struct drift_process {
    double step_interval_ps = 1e12; // 1 s
    double angular_step_std_rad = 0.0;

    void validate(std::string const &name = "fiber.drift") const {
        if (!(step_interval_ps > 0.0))
            throw config_error(name + ".step_interval_ps", "must be positive");
        if (!(angular_step_std_rad >= 0.0))
            throw config_error(name + ".angular_step_std_rad", "must be >= 0");
    }
};

struct fiber_params {
    double length_km = 0.0;
    double loss_db = 0.0; // may be +inf
    double propagation_delay_ps = 0.0;
    drift_process drift;

    void validate(std::string const &name = "fiber") const {
        if (!(loss_db >= 0.0))
            throw config_error(name + ".loss_db", "must be >= 0");
        if (!(propagation_delay_ps >= 0.0))
            throw config_error(name + ".propagation_delay_ps", "must be >= 0");
        drift.validate(name + ".drift");
    }

    [[nodiscard]] auto transmission() const noexcept -> double {
        return std::isinf(loss_db) ? 0.0 : std::pow(10.0, -loss_db / 10.0);
    }
};

/// Per-cycle detection gate: a tag is kept if its phase lies in
/// [offset, offset + width) modulo the clock period.
struct detector_gate {
    std::uint32_t offset_ps = 0;
    std::uint32_t width_ps = 0;
};

struct detector_params {
    double efficiency = 1.0;
    double jitter_fwhm_ps = 0.0;
    double dead_time_ps = 0.0;
    double dark_rate_cps = 0.0;
    std::optional<detector_gate> gate;

    void validate(clock_frame const &clock, std::string const &name) const {
        if (!(efficiency >= 0.0 && efficiency <= 1.0))
            throw config_error(name + ".efficiency", "must be in [0, 1]");
        if (!(jitter_fwhm_ps >= 0.0))
            throw config_error(name + ".jitter_fwhm_ps", "must be >= 0");
        if (!(dead_time_ps >= 0.0))
            throw config_error(name + ".dead_time_ps", "must be >= 0");
        if (!(dark_rate_cps >= 0.0))
            throw config_error(name + ".dark_rate_cps", "must be >= 0");
        if (gate && (gate->width_ps > clock.period_ps() ||
                     gate->offset_ps >= clock.period_ps()))
            throw config_error(name + ".gate",
                               "width must not exceed the clock period");
    }
};

namespace detail {

[[nodiscard]] inline auto drift_step(rng_engine &rng, double std_rad)
    -> polarization_transform {
    std::normal_distribution<double> n(0.0, std_rad);
    double const a = n(rng);
    double const b = n(rng);
    double const c = n(rng);
    return polarization_transform::from_rotation_vector(a, b, c);
}

} // namespace detail

/**
 * \brief Incremental evaluation of a drift random walk.
 *
 * The walk is piecewise constant: identity on [0, step), then one random
 * rotation composed per elapsed step. Queries must be non-decreasing in time
 * unless `reset()` is called.
 */
class drift_trajectory {
  public:
    drift_trajectory(drift_process process, std::uint64_t seed)
        : proc(process), sd(seed), rng(substream(seed, stream_purpose::drift, 0)) {
        proc.validate();
    }

    [[nodiscard]] auto at(double t_ps) -> polarization_transform const & {
        if (proc.angular_step_std_rad == 0.0 || t_ps < proc.step_interval_ps)
            return identity;
        auto const target =
            static_cast<std::uint64_t>(std::floor(t_ps / proc.step_interval_ps));
        if (target < steps)
            throw std::logic_error("drift_trajectory queried backwards in time");
        while (steps < target) {
            current = detail::drift_step(rng, proc.angular_step_std_rad)
                          .after(current);
            ++steps;
        }
        return current;
    }

    void reset() {
        rng = substream(sd, stream_purpose::drift, 0);
        current = {};
        steps = 0;
    }

  private:
    drift_process proc;
    std::uint64_t sd;
    rng_engine rng;
    polarization_transform current;
    polarization_transform identity;
    std::uint64_t steps = 0;
};

/// Fiber polarization transform at time t; identity at t = 0 and for a
/// noiseless process.
[[nodiscard]] inline auto drift_at(double t_ps, drift_process const &process,
                                   std::uint64_t seed) -> polarization_transform {
    drift_trajectory traj(process, seed);
    return traj.at(t_ps);
}

/// One photon on its way to a PBS.
struct arm_state {
    double time_ps = 0.0;
    bool alive = true;
    polarization_transform path; // accumulated before the analyzer
};

struct pair_in_flight {
    arm_state xx;
    arm_state x;
    double phase_rad = 0.0;
    bool coherent = true;
};

struct single_in_flight {
    arm_state photon;
    photon_kind kind = photon_kind::extra_x;
};

struct emission_batch {
    std::vector<pair_in_flight> pairs;
    std::vector<single_in_flight> singles;
};

[[nodiscard]] inline auto to_flight(source_output const &src) -> emission_batch {
    emission_batch b;
    b.pairs.reserve(src.pairs.size());
    for (auto const &p : src.pairs)
        b.pairs.push_back(
            {{p.t_xx_ps, true, {}}, {p.t_x_ps, true, {}}, p.phase_rad, p.coherent});
    b.singles.reserve(src.singles.size());
    for (auto const &s : src.singles)
        b.singles.push_back({{s.t_ps, true, {}}, s.kind});
    return b;
}

enum class arm { xx = 0, x = 1 };

/// Seed of the drift walk seen by one arm of a run.
[[nodiscard]] constexpr auto arm_drift_seed(std::uint64_t seed, arm which) noexcept
    -> std::uint64_t {
    return detail::splitmix64(seed ^ (static_cast<std::uint64_t>(which) + 1));
}

[[nodiscard]] constexpr auto travels_in(photon_kind k) noexcept -> arm {
    return k == photon_kind::background_xx || k == photon_kind::lone_xx ? arm::xx
                                                                        : arm::x;
}

/**
 * \brief One arm's fiber, applied batch by batch.
 *
 * Each photon survives with probability 10^(-loss/10); survivors are delayed
 * and pick up the fiber drift at their arrival time. Batches must come in
 * time order: the drift walk only moves forward. Loss draws come from a
 * substream per source block (see start_block), so results do not depend on
 * how cycles are batched.
 */
class fiber_link {
  public:
    fiber_link(fiber_params fiber, arm which, std::uint64_t seed)
        : fp((fiber.validate(), fiber)), side(which), sd(seed),
          rng(substream(seed, stream_purpose::fiber, static_cast<std::uint64_t>(which))),
          survive(fp.transmission()),
          pair_drift(fp.drift, arm_drift_seed(seed, which)),
          single_drift(fp.drift, arm_drift_seed(seed, which)) {}

    /// Switch the loss draws to source block `block`.
    void start_block(std::uint64_t block) {
        rng = substream(sd, stream_purpose::fiber,
                        2 * block + static_cast<std::uint64_t>(side));
    }

    void transmit(emission_batch &batch) {
        for (auto &p : batch.pairs)
            pass(side == arm::xx ? p.xx : p.x, pair_drift);
        for (auto &s : batch.singles) {
            if (travels_in(s.kind) == side)
                pass(s.photon, single_drift);
        }
    }

  private:
    void pass(arm_state &s, drift_trajectory &traj) {
        if (!s.alive)
            return;
        if (!survive(rng)) {
            s.alive = false;
            return;
        }
        s.time_ps += fp.propagation_delay_ps;
        s.path = traj.at(s.time_ps).after(s.path);
    }

    fiber_params fp;
    arm side;
    std::uint64_t sd;
    rng_engine rng;
    std::bernoulli_distribution survive;
    drift_trajectory pair_drift;
    drift_trajectory single_drift;
};

/// Send one arm of a whole batch through a fiber.
inline void transmit(emission_batch &batch, fiber_params const &fiber,
                     arm which, std::uint64_t seed) {
    fiber_link(fiber, which, seed).transmit(batch);
}

/// Analyzer configuration in force from `start_ps` until the next entry.
struct analyzer_setting {
    double start_ps = 0.0;
    polarization_basis basis = polarization_basis::hv;
    polarization_transform xx_compensation;
    polarization_transform x_compensation;

    [[nodiscard]] auto xx_analyzer() const -> polarization_transform {
        return basis_analyzer(basis).after(xx_compensation);
    }
    [[nodiscard]] auto x_analyzer() const -> polarization_transform {
        return basis_analyzer(basis).after(x_compensation);
    }
};

class analyzer_schedule {
  public:
    analyzer_schedule() : entries{analyzer_setting{}} {}

    explicit analyzer_schedule(std::vector<analyzer_setting> settings)
        : entries(std::move(settings)) {
        if (entries.empty())
            throw config_error("schedule", "needs at least one setting");
        if (!std::is_sorted(entries.begin(), entries.end(),
                            [](auto const &a, auto const &b) {
                                return a.start_ps < b.start_ps;
                            }))
            throw config_error("schedule", "settings must be in time order");
    }

    [[nodiscard]] static auto fixed(polarization_basis b) -> analyzer_schedule {
        return analyzer_schedule({analyzer_setting{0.0, b, {}, {}}});
    }

    /// Analyzers switch when light emitted at a setting's start reaches
    /// them: arm lookups subtract that arm's fiber delay.
    std::array<double, 2> arm_delay_ps{0.0, 0.0};

    [[nodiscard]] auto at(arm which, double arrival_ps) const
        -> analyzer_setting const & {
        return at(arrival_ps - arm_delay_ps[static_cast<std::size_t>(which)]);
    }

    [[nodiscard]] auto at(double t_ps) const -> analyzer_setting const & {
        auto it = std::upper_bound(
            entries.begin(), entries.end(), t_ps,
            [](double t, analyzer_setting const &s) { return t < s.start_ps; });
        return it == entries.begin() ? entries.front() : *std::prev(it);
    }

    [[nodiscard]] auto settings() const noexcept
        -> std::vector<analyzer_setting> const & {
        return entries;
    }

  private:
    std::vector<analyzer_setting> entries;
};

/**
 * \brief Route every surviving photon to a PBS port.
 *
 * Pair outcomes are sampled from the two-photon projection through each
 * photon's full path (drift, compensation, basis); each arm's analyzer
 * setting is looked up at that photon's arrival. Photons without a partner go
 * to either port with probability 1/2. Appends to `out` unsorted.
 */
inline void project(emission_batch const &batch,
                    analyzer_schedule const &schedule, rng_engine &rng,
                    photon_streams &out) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (auto const &p : batch.pairs) {
        if (!p.xx.alive && !p.x.alive)
            continue;
        auto const xx_path =
            schedule.at(arm::xx, p.xx.time_ps).xx_analyzer().after(p.xx.path);
        auto const x_path =
            schedule.at(arm::x, p.x.time_ps).x_analyzer().after(p.x.path);
        auto const probs =
            p.coherent ? pair_outcome_probabilities(p.phase_rad, xx_path, x_path)
                       : std::array<double, 4>{0.25, 0.25, 0.25, 0.25};
        double u = uni(rng);
        std::size_t k = 0;
        for (; k < 3; ++k) {
            u -= probs[k];
            if (u < 0)
                break;
        }
        if (p.xx.alive)
            out[k / 2 == 0 ? detector_role::xx_p : detector_role::xx_q].push_back(
                p.xx.time_ps);
        if (p.x.alive)
            out[k % 2 == 0 ? detector_role::x_p : detector_role::x_q].push_back(
                p.x.time_ps);
    }
    for (auto const &s : batch.singles) {
        if (!s.photon.alive)
            continue;
        bool const p_port = uni(rng) < 0.5;
        if (travels_in(s.kind) == arm::xx)
            out[p_port ? detector_role::xx_p : detector_role::xx_q].push_back(
                s.photon.time_ps);
        else
            out[p_port ? detector_role::x_p : detector_role::x_q].push_back(
                s.photon.time_ps);
    }
}

[[nodiscard]] inline auto project(emission_batch const &batch,
                                  analyzer_schedule const &schedule,
                                  std::uint64_t seed) -> photon_streams {
    auto rng = substream(seed, stream_purpose::analyzer, 0);
    photon_streams out;
    project(batch, schedule, rng, out);
    out.sort();
    return out;
}

/// Detector output; `dark[i]` marks tags produced by the dark-count process.
struct detected_stream {
    tag_stream tags;
    std::vector<bool> dark;
};

[[nodiscard]] inline auto in_gate(std::uint64_t timestamp_ps,
                                  detector_gate const &g,
                                  clock_frame const &clock) noexcept -> bool {
    auto const period = clock.period_ps();
    auto const phase = fold_to_clock(timestamp_ps, clock).phase_ps;
    auto const rel = (phase + period - g.offset_ps) % period;
    return rel < g.width_ps;
}

/**
 * \brief Turn photon arrival times into time tags for one channel.
 *
 * Order of effects: efficiency, Gaussian jitter (rounded to 1 ps), dark
 * counts over [0, span_ps), gate, dead time.
 */
[[nodiscard]] inline auto detect(std::span<double const> arrivals_ps,
                                 detector_params const &det,
                                 clock_frame const &clock, std::uint8_t channel,
                                 double span_ps, rng_engine &rng)
    -> detected_stream {
    det.validate(clock, "detector");
    std::bernoulli_distribution keep(det.efficiency);
    std::normal_distribution<double> jitter(0.0, det.jitter_fwhm_ps / fwhm_per_sigma);

    std::vector<std::pair<std::uint64_t, bool>> hits;
    hits.reserve(arrivals_ps.size());
    for (double t : arrivals_ps) {
        if (!keep(rng))
            continue;
        double const tj = det.jitter_fwhm_ps > 0 ? t + jitter(rng) : t;
        auto const r = std::llround(tj);
        if (r < 0)
            continue;
        hits.emplace_back(static_cast<std::uint64_t>(r), false);
    }
    if (det.dark_rate_cps > 0.0) {
        std::exponential_distribution<double> gap(det.dark_rate_cps * 1e-12);
        for (double t = gap(rng); t < span_ps; t += gap(rng))
            hits.emplace_back(static_cast<std::uint64_t>(t), true);
    }
    std::sort(hits.begin(), hits.end());

    detected_stream out;
    out.tags.reserve(hits.size());
    std::optional<std::uint64_t> last;
    for (auto const &[t, is_dark] : hits) {
        if (det.gate && !in_gate(t, *det.gate, clock))
            continue;
        if (last && static_cast<double>(t - *last) < det.dead_time_ps)
            continue;
        out.tags.push_back({channel, t});
        out.dark.push_back(is_dark);
        last = t;
    }
    return out;
}

/// Record against a divided clock: sync count plus offset within the frame.
[[nodiscard]] inline auto divide_clock(std::span<time_tag const> tags,
                                       clock_frame const &clock)
    -> std::vector<frame_tag> {
    std::vector<frame_tag> out;
    out.reserve(tags.size());
    auto const fp = clock.frame_period_ps();
    for (auto const &t : tags)
        out.push_back({t.channel, t.timestamp_ps / fp, t.timestamp_ps % fp});
    return out;
}

/// Inverse of divide_clock, given the frame alignment.
[[nodiscard]] inline auto undivide_clock(std::span<frame_tag const> tags,
                                         clock_frame const &clock) -> tag_stream {
    tag_stream out;
    out.reserve(tags.size());
    auto const fp = clock.frame_period_ps();
    for (auto const &t : tags)
        out.push_back({t.channel, t.frame_index * fp + t.offset_ps});
    return out;
}

} // namespace ghzlink
