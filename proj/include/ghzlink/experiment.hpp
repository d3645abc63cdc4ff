#pragma once

// End-to-end runs: source -> fibers -> analyzers -> detectors -> stream
// files, and the analyses that read them back.

#include "cascade_source.hpp"
#include "config.hpp"
#include "correlator.hpp"
#include "errors.hpp"
#include "fidelity.hpp"
#include "link.hpp"
#include "polcontrol.hpp"
#include "stream_format.hpp"
#include "timetag.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

namespace ghzlink {

/// One measurement set: a basis held fixed over [start, end) of emission
/// time.
struct measurement_set {
    std::size_t index = 0;
    double start_ps = 0.0;
    double end_ps = 0.0;
    polarization_basis basis = polarization_basis::hv;
};

[[nodiscard]] inline auto measurement_sets(experiment_config const &cfg)
    -> std::vector<measurement_set> {
    std::vector<measurement_set> sets;
    auto const span = cfg.span_ps();
    auto const d = cfg.schedule.set_duration_ps;
    auto const &bases = cfg.schedule.bases;
    for (std::size_t k = 0; double(k) * d < span; ++k)
        sets.push_back({k, double(k) * d, std::min(span, double(k + 1) * d),
                        bases[k % bases.size()]});
    return sets;
}

struct run_options {
    bool deterministic = false; // single-threaded
};

struct simulation_stats {
    std::uint64_t pairs = 0;
    std::uint64_t singles = 0;
    std::array<std::uint64_t, 4> photons{}; // reaching each detector
    std::array<std::uint64_t, 4> tags{};
    std::array<std::uint64_t, 4> dark_tags{};
};

struct simulation_result {
    experiment_config config;
    std::vector<measurement_set> sets;
    // Per arm (xx, x): controller state for every set.
    std::array<std::vector<compensation_step>, 2> compensation;
    std::array<detected_stream, 4> channels;
    simulation_stats stats;

    [[nodiscard]] auto tags(detector_role r) const -> tag_stream const & {
        return channels[role_index(r)].tags;
    }
};

namespace detail {

/// Controller settings per set, or identity settings when disabled.
inline auto compensate(experiment_config const &cfg,
                       std::vector<measurement_set> const &sets)
    -> std::array<std::vector<compensation_step>, 2> {
    std::array<std::vector<compensation_step>, 2> out;
    for (auto a : {arm::xx, arm::x}) {
        auto &dst = out[static_cast<std::size_t>(a)];
        auto const &fib = cfg.fiber(a);
        if (!cfg.polcontrol.enabled) {
            for (auto const &s : sets) {
                auto const v = cfg.polcontrol.stack.zero_voltages();
                dst.push_back({s.start_ps, v, cfg.polcontrol.stack.transform(v), {}});
            }
            continue;
        }
        std::vector<double> starts;
        for (auto const &s : sets)
            starts.push_back(s.start_ps + fib.propagation_delay_ps);
        auto opt = cfg.polcontrol.calibration;
        opt.seed = cfg.seed ^ (static_cast<std::uint64_t>(a) << 32);
        dst = compensate_before_measurement(fib.drift, arm_drift_seed(cfg.seed, a),
                                            cfg.polcontrol.stack, starts, opt);
        for (std::size_t k = 0; k < dst.size(); ++k)
            dst[k].start_ps = sets[k].start_ps;
    }
    return out;
}

} // namespace detail

/**
 * \brief Simulate a full acquisition.
 *
 * Cycles are processed one source block at a time, so memory holds photon
 * arrival times, not in-flight state; fiber and analyzer draws use a
 * substream per block. Detection runs per channel, in parallel unless
 * `deterministic`; every channel draws from its own substream, so the output
 * does not depend on the thread count.
 */
[[nodiscard]] inline auto simulate(experiment_config const &cfg,
                                   run_options const &opt = {})
    -> simulation_result {
    cfg.validate();
    simulation_result res;
    res.config = cfg;
    res.sets = measurement_sets(cfg);
    res.compensation = detail::compensate(cfg, res.sets);

    std::vector<analyzer_setting> settings;
    for (std::size_t k = 0; k < res.sets.size(); ++k)
        settings.push_back({res.sets[k].start_ps, res.sets[k].basis,
                            res.compensation[0][k].transform,
                            res.compensation[1][k].transform});
    analyzer_schedule schedule(std::move(settings));
    schedule.arm_delay_ps = {cfg.xx_fiber.propagation_delay_ps,
                             cfg.x_fiber.propagation_delay_ps};

    fiber_link xx_link(cfg.xx_fiber, arm::xx, cfg.seed);
    fiber_link x_link(cfg.x_fiber, arm::x, cfg.seed);
    photon_streams arrivals;
    for (std::uint64_t first = 0; first < cfg.n_cycles; first += source_block_cycles) {
        auto const n = std::min(source_block_cycles, cfg.n_cycles - first);
        auto const block = first / source_block_cycles;
        auto const em = simulate_emissions(cfg.source, first, n, cfg.seed);
        res.stats.pairs += em.pairs.size();
        res.stats.singles += em.singles.size();
        auto batch = to_flight(em);
        xx_link.start_block(block);
        x_link.start_block(block);
        xx_link.transmit(batch);
        x_link.transmit(batch);
        auto proj_rng = substream(cfg.seed, stream_purpose::analyzer, block);
        project(batch, schedule, proj_rng, arrivals);
    }
    arrivals.sort();

    auto run_channel = [&](detector_role r) {
        auto const i = role_index(r);
        bool const xx = r == detector_role::xx_p || r == detector_role::xx_q;
        auto const span =
            cfg.span_ps() + (xx ? cfg.xx_fiber : cfg.x_fiber).propagation_delay_ps;
        auto rng = substream(cfg.seed, stream_purpose::detector, i);
        res.channels[i] = detect(arrivals[r], cfg.detector(r), cfg.clock,
                                 static_cast<std::uint8_t>(i), span, rng);
    };
    if (opt.deterministic || std::thread::hardware_concurrency() <= 1) {
        for (auto r : all_roles)
            run_channel(r);
    } else {
        std::vector<std::jthread> pool;
        for (auto r : all_roles)
            pool.emplace_back(run_channel, r);
    }
    for (auto r : all_roles) {
        auto const i = role_index(r);
        res.stats.photons[i] = arrivals[r].size();
        res.stats.tags[i] = res.channels[i].tags.size();
        res.stats.dark_tags[i] = static_cast<std::uint64_t>(
            std::count(res.channels[i].dark.begin(), res.channels[i].dark.end(), true));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Run directories: one stream file per detector role plus manifest.json.

inline constexpr char const *manifest_name = "manifest.json";
inline constexpr char const *stream_extension = ".ghzt";

[[nodiscard]] inline auto stream_file_name(detector_role r) -> std::string {
    return std::string(role_label(r)) + stream_extension;
}

[[nodiscard]] inline auto channel_header(experiment_config const &cfg,
                                         detector_role r) -> stream_header {
    stream_header h;
    h.clock = cfg.clock;
    h.acquisition_start_ns = cfg.acquisition_start_ns;
    h.channel_roles[static_cast<std::uint8_t>(role_index(r))] = role_label(r);
    return h;
}

[[nodiscard]] inline auto make_manifest(simulation_result const &res) -> json {
    auto const &cfg = res.config;
    json m;
    m["format"] = "ghzlink-run";
    m["version"] = 1;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seed;
    m["n_cycles"] = cfg.n_cycles;
    m["clock"] = {{"period_ps", cfg.clock.period_ps()},
                  {"divisor", cfg.clock.divisor()}};
    json ch = json::object();
    for (auto r : all_roles) {
        auto const i = role_index(r);
        ch[role_label(r)] = {{"file", stream_file_name(r)},
                             {"channel", i},
                             {"tags", res.stats.tags[i]},
                             {"dark_tags", res.stats.dark_tags[i]},
                             {"photons", res.stats.photons[i]}};
    }
    m["channels"] = ch;
    m["pairs_emitted"] = res.stats.pairs;
    m["singles_emitted"] = res.stats.singles;
    json sets = json::array();
    for (std::size_t k = 0; k < res.sets.size(); ++k) {
        auto const &s = res.sets[k];
        json e{{"start_ps", s.start_ps},
               {"end_ps", s.end_ps},
               {"basis", std::string(to_string(s.basis))}};
        for (auto a : {arm::xx, arm::x}) {
            auto const &c = res.compensation[static_cast<std::size_t>(a)][k];
            auto const key = a == arm::xx ? std::string("xx") : std::string("x");
            e[key + "_voltages"] = c.voltages;
            e[key + "_leakage"] = c.calibration.leakage;
        }
        sets.push_back(e);
    }
    m["sets"] = sets;
    return m;
}

inline void write_text(std::filesystem::path const &p, std::string const &s) {
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw config_error("out", "cannot write '" + p.string() + "'");
    out << s;
    if (!out)
        throw config_error("out", "write failed for '" + p.string() + "'");
}

/// Write the four stream files and the manifest into `dir`.
inline void write_run(std::filesystem::path const &dir,
                      simulation_result const &res) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw config_error("out", "cannot create '" + dir.string() +
                                      "': " + ec.message());
    for (auto r : all_roles) {
        auto const path = dir / stream_file_name(r);
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw config_error("out", "cannot write '" + path.string() + "'");
        stream_writer w(out, channel_header(res.config, r));
        w.write(std::span<time_tag const>(res.tags(r)));
        if (!out)
            throw config_error("out", "write failed for '" + path.string() + "'");
    }
    write_text(dir / manifest_name, make_manifest(res).dump(2) + "\n");
}

/// Streams of a run directory, by role.
struct run_data {
    json manifest;
    clock_frame clock;
    std::array<tag_stream, 4> tags;

    [[nodiscard]] auto operator[](detector_role r) const -> tag_stream const & {
        return tags[role_index(r)];
    }
};

[[nodiscard]] inline auto read_stream_file(std::filesystem::path const &p)
    -> std::pair<stream_header, tag_stream> {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw format_error("cannot open stream file '" + p.string() + "'", 0);
    stream_reader r(in);
    tag_stream tags;
    while (auto t = r.next())
        tags.push_back(*t);
    return {r.header(), std::move(tags)};
}

/**
 * \brief Load a run directory.
 *
 * With `roles` given, only those channels are required and read. The
 * manifest's config hash must match `cfg` unless `force` is set.
 */
[[nodiscard]] inline auto read_run(std::filesystem::path const &dir,
                                   experiment_config const &cfg, bool force,
                                   std::vector<detector_role> roles = {
                                       all_roles.begin(), all_roles.end()})
    -> run_data {
    run_data d;
    auto const mpath = dir / manifest_name;
    std::ifstream min(mpath);
    if (!min)
        throw format_error("missing manifest '" + mpath.string() + "'", 0);
    try {
        d.manifest = json::parse(min);
    } catch (json::parse_error const &e) {
        throw format_error(std::string("manifest is not valid JSON: ") + e.what(),
                           e.byte);
    }
    if (!d.manifest.is_object() || d.manifest.value("format", "") != "ghzlink-run")
        throw format_error("manifest has the wrong format tag", 0);
    auto const want = config_hash(cfg);
    auto const have = d.manifest.value("config_hash", "");
    if (have != want && !force)
        throw config_error("config",
                           "streams were produced with config hash " + have +
                               ", the supplied config hashes to " + want +
                               " (use --force to analyze anyway)");
    d.clock = cfg.clock;
    for (auto r : roles) {
        auto const path = dir / stream_file_name(r);
        if (!std::filesystem::exists(path))
            throw format_error(std::string("missing channel ") + role_label(r) +
                                   " ('" + path.string() + "')",
                               0);
        auto [h, tags] = read_stream_file(path);
        bool found = false;
        for (auto const &[ch, label] : h.channel_roles)
            found = found || label == role_label(r);
        if (!found)
            throw format_error(path.string() + " does not carry role " +
                                   role_label(r),
                               0);
        if (!(h.clock == cfg.clock) && !force)
            throw config_error("clock", "stream clock differs from the config");
        d.clock = h.clock;
        d.tags[role_index(r)] = std::move(tags);
    }
    return d;
}

[[nodiscard]] inline auto to_run_data(simulation_result const &res) -> run_data {
    run_data d;
    d.manifest = make_manifest(res);
    d.clock = res.config.clock;
    for (auto r : all_roles)
        d.tags[role_index(r)] = res.tags(r);
    return d;
}

// ---------------------------------------------------------------------------
// Analyses.

/// Remove each channel's delay so that all roles share emission time.
[[nodiscard]] inline auto aligned_streams(experiment_config const &cfg,
                                          run_data const &run)
    -> std::array<tag_stream, 4> {
    std::array<tag_stream, 4> out;
    for (auto r : all_roles) {
        auto const d = std::llround(cfg.channel_delay_ps(r));
        out[role_index(r)] = shift_earlier(run[r], static_cast<std::uint64_t>(d));
    }
    return out;
}

namespace detail {

inline void accumulate_pair(coincidence_grid &g, tag_stream const &a,
                            tag_stream const &b, std::uint64_t window) {
    auto const &clock = g.geometry().clock();
    if (clock.divisor() > 1) {
        auto const fa = divide_clock(a, clock);
        auto const fb = divide_clock(b, clock);
        accumulate_grid(g, std::span<frame_tag const>(fa),
                        std::span<frame_tag const>(fb), window);
    } else {
        accumulate_grid(g, std::span<time_tag const>(a),
                        std::span<time_tag const>(b), window);
    }
}

inline auto to_ps(double t) -> std::uint64_t {
    return t <= 0 ? 0 : static_cast<std::uint64_t>(std::llround(t));
}

} // namespace detail

/**
 * \brief Co- and cross-polarized grids of every set overlapping
 * [begin, end), clipped to it.
 *
 * With a divided clock the tags are re-expressed as (frame, offset) first,
 * exactly as a remote recorder would see them.
 */
[[nodiscard]] inline auto
collect_basis_grids(experiment_config const &cfg,
                    std::array<tag_stream, 4> const &aligned,
                    clock_frame const &clock,
                    std::vector<measurement_set> const &sets, std::uint32_t bin_ps,
                    double begin_ps = 0.0,
                    double end_ps = std::numeric_limits<double>::infinity())
    -> std::pair<basis_grids, std::array<std::size_t, 3>> {
    auto g = empty_basis_grids(grid_geometry(clock, bin_ps, cfg.analysis.grid_cycles));
    std::array<std::size_t, 3> n_sets{};
    auto const window = cfg.analysis.window_ps(clock);
    for (auto const &s : sets) {
        auto const lo = std::max(s.start_ps, begin_ps);
        auto const hi = std::min(s.end_ps, end_ps);
        if (!(hi > lo))
            continue;
        auto const b = static_cast<std::size_t>(s.basis);
        ++n_sets[b];
        std::array<tag_stream, 4> w;
        for (std::size_t i = 0; i < 4; ++i)
            w[i] = time_window(aligned[i], detail::to_ps(lo), detail::to_ps(hi));
        auto const xp = role_index(detector_role::xx_p);
        auto const xq = role_index(detector_role::xx_q);
        auto const p = role_index(detector_role::x_p);
        auto const q = role_index(detector_role::x_q);
        detail::accumulate_pair(g.co[b], w[xp], w[p], window);
        detail::accumulate_pair(g.co[b], w[xq], w[q], window);
        detail::accumulate_pair(g.cross[b], w[xp], w[q], window);
        detail::accumulate_pair(g.cross[b], w[xq], w[p], window);
    }
    return {std::move(g), n_sets};
}

inline void require_all_bases(std::array<std::size_t, 3> const &n_sets,
                              std::string const &where) {
    for (auto b : all_bases) {
        if (n_sets[static_cast<std::size_t>(b)] == 0)
            throw analysis_error(where + ": basis set incomplete, no " +
                                 std::string(to_string(b)) + " measurement");
    }
}

struct fidelity_report {
    basis_grids grids;
    std::array<std::size_t, 3> sets_per_basis{};
    fidelity_map map_ungated;
    fidelity_map map_central;
    delay_curve_result curve_ungated;
    delay_curve_result curve_central;
    window_scan_result window;
};

[[nodiscard]] inline auto analyze_fidelity(experiment_config const &cfg,
                                           run_data const &run)
    -> fidelity_report {
    auto const aligned = aligned_streams(cfg, run);
    auto const sets = measurement_sets(cfg);
    fidelity_report rep;
    std::tie(rep.grids, rep.sets_per_basis) =
        collect_basis_grids(cfg, aligned, run.clock, sets, cfg.analysis.bin_ps);
    require_all_bases(rep.sets_per_basis, "fidelity");
    auto const central = gate_spec::central(cfg.analysis.central_gate_ps);
    rep.map_ungated = make_fidelity_map(rep.grids, gate_spec::none());
    rep.map_central = make_fidelity_map(rep.grids, central);
    rep.curve_ungated = delay_curve(rep.map_ungated);
    rep.curve_central = delay_curve(rep.map_central);
    auto const fine = collect_basis_grids(cfg, aligned, run.clock, sets,
                                          cfg.analysis.window_scan_bin_ps)
                          .first;
    rep.window = best_window(fine, cfg.analysis.window_gate_ps);
    return rep;
}

struct g2_report {
    g2_histogram ungated;
    estimate zero_ungated;
    g2_histogram central;
    estimate zero_central;
    std::uint32_t window_offset_ps = 0;
    g2_histogram window;
    estimate zero_window;
};

/// HBT analysis of the two X-arm detectors.
[[nodiscard]] inline auto analyze_g2(experiment_config const &cfg,
                                     run_data const &run) -> g2_report {
    auto const aligned = aligned_streams(cfg, run);
    auto const &s1 = aligned[role_index(detector_role::x_p)];
    auto const &s2 = aligned[role_index(detector_role::x_q)];
    if (s1.empty() || s2.empty())
        throw analysis_error("g2: an X-arm channel recorded no tags");
    g2_options const o{cfg.analysis.g2_delays, cfg.analysis.g2_norm_min_cycles,
                       cfg.analysis.g2_norm_max_cycles};
    auto const &clock = run.clock;
    g2_report rep;
    rep.ungated = build_g2_histogram(s1, s2, clock, o);
    rep.zero_ungated = g2_zero(rep.ungated);

    auto const central = gate_spec::central(cfg.analysis.central_gate_ps);
    rep.central = build_g2_histogram(gate_tags(s1, central, clock),
                                     gate_tags(s2, central, clock), clock, o);
    rep.zero_central = g2_zero(rep.central);

    std::array<tag_stream, 2> const both{s1, s2};
    rep.window_offset_ps = densest_window(both, cfg.analysis.window_gate_ps, clock);
    auto const win = gate_spec::window(rep.window_offset_ps, cfg.analysis.window_gate_ps);
    rep.window = build_g2_histogram(gate_tags(s1, win, clock),
                                    gate_tags(s2, win, clock), clock, o);
    rep.zero_window = g2_zero(rep.window);
    return rep;
}

struct stability_slice {
    double start_ps = 0.0;
    double end_ps = 0.0;
    stability_point point;
};

/// Peak gated fidelity per wall-time slice.
[[nodiscard]] inline auto analyze_stability(experiment_config const &cfg,
                                            run_data const &run)
    -> std::vector<stability_slice> {
    auto const span = cfg.span_ps();
    auto const d = cfg.analysis.slice_duration_ps;
    auto const n = static_cast<std::size_t>(std::ceil(span / d - 1e-9));
    if (n < 2)
        throw analysis_error("stability: acquisition span covers fewer than "
                             "two slices");
    auto const aligned = aligned_streams(cfg, run);
    auto const sets = measurement_sets(cfg);
    std::vector<basis_grids> grids;
    std::vector<stability_slice> out;
    for (std::size_t s = 0; s < n; ++s) {
        double const lo = double(s) * d;
        double const hi = std::min(span, double(s + 1) * d);
        auto [g, n_sets] = collect_basis_grids(cfg, aligned, run.clock, sets,
                                               cfg.analysis.bin_ps, lo, hi);
        require_all_bases(n_sets, "stability slice " + std::to_string(s));
        grids.push_back(std::move(g));
        out.push_back({lo, hi, {}});
    }
    auto const series = stability_series(
        grids, gate_spec::central(cfg.analysis.central_gate_ps));
    for (std::size_t s = 0; s < n; ++s)
        out[s].point = series[s];
    return out;
}

} // namespace ghzlink
