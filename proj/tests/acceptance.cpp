// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "ghzlink/ghzlink.hpp"

#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace ghzlink;
using ghzlink::testing::poisson_stream;
using ghzlink::testing::random_channel_tags;
using ghzlink::testing::random_tags;
using ghzlink::testing::rng_for;
using ghzlink::testing::uniform_int;
namespace fs = std::filesystem;

namespace {

struct verdict {
    bool pass = false;
    std::string detail;
};

auto config_file(char const *name) -> experiment_config {
    return load_config((fs::path(GHZLINK_CONFIG_DIR) / name).string());
}

auto fmt(char const *f, auto... args) -> std::string {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

auto slurp(fs::path const &p) -> std::string {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

auto oracle_equivalence() -> verdict {
    auto g = rng_for(1001);
    auto const t0 = std::chrono::steady_clock::now();
    std::uint64_t pairs = 0;
    for (int rep = 0; rep < 200; ++rep) {
        auto const span = uniform_int(g, 1, 50'000'000);
        auto const a = random_channel_tags(g, uniform_int(g, 0, 10'000), span, 0);
        auto const b = random_channel_tags(g, uniform_int(g, 0, 10'000), span, 1);
        clock_frame const c(static_cast<std::uint32_t>(uniform_int(g, 100, 3000)),
                            static_cast<std::uint32_t>(uniform_int(g, 1, 64)));
        auto const bin = static_cast<std::uint32_t>(uniform_int(g, 1, c.period_ps()));
        auto const cycles = static_cast<std::uint32_t>(uniform_int(g, 1, 12));
        auto const window = uniform_int(g, 0, 50'000);
        auto const fast = build_grid(a, b, c, bin, cycles, window);
        if (!(fast == brute_force_coincidences(a, b, c, bin, cycles, window)))
            return {false, fmt("instance %d differs", rep)};
        pairs += fast.total();
    }
    double const secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {secs < 60.0,
            fmt("200 instances identical (%llu coincidences), %.1f s",
                static_cast<unsigned long long>(pairs), secs)};
}

auto g2_chain() -> verdict {
    // Uncorrelated light split onto two detectors.
    auto g = rng_for(1002);
    auto const src = poisson_stream(g, 10'000'000, 0.2, 1000, 0);
    tag_stream a, b;
    std::bernoulli_distribution coin(0.5);
    for (auto t : src) {
        bool const first = coin(g);
        t.channel = first ? 0 : 1;
        (first ? a : b).push_back(t);
    }
    auto const h = build_g2_histogram(a, b, clock_frame(1000, 1));
    double worst = 0;
    for (double v : h.normalized)
        worst = std::max(worst, std::abs(v - 1.0));
    bool const flat = worst <= 0.02;

    auto const cfg = config_file("g2.json");
    auto const rep = analyze_g2(cfg, to_run_data(simulate(cfg)));
    double const u = rep.zero_ungated.value;
    double const w = rep.zero_window.value;
    bool const ok = flat && std::abs(u - 0.097) <= 0.01 && w < u;
    return {ok, fmt("Poisson max |g2-1| = %.4f; g2(0) ungated %.4f +- %.4f, "
                    "168 ps window %.4f +- %.4f",
                    worst, u, rep.zero_ungated.sigma, w, rep.zero_window.sigma)};
}

auto fss_oscillation() -> verdict {
    auto const cfg = config_file("ideal_fss.json");
    auto const rep = analyze_fidelity(cfg, to_run_data(simulate(cfg)));
    double const expected =
        2 * std::numbers::pi * hbar_ev_s / (cfg.source.fss_ueV * 1e-6) * 1e12;
    auto const fit = fit_oscillation(rep.curve_ungated.points, 300.0, 1500.0);
    bool const ok = std::abs(fit.period_ps - 689.0) <= 72.0;
    return {ok, fmt("fitted period %.1f ps (h/S = %.1f ps), offset %.3f amplitude %.3f",
                    fit.period_ps, expected, fit.offset, fit.amplitude)};
}

auto fidelity_anchors() -> verdict {
    auto const lab = config_file("lab.json");
    auto const rep = analyze_fidelity(lab, to_run_data(simulate(lab)));
    auto const &peak = rep.curve_central.peak;
    auto const &win = rep.window.fidelity;
    bool const lab_ok = peak.value >= 0.83 && peak.value <= 0.95;
    bool const win_ok = win.value >= peak.value - peak.sigma;

    auto const bg = config_file("background_only.json");
    auto const bg_rep = analyze_fidelity(bg, to_run_data(simulate(bg)));
    auto const pooled = window_fidelity(bg_rep.grids, gate_spec::none());
    bool const bg_ok = std::abs(pooled.value - 0.25) <= 0.02;
    return {lab_ok && win_ok && bg_ok,
            fmt("lab peak %.4f +- %.4f (central gate), window %.4f +- %.4f; "
                "background-only %.4f +- %.4f",
                peak.value, peak.sigma, win.value, win.sigma, pooled.value,
                pooled.sigma)};
}

auto deployed_anchors() -> verdict {
    auto const t0 = std::chrono::steady_clock::now();
    auto const cfg = config_file("deployed.json");
    auto const res = simulate(cfg);
    double worst_ratio = 1e300;
    for (auto r : {detector_role::xx_p, detector_role::xx_q}) {
        auto const i = role_index(r);
        double const signal = double(res.stats.tags[i] - res.stats.dark_tags[i]);
        worst_ratio = std::min(worst_ratio, double(res.stats.dark_tags[i]) / signal);
    }
    auto const run = to_run_data(res);
    auto const rep = analyze_fidelity(cfg, run);
    auto const slices = analyze_stability(cfg, run);
    double lowest = 1.0;
    for (auto const &s : slices)
        lowest = std::min(lowest, s.point.value);
    double const secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto const &peak = rep.curve_central.peak;
    auto const &win = rep.window.fidelity;
    bool const ok = worst_ratio > 0.1 && peak.value >= 0.76 && peak.value <= 0.82 &&
                    win.value >= 0.70 && win.value <= 0.82 && slices.size() == 7 &&
                    lowest > 0.5 && secs < 600.0;
    return {ok, fmt("XX background/signal >= %.3f; peak %.4f +- %.4f, window "
                    "%.4f +- %.4f; %zu slices, lowest %.4f; %.1f s",
                    worst_ratio, peak.value, peak.sigma, win.value, win.sigma,
                    slices.size(), lowest, secs)};
}

auto clock_division() -> verdict {
    auto direct = config_file("lab.json");
    direct.clock = clock_frame(direct.clock.period_ps(), 1);
    direct.source.clock = direct.clock;
    auto divided = direct;
    divided.clock = clock_frame(direct.clock.period_ps(), 64);
    divided.source.clock = divided.clock;
    auto const a = analyze_fidelity(direct, to_run_data(simulate(direct)));
    auto const b = analyze_fidelity(divided, to_run_data(simulate(divided)));
    std::uint64_t total = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (a.grids.co[k].counts() != b.grids.co[k].counts() ||
            a.grids.cross[k].counts() != b.grids.cross[k].counts())
            return {false, fmt("basis %zu grids differ", k)};
        total += a.grids.co[k].total() + a.grids.cross[k].total();
    }
    auto const &ma = a.map_ungated.bins;
    auto const &mb = b.map_ungated.bins;
    bool same = ma.size() == mb.size();
    for (std::size_t i = 0; same && i < ma.size(); ++i)
        same = ma[i].weight == mb[i].weight && ma[i].value == mb[i].value;
    return {same, fmt("divisor 64 and 1 give identical maps over %llu coincidences",
                      static_cast<unsigned long long>(total))};
}

auto polarization_compensation() -> verdict {
    calibration_options const opt;
    int converged = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        auto g = rng_for(1007, i);
        auto const u = polarization_transform::haar_random(g);
        auto o = opt;
        o.seed = i;
        auto const r = calibrate(eigenbasis_references(u), retarder_stack{}, o);
        converged += r.converged && r.leakage <= 1e-2 && r.iterations <= 200;
    }

    auto on = config_from_json(json::parse(R"({
      "seed": 17,
      "n_cycles": 600000,
      "source": {"pair_probability": 0.5, "fss_ueV": 0, "multi_photon_probability": 0},
      "fiber": {"x": {"drift": {"step_interval_ps": 1.0e8, "angular_step_std_rad": 0.8}}},
      "detectors": {"default": {"efficiency": 1, "jitter_fwhm_ps": 0, "dark_rate_cps": 0}},
      "schedule": {"set_duration_ps": 1.0e8},
      "polcontrol": {"enabled": true}
    })"));
    auto off = on;
    off.polcontrol.enabled = false;
    auto const fa = analyze_fidelity(on, to_run_data(simulate(on))).curve_ungated.peak;
    auto const fb = analyze_fidelity(off, to_run_data(simulate(off))).curve_ungated.peak;
    double const z = (fa.value - fb.value) / std::hypot(fa.sigma, fb.sigma);
    return {converged >= 99 && z >= 3.0,
            fmt("%d of 100 random channels converged; compensated %.4f vs "
                "uncompensated %.4f (%.1f sigma)",
                converged, fa.value, fb.value, z)};
}

auto determinism_and_format() -> verdict {
    auto const cfg = config_file("lab.json");
    auto const dir = fs::temp_directory_path() /
                     ("ghzlink_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    std::string report[2];
    for (int k = 0; k < 2; ++k) {
        auto const res = simulate(cfg, {k == 0});
        write_run(dir / std::to_string(k), res);
        auto const run = read_run(dir / std::to_string(k), cfg, false);
        report[k] = fidelity_report_json(analyze_fidelity(cfg, run), cfg).dump() +
                    g2_report_json(analyze_g2(cfg, run), cfg).dump();
    }
    bool same = report[0] == report[1];
    same = same && slurp(dir / "0" / manifest_name) == slurp(dir / "1" / manifest_name);
    for (auto r : all_roles)
        same = same && slurp(dir / "0" / stream_file_name(r)) ==
                           slurp(dir / "1" / stream_file_name(r));
    fs::remove_all(dir);

    auto g = rng_for(1008);
    int round_trips = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        stream_header h;
        h.clock = clock_frame(static_cast<std::uint32_t>(uniform_int(g, 1, 1u << 31)),
                              static_cast<std::uint32_t>(uniform_int(g, 1, 1024)));
        h.acquisition_start_ns = static_cast<std::int64_t>(uniform_int(g, 0, ~0ull));
        auto const n_ch = uniform_int(g, 1, 8);
        for (std::uint64_t c = 0; c < n_ch; ++c)
            h.channel_roles[static_cast<std::uint8_t>(c)] =
                std::string(uniform_int(g, 0, 12), static_cast<char>('A' + c));
        auto const t = random_tags(g, uniform_int(g, 0, 2000), uniform_int(g, 1, ~0ull),
                                   static_cast<std::uint8_t>(n_ch));
        auto const bytes = encode_stream(h, t);
        auto const [h2, t2] = decode_stream(bytes);
        round_trips += h2 == h && t2 == t && encode_stream(h2, t2) == bytes;
    }
    return {same && round_trips == 1000,
            fmt("pipeline %s across runs; %d of 1000 stream round trips byte-identical",
                same ? "byte-identical" : "DIFFERS", round_trips)};
}

} // namespace

int main() {
    struct criterion {
        char const *name;
        std::function<verdict()> run;
    };
    criterion const all[] = {
        {"oracle equivalence", oracle_equivalence},
        {"g2 calibration chain", g2_chain},
        {"FSS oscillation", fss_oscillation},
        {"fidelity anchors", fidelity_anchors},
        {"deployed-link anchors", deployed_anchors},
        {"clock-division equivalence", clock_division},
        {"polarization compensation", polarization_compensation},
        {"determinism and format", determinism_and_format},
    };
    int failed = 0;
    int n = 0;
    for (auto const &c : all) {
        ++n;
        auto const t0 = std::chrono::steady_clock::now();
        verdict o;
        try {
            o = c.run();
        } catch (std::exception const &e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        double const secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, c.name,
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d of %d criteria passed\n", n - failed, n);
    return failed == 0 ? 0 : 1;
}
