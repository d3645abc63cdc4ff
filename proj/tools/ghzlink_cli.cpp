// ghzlink: simulate runs, then analyze them (g2, fidelity, stability) or
// exercise the polarization controller (calibrate).
//
// Exit codes: 0 success, 2 configuration error, 3 data-format error,
// 4 analysis degeneracy, 1 anything else.

#include "ghzlink/ghzlink.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace ghzlink;

namespace {

constexpr int exit_config = 2;
constexpr int exit_format = 3;
constexpr int exit_analysis = 4;

struct options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    std::string gate = "central";
    std::optional<std::uint32_t> bin_ps;
    bool deterministic = false;
    bool force = false;
    std::string arm = "xx";
    std::optional<double> time_ps;
    bool random_drift = false;
};

auto default_out() -> std::string {
    if (char const *e = std::getenv("GHZLINK_OUT"); e && *e)
        return e;
    return ".";
}

auto load(options const &o) -> experiment_config {
    auto cfg = load_config(o.config);
    if (o.seed)
        cfg.seed = *o.seed;
    if (o.bin_ps)
        cfg.analysis.bin_ps = *o.bin_ps;
    cfg.validate();
    return cfg;
}

auto out_dir(options const &o) -> fs::path {
    fs::path p = o.out.empty() ? default_out() : o.out;
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec)
        throw config_error("out", "cannot create '" + p.string() + "': " + ec.message());
    return p;
}

auto data_dir(options const &o) -> fs::path {
    if (!o.data.empty())
        return o.data;
    return o.out.empty() ? default_out() : o.out;
}

auto print_estimate(std::string const &label, double v, double s) {
    std::cout << std::left << std::setw(28) << label << std::fixed
              << std::setprecision(4) << v << " +- " << s << '\n';
}

void cmd_simulate(options const &o) {
    auto const cfg = load(o);
    auto const dir = out_dir(o);
    auto const res = simulate(cfg, {o.deterministic});
    write_run(dir, res);
    std::cout << "run written to " << dir.string() << " (config " << config_hash(cfg)
              << ", seed " << cfg.seed << ")\n";
    auto const secs = cfg.span_ps() * 1e-12;
    for (auto r : all_roles) {
        auto const i = role_index(r);
        std::cout << "  " << std::left << std::setw(5) << role_label(r)
                  << std::right << std::setw(10) << res.stats.tags[i] << " tags ("
                  << res.stats.dark_tags[i] << " dark), "
                  << std::setprecision(0) << std::fixed
                  << double(res.stats.tags[i]) / secs << " cps\n";
    }
}

void cmd_g2(options const &o) {
    auto const cfg = load(o);
    auto const run = read_run(data_dir(o), cfg, o.force,
                              {detector_role::x_p, detector_role::x_q});
    auto const rep = analyze_g2(cfg, run);
    auto const dir = out_dir(o);
    write_text(dir / "g2.json", g2_report_json(rep, cfg).dump(2) + "\n");
    write_text(dir / "g2_ungated.csv", g2_csv(rep.ungated));
    write_text(dir / "g2_central.csv", g2_csv(rep.central));
    write_text(dir / "g2_window.csv", g2_csv(rep.window));
    print_estimate("g2(0) ungated", rep.zero_ungated.value, rep.zero_ungated.sigma);
    print_estimate("g2(0) central gate", rep.zero_central.value, rep.zero_central.sigma);
    print_estimate("g2(0) window @" + std::to_string(rep.window_offset_ps) + " ps",
                   rep.zero_window.value, rep.zero_window.sigma);
}

void cmd_fidelity(options const &o) {
    auto const cfg = load(o);
    auto const run = read_run(data_dir(o), cfg, o.force);
    auto const rep = analyze_fidelity(cfg, run);
    auto const dir = out_dir(o);
    write_text(dir / "fidelity.json", fidelity_report_json(rep, cfg).dump(2) + "\n");
    write_text(dir / "fidelity_map_ungated.csv", fidelity_map_csv(rep.map_ungated));
    write_text(dir / "fidelity_map_central.csv", fidelity_map_csv(rep.map_central));
    write_text(dir / "delay_curve_ungated.csv", delay_curve_csv(rep.curve_ungated));
    write_text(dir / "delay_curve_central.csv", delay_curve_csv(rep.curve_central));
    if (o.gate == "window") {
        auto const g = gate_spec::window(rep.window.offset_ps, rep.window.width_ps);
        auto const map = make_fidelity_map(rep.grids, g);
        write_text(dir / "fidelity_map_window.csv", fidelity_map_csv(map));
        write_text(dir / "delay_curve_window.csv", delay_curve_csv(delay_curve(map)));
    }
    auto const &u = rep.curve_ungated.peak;
    auto const &c = rep.curve_central.peak;
    auto const &w = rep.window;
    print_estimate("peak ungated", u.value, u.sigma);
    print_estimate("peak central gate", c.value, c.sigma);
    std::cout << "  at tau = " << std::setprecision(0) << c.tau_ps << " ps\n";
    print_estimate("best " + std::to_string(w.width_ps) + " ps window",
                   w.fidelity.value, w.fidelity.sigma);
    std::cout << "  at offset " << w.offset_ps << " ps\n";
}

void cmd_stability(options const &o) {
    auto const cfg = load(o);
    auto const run = read_run(data_dir(o), cfg, o.force);
    auto const s = analyze_stability(cfg, run);
    auto const dir = out_dir(o);
    write_text(dir / "stability.csv", stability_csv(s));
    std::size_t below = 0;
    for (auto const &x : s) {
        print_estimate("slice " + std::to_string(x.point.slice), x.point.value,
                       x.point.sigma);
        below += x.point.above_classical_limit ? 0 : 1;
    }
    std::cout << below << " of " << s.size() << " slices at or below "
              << std::setprecision(1) << classical_fidelity_limit << '\n';
}

void cmd_calibrate(options const &o) {
    auto const cfg = load(o);
    arm which{};
    if (o.arm == "xx")
        which = arm::xx;
    else if (o.arm == "x")
        which = arm::x;
    else
        throw config_error("arm", "must be xx or x");
    polarization_transform channel;
    if (o.random_drift) {
        auto rng = substream(cfg.seed, stream_purpose::calibration,
                             static_cast<std::uint64_t>(which) + 16);
        channel = polarization_transform::haar_random(rng);
    } else {
        auto const t = o.time_ps.value_or(cfg.span_ps());
        channel = drift_at(t, cfg.fiber(which).drift, arm_drift_seed(cfg.seed, which));
    }
    auto opt = cfg.polcontrol.calibration;
    opt.seed = cfg.seed;
    auto const refs = eigenbasis_references(channel);
    auto const res = calibrate(refs, cfg.polcontrol.stack, opt);
    auto const dir = out_dir(o);
    json j{{"format", "ghzlink-calibration"},
           {"version", 1},
           {"arm", o.arm},
           {"voltages", res.voltages},
           {"leakage", res.leakage},
           {"reference_leakage", res.reference_leakage},
           {"iterations", res.iterations},
           {"restarts", res.restarts},
           {"converged", res.converged}};
    write_text(dir / "calibration.json", j.dump(2) + "\n");
    write_text(dir / "calibration_trace.csv", calibration_trace_csv(res));
    std::cout << (res.converged ? "converged" : "not converged") << " after "
              << res.iterations << " iterations, leakage " << std::scientific
              << std::setprecision(3) << res.leakage << '\n';
    if (!res.converged)
        throw analysis_error("calibration did not reach the leakage threshold");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Entangled-photon link simulator and analysis toolkit", "ghzlink"};
    app.require_subcommand(1);
    options o;

    auto common = [&](CLI::App *c, bool analysis) {
        c->add_option("-c,--config", o.config, "Experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        c->add_option("--seed", o.seed, "Override the config seed");
        c->add_option("-o,--out", o.out,
                      "Output directory (default: $GHZLINK_OUT or .)");
        if (analysis) {
            c->add_option("-d,--data", o.data,
                          "Run directory to analyze (default: the output directory)");
            c->add_option("--bin-ps", o.bin_ps, "Override analysis.bin_ps");
            c->add_option("--gate", o.gate, "Extra outputs for this gate")
                ->check(CLI::IsMember({"none", "central", "window"}));
            c->add_flag("--force", o.force, "Analyze despite a config hash mismatch");
        }
    };

    auto *sim = app.add_subcommand("simulate", "Simulate a run into stream files");
    common(sim, false);
    sim->add_flag("--deterministic", o.deterministic, "Single-threaded simulation");
    auto *g2 = app.add_subcommand("g2", "HBT autocorrelation of the X arm");
    common(g2, true);
    auto *fid = app.add_subcommand("fidelity", "Bell-state fidelity map and delay curve");
    common(fid, true);
    auto *stab = app.add_subcommand("stability", "Peak fidelity per time slice");
    common(stab, true);
    auto *cal = app.add_subcommand("calibrate", "Align the retarder stack to a drifted fiber");
    common(cal, false);
    cal->add_option("--arm", o.arm, "Fiber arm: xx or x")
        ->check(CLI::IsMember({"xx", "x"}));
    cal->add_option("--time-ps", o.time_ps, "Drift time (default: end of the run)");
    cal->add_flag("--random", o.random_drift, "Use a uniformly random fiber transform");

    try {
        app.parse(argc, argv);
    } catch (CLI::CallForHelp const &e) {
        return app.exit(e);
    } catch (CLI::CallForAllHelp const &e) {
        return app.exit(e);
    } catch (CLI::ParseError const &e) {
        app.exit(e);
        return exit_config;
    }

    try {
        if (*sim)
            cmd_simulate(o);
        else if (*g2)
            cmd_g2(o);
        else if (*fid)
            cmd_fidelity(o);
        else if (*stab)
            cmd_stability(o);
        else if (*cal)
            cmd_calibrate(o);
    } catch (config_error const &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (format_error const &e) {
        std::cerr << "format error: " << e.what() << '\n';
        return exit_format;
    } catch (order_error const &e) {
        std::cerr << "format error: " << e.what() << '\n';
        return exit_format;
    } catch (analysis_error const &e) {
        std::cerr << "analysis error: " << e.what() << '\n';
        return exit_analysis;
    } catch (std::exception const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
