#pragma once

// Versioned JSON documents and CSV tables for grids, histograms, fidelity
// maps, delay curves, stability series and calibration traces.

#include "correlator.hpp"
#include "experiment.hpp"
#include "fidelity.hpp"
#include "polcontrol.hpp"

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace ghzlink {

namespace detail {

inline auto num(double v) -> std::string {
    if (!std::isfinite(v))
        return "";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline auto estimate_json(estimate const &e) -> json {
    return {{"value", e.value}, {"sigma", e.sigma}};
}

inline auto gate_json(gate_spec const &g, clock_frame const &c) -> json {
    switch (g.mode) {
    case gate_spec::kind::none:
        return {{"mode", "none"}};
    case gate_spec::kind::central:
        return {{"mode", "central"}, {"width_ps", g.width_ps},
                {"lo_ps", g.lo(c)}, {"hi_ps", g.hi(c)}};
    case gate_spec::kind::window:
        return {{"mode", "window"}, {"offset_ps", g.offset_ps},
                {"width_ps", g.width_ps}};
    }
    return {};
}

inline auto point_json(delay_point const &p) -> json {
    return {{"tau_ps", p.tau_ps}, {"fidelity", p.value}, {"sigma", p.sigma},
            {"coincidences", p.weight}};
}

} // namespace detail

[[nodiscard]] inline auto grid_csv(coincidence_grid const &g) -> std::string {
    std::ostringstream os;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < g.size(); ++j)
            os << (j ? "," : "") << g.at(i, j);
        os << '\n';
    }
    return os.str();
}

[[nodiscard]] inline auto grid_json(coincidence_grid const &g) -> json {
    auto const &geo = g.geometry();
    json truncated = json::array();
    for (std::size_t i = 0; i < geo.axis_length(); ++i)
        if (geo.truncated(i))
            truncated.push_back(i);
    return {{"format", "ghzlink-grid"},
            {"version", 1},
            {"bin_ps", geo.bin_ps()},
            {"n_cycles", geo.n_cycles()},
            {"period_ps", geo.clock().period_ps()},
            {"axis_length", geo.axis_length()},
            {"truncated_bins", truncated},
            {"singles_a", g.singles_a},
            {"singles_b", g.singles_b},
            {"acquisition_span_ps", g.acquisition_span_ps},
            {"total", g.total()},
            {"counts", g.counts()}};
}

/// Fidelity values row by row; undefined bins are empty cells.
[[nodiscard]] inline auto fidelity_map_csv(fidelity_map const &m) -> std::string {
    std::ostringstream os;
    auto const n = m.geometry.axis_length();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            auto const &b = m.at(i, j);
            os << (j ? "," : "") << (b.defined ? detail::num(b.value) : "");
        }
        os << '\n';
    }
    return os.str();
}

[[nodiscard]] inline auto delay_curve_csv(delay_curve_result const &c)
    -> std::string {
    std::ostringstream os;
    os << "tau_ps,fidelity,sigma,coincidences\n";
    for (auto const &p : c.points) {
        if (!p.defined)
            continue;
        os << detail::num(p.tau_ps) << ',' << detail::num(p.value) << ','
           << detail::num(p.sigma) << ',' << p.weight << '\n';
    }
    return os.str();
}

[[nodiscard]] inline auto g2_csv(g2_histogram const &h) -> std::string {
    std::ostringstream os;
    os << "delay_cycles,raw,normalized,sigma\n";
    for (std::size_t k = 0; k < h.delays.size(); ++k)
        os << h.delays[k] << ',' << h.raw[k] << ',' << detail::num(h.normalized[k])
           << ',' << detail::num(h.sigma[k]) << '\n';
    return os.str();
}

[[nodiscard]] inline auto g2_json(g2_histogram const &h) -> json {
    return {{"delays_cycles", h.delays},
            {"raw", h.raw},
            {"normalized", h.normalized},
            {"sigma", h.sigma},
            {"reference_mean", h.reference_mean},
            {"norm_min_cycles", h.norm_min_cycles},
            {"norm_max_cycles", h.norm_max_cycles}};
}

[[nodiscard]] inline auto g2_report_json(g2_report const &r,
                                         experiment_config const &cfg) -> json {
    return {{"format", "ghzlink-g2"},
            {"version", 1},
            {"ungated", {{"g2_zero", detail::estimate_json(r.zero_ungated)},
                         {"histogram", g2_json(r.ungated)}}},
            {"central", {{"gate", detail::gate_json(gate_spec::central(
                                                       cfg.analysis.central_gate_ps),
                                                   cfg.clock)},
                         {"g2_zero", detail::estimate_json(r.zero_central)},
                         {"histogram", g2_json(r.central)}}},
            {"window", {{"gate", detail::gate_json(
                                     gate_spec::window(r.window_offset_ps,
                                                       cfg.analysis.window_gate_ps),
                                     cfg.clock)},
                        {"g2_zero", detail::estimate_json(r.zero_window)},
                        {"histogram", g2_json(r.window)}}}};
}

[[nodiscard]] inline auto fidelity_report_json(fidelity_report const &r,
                                               experiment_config const &cfg)
    -> json {
    json corr = json::array();
    for (std::size_t b = 0; b < 3; ++b) {
        auto const &c = r.window.fidelity.correlations[b];
        corr.push_back({{"basis", std::string(to_string(all_bases[b]))},
                        {"C", c.value},
                        {"sigma", c.error.sigma},
                        {"sigma_floored", c.error.sigma_floored}});
    }
    json sets = json::object();
    for (std::size_t b = 0; b < 3; ++b)
        sets[std::string(to_string(all_bases[b]))] = r.sets_per_basis[b];
    return {{"format", "ghzlink-fidelity"},
            {"version", 1},
            {"bin_ps", cfg.analysis.bin_ps},
            {"sets_per_basis", sets},
            {"ungated", {{"peak", detail::point_json(r.curve_ungated.peak)}}},
            {"central",
             {{"gate", detail::gate_json(
                           gate_spec::central(cfg.analysis.central_gate_ps), cfg.clock)},
              {"peak", detail::point_json(r.curve_central.peak)}}},
            {"window",
             {{"gate", detail::gate_json(gate_spec::window(r.window.offset_ps,
                                                           r.window.width_ps),
                                         cfg.clock)},
              {"fidelity", r.window.fidelity.value},
              {"sigma", r.window.fidelity.sigma},
              {"coincidences", r.window.fidelity.coincidences},
              {"correlations", corr}}}};
}

[[nodiscard]] inline auto stability_csv(std::vector<stability_slice> const &s)
    -> std::string {
    std::ostringstream os;
    os << "slice,start_ps,end_ps,fidelity,sigma,tau_ps,above_classical_limit\n";
    for (auto const &x : s)
        os << x.point.slice << ',' << detail::num(x.start_ps) << ','
           << detail::num(x.end_ps) << ',' << detail::num(x.point.value) << ','
           << detail::num(x.point.sigma) << ',' << detail::num(x.point.tau_ps)
           << ',' << (x.point.above_classical_limit ? 1 : 0) << '\n';
    return os.str();
}

[[nodiscard]] inline auto calibration_trace_csv(calibration_result const &r)
    -> std::string {
    std::ostringstream os;
    os << "iteration,leakage\n";
    for (auto const &p : r.trace)
        os << p.iteration << ',' << detail::num(p.leakage) << '\n';
    return os.str();
}

} // namespace ghzlink
