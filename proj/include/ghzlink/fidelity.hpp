#pragma once

// Bell-state fidelity from co- and cross-polarized coincidence grids in the
// HV, DA and RL bases:
//
//   C_PQ = (c_PP - c_PQ) / (c_PP + c_PQ)
//   f    = (1 + C_HV + C_DA - C_RL) / 4

#include "cascade_source.hpp"
#include "correlator.hpp"
#include "errors.hpp"
#include "polarization.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace ghzlink {

/// Counting-statistics uncertainty of a correlation estimate.
struct correlation_uncertainty {
    double sigma = 0.0;         // first-order Poisson propagation
    double sigma_floored = 0.0; // max(sigma, 1/(N+2))
    bool degenerate = false;    // one category empty: first order gives 0
};

/// var(C) = 4 c_PP c_PQ / (c_PP + c_PQ)^3.
[[nodiscard]] inline auto propagate_uncertainty(double c_pp, double c_pq)
    -> correlation_uncertainty {
    if (c_pp < 0 || c_pq < 0)
        throw config_error("counts", "must be non-negative");
    double const n = c_pp + c_pq;
    if (n == 0)
        return {0.0, 1.0, true};
    double const s = std::sqrt(4.0 * c_pp * c_pq / (n * n * n));
    return {s, std::max(s, 1.0 / (n + 2.0)), c_pp == 0 || c_pq == 0};
}

/// sigma_f from the three per-basis sigma_C.
[[nodiscard]] inline auto fidelity_sigma(double s_hv, double s_da, double s_rl)
    -> double {
    return std::sqrt(s_hv * s_hv + s_da * s_da + s_rl * s_rl) / 4.0;
}

struct correlation_value {
    double value = 0.0;
    correlation_uncertainty error;
    bool defined = false;
};

[[nodiscard]] inline auto degree_of_correlation(std::uint64_t co,
                                                std::uint64_t cross)
    -> correlation_value {
    auto const n = co + cross;
    if (n == 0)
        return {};
    return {(double(co) - double(cross)) / double(n),
            propagate_uncertainty(double(co), double(cross)), true};
}

/// Per-bin C of two grids of identical geometry.
[[nodiscard]] inline auto degree_of_correlation(coincidence_grid const &co,
                                                coincidence_grid const &cross)
    -> std::vector<correlation_value> {
    if (!(co.geometry() == cross.geometry()))
        throw config_error("grid", "co and cross grids differ in geometry");
    std::vector<correlation_value> out(co.counts().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = degree_of_correlation(co.counts()[i], cross.counts()[i]);
    return out;
}

[[nodiscard]] constexpr auto fidelity_from_correlations(double c_hv,
                                                        double c_da,
                                                        double c_rl) noexcept
    -> double {
    return (1.0 + c_hv + c_da - c_rl) / 4.0;
}

/// Co- and cross-polarized grids for each detection basis.
struct basis_grids {
    std::array<coincidence_grid, 3> co;
    std::array<coincidence_grid, 3> cross;

    [[nodiscard]] auto geometry() const -> grid_geometry const & {
        return co[0].geometry();
    }

    void check_geometry() const {
        for (std::size_t b = 0; b < 3; ++b) {
            if (!(co[b].geometry() == geometry()) ||
                !(cross[b].geometry() == geometry()))
                throw config_error("basis_grids",
                                   "all six grids must share bin geometry");
        }
    }

    auto operator+=(basis_grids const &o) -> basis_grids & {
        for (std::size_t b = 0; b < 3; ++b) {
            co[b] += o.co[b];
            cross[b] += o.cross[b];
        }
        return *this;
    }
};

[[nodiscard]] inline auto empty_basis_grids(grid_geometry const &geo)
    -> basis_grids {
    basis_grids g;
    for (std::size_t b = 0; b < 3; ++b) {
        g.co[b] = coincidence_grid(geo);
        g.cross[b] = coincidence_grid(geo);
    }
    return g;
}

[[nodiscard]] inline auto apply_gate(basis_grids const &g, gate_spec const &gate)
    -> basis_grids {
    basis_grids out;
    for (std::size_t b = 0; b < 3; ++b) {
        out.co[b] = apply_gate(g.co[b], gate);
        out.cross[b] = apply_gate(g.cross[b], gate);
    }
    return out;
}

struct fidelity_bin {
    double value = 0.0;
    double sigma = 0.0;
    std::uint64_t weight = 0; // coincidences summed over all six grids
    bool defined = false;
};

/// Per-bin fidelity. A bin is undefined unless all three bases have counts.
struct fidelity_map {
    grid_geometry geometry;
    gate_spec gate;
    std::vector<fidelity_bin> bins; // row-major, XX rows

    [[nodiscard]] auto at(std::size_t row, std::size_t col) const
        -> fidelity_bin const & {
        return bins[row * geometry.axis_length() + col];
    }
};

[[nodiscard]] inline auto make_fidelity_map(basis_grids const &g,
                                            gate_spec const &gate = {})
    -> fidelity_map {
    g.check_geometry();
    auto const gated = apply_gate(g, gate);
    fidelity_map m{g.geometry(), gate, {}};
    std::array<std::vector<correlation_value>, 3> c;
    for (std::size_t b = 0; b < 3; ++b)
        c[b] = degree_of_correlation(gated.co[b], gated.cross[b]);
    m.bins.resize(c[0].size());
    for (std::size_t i = 0; i < m.bins.size(); ++i) {
        std::uint64_t w = 0;
        for (std::size_t b = 0; b < 3; ++b)
            w += gated.co[b].counts()[i] + gated.cross[b].counts()[i];
        auto &out = m.bins[i];
        out.weight = w;
        if (!(c[0][i].defined && c[1][i].defined && c[2][i].defined))
            continue;
        out.defined = true;
        out.value = fidelity_from_correlations(c[0][i].value, c[1][i].value,
                                               c[2][i].value);
        out.sigma = fidelity_sigma(c[0][i].error.sigma, c[1][i].error.sigma,
                                   c[2][i].error.sigma);
    }
    return m;
}

/**
 * \brief Grid cells re-indexed along anti-diagonals.
 *
 * Cell (i, j) (XX row i, X column j) goes to column tau = j - i (relative
 * delay in bins, X after XX positive) at position i + j. Every cell appears
 * exactly once.
 */
template <typename T> struct rotated_layout {
    struct cell {
        std::size_t position = 0;
        std::size_t row = 0;
        std::size_t col = 0;
        T value{};
    };
    std::int64_t min_tau = 0;
    std::vector<std::vector<cell>> columns; // columns[k] has tau = min_tau + k

    [[nodiscard]] auto tau_of(std::size_t k) const noexcept -> std::int64_t {
        return min_tau + static_cast<std::int64_t>(k);
    }
};

template <typename T, typename Get>
[[nodiscard]] auto rotate_square(std::size_t n, Get &&get) -> rotated_layout<T> {
    rotated_layout<T> r;
    if (n == 0)
        return r;
    r.min_tau = -static_cast<std::int64_t>(n - 1);
    r.columns.resize(2 * n - 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            r.columns[j + (n - 1) - i].push_back({i + j, i, j, get(i, j)});
    return r;
}

[[nodiscard]] inline auto rotate_to_delay(fidelity_map const &m)
    -> rotated_layout<fidelity_bin> {
    return rotate_square<fidelity_bin>(
        m.geometry.axis_length(),
        [&](std::size_t i, std::size_t j) { return m.at(i, j); });
}

[[nodiscard]] inline auto rotate_to_delay(coincidence_grid const &g)
    -> rotated_layout<std::uint64_t> {
    return rotate_square<std::uint64_t>(
        g.size(), [&](std::size_t i, std::size_t j) { return g.at(i, j); });
}

struct delay_point {
    std::int64_t tau_index = 0;
    double tau_ps = 0.0;
    double value = 0.0;
    double sigma = 0.0;
    std::uint64_t weight = 0;
    bool defined = false;
};

struct delay_curve_result {
    std::vector<delay_point> points;
    delay_point peak; // max over tau > 0
};

/**
 * \brief Count-weighted column averages of a rotated fidelity map.
 *
 * Undefined bins are left out. The peak is searched over tau > 0 only (X
 * after XX), ties going to the smaller delay.
 */
[[nodiscard]] inline auto delay_curve(rotated_layout<fidelity_bin> const &r,
                                      std::uint32_t bin_ps)
    -> delay_curve_result {
    delay_curve_result out;
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < r.columns.size(); ++k) {
        delay_point p;
        p.tau_index = r.tau_of(k);
        p.tau_ps = double(p.tau_index) * bin_ps;
        double sw = 0;
        double swf = 0;
        double sw2s2 = 0;
        for (auto const &c : r.columns[k]) {
            if (!c.value.defined || c.value.weight == 0)
                continue;
            double const w = double(c.value.weight);
            sw += w;
            swf += w * c.value.value;
            sw2s2 += w * w * c.value.sigma * c.value.sigma;
            p.weight += c.value.weight;
        }
        if (sw > 0) {
            p.defined = true;
            p.value = swf / sw;
            p.sigma = std::sqrt(sw2s2) / sw;
        }
        out.points.push_back(p);
        if (p.defined && p.tau_index > 0 &&
            (!best || p.value > out.points[*best].value))
            best = out.points.size() - 1;
    }
    if (!best)
        throw analysis_error("delay_curve: no defined column at positive delay");
    out.peak = out.points[*best];
    return out;
}

/// Rotate and average in one step.
[[nodiscard]] inline auto delay_curve(fidelity_map const &m)
    -> delay_curve_result {
    return delay_curve(rotate_to_delay(m), m.geometry.bin_ps());
}

struct pooled_fidelity {
    double value = 0.0;
    double sigma = 0.0;
    std::array<correlation_value, 3> correlations;
    std::uint64_t coincidences = 0;
};

/// Fidelity of all counts inside `gate`, pooled per basis before taking C.
[[nodiscard]] inline auto window_fidelity(basis_grids const &g,
                                          gate_spec const &gate)
    -> pooled_fidelity {
    g.check_geometry();
    auto const gated = apply_gate(g, gate);
    pooled_fidelity out;
    for (std::size_t b = 0; b < 3; ++b) {
        auto const co = gated.co[b].total();
        auto const cr = gated.cross[b].total();
        out.correlations[b] = degree_of_correlation(co, cr);
        out.coincidences += co + cr;
        if (!out.correlations[b].defined)
            throw analysis_error("window_fidelity: basis " +
                                 std::string(to_string(all_bases[b])) +
                                 " has no coincidences in the window");
    }
    auto const &c = out.correlations;
    out.value = fidelity_from_correlations(c[0].value, c[1].value, c[2].value);
    out.sigma = fidelity_sigma(c[0].error.sigma, c[1].error.sigma,
                               c[2].error.sigma);
    return out;
}

struct window_scan_result {
    std::uint32_t offset_ps = 0;
    std::uint32_t width_ps = 0;
    pooled_fidelity fidelity;
};

/**
 * \brief Place a single square window (same phase window on both axes) to
 * maximize pooled fidelity.
 *
 * Offsets are scanned in steps of the grid bin; build the grids with
 * bin_ps = 1 for 1 ps placement. Windows with a basis lacking counts, or
 * with fewer than `min_coincidences`, are skipped.
 */
[[nodiscard]] inline auto best_window(basis_grids const &g,
                                      std::uint32_t width_ps,
                                      std::uint64_t min_coincidences = 1)
    -> window_scan_result {
    g.check_geometry();
    auto const &geo = g.geometry();
    auto const period = geo.clock().period_ps();
    if (width_ps == 0 || width_ps > period)
        throw config_error("gate.width_ps", "must be in (0, clock period]");
    if (geo.n_cycles() != 1)
        throw config_error("n_cycles", "window scan needs a single-cycle grid");
    auto const n = g.co[0].size();

    // 2D prefix sums of the six grids, excluding truncated bins.
    auto prefix = [&](coincidence_grid const &gr) {
        std::vector<std::uint64_t> p((n + 1) * (n + 1), 0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                auto const v = geo.truncated(i) || geo.truncated(j) ? 0 : gr.at(i, j);
                p[(i + 1) * (n + 1) + j + 1] = v + p[i * (n + 1) + j + 1] +
                                               p[(i + 1) * (n + 1) + j] -
                                               p[i * (n + 1) + j];
            }
        return p;
    };
    std::array<std::vector<std::uint64_t>, 6> ps;
    for (std::size_t b = 0; b < 3; ++b) {
        ps[2 * b] = prefix(g.co[b]);
        ps[2 * b + 1] = prefix(g.cross[b]);
    }
    auto box = [&](std::vector<std::uint64_t> const &p, std::size_t lo,
                   std::size_t hi) {
        return p[hi * (n + 1) + hi] - p[lo * (n + 1) + hi] -
               p[hi * (n + 1) + lo] + p[lo * (n + 1) + lo];
    };

    auto const bin = geo.bin_ps();
    std::optional<window_scan_result> best;
    for (std::uint32_t o = 0; o + width_ps <= period; o += bin) {
        // Bins whose centers fall in [o, o + width).
        std::size_t lo = n;
        std::size_t hi = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double const c = geo.bin_start_phase(i) + geo.bin_width(i) / 2.0;
            if (c >= o && c < double(o) + width_ps) {
                lo = std::min(lo, i);
                hi = std::max(hi, i + 1);
            }
        }
        if (lo >= hi)
            continue;
        pooled_fidelity f;
        bool ok = true;
        for (std::size_t b = 0; b < 3 && ok; ++b) {
            auto const co = box(ps[2 * b], lo, hi);
            auto const cr = box(ps[2 * b + 1], lo, hi);
            f.correlations[b] = degree_of_correlation(co, cr);
            f.coincidences += co + cr;
            ok = f.correlations[b].defined;
        }
        if (!ok || f.coincidences < min_coincidences)
            continue;
        auto const &c = f.correlations;
        f.value = fidelity_from_correlations(c[0].value, c[1].value, c[2].value);
        f.sigma = fidelity_sigma(c[0].error.sigma, c[1].error.sigma,
                                 c[2].error.sigma);
        if (!best || f.value > best->fidelity.value)
            best = window_scan_result{o, width_ps, f};
    }
    if (!best)
        throw analysis_error("best_window: no window position has counts in "
                             "all three bases");
    return *best;
}

struct oscillation_fit {
    double period_ps = 0.0;
    double offset = 0.0;    // a in a + b cos(2 pi tau / T)
    double amplitude = 0.0; // b
    double chi2 = 0.0;
};

/**
 * \brief Fit a + b cos(2 pi tau / T) to the defined tau > 0 points.
 *
 * Weighted linear least squares for (a, b) at each trial period on a grid
 * over [min_period, max_period], then golden-section refinement around the
 * best grid point.
 */
[[nodiscard]] inline auto fit_oscillation(std::span<delay_point const> points,
                                          double min_period_ps,
                                          double max_period_ps,
                                          double grid_step_ps = 1.0)
    -> oscillation_fit {
    std::vector<delay_point> use;
    for (auto const &p : points)
        if (p.defined && p.tau_index > 0 && p.sigma > 0)
            use.push_back(p);
    if (use.size() < 3)
        throw analysis_error("fit_oscillation: fewer than 3 usable points");

    auto solve = [&](double period) {
        double s00 = 0, s01 = 0, s11 = 0, r0 = 0, r1 = 0;
        for (auto const &p : use) {
            double const w = 1.0 / (p.sigma * p.sigma);
            double const c = std::cos(2 * std::numbers::pi * p.tau_ps / period);
            s00 += w;
            s01 += w * c;
            s11 += w * c * c;
            r0 += w * p.value;
            r1 += w * c * p.value;
        }
        double const det = s00 * s11 - s01 * s01;
        oscillation_fit f{period, 0, 0, std::numeric_limits<double>::infinity()};
        if (std::abs(det) < 1e-300)
            return f;
        f.offset = (r0 * s11 - r1 * s01) / det;
        f.amplitude = (s00 * r1 - s01 * r0) / det;
        f.chi2 = 0;
        for (auto const &p : use) {
            double const c = std::cos(2 * std::numbers::pi * p.tau_ps / period);
            double const d = (p.value - f.offset - f.amplitude * c) / p.sigma;
            f.chi2 += d * d;
        }
        return f;
    };

    oscillation_fit best = solve(min_period_ps);
    for (double t = min_period_ps; t <= max_period_ps; t += grid_step_ps) {
        auto const f = solve(t);
        if (f.chi2 < best.chi2)
            best = f;
    }
    double lo = std::max(min_period_ps, best.period_ps - grid_step_ps);
    double hi = std::min(max_period_ps, best.period_ps + grid_step_ps);
    double const g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 60; ++it) {
        double const m1 = hi - g * (hi - lo);
        double const m2 = lo + g * (hi - lo);
        if (solve(m1).chi2 < solve(m2).chi2)
            hi = m2;
        else
            lo = m1;
    }
    auto const refined = solve((lo + hi) / 2.0);
    return refined.chi2 <= best.chi2 ? refined : best;
}

/// Peak fidelity of one time slice.
struct stability_point {
    std::size_t slice = 0;
    double value = 0.0;
    double sigma = 0.0;
    double tau_ps = 0.0;
    bool above_classical_limit = false;
};

inline constexpr double classical_fidelity_limit = 0.5;

/// Peak of the gated delay curve for each slice, in slice order.
[[nodiscard]] inline auto stability_series(std::span<basis_grids const> slices,
                                           gate_spec const &gate)
    -> std::vector<stability_point> {
    if (slices.empty())
        throw config_error("slices", "need at least one slice");
    std::vector<stability_point> out;
    for (std::size_t s = 0; s < slices.size(); ++s) {
        auto const curve = delay_curve(make_fidelity_map(slices[s], gate));
        out.push_back({s, curve.peak.value, curve.peak.sigma, curve.peak.tau_ps,
                       curve.peak.value > classical_fidelity_limit});
    }
    return out;
}

} // namespace ghzlink
