#pragma once

// Coincidence engine: clock-phase grids, cycle-offset (g2) histograms, and an
// all-pairs reference implementation used to check the streaming one.

#include "errors.hpp"
#include "timetag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ghzlink {

/// Restriction of detection phases within each clock cycle.
struct gate_spec {
    enum class kind { none, central, window };

    kind mode = kind::none;
    std::uint32_t offset_ps = 0;
    std::uint32_t width_ps = 0;

    [[nodiscard]] static auto none() -> gate_spec { return {}; }
    [[nodiscard]] static auto central(std::uint32_t width) -> gate_spec {
        return {kind::central, 0, width};
    }
    [[nodiscard]] static auto window(std::uint32_t offset, std::uint32_t width)
        -> gate_spec {
        return {kind::window, offset, width};
    }

    void validate(clock_frame const &clock) const {
        if (mode == kind::none)
            return;
        if (width_ps == 0 || width_ps > clock.period_ps())
            throw config_error("gate.width_ps",
                               "must be in (0, clock period]");
        if (mode == kind::window &&
            std::uint64_t{offset_ps} + width_ps > clock.period_ps())
            throw config_error("gate.offset_ps",
                               "window must lie within one clock cycle");
    }

    /// Phase interval [lo, hi) kept by the gate.
    [[nodiscard]] auto lo(clock_frame const &clock) const -> double {
        switch (mode) {
        case kind::none:
            return 0.0;
        case kind::central:
            return (clock.period_ps() - double(width_ps)) / 2.0;
        case kind::window:
            return offset_ps;
        }
        return 0.0;
    }
    [[nodiscard]] auto hi(clock_frame const &clock) const -> double {
        return mode == kind::none ? double(clock.period_ps())
                                  : lo(clock) + width_ps;
    }

    [[nodiscard]] auto contains(double phase_ps, clock_frame const &clock) const
        -> bool {
        return phase_ps >= lo(clock) && phase_ps < hi(clock);
    }
};

/// Bin layout shared by every grid built with the same parameters.
class grid_geometry {
  public:
    grid_geometry() = default;

    grid_geometry(clock_frame clock, std::uint32_t bin_ps,
                  std::uint32_t n_cycles)
        : clk(clock), bin(bin_ps), cycles(n_cycles) {
        if (bin_ps == 0 || bin_ps > clock.period_ps())
            throw config_error("bin_ps", "must be in (0, clock period]");
        if (n_cycles == 0)
            throw config_error("n_cycles", "must be at least 1");
        per_cycle = (clock.period_ps() + bin_ps - 1) / bin_ps;
    }

    [[nodiscard]] auto clock() const noexcept -> clock_frame const & {
        return clk;
    }
    [[nodiscard]] auto bin_ps() const noexcept -> std::uint32_t { return bin; }
    [[nodiscard]] auto n_cycles() const noexcept -> std::uint32_t {
        return cycles;
    }
    /// ceil(period / bin): the last bin of each cycle may be truncated.
    [[nodiscard]] auto bins_per_cycle() const noexcept -> std::size_t {
        return per_cycle;
    }
    [[nodiscard]] auto axis_length() const noexcept -> std::size_t {
        return per_cycle * cycles;
    }

    [[nodiscard]] auto phase_bin(std::uint32_t phase_ps) const noexcept
        -> std::size_t {
        return phase_ps / bin;
    }
    [[nodiscard]] auto bin_start_phase(std::size_t index) const noexcept
        -> std::uint32_t {
        return static_cast<std::uint32_t>((index % per_cycle) * bin);
    }
    [[nodiscard]] auto bin_width(std::size_t index) const noexcept
        -> std::uint32_t {
        auto const s = bin_start_phase(index);
        return std::min(bin, clk.period_ps() - s);
    }
    [[nodiscard]] auto truncated(std::size_t index) const noexcept -> bool {
        return bin_width(index) < bin;
    }
    [[nodiscard]] auto cycle_of(std::size_t index) const noexcept
        -> std::size_t {
        return index / per_cycle;
    }
    /// Whether an axis bin survives `gate`. Truncated bins only survive the
    /// empty gate.
    [[nodiscard]] auto bin_in_gate(std::size_t index, gate_spec const &g) const
        -> bool {
        if (g.mode == gate_spec::kind::none)
            return true;
        if (truncated(index))
            return false;
        double const center =
            bin_start_phase(index) + bin_width(index) / 2.0;
        return g.contains(center, clk);
    }

    friend auto operator==(grid_geometry const &,
                           grid_geometry const &) -> bool = default;

  private:
    clock_frame clk;
    std::uint32_t bin = 1000;
    std::uint32_t cycles = 1;
    std::size_t per_cycle = 1;
};

/**
 * \brief 2D coincidence histogram over clock phase.
 *
 * Row index: first stream ("a", XX by convention); column index: second
 * stream. Both axes cover n_cycles consecutive cycles; a pair is placed in
 * the block of n_cycles absolute cycles that holds both tags and dropped if
 * the tags fall in different blocks.
 */
class coincidence_grid {
  public:
    coincidence_grid() = default;
    explicit coincidence_grid(grid_geometry geometry)
        : geo(geometry), cells(geometry.axis_length() * geometry.axis_length()) {}

    [[nodiscard]] auto geometry() const noexcept -> grid_geometry const & {
        return geo;
    }
    [[nodiscard]] auto size() const noexcept -> std::size_t {
        return geo.axis_length();
    }
    [[nodiscard]] auto at(std::size_t row, std::size_t col) const
        -> std::uint64_t {
        return cells[row * geo.axis_length() + col];
    }
    auto at(std::size_t row, std::size_t col) -> std::uint64_t & {
        return cells[row * geo.axis_length() + col];
    }
    [[nodiscard]] auto counts() const noexcept
        -> std::vector<std::uint64_t> const & {
        return cells;
    }
    [[nodiscard]] auto total() const -> std::uint64_t {
        std::uint64_t s = 0;
        for (auto c : cells)
            s += c;
        return s;
    }

    std::uint64_t singles_a = 0;
    std::uint64_t singles_b = 0;
    std::uint64_t acquisition_span_ps = 0;

    auto operator+=(coincidence_grid const &o) -> coincidence_grid & {
        if (!(geo == o.geo))
            throw config_error("grid", "cannot merge grids of different geometry");
        for (std::size_t i = 0; i < cells.size(); ++i)
            cells[i] += o.cells[i];
        singles_a += o.singles_a;
        singles_b += o.singles_b;
        acquisition_span_ps += o.acquisition_span_ps;
        return *this;
    }

    [[nodiscard]] auto transposed() const -> coincidence_grid {
        coincidence_grid t(geo);
        auto const n = size();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                t.at(j, i) = at(i, j);
        t.singles_a = singles_b;
        t.singles_b = singles_a;
        t.acquisition_span_ps = acquisition_span_ps;
        return t;
    }

    friend auto operator==(coincidence_grid const &,
                           coincidence_grid const &) -> bool = default;

  private:
    grid_geometry geo;
    std::vector<std::uint64_t> cells;
};

namespace detail {

struct folded {
    std::uint64_t time;
    std::uint64_t cycle;
    std::uint32_t phase;
};

[[nodiscard]] inline auto fold(time_tag const &t, clock_frame const &c)
    -> folded {
    auto const p = fold_to_clock(t, c);
    return {t.timestamp_ps, p.absolute_cycle(c), p.phase_ps};
}

[[nodiscard]] inline auto fold(frame_tag const &t, clock_frame const &c)
    -> folded {
    return {t.frame_index * c.frame_period_ps() + t.offset_ps,
            t.frame_index * c.divisor() + t.offset_ps / c.period_ps(),
            static_cast<std::uint32_t>(t.offset_ps % c.period_ps())};
}

template <typename Tag>
[[nodiscard]] auto fold_all(std::span<Tag const> tags, clock_frame const &c)
    -> std::vector<folded> {
    std::vector<folded> out;
    out.reserve(tags.size());
    for (auto const &t : tags) {
        out.push_back(fold(t, c));
        if (out.size() > 1 && out.back().time < out[out.size() - 2].time)
            throw order_error("stream not sorted by time", out.size() - 1);
    }
    return out;
}

inline void place(coincidence_grid &g, folded const &a, folded const &b) {
    auto const &geo = g.geometry();
    auto const n = geo.n_cycles();
    if (a.cycle / n != b.cycle / n)
        return;
    auto const bpc = geo.bins_per_cycle();
    auto const row = (a.cycle % n) * bpc + geo.phase_bin(a.phase);
    auto const col = (b.cycle % n) * bpc + geo.phase_bin(b.phase);
    ++g.at(row, col);
}

inline auto span_of(std::vector<folded> const &a, std::vector<folded> const &b)
    -> std::uint64_t {
    std::uint64_t lo = UINT64_MAX;
    std::uint64_t hi = 0;
    for (auto const *v : {&a, &b}) {
        if (!v->empty()) {
            lo = std::min(lo, v->front().time);
            hi = std::max(hi, v->back().time);
        }
    }
    return lo == UINT64_MAX ? 0 : hi - lo;
}

} // namespace detail

/**
 * \brief Streaming coincidence grid.
 *
 * Every pair (a, b) with |t_b - t_a| < window_ps whose tags fall in the same
 * block of n_cycles clock cycles adds one count at (fold(a), fold(b)). Single
 * pass with a trailing pointer into b: linear in tags plus pairs.
 *
 * Accepts time_tag streams or frame_tag streams recorded against a divided
 * clock; both fold to the same (cycle, phase). accumulate_grid adds into an
 * existing grid, e.g. one measurement set at a time.
 */
template <typename Tag>
void accumulate_grid(coincidence_grid &g, std::span<Tag const> stream_a,
                     std::span<Tag const> stream_b, std::uint64_t window_ps) {
    auto const &clock = g.geometry().clock();
    auto const a = detail::fold_all(stream_a, clock);
    auto const b = detail::fold_all(stream_b, clock);
    g.singles_a += a.size();
    g.singles_b += b.size();
    g.acquisition_span_ps += detail::span_of(a, b);
    if (window_ps == 0)
        return;
    std::size_t lo = 0;
    for (auto const &ta : a) {
        while (lo < b.size() && b[lo].time + window_ps <= ta.time)
            ++lo;
        for (auto j = lo; j < b.size() && b[j].time < ta.time + window_ps; ++j)
            detail::place(g, ta, b[j]);
    }
}

template <typename Tag>
[[nodiscard]] auto build_grid(std::span<Tag const> stream_a,
                              std::span<Tag const> stream_b,
                              clock_frame const &clock, std::uint32_t bin_ps,
                              std::uint32_t n_cycles, std::uint64_t window_ps)
    -> coincidence_grid {
    coincidence_grid g(grid_geometry(clock, bin_ps, n_cycles));
    accumulate_grid(g, stream_a, stream_b, window_ps);
    return g;
}

template <typename Tag>
[[nodiscard]] auto build_grid(std::vector<Tag> const &a,
                              std::vector<Tag> const &b,
                              clock_frame const &clock, std::uint32_t bin_ps,
                              std::uint32_t n_cycles, std::uint64_t window_ps)
    -> coincidence_grid {
    return build_grid(std::span<Tag const>(a), std::span<Tag const>(b), clock,
                      bin_ps, n_cycles, window_ps);
}

inline constexpr std::size_t brute_force_tag_limit = 100'000;

/// All-pairs O(n*m) reference semantics for build_grid.
template <typename Tag>
[[nodiscard]] auto brute_force_coincidences(std::span<Tag const> stream_a,
                                            std::span<Tag const> stream_b,
                                            clock_frame const &clock,
                                            std::uint32_t bin_ps,
                                            std::uint32_t n_cycles,
                                            std::uint64_t window_ps)
    -> coincidence_grid {
    if (stream_a.size() + stream_b.size() > brute_force_tag_limit)
        throw config_error("brute_force_coincidences",
                           "combined input exceeds " +
                               std::to_string(brute_force_tag_limit) + " tags");
    coincidence_grid g(grid_geometry(clock, bin_ps, n_cycles));
    auto const a = detail::fold_all(stream_a, clock);
    auto const b = detail::fold_all(stream_b, clock);
    g.singles_a = a.size();
    g.singles_b = b.size();
    g.acquisition_span_ps = detail::span_of(a, b);
    for (auto const &ta : a) {
        for (auto const &tb : b) {
            auto const d = ta.time > tb.time ? ta.time - tb.time : tb.time - ta.time;
            if (d < window_ps)
                detail::place(g, ta, tb);
        }
    }
    return g;
}

template <typename Tag>
[[nodiscard]] auto brute_force_coincidences(std::vector<Tag> const &a,
                                            std::vector<Tag> const &b,
                                            clock_frame const &clock,
                                            std::uint32_t bin_ps,
                                            std::uint32_t n_cycles,
                                            std::uint64_t window_ps)
    -> coincidence_grid {
    return brute_force_coincidences(std::span<Tag const>(a),
                                    std::span<Tag const>(b), clock, bin_ps,
                                    n_cycles, window_ps);
}

/// Keep the grid counts whose row and column bins are both inside `gate`.
[[nodiscard]] inline auto apply_gate(coincidence_grid const &g,
                                     gate_spec const &gate) -> coincidence_grid {
    auto const &geo = g.geometry();
    gate.validate(geo.clock());
    if (gate.mode == gate_spec::kind::none)
        return g;
    coincidence_grid out = g;
    std::vector<bool> keep(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        keep[i] = geo.bin_in_gate(i, gate);
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j)
            if (!keep[i] || !keep[j])
                out.at(i, j) = 0;
    return out;
}

/// Drop tags whose clock phase lies outside `gate`.
[[nodiscard]] inline auto gate_tags(std::span<time_tag const> tags,
                                    gate_spec const &gate,
                                    clock_frame const &clock) -> tag_stream {
    gate.validate(clock);
    tag_stream out;
    out.reserve(tags.size());
    for (auto const &t : tags) {
        if (gate.contains(fold_to_clock(t, clock).phase_ps, clock))
            out.push_back(t);
    }
    return out;
}

/// Offset of the `width_ps` window (within one cycle) holding the most tags.
/// Ties go to the earliest offset.
[[nodiscard]] inline auto densest_window(std::span<tag_stream const> streams,
                                         std::uint32_t width_ps,
                                         clock_frame const &clock)
    -> std::uint32_t {
    auto const period = clock.period_ps();
    if (width_ps == 0 || width_ps > period)
        throw config_error("gate.width_ps", "must be in (0, clock period]");
    std::vector<std::uint64_t> prefix(period + 1, 0);
    for (auto const &s : streams)
        for (auto const &t : s)
            ++prefix[fold_to_clock(t, clock).phase_ps + 1];
    for (std::size_t i = 1; i <= period; ++i)
        prefix[i] += prefix[i - 1];
    std::uint32_t best = 0;
    std::uint64_t best_n = 0;
    for (std::uint32_t o = 0; o + width_ps <= period; ++o) {
        auto const n = prefix[o + width_ps] - prefix[o];
        if (n > best_n) {
            best_n = n;
            best = o;
        }
    }
    return best;
}

/// Mean and standard error.
struct estimate {
    double value = 0.0;
    double sigma = 0.0;
};

/**
 * \brief Coincidences binned by whole-cycle offset.
 *
 * delays[k] = cycle(b) - cycle(a), from -(n-1)/2 to +(n-1)/2. Normalization
 * divides by the mean raw count over delays with min <= |delay| <= max,
 * cycles far enough apart to be uncorrelated.
 */
struct g2_histogram {
    std::vector<int> delays;
    std::vector<std::uint64_t> raw;
    std::vector<double> normalized;
    std::vector<double> sigma;
    double reference_mean = 0.0;
    std::uint64_t reference_total = 0;
    std::uint32_t norm_min_cycles = 5;
    std::uint32_t norm_max_cycles = 10;

    [[nodiscard]] auto center_index() const noexcept -> std::size_t {
        return delays.size() / 2;
    }
};

struct g2_options {
    std::uint32_t n_delays = 21;
    std::uint32_t norm_min_cycles = 5;
    std::uint32_t norm_max_cycles = 10;
};

[[nodiscard]] inline auto build_g2_histogram(std::span<time_tag const> stream_1,
                                             std::span<time_tag const> stream_2,
                                             clock_frame const &clock,
                                             g2_options const &opt = {})
    -> g2_histogram {
    if (opt.n_delays % 2 == 0)
        throw config_error("n_delays", "must be odd so that 0 is centered");
    auto const half = static_cast<std::int64_t>(opt.n_delays / 2);
    g2_histogram h;
    h.norm_min_cycles = opt.norm_min_cycles;
    h.norm_max_cycles = opt.norm_max_cycles;
    h.raw.assign(opt.n_delays, 0);
    for (std::int64_t d = -half; d <= half; ++d)
        h.delays.push_back(static_cast<int>(d));

    auto const a = detail::fold_all(stream_1, clock);
    auto const b = detail::fold_all(stream_2, clock);
    std::size_t lo = 0;
    for (auto const &ta : a) {
        auto const c = static_cast<std::int64_t>(ta.cycle);
        while (lo < b.size() && static_cast<std::int64_t>(b[lo].cycle) < c - half)
            ++lo;
        for (auto j = lo; j < b.size(); ++j) {
            auto const d = static_cast<std::int64_t>(b[j].cycle) - c;
            if (d > half)
                break;
            ++h.raw[static_cast<std::size_t>(d + half)];
        }
    }

    std::size_t n_ref = 0;
    for (std::size_t k = 0; k < h.delays.size(); ++k) {
        auto const ad = static_cast<std::uint32_t>(std::abs(h.delays[k]));
        if (ad >= opt.norm_min_cycles && ad <= opt.norm_max_cycles) {
            h.reference_total += h.raw[k];
            ++n_ref;
        }
    }
    if (n_ref == 0 || h.reference_total == 0)
        throw analysis_error("g2: no coincidences in the uncorrelated "
                             "reference delays");
    h.reference_mean = double(h.reference_total) / double(n_ref);
    for (auto r : h.raw) {
        double const v = double(r) / h.reference_mean;
        h.normalized.push_back(v);
        // Poisson on the bin (at least one count) and on the reference sum.
        double const rel2 = 1.0 / std::max<double>(double(r), 1.0) +
                            1.0 / double(h.reference_total);
        h.sigma.push_back(std::max(v, 1.0 / h.reference_mean) * std::sqrt(rel2));
    }
    return h;
}

/// Normalized zero-delay value of a histogram.
[[nodiscard]] inline auto g2_zero(g2_histogram const &h) -> estimate {
    if (h.raw.empty() || h.reference_mean <= 0.0)
        throw analysis_error("g2_zero: histogram is not normalized");
    auto const k = h.center_index();
    return {h.normalized[k], h.sigma[k]};
}

/**
 * \brief g2(0) from a multi-cycle grid restricted to `gate`.
 *
 * Same-cycle squares are compared with squares min..max cycles apart; each
 * square's gated counts are averaged over all squares with that offset.
 */
[[nodiscard]] inline auto g2_zero(coincidence_grid const &g,
                                  gate_spec const &gate,
                                  std::uint32_t norm_min_cycles = 5,
                                  std::uint32_t norm_max_cycles = 10)
    -> estimate {
    auto const &geo = g.geometry();
    gate.validate(geo.clock());
    if (norm_max_cycles >= geo.n_cycles())
        throw analysis_error("g2_zero: grid spans too few cycles for the "
                             "normalization range");
    auto const gated = apply_gate(g, gate);
    auto const n = geo.n_cycles();
    auto const bpc = geo.bins_per_cycle();
    auto square_sum = [&](std::size_t ci, std::size_t cj) {
        std::uint64_t s = 0;
        for (std::size_t i = ci * bpc; i < (ci + 1) * bpc; ++i)
            for (std::size_t j = cj * bpc; j < (cj + 1) * bpc; ++j)
                s += gated.at(i, j);
        return s;
    };
    std::uint64_t center = 0;
    std::uint64_t ref = 0;
    std::size_t n_center = 0;
    std::size_t n_ref = 0;
    for (std::size_t ci = 0; ci < n; ++ci) {
        for (std::size_t cj = 0; cj < n; ++cj) {
            auto const d = ci > cj ? ci - cj : cj - ci;
            if (d == 0) {
                center += square_sum(ci, cj);
                ++n_center;
            } else if (d >= norm_min_cycles && d <= norm_max_cycles) {
                ref += square_sum(ci, cj);
                ++n_ref;
            }
        }
    }
    if (ref == 0)
        throw analysis_error("g2_zero: empty normalization set");
    double const ref_mean = double(ref) / double(n_ref);
    double const v = double(center) / double(n_center) / ref_mean;
    double const rel2 =
        1.0 / std::max<double>(double(center), 1.0) + 1.0 / double(ref);
    double const floor = 1.0 / double(n_center) / ref_mean;
    return {v, std::max(v, floor) * std::sqrt(rel2)};
}

} // namespace ghzlink
