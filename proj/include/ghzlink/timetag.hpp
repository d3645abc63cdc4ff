#pragma once

#include "errors.hpp"

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ghzlink {

/// One photon detection event.
struct time_tag {
    std::uint8_t channel = 0;
    std::uint64_t timestamp_ps = 0; // since acquisition start

    friend auto operator==(time_tag const &, time_tag const &) -> bool =
                                                                    default;
};

/// Stream order: timestamp first, equal timestamps by ascending channel.
[[nodiscard]] constexpr auto tag_before(time_tag const &a,
                                        time_tag const &b) noexcept -> bool {
    return a.timestamp_ps != b.timestamp_ps ? a.timestamp_ps < b.timestamp_ps
                                            : a.channel < b.channel;
}

/**
 * \brief Excitation clock as seen by the recorder.
 *
 * `divisor` > 1 models a recorder that only sees every divisor-th clock edge
 * (the 1 GHz clock divided by 64 for remote distribution).
 */
class clock_frame {
  public:
    constexpr clock_frame() = default;

    constexpr clock_frame(std::uint32_t period_ps, std::uint32_t divisor)
        : period(period_ps), div(divisor) {
        if (period_ps == 0)
            throw config_error("clock.period_ps", "must be positive");
        if (divisor == 0)
            throw config_error("clock.divisor", "must be at least 1");
    }

    [[nodiscard]] constexpr auto period_ps() const noexcept -> std::uint32_t {
        return period;
    }
    [[nodiscard]] constexpr auto divisor() const noexcept -> std::uint32_t {
        return div;
    }
    [[nodiscard]] constexpr auto frame_period_ps() const noexcept
        -> std::uint64_t {
        return std::uint64_t{period} * div;
    }

    friend constexpr auto operator==(clock_frame const &,
                                     clock_frame const &) -> bool = default;

  private:
    std::uint32_t period = 1000;
    std::uint32_t div = 1;
};

/// Position of a timestamp on a (possibly divided) clock.
struct clock_position {
    std::uint64_t frame_index = 0;
    std::uint32_t cycle_index = 0; // 0 .. divisor-1
    std::uint32_t phase_ps = 0;    // 0 .. period-1

    /// Cycle count of the undivided clock since acquisition start.
    [[nodiscard]] constexpr auto absolute_cycle(clock_frame const &clock) const
        noexcept -> std::uint64_t {
        return frame_index * clock.divisor() + cycle_index;
    }

    friend constexpr auto operator==(clock_position const &,
                                     clock_position const &) -> bool = default;
};

[[nodiscard]] constexpr auto fold_to_clock(std::uint64_t timestamp_ps,
                                           clock_frame const &clock) noexcept
    -> clock_position {
    auto const frame = timestamp_ps / clock.frame_period_ps();
    auto const in_frame = timestamp_ps % clock.frame_period_ps();
    return {frame, static_cast<std::uint32_t>(in_frame / clock.period_ps()),
            static_cast<std::uint32_t>(in_frame % clock.period_ps())};
}

[[nodiscard]] constexpr auto fold_to_clock(time_tag const &tag,
                                           clock_frame const &clock) noexcept
    -> clock_position {
    return fold_to_clock(tag.timestamp_ps, clock);
}

/// A tag as recorded against a divided clock: sync count plus offset from
/// the last sync edge.
struct frame_tag {
    std::uint8_t channel = 0;
    std::uint64_t frame_index = 0;
    std::uint64_t offset_ps = 0; // < frame period

    friend auto operator==(frame_tag const &, frame_tag const &) -> bool =
                                                                      default;
};

namespace role {
inline constexpr char const *xx_p = "XX-P";
inline constexpr char const *xx_q = "XX-Q";
inline constexpr char const *x_p = "X-P";
inline constexpr char const *x_q = "X-Q";
} // namespace role

struct stream_header {
    static constexpr std::uint16_t current_version = 1;

    std::uint16_t version = current_version;
    clock_frame clock;
    std::map<std::uint8_t, std::string> channel_roles;
    std::int64_t acquisition_start_ns = 0; // wall clock, Unix epoch

    friend auto operator==(stream_header const &,
                           stream_header const &) -> bool = default;
};

using tag_stream = std::vector<time_tag>;

/// Index of the first element out of stream order, or size() if sorted.
[[nodiscard]] inline auto first_unsorted(std::span<time_tag const> tags)
    -> std::size_t {
    for (std::size_t i = 1; i < tags.size(); ++i) {
        if (tag_before(tags[i], tags[i - 1]))
            return i;
    }
    return tags.size();
}

/**
 * \brief k-way merge of individually sorted streams.
 *
 * Equal (timestamp, channel) keys keep input order. Ordering violations are
 * detected as elements are consumed; the error reports the index within the
 * offending input.
 */
[[nodiscard]] inline auto merge_streams(std::span<tag_stream const> streams)
    -> tag_stream {
    struct cursor {
        std::size_t stream;
        std::size_t pos;
    };
    auto const later = [&](cursor const &a, cursor const &b) {
        auto const &ta = streams[a.stream][a.pos];
        auto const &tb = streams[b.stream][b.pos];
        if (tag_before(tb, ta))
            return true;
        if (tag_before(ta, tb))
            return false;
        return a.stream > b.stream;
    };
    std::priority_queue<cursor, std::vector<cursor>, decltype(later)> heap(
        later);
    std::size_t total = 0;
    for (std::size_t s = 0; s < streams.size(); ++s) {
        total += streams[s].size();
        if (!streams[s].empty())
            heap.push({s, 0});
    }

    tag_stream out;
    out.reserve(total);
    while (!heap.empty()) {
        auto c = heap.top();
        heap.pop();
        auto const &src = streams[c.stream];
        out.push_back(src[c.pos]);
        if (++c.pos < src.size()) {
            if (tag_before(src[c.pos], src[c.pos - 1]))
                throw order_error("merge_streams: input " +
                                      std::to_string(c.stream) +
                                      " is not sorted",
                                  c.pos);
            heap.push(c);
        }
    }
    return out;
}

/// Partition by floor(timestamp / slice_duration). Interior slices may be
/// empty; the last slice holds the final tag.
[[nodiscard]] inline auto slice_by_wall_time(std::span<time_tag const> tags,
                                             std::uint64_t slice_duration_ps)
    -> std::vector<tag_stream> {
    if (slice_duration_ps == 0)
        throw config_error("slice_duration_ps", "must be positive");
    std::vector<tag_stream> slices;
    if (tags.empty())
        return slices;
    slices.resize(tags.back().timestamp_ps / slice_duration_ps + 1);
    for (auto const &t : tags)
        slices[t.timestamp_ps / slice_duration_ps].push_back(t);
    return slices;
}

/// Keep tags with begin <= timestamp < end.
[[nodiscard]] inline auto time_window(std::span<time_tag const> tags,
                                      std::uint64_t begin_ps,
                                      std::uint64_t end_ps) -> tag_stream {
    auto const lo = std::lower_bound(
        tags.begin(), tags.end(), begin_ps,
        [](time_tag const &t, std::uint64_t v) { return t.timestamp_ps < v; });
    auto const hi = std::lower_bound(
        lo, tags.end(), end_ps,
        [](time_tag const &t, std::uint64_t v) { return t.timestamp_ps < v; });
    return {lo, hi};
}

/// Subtract a fixed cable/fiber delay; tags that would go negative are
/// dropped.
[[nodiscard]] inline auto shift_earlier(std::span<time_tag const> tags,
                                        std::uint64_t delay_ps) -> tag_stream {
    tag_stream out;
    out.reserve(tags.size());
    for (auto const &t : tags) {
        if (t.timestamp_ps >= delay_ps)
            out.push_back({t.channel, t.timestamp_ps - delay_ps});
    }
    return out;
}

} // namespace ghzlink
