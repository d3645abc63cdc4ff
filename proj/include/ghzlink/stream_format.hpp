#pragma once

// Binary time-tag stream files.
//
//   offset  size  field
//   0       8     magic "GHZTAGS\0"
//   8       4     header body length N (u32)
//   12      N     header body:
//                   u16 version, u32 period_ps, u32 divisor,
//                   i64 acquisition_start_ns, u16 channel count,
//                   per channel: u8 channel, u8 role length, role bytes
//   12+N    9*k   records: u8 channel, u64 timestamp_ps
//
// All integers little-endian.

#include "errors.hpp"
#include "timetag.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace ghzlink {

inline constexpr std::array<char, 8> stream_magic{'G', 'H', 'Z', 'T',
                                                  'A', 'G', 'S', '\0'};
inline constexpr std::size_t record_size = 9;

namespace detail {

template <typename T> void put_le(std::string &buf, T value) {
    auto u = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>(u & 0xffu));
        u = static_cast<decltype(u)>(u >> 8);
    }
}

template <typename T>
[[nodiscard]] auto get_le(char const *p) noexcept -> T {
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) {
        u = static_cast<decltype(u)>(u << 8);
        u |= static_cast<unsigned char>(p[i]);
    }
    return static_cast<T>(u);
}

inline auto header_body(stream_header const &h) -> std::string {
    std::string b;
    put_le<std::uint16_t>(b, h.version);
    put_le<std::uint32_t>(b, h.clock.period_ps());
    put_le<std::uint32_t>(b, h.clock.divisor());
    put_le<std::int64_t>(b, h.acquisition_start_ns);
    if (h.channel_roles.size() > 0xffff)
        throw config_error("channel_roles", "too many channels");
    put_le<std::uint16_t>(b, static_cast<std::uint16_t>(h.channel_roles.size()));
    for (auto const &[ch, label] : h.channel_roles) {
        if (label.size() > 0xff)
            throw config_error("channel_roles", "role label longer than 255");
        b.push_back(static_cast<char>(ch));
        b.push_back(static_cast<char>(label.size()));
        b += label;
    }
    return b;
}

} // namespace detail

/// Writes a header, then validated records, to an output stream.
class stream_writer {
  public:
    stream_writer(std::ostream &out, stream_header header)
        : os(&out), hdr(std::move(header)) {
        auto const body = detail::header_body(hdr);
        std::string prefix(stream_magic.begin(), stream_magic.end());
        detail::put_le<std::uint32_t>(prefix,
                                      static_cast<std::uint32_t>(body.size()));
        os->write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
        os->write(body.data(), static_cast<std::streamsize>(body.size()));
    }

    void write(time_tag const &tag) {
        if (!hdr.channel_roles.contains(tag.channel))
            throw order_error("unknown channel " + std::to_string(tag.channel),
                              count);
        if (last && tag_before(tag, *last))
            throw order_error("tags not sorted by (timestamp, channel)", count);
        std::string rec;
        rec.reserve(record_size);
        rec.push_back(static_cast<char>(tag.channel));
        detail::put_le<std::uint64_t>(rec, tag.timestamp_ps);
        os->write(rec.data(), static_cast<std::streamsize>(rec.size()));
        last = tag;
        ++count;
    }

    void write(std::span<time_tag const> tags) {
        for (auto const &t : tags)
            write(t);
    }

    [[nodiscard]] auto records_written() const noexcept -> std::size_t {
        return count;
    }

  private:
    std::ostream *os;
    stream_header hdr;
    std::optional<time_tag> last;
    std::size_t count = 0;
};

/// Single-pass reader; memory use does not grow with the stream length.
class stream_reader {
  public:
    explicit stream_reader(std::istream &in) : is(&in) {
        std::array<char, 12> prefix{};
        auto const got = read_some(prefix.data(), prefix.size());
        if (got < stream_magic.size() ||
            !std::equal(stream_magic.begin(), stream_magic.end(),
                        prefix.begin()))
            throw format_error("bad magic", 0);
        if (got < prefix.size())
            throw format_error("truncated header length", got);
        auto const body_len = detail::get_le<std::uint32_t>(prefix.data() + 8);
        std::string body(body_len, '\0');
        auto const body_got = read_some(body.data(), body_len);
        if (body_got < body_len)
            throw format_error("truncated header", offset);
        parse_body(body);
    }

    [[nodiscard]] auto header() const noexcept -> stream_header const & {
        return hdr;
    }

    /// Next record, or nullopt at a clean end of stream.
    [[nodiscard]] auto next() -> std::optional<time_tag> {
        std::array<char, record_size> rec{};
        auto const start = offset;
        auto const got = read_some(rec.data(), rec.size());
        if (got == 0)
            return std::nullopt;
        if (got < rec.size())
            throw format_error("truncated record", start);
        time_tag t{static_cast<std::uint8_t>(rec[0]),
                   detail::get_le<std::uint64_t>(rec.data() + 1)};
        if (!hdr.channel_roles.contains(t.channel))
            throw format_error("record for unregistered channel " +
                                   std::to_string(t.channel),
                               start);
        if (last && tag_before(t, *last))
            throw format_error("records out of order", start);
        last = t;
        return t;
    }

  private:
    auto read_some(char *dst, std::size_t n) -> std::size_t {
        is->read(dst, static_cast<std::streamsize>(n));
        auto const got = static_cast<std::size_t>(is->gcount());
        offset += got;
        return got;
    }

    void parse_body(std::string const &b) {
        std::size_t const base = offset - b.size();
        std::size_t p = 0;
        auto need = [&](std::size_t n) {
            if (p + n > b.size())
                throw format_error("header body too short", base + p);
        };
        need(2 + 4 + 4 + 8 + 2);
        hdr.version = detail::get_le<std::uint16_t>(b.data() + p);
        if (hdr.version != stream_header::current_version)
            throw format_error("unsupported version " +
                                   std::to_string(hdr.version),
                               base + p);
        p += 2;
        auto const period = detail::get_le<std::uint32_t>(b.data() + p);
        auto const divisor = detail::get_le<std::uint32_t>(b.data() + p + 4);
        p += 8;
        if (period == 0 || divisor == 0)
            throw format_error("invalid clock in header", base + 2);
        hdr.clock = clock_frame(period, divisor);
        hdr.acquisition_start_ns = detail::get_le<std::int64_t>(b.data() + p);
        p += 8;
        auto const n_ch = detail::get_le<std::uint16_t>(b.data() + p);
        p += 2;
        for (std::uint16_t i = 0; i < n_ch; ++i) {
            need(2);
            auto const ch = static_cast<std::uint8_t>(b[p]);
            auto const len = static_cast<std::uint8_t>(b[p + 1]);
            p += 2;
            need(len);
            hdr.channel_roles[ch] = b.substr(p, len);
            p += len;
        }
        if (p != b.size())
            throw format_error("trailing bytes in header", base + p);
    }

    std::istream *is;
    stream_header hdr;
    std::optional<time_tag> last;
    std::uint64_t offset = 0;
};

[[nodiscard]] inline auto encode_stream(stream_header const &header,
                                        std::span<time_tag const> tags)
    -> std::vector<std::byte> {
    std::ostringstream os(std::ios::binary);
    stream_writer w(os, header);
    w.write(tags);
    auto const s = std::move(os).str();
    std::vector<std::byte> out(s.size());
    std::transform(s.begin(), s.end(), out.begin(),
                   [](char c) { return static_cast<std::byte>(c); });
    return out;
}

[[nodiscard]] inline auto decode_stream(std::span<std::byte const> bytes)
    -> std::pair<stream_header, tag_stream> {
    std::string s(bytes.size(), '\0');
    std::transform(bytes.begin(), bytes.end(), s.begin(),
                   [](std::byte b) { return static_cast<char>(b); });
    std::istringstream is(std::move(s), std::ios::binary);
    stream_reader r(is);
    tag_stream tags;
    tags.reserve(bytes.size() / record_size);
    while (auto t = r.next())
        tags.push_back(*t);
    return {r.header(), std::move(tags)};
}

} // namespace ghzlink
