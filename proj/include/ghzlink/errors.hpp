#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ghzlink {

/// Invalid parameters or configuration. `field()` names the offending key.
class config_error : public std::invalid_argument {
  public:
    config_error(std::string field, std::string const &what)
        : std::invalid_argument(field + ": " + what), fld(std::move(field)) {}

    [[nodiscard]] auto field() const noexcept -> std::string const & {
        return fld;
    }

  private:
    std::string fld;
};

/// Malformed or truncated time-tag stream data.
class format_error : public std::runtime_error {
  public:
    format_error(std::string const &what, std::uint64_t byte_offset)
        : std::runtime_error(what + " (at byte offset " +
                             std::to_string(byte_offset) + ")"),
          off(byte_offset) {}

    [[nodiscard]] auto byte_offset() const noexcept -> std::uint64_t {
        return off;
    }

  private:
    std::uint64_t off;
};

/// Input sequence violates the (timestamp, channel) ordering contract.
class order_error : public std::invalid_argument {
  public:
    order_error(std::string const &what, std::size_t position)
        : std::invalid_argument(what + " (at index " +
                                std::to_string(position) + ")"),
          pos(position) {}

    [[nodiscard]] auto position() const noexcept -> std::size_t { return pos; }

  private:
    std::size_t pos;
};

/// The analysis has nothing to work with (empty normalization set, all
/// columns undefined, ...).
class analysis_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace ghzlink
