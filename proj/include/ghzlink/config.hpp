#pragma once

// Experiment configuration: JSON with explicit units in key names. Unknown
// keys are rejected so that a typo cannot silently fall back to a default.

#include "cascade_source.hpp"
#include "correlator.hpp"
#include "errors.hpp"
#include "link.hpp"
#include "polarization.hpp"
#include "polcontrol.hpp"
#include "timetag.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ghzlink {

using json = nlohmann::json;

struct schedule_params {
    double set_duration_ps = 7 * 60 * 1e12; // 7 min
    std::vector<polarization_basis> bases{polarization_basis::hv,
                                          polarization_basis::da,
                                          polarization_basis::rl};
};

struct polcontrol_params {
    bool enabled = true;
    retarder_stack stack;
    calibration_options calibration;
};

struct analysis_params {
    std::uint32_t bin_ps = 72;
    std::uint32_t grid_cycles = 1;
    std::uint64_t coincidence_window_ps = 0; // 0: period * grid_cycles
    std::uint32_t central_gate_ps = 864;
    std::uint32_t window_gate_ps = 168;
    std::uint32_t window_scan_bin_ps = 1;
    std::uint32_t g2_delays = 21;
    std::uint32_t g2_norm_min_cycles = 5;
    std::uint32_t g2_norm_max_cycles = 10;
    double slice_duration_ps = 2 * 3600 * 1e12; // 2 h
    // Per-role delay removed before analysis; unset roles use their arm's
    // fiber delay.
    std::array<std::optional<double>, 4> channel_delay_ps{};

    [[nodiscard]] auto window_ps(clock_frame const &clock) const -> std::uint64_t {
        return coincidence_window_ps != 0
                   ? coincidence_window_ps
                   : std::uint64_t{clock.period_ps()} * grid_cycles;
    }
};

struct experiment_config {
    std::uint64_t seed = 1;
    std::uint64_t n_cycles = 1'000'000;
    std::int64_t acquisition_start_ns = 0;
    clock_frame clock{1000, 1};
    source_params source;
    fiber_params xx_fiber;
    fiber_params x_fiber;
    std::array<detector_params, 4> detectors{
        detector_params{1.0, 70.0, 0.0, 0.0, {}},
        detector_params{1.0, 70.0, 0.0, 0.0, {}},
        detector_params{1.0, 70.0, 0.0, 0.0, {}},
        detector_params{1.0, 70.0, 0.0, 0.0, {}}};
    schedule_params schedule;
    polcontrol_params polcontrol;
    analysis_params analysis;

    [[nodiscard]] auto detector(detector_role r) const -> detector_params const & {
        return detectors[role_index(r)];
    }

    [[nodiscard]] auto fiber(arm a) const -> fiber_params const & {
        return a == arm::xx ? xx_fiber : x_fiber;
    }

    [[nodiscard]] auto channel_delay_ps(detector_role r) const -> double {
        if (auto const &d = analysis.channel_delay_ps[role_index(r)])
            return *d;
        bool const xx = r == detector_role::xx_p || r == detector_role::xx_q;
        return (xx ? xx_fiber : x_fiber).propagation_delay_ps;
    }

    [[nodiscard]] auto span_ps() const -> double {
        return double(n_cycles) * clock.period_ps();
    }

    void validate() const {
        if (n_cycles == 0)
            throw config_error("n_cycles", "must be at least 1");
        if (!(source.clock == clock))
            throw config_error("source.clock", "must equal the run clock");
        source.validate();
        xx_fiber.validate("fiber.xx");
        x_fiber.validate("fiber.x");
        for (auto r : all_roles)
            detector(r).validate(clock, std::string("detectors.") + role_label(r));
        if (!(schedule.set_duration_ps > 0))
            throw config_error("schedule.set_duration_ps", "must be positive");
        if (schedule.bases.empty())
            throw config_error("schedule.bases", "need at least one basis");
        polcontrol.stack.validate();
        if (!(polcontrol.calibration.threshold > 0 &&
              polcontrol.calibration.threshold < 1))
            throw config_error("polcontrol.threshold", "must be in (0, 1)");
        auto const &a = analysis;
        if (a.bin_ps == 0 || a.bin_ps > clock.period_ps())
            throw config_error("analysis.bin_ps", "must be in (0, clock period]");
        if (a.window_scan_bin_ps == 0 || a.window_scan_bin_ps > clock.period_ps())
            throw config_error("analysis.window_scan_bin_ps",
                               "must be in (0, clock period]");
        if (a.grid_cycles == 0)
            throw config_error("analysis.grid_cycles", "must be at least 1");
        if (a.central_gate_ps == 0 || a.central_gate_ps > clock.period_ps())
            throw config_error("analysis.central_gate_ps",
                               "must be in (0, clock period]");
        if (a.window_gate_ps == 0 || a.window_gate_ps > clock.period_ps())
            throw config_error("analysis.window_gate_ps",
                               "must be in (0, clock period]");
        if (a.g2_delays % 2 == 0)
            throw config_error("analysis.g2_delays", "must be odd");
        if (a.g2_norm_min_cycles > a.g2_norm_max_cycles ||
            a.g2_norm_max_cycles > a.g2_delays / 2)
            throw config_error("analysis.g2_norm_max_cycles",
                               "normalization range must lie inside the "
                               "histogram and min <= max");
        if (!(a.slice_duration_ps > 0))
            throw config_error("analysis.slice_duration_ps", "must be positive");
        for (auto r : all_roles) {
            auto const &d = a.channel_delay_ps[role_index(r)];
            if (d && !(*d >= 0))
                throw config_error(std::string("analysis.channel_delay_ps.") +
                                       role_label(r),
                                   "must be >= 0");
        }
    }
};

namespace detail {

/// Reads keys of one JSON object and remembers which were consumed.
class object_reader {
  public:
    object_reader(json const &j, std::string path) : obj(j), where(std::move(path)) {
        if (!obj.is_object())
            throw config_error(where.empty() ? "<root>" : where,
                               "expected an object");
    }

    [[nodiscard]] auto field(std::string const &key) const -> std::string {
        return where.empty() ? key : where + "." + key;
    }

    [[nodiscard]] auto has(std::string const &key) const -> bool {
        return obj.contains(key);
    }

    auto sub(std::string const &key) -> object_reader {
        seen.insert(key);
        return {obj.at(key), field(key)};
    }

    auto raw(std::string const &key) -> json const & {
        seen.insert(key);
        return obj.at(key);
    }

    template <typename T> void get(std::string const &key, T &out) {
        if (!obj.contains(key))
            return;
        seen.insert(key);
        auto const &v = obj.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean())
                throw config_error(field(key), "expected true or false");
            out = v.get<bool>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number())
                throw config_error(field(key), "expected a number");
            out = v.get<double>();
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (v.is_number_float()) {
                double const d = v.get<double>();
                if (!(d >= 0) || d != std::floor(d) ||
                    d > double(std::numeric_limits<T>::max()))
                    throw config_error(field(key),
                                       "expected a non-negative integer");
                out = static_cast<T>(d);
            } else if (v.is_number_unsigned()) {
                auto const u = v.get<std::uint64_t>();
                if (u > std::numeric_limits<T>::max())
                    throw config_error(field(key), "value out of range");
                out = static_cast<T>(u);
            } else {
                throw config_error(field(key), "expected a non-negative integer");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer())
                throw config_error(field(key), "expected an integer");
            out = v.get<T>();
        } else {
            if (!v.is_string())
                throw config_error(field(key), "expected a string");
            out = v.get<std::string>();
        }
    }

    void finish() const {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (!seen.contains(it.key()))
                throw config_error(field(it.key()), "unknown key");
        }
    }

  private:
    json const &obj;
    std::string where;
    std::set<std::string> seen;
};

inline auto parse_drift(object_reader r) -> drift_process {
    drift_process d;
    r.get("step_interval_ps", d.step_interval_ps);
    r.get("angular_step_std_rad", d.angular_step_std_rad);
    r.finish();
    return d;
}

inline auto parse_fiber(object_reader r) -> fiber_params {
    fiber_params f;
    r.get("length_km", f.length_km);
    if (r.has("loss_db") && r.raw("loss_db").is_string()) {
        if (r.raw("loss_db").get<std::string>() != "inf")
            throw config_error(r.field("loss_db"), "expected a number or \"inf\"");
        f.loss_db = std::numeric_limits<double>::infinity();
    } else {
        r.get("loss_db", f.loss_db);
    }
    r.get("propagation_delay_ps", f.propagation_delay_ps);
    if (r.has("drift"))
        f.drift = parse_drift(r.sub("drift"));
    r.finish();
    return f;
}

inline auto parse_detector(object_reader r, detector_params d) -> detector_params {
    r.get("efficiency", d.efficiency);
    r.get("jitter_fwhm_ps", d.jitter_fwhm_ps);
    r.get("dead_time_ps", d.dead_time_ps);
    r.get("dark_rate_cps", d.dark_rate_cps);
    if (r.has("gate")) {
        if (r.raw("gate").is_null()) {
            d.gate.reset();
        } else {
            auto g = r.sub("gate");
            detector_gate dg;
            g.get("offset_ps", dg.offset_ps);
            g.get("width_ps", dg.width_ps);
            g.finish();
            d.gate = dg;
        }
    }
    r.finish();
    return d;
}

inline auto parse_bases(json const &j, std::string const &field)
    -> std::vector<polarization_basis> {
    if (!j.is_array())
        throw config_error(field, "expected an array of basis names");
    std::vector<polarization_basis> out;
    for (auto const &e : j) {
        if (!e.is_string())
            throw config_error(field, "expected basis names");
        auto const b = parse_basis(e.get<std::string>());
        if (!b)
            throw config_error(field, "unknown basis '" + e.get<std::string>() +
                                          "' (use HV, DA or RL)");
        out.push_back(*b);
    }
    return out;
}

} // namespace detail

/// Parse and validate a configuration document. Missing keys keep defaults.
[[nodiscard]] inline auto config_from_json(json const &j) -> experiment_config {
    experiment_config c;
    detail::object_reader root(j, "");
    root.get("seed", c.seed);
    root.get("n_cycles", c.n_cycles);
    root.get("acquisition_start_ns", c.acquisition_start_ns);
    if (root.has("clock")) {
        auto r = root.sub("clock");
        std::uint32_t period = c.clock.period_ps();
        std::uint32_t div = c.clock.divisor();
        r.get("period_ps", period);
        r.get("divisor", div);
        r.finish();
        c.clock = clock_frame(period, div);
    }
    c.source.clock = c.clock;
    if (root.has("source")) {
        auto r = root.sub("source");
        auto &s = c.source;
        r.get("pair_probability", s.pair_probability);
        r.get("tau_xx_ps", s.tau_xx_ps);
        r.get("tau_x_ps", s.tau_x_ps);
        r.get("reinit_width_ps", s.reinit_width_ps);
        r.get("fss_ueV", s.fss_ueV);
        r.get("multi_photon_probability", s.multi_photon_probability);
        r.get("background_rate_cps", s.background_rate_cps);
        r.get("reinit_dephasing", s.reinit_dephasing);
        r.finish();
    }
    if (root.has("fiber")) {
        auto r = root.sub("fiber");
        if (r.has("xx"))
            c.xx_fiber = detail::parse_fiber(r.sub("xx"));
        if (r.has("x"))
            c.x_fiber = detail::parse_fiber(r.sub("x"));
        r.finish();
    }
    if (root.has("detectors")) {
        auto r = root.sub("detectors");
        if (r.has("default")) {
            auto const d = detail::parse_detector(r.sub("default"), c.detectors[0]);
            c.detectors.fill(d);
        }
        for (auto role : all_roles) {
            if (r.has(role_label(role)))
                c.detectors[role_index(role)] = detail::parse_detector(
                    r.sub(role_label(role)), c.detectors[role_index(role)]);
        }
        r.finish();
    }
    if (root.has("schedule")) {
        auto r = root.sub("schedule");
        r.get("set_duration_ps", c.schedule.set_duration_ps);
        if (r.has("bases"))
            c.schedule.bases =
                detail::parse_bases(r.raw("bases"), r.field("bases"));
        r.finish();
    }
    if (root.has("polcontrol")) {
        auto r = root.sub("polcontrol");
        auto &p = c.polcontrol;
        r.get("enabled", p.enabled);
        if (r.has("axes_deg")) {
            auto const &a = r.raw("axes_deg");
            if (!a.is_array())
                throw config_error(r.field("axes_deg"), "expected an array");
            p.stack.axes_rad.clear();
            for (auto const &e : a) {
                if (!e.is_number())
                    throw config_error(r.field("axes_deg"), "expected numbers");
                p.stack.axes_rad.push_back(e.get<double>() * std::numbers::pi / 180);
            }
        }
        r.get("slope_rad_per_v", p.stack.slope_rad_per_v);
        r.get("v_min", p.stack.v_min);
        r.get("v_max", p.stack.v_max);
        r.get("threshold", p.calibration.threshold);
        r.get("max_iterations", p.calibration.max_iterations);
        r.get("initial_step_v", p.calibration.initial_step_v);
        r.get("min_step_v", p.calibration.min_step_v);
        r.finish();
    }
    if (root.has("analysis")) {
        auto r = root.sub("analysis");
        auto &a = c.analysis;
        r.get("bin_ps", a.bin_ps);
        r.get("grid_cycles", a.grid_cycles);
        r.get("coincidence_window_ps", a.coincidence_window_ps);
        r.get("central_gate_ps", a.central_gate_ps);
        r.get("window_gate_ps", a.window_gate_ps);
        r.get("window_scan_bin_ps", a.window_scan_bin_ps);
        r.get("g2_delays", a.g2_delays);
        r.get("g2_norm_min_cycles", a.g2_norm_min_cycles);
        r.get("g2_norm_max_cycles", a.g2_norm_max_cycles);
        r.get("slice_duration_ps", a.slice_duration_ps);
        if (r.has("channel_delay_ps")) {
            auto d = r.sub("channel_delay_ps");
            for (auto role : all_roles) {
                double v = 0;
                if (d.has(role_label(role))) {
                    d.get(role_label(role), v);
                    a.channel_delay_ps[role_index(role)] = v;
                }
            }
            d.finish();
        }
        r.finish();
    }
    root.finish();
    c.validate();
    return c;
}

namespace detail {

inline auto fiber_to_json(fiber_params const &f) -> json {
    json j{{"length_km", f.length_km},
           {"propagation_delay_ps", f.propagation_delay_ps},
           {"drift",
            {{"step_interval_ps", f.drift.step_interval_ps},
             {"angular_step_std_rad", f.drift.angular_step_std_rad}}}};
    if (std::isinf(f.loss_db))
        j["loss_db"] = "inf";
    else
        j["loss_db"] = f.loss_db;
    return j;
}

inline auto detector_to_json(detector_params const &d) -> json {
    json j{{"efficiency", d.efficiency},
           {"jitter_fwhm_ps", d.jitter_fwhm_ps},
           {"dead_time_ps", d.dead_time_ps},
           {"dark_rate_cps", d.dark_rate_cps}};
    if (d.gate)
        j["gate"] = {{"offset_ps", d.gate->offset_ps},
                     {"width_ps", d.gate->width_ps}};
    else
        j["gate"] = nullptr;
    return j;
}

} // namespace detail

/// Full document with every default spelled out.
[[nodiscard]] inline auto config_to_json(experiment_config const &c) -> json {
    json j;
    j["seed"] = c.seed;
    j["n_cycles"] = c.n_cycles;
    j["acquisition_start_ns"] = c.acquisition_start_ns;
    j["clock"] = {{"period_ps", c.clock.period_ps()},
                  {"divisor", c.clock.divisor()}};
    auto const &s = c.source;
    j["source"] = {{"pair_probability", s.pair_probability},
                   {"tau_xx_ps", s.tau_xx_ps},
                   {"tau_x_ps", s.tau_x_ps},
                   {"reinit_width_ps", s.reinit_width_ps},
                   {"fss_ueV", s.fss_ueV},
                   {"multi_photon_probability", s.multi_photon_probability},
                   {"background_rate_cps", s.background_rate_cps},
                   {"reinit_dephasing", s.reinit_dephasing}};
    j["fiber"] = {{"xx", detail::fiber_to_json(c.xx_fiber)},
                  {"x", detail::fiber_to_json(c.x_fiber)}};
    json det = json::object();
    for (auto r : all_roles)
        det[role_label(r)] = detail::detector_to_json(c.detector(r));
    j["detectors"] = det;
    json bases = json::array();
    for (auto b : c.schedule.bases)
        bases.push_back(std::string(to_string(b)));
    j["schedule"] = {{"set_duration_ps", c.schedule.set_duration_ps},
                     {"bases", bases}};
    json axes = json::array();
    for (double a : c.polcontrol.stack.axes_rad)
        axes.push_back(a * 180 / std::numbers::pi);
    auto const &p = c.polcontrol;
    j["polcontrol"] = {{"enabled", p.enabled},
                       {"axes_deg", axes},
                       {"slope_rad_per_v", p.stack.slope_rad_per_v},
                       {"v_min", p.stack.v_min},
                       {"v_max", p.stack.v_max},
                       {"threshold", p.calibration.threshold},
                       {"max_iterations", p.calibration.max_iterations},
                       {"initial_step_v", p.calibration.initial_step_v},
                       {"min_step_v", p.calibration.min_step_v}};
    auto const &a = c.analysis;
    json delays = json::object();
    for (auto r : all_roles)
        if (auto const &d = a.channel_delay_ps[role_index(r)])
            delays[role_label(r)] = *d;
    j["analysis"] = {{"bin_ps", a.bin_ps},
                     {"grid_cycles", a.grid_cycles},
                     {"coincidence_window_ps", a.coincidence_window_ps},
                     {"central_gate_ps", a.central_gate_ps},
                     {"window_gate_ps", a.window_gate_ps},
                     {"window_scan_bin_ps", a.window_scan_bin_ps},
                     {"g2_delays", a.g2_delays},
                     {"g2_norm_min_cycles", a.g2_norm_min_cycles},
                     {"g2_norm_max_cycles", a.g2_norm_max_cycles},
                     {"slice_duration_ps", a.slice_duration_ps},
                     {"channel_delay_ps", delays}};
    return j;
}

[[nodiscard]] inline auto load_config(std::string const &path)
    -> experiment_config {
    std::ifstream in(path);
    if (!in)
        throw config_error("config", "cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (json::parse_error const &e) {
        throw config_error("config", std::string("not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

/// 64-bit FNV-1a.
[[nodiscard]] constexpr auto fnv1a64(std::string_view data) noexcept
    -> std::uint64_t {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the canonical document minus the seed and the analysis section,
/// i.e. of everything that shapes the recorded streams.
[[nodiscard]] inline auto config_hash(experiment_config const &c) -> std::string {
    auto j = config_to_json(c);
    j.erase("seed");
    j.erase("analysis");
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
    return os.str();
}

} // namespace ghzlink
