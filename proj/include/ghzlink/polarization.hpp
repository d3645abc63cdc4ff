#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <string_view>

namespace ghzlink {

using cplx = std::complex<double>;

/// Polarization state in the (H, V) basis.
struct jones_vector {
    cplx h;
    cplx v;

    [[nodiscard]] auto norm2() const noexcept -> double {
        return std::norm(h) + std::norm(v);
    }
};

namespace pol {
inline jones_vector const H{1.0, 0.0};
inline jones_vector const V{0.0, 1.0};
inline jones_vector const D{std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2};
inline jones_vector const A{std::numbers::sqrt2 / 2, -std::numbers::sqrt2 / 2};
// R = (H + iV)/sqrt2 fixes the circular handedness convention.
inline jones_vector const R{std::numbers::sqrt2 / 2,
                            cplx{0.0, std::numbers::sqrt2 / 2}};
inline jones_vector const L{std::numbers::sqrt2 / 2,
                            cplx{0.0, -std::numbers::sqrt2 / 2}};
} // namespace pol

/// |<a|b>|^2 for normalized vectors.
[[nodiscard]] inline auto overlap2(jones_vector const &a,
                                   jones_vector const &b) noexcept -> double {
    return std::norm(std::conj(a.h) * b.h + std::conj(a.v) * b.v);
}

/**
 * \brief Unit-determinant unitary acting on the polarization qubit.
 *
 * Stored as U = [[a, -conj(b)], [b, conj(a)]]. On the Poincare sphere this
 * is a rotation; `rotation_vector()` gives its three angles (axis times
 * angle, in Stokes coordinates S1 = H/V, S2 = D/A, S3 = R/L).
 */
class polarization_transform {
  public:
    polarization_transform() = default;

    /// Rotation of the Poincare sphere by |(s1, s2, s3)| about that axis.
    [[nodiscard]] static auto from_rotation_vector(double s1, double s2,
                                                   double s3)
        -> polarization_transform {
        double const angle = std::sqrt(s1 * s1 + s2 * s2 + s3 * s3);
        if (angle == 0.0)
            return {};
        double const c = std::cos(angle / 2);
        double const s = std::sin(angle / 2) / angle;
        // cos(t/2) I - i sin(t/2) (n . sigma), sigma1 = diag(1,-1),
        // sigma2 = [[0,1],[1,0]], sigma3 = [[0,-i],[i,0]].
        return {cplx{c, -s * s1}, cplx{s * s3, -s * s2}};
    }

    /// Linear retarder with fast axis at `axis_rad` from H and retardance
    /// `retardance_rad`.
    [[nodiscard]] static auto retarder(double axis_rad, double retardance_rad)
        -> polarization_transform {
        return from_rotation_vector(retardance_rad * std::cos(2 * axis_rad),
                                    retardance_rad * std::sin(2 * axis_rad),
                                    0.0);
    }

    /// Uniformly (Haar) distributed transform: a normalized 4D Gaussian.
    template <class Urbg>
    [[nodiscard]] static auto haar_random(Urbg &g) -> polarization_transform {
        std::normal_distribution<double> n;
        cplx const a{n(g), n(g)};
        cplx const b{n(g), n(g)};
        return polarization_transform(a, b).renormalized();
    }

    [[nodiscard]] auto a() const noexcept -> cplx { return ua; }
    [[nodiscard]] auto b() const noexcept -> cplx { return ub; }

    /// Matrix element (row, col) with 0 = H, 1 = V.
    [[nodiscard]] auto element(int row, int col) const noexcept -> cplx {
        if (row == 0)
            return col == 0 ? ua : -std::conj(ub);
        return col == 0 ? ub : std::conj(ua);
    }

    [[nodiscard]] auto apply(jones_vector const &in) const noexcept
        -> jones_vector {
        return {ua * in.h - std::conj(ub) * in.v,
                ub * in.h + std::conj(ua) * in.v};
    }

    /// (*this) after `first`: apply `first`, then this.
    [[nodiscard]] auto after(polarization_transform const &first) const noexcept
        -> polarization_transform {
        auto const &f = first;
        cplx const na = ua * f.ua - std::conj(ub) * f.ub;
        cplx const nb = ub * f.ua + std::conj(ua) * f.ub;
        return polarization_transform(na, nb).renormalized();
    }

    [[nodiscard]] auto inverse() const noexcept -> polarization_transform {
        return {std::conj(ua), -ub};
    }

    /// Rotation angle on the Poincare sphere, in [0, pi]. Global sign of U is
    /// not observable, so U and -U both report the same angle.
    [[nodiscard]] auto rotation_angle() const noexcept -> double {
        return 2.0 * std::acos(std::min(1.0, std::abs(ua.real())));
    }

    [[nodiscard]] auto rotation_vector() const noexcept -> std::array<double, 3> {
        // Choose the representative with Re(a) >= 0.
        cplx a = ua;
        cplx b = ub;
        if (a.real() < 0) {
            a = -a;
            b = -b;
        }
        double const half = std::acos(std::min(1.0, a.real()));
        double const s = std::sin(half);
        if (s < 1e-15)
            return {0.0, 0.0, 0.0};
        double const k = 2.0 * half / s;
        return {-a.imag() * k, -b.imag() * k, b.real() * k};
    }

    /// Operator-norm-like distance up to global sign.
    [[nodiscard]] auto distance(polarization_transform const &o) const noexcept
        -> double {
        return after(o.inverse()).rotation_angle();
    }

  private:
    polarization_transform(cplx a, cplx b) : ua(a), ub(b) {}

    [[nodiscard]] auto renormalized() const noexcept -> polarization_transform {
        double const n = std::sqrt(std::norm(ua) + std::norm(ub));
        return {ua / n, ub / n};
    }

    cplx ua{1.0, 0.0};
    cplx ub{0.0, 0.0};
};

/// The three detection bases used for fidelity estimation.
enum class polarization_basis { hv, da, rl };

inline constexpr std::array<polarization_basis, 3> all_bases{
    polarization_basis::hv, polarization_basis::da, polarization_basis::rl};

/// PBS output port: P is the transmitted (first-named) state, Q the other.
enum class outcome { p = 0, q = 1 };

[[nodiscard]] constexpr auto to_string(polarization_basis b) noexcept
    -> std::string_view {
    switch (b) {
    case polarization_basis::hv:
        return "HV";
    case polarization_basis::da:
        return "DA";
    case polarization_basis::rl:
        return "RL";
    }
    return "?";
}

[[nodiscard]] inline auto parse_basis(std::string_view s)
    -> std::optional<polarization_basis> {
    for (auto b : all_bases) {
        if (to_string(b) == s)
            return b;
    }
    return std::nullopt;
}

/// Transform taking the basis' P state to H (the PBS transmitted port) and
/// its Q state to V.
[[nodiscard]] inline auto basis_analyzer(polarization_basis basis)
    -> polarization_transform {
    switch (basis) {
    case polarization_basis::hv:
        return {};
    case polarization_basis::da:
        // D -> H, A -> V: rotation about S3 by -90 degrees.
        return polarization_transform::from_rotation_vector(
            0.0, 0.0, -std::numbers::pi / 2);
    case polarization_basis::rl:
        // R -> H, L -> V: rotation about S2 by +90 degrees.
        return polarization_transform::from_rotation_vector(
            0.0, std::numbers::pi / 2, 0.0);
    }
    return {};
}

/**
 * \brief Joint PBS outcome probabilities for one cascade pair.
 *
 * The pair state is (|HH> + e^{i phase}|VV>)/sqrt2 (XX first). Each photon
 * passes its own transform (drift, compensation, basis analyzer) before a PBS
 * that sends H to port P and V to port Q. Index = 2*xx_outcome + x_outcome.
 */
[[nodiscard]] inline auto
pair_outcome_probabilities(double phase_rad,
                           polarization_transform const &xx_path,
                           polarization_transform const &x_path)
    -> std::array<double, 4> {
    cplx const e = std::polar(1.0, phase_rad);
    std::array<double, 4> p{};
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            cplx const amp = xx_path.element(a, 0) * x_path.element(b, 0) +
                             e * xx_path.element(a, 1) * x_path.element(b, 1);
            p[static_cast<std::size_t>(2 * a + b)] = std::norm(amp) / 2.0;
        }
    }
    return p;
}

} // namespace ghzlink
