#include "toptrap/fieldmodel.hpp"

#include <cmath>
#include <sstream>

#include "toptrap/log.hpp"

namespace toptrap::field {
namespace {

constexpr double kPi = std::numbers::pi;

bool finite3(const Vec3 &v) { return v.allFinite(); }

} // namespace

void PhysicalConstants::validate() const {
    if (!(mu > 0.0) || !(mass > 0.0) || !(g >= 0.0) || !(gF_ground > 0.0) || !(h > 0.0)) {
        throw InputError("PhysicalConstants: mu, mass, gF_ground and h must be positive, g >= 0");
    }
}

void TrapConfig::validate() const {
    if (!(B0 > 0.0)) {
        throw InputError("TrapConfig: B0 must be positive");
    }
    if (!(Omega1 > 0.0) || !(Omega2 > 0.0)) {
        throw InputError("TrapConfig: Omega1 and Omega2 must be positive");
    }
    if (Omega1 == Omega2) {
        throw InputError("TrapConfig: Omega1 and Omega2 must differ");
    }
    if (!std::isfinite(B1p) || !std::isfinite(B2p)) {
        throw InputError("TrapConfig: gradients must be finite");
    }
    constants.validate();
}

bool NonIdealities::is_zero() const {
    return Delta == 0.0 && psi1 == 0.0 && psi2 == 0.0 && xi1 == 0.0 && xi2 == 0.0 &&
           BE.isZero(0.0);
}

double NonIdealities::largest(double B0) const {
    double m = std::max({std::abs(Delta), std::abs(psi1), std::abs(psi2), std::abs(xi1),
                         std::abs(xi2)});
    return std::max(m, BE.cwiseAbs().maxCoeff() / B0);
}

void NonIdealities::warn_if_large(double B0) const {
    const double m = largest(B0);
    if (m > kSmallParameterWarning) {
        std::ostringstream os;
        os << "non-ideality of size " << m << " exceeds " << kSmallParameterWarning
           << "; first-order field formulas are unreliable";
        log::warn(os.str());
    }
}

Vec3 field_at_phases(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                     double phase1, double phase2, std::optional<double> dc_quad) {
    const double x = r.x(), y = r.y(), z = r.z();
    const double amp = cfg.B0 / std::numbers::sqrt2;

    const double sa = std::sin(phase1 - kPi / 4.0 + ni.xi1);
    const double sb = std::sin(phase1 + kPi / 4.0 + ni.xi2);
    const double ka = amp * (1.0 + ni.Delta) * sa;
    const double kb = amp * (1.0 - ni.Delta) * sb;

    Vec3 B;
    B.x() = ka * (1.0 + ni.psi1) + kb * (1.0 - ni.psi2);
    B.y() = 0.0;
    B.z() = -ka * (1.0 - ni.psi1) + kb * (1.0 + ni.psi2);

    const double c1 = std::cos(phase1);
    B += cfg.B1p * c1 * Vec3(-x, 0.0, z);

    const double c2 = std::cos(phase2);
    B += cfg.B2p * c2 * Vec3(-x, 2.0 * y, -z);

    B += ni.BE;
    if (dc_quad) {
        B += *dc_quad * Vec3(-x, -y, 2.0 * z);
    }
    return B;
}

FieldSample instantaneous_field(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                double t, std::optional<double> dc_quad) {
    FieldSample s;
    s.t = t;
    s.B = field_at_phases(cfg, ni, r, cfg.Omega1 * t, cfg.Omega2 * t, dc_quad);
    s.magnitude = s.B.norm();
    return s;
}

double time_avg_magnitude_numeric(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                  std::optional<double> dc_quad,
                                  const QuadratureOptions &options) {
    if (!finite3(r)) {
        throw InputError("time_avg_magnitude_numeric: position must be finite");
    }
    // The Omega2 phase matters only if the spherical quadrupole is nonzero here.
    const bool needs_phase2 = cfg.B2p != 0.0 && !r.isZero(0.0);

    // Periodic integrands: the uniform (trapezoid) rule converges spectrally.
    auto average = [&](int n1, int n2) {
        double acc = 0.0;
        for (int j = 0; j < n2; ++j) {
            const double ph2 = 2.0 * kPi * (j + 0.5) / n2;
            double row = 0.0;
            for (int i = 0; i < n1; ++i) {
                const double ph1 = 2.0 * kPi * i / n1;
                row += field_at_phases(cfg, ni, r, ph1, ph2, dc_quad).norm();
            }
            acc += row / n1;
        }
        return acc / n2;
    };

    int n1 = options.n1;
    int n2 = needs_phase2 ? options.n2 : 1;
    double previous = average(n1, n2);
    for (int level = 0; level < options.max_refinements; ++level) {
        n1 *= 2;
        if (needs_phase2) {
            n2 *= 2;
        }
        const double current = average(n1, n2);
        if (std::abs(current - previous) <= options.rel_tol * std::abs(current)) {
            return current;
        }
        previous = current;
    }
    throw QuadratureNotConverged("time_avg_magnitude_numeric: grid refinement did not reach "
                                 "the requested tolerance");
}

Curvatures ideal_curvatures(const TrapConfig &cfg, QuadrupoleAveraging mode) {
    const double b1 = cfg.B1p * cfg.B1p / cfg.B0;
    const double b2 = cfg.B2p * cfg.B2p / cfg.B0;
    const double b2_xz = mode == QuadrupoleAveraging::Conventional ? b2 / 4.0 : b2 / 8.0;
    return {3.0 * b1 / 16.0 + b2_xz, b2, b1 / 16.0 + b2_xz};
}

double time_avg_magnitude_analytic(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                   QuadrupoleAveraging mode) {
    const double x = r.x(), y = r.y(), z = r.z();
    if (ni.is_zero()) {
        const Curvatures c = ideal_curvatures(cfg, mode);
        return cfg.B0 + 0.5 * cfg.B1p * z + c.x * x * x + c.y * y * y + c.z * z * z;
    }
    ni.warn_if_large(cfg.B0);
    // First order in the non-idealities; B2 omitted; B_E averages out at first order.
    const double q = cfg.q();
    const double tilt = ni.Delta - 2.0 * ni.xi() + 2.0 * ni.psi();
    const double vert = 2.0 - ni.xi_prime() - ni.psi_prime();
    return cfg.B0 * (1.0 + 0.25 * tilt * q * x + 0.25 * vert * q * z +
                     3.0 / 16.0 * q * q * x * x + 1.0 / 16.0 * q * q * z * z);
}

TrapFrequencies trap_frequencies(const TrapConfig &cfg, QuadrupoleAveraging mode) {
    const Curvatures c = ideal_curvatures(cfg, mode);
    const auto &k = cfg.constants;
    // G/cm^2 equals T/m^2, so the curvature feeds the SI formula unchanged.
    auto omega = [&](double curvature) { return std::sqrt(2.0 * k.mu * curvature / k.mass); };
    return {omega(c.x), omega(c.y), omega(c.z)};
}

double gravity_compensating_gradient(const PhysicalConstants &constants) {
    const double tesla_per_m = 2.0 * constants.mass * constants.g / constants.mu;
    return tesla_per_m * 100.0; // 1 T/m = 100 G/cm
}

double trap_center_x(const NonIdealities &ni, double q) {
    if (!(q > 0.0)) {
        throw InputError("trap_center_x: q must be positive");
    }
    return -2.0 * (ni.Delta - 2.0 * ni.xi() + 2.0 * ni.psi()) / (3.0 * q);
}

double equilibrium_height(const TrapConfig &cfg, const NonIdealities &ni) {
    // d/dz [ B0 (1/4 (2 - a) q z + q^2 z^2 / 16) ] = m g / mu, all in G/cm.
    const double q = cfg.q();
    if (q == 0.0) {
        throw DegenerateConfinement("equilibrium_height: no vertical confinement (B1' = 0)");
    }
    const double a = ni.xi_prime() + ni.psi_prime();
    const double weight = gravity_compensating_gradient(cfg.constants) / 2.0;
    return 8.0 * (weight - 0.25 * (2.0 - a) * cfg.B1p) / (q * q * cfg.B0);
}

CenterFieldHarmonics center_field_harmonics(const TrapConfig &cfg, const NonIdealities &ni,
                                            double z0) {
    const double q = cfg.q();
    const double B0 = cfg.B0;
    const Vec3 qE = ni.qE(B0);
    CenterFieldHarmonics h;
    h.c0 = B0 * (1.0 + 0.5 * q * z0);
    h.s1 = B0 * qE.x();
    h.c1 = B0 * qE.z();
    h.c2 = B0 * 0.5 * (q * z0 - 2.0 * ni.xi_prime() - 2.0 * ni.psi_prime());
    h.s2 = -B0 * 2.0 / 3.0 * (ni.Delta + ni.xi() - ni.psi());
    return h;
}

std::vector<CenterFieldPoint> center_field_series(const TrapConfig &cfg, const NonIdealities &ni,
                                                  double z0, std::span<const double> times,
                                                  CenterFieldMode mode) {
    ni.warn_if_large(cfg.B0);
    std::vector<CenterFieldPoint> out;
    out.reserve(times.size());
    if (mode == CenterFieldMode::FirstOrder) {
        const auto h = center_field_harmonics(cfg, ni, z0);
        for (double t : times) {
            const double p = cfg.Omega1 * t;
            out.push_back({t, h.c0 + h.s1 * std::sin(p) + h.c1 * std::cos(p) +
                                  h.s2 * std::sin(2.0 * p) + h.c2 * std::cos(2.0 * p)});
        }
        return out;
    }

    const Vec3 centre(trap_center_x(ni, cfg.q()), 0.0, z0);
    for (double t : times) {
        if (mode == CenterFieldMode::Exact) {
            out.push_back({t, instantaneous_field(cfg, ni, centre, t).magnitude});
        } else {
            constexpr int n2 = 32;
            double acc = 0.0;
            for (int j = 0; j < n2; ++j) {
                const double ph2 = 2.0 * kPi * (j + 0.5) / n2;
                acc += field_at_phases(cfg, ni, centre, cfg.Omega1 * t, ph2).norm();
            }
            out.push_back({t, acc / n2});
        }
    }
    return out;
}

double zeeman_slope(const PhysicalConstants &constants) {
    return constants.gF_ground * kBohrMagneton * kTeslaPerGauss / constants.h;
}

double zeeman_frequency(double B, const PhysicalConstants &constants) {
    if (!(B >= 0.0)) {
        throw InputError("zeeman_frequency: field magnitude must be nonnegative");
    }
    return zeeman_slope(constants) * B;
}

} // namespace toptrap::field
