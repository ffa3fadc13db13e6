#pragma once

#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/errors.hpp"

/// Rotating TOP-trap field: instantaneous field with coil non-idealities,
/// its time average (analytic Taylor form and brute-force quadrature), and the
/// derived trap geometry.
///
/// Interface units are gauss, cm and seconds. SI is used internally wherever a
/// force or frequency is formed. Note that 1 G/cm^2 == 1 T/m^2.
namespace toptrap::field {

using Vec3 = Eigen::Vector3d;

inline constexpr double kBohrMagneton = 9.2740100783e-24; // J/T
inline constexpr double kAtomicMassUnit = 1.66053906660e-27; // kg
inline constexpr double kPlanck = 6.62607015e-34;         // J s
inline constexpr double kRb87Mass = 86.909180527 * kAtomicMassUnit;
inline constexpr double kStandardGravity = 9.80665;
inline constexpr double kTeslaPerGauss = 1e-4;

/// Non-idealities above this magnitude trigger a warning: the first-order
/// formulas are no longer reliable.
inline constexpr double kSmallParameterWarning = 0.1;

struct PhysicalConstants {
    double mu = kBohrMagneton; // magnetic moment of the trapped state, J/T
    double mass = kRb87Mass;   // kg
    double g = kStandardGravity;
    double gF_ground = 0.5; // Lande factor of the F=2 ground manifold
    double h = kPlanck;

    void validate() const;
};

struct TrapConfig {
    double B0 = 24.0;   // G
    double B1p = 30.7;  // G/cm
    double B2p = 2.5;   // G/cm
    double Omega1 = 2.0 * std::numbers::pi * 12.8e3; // rad/s
    double Omega2 = 2.0 * std::numbers::pi * 1.0e3;  // rad/s
    PhysicalConstants constants{};

    double q() const { return B1p / B0; } // 1/cm
    double period() const { return 2.0 * std::numbers::pi / Omega1; }
    void validate() const;
};

/// Coil imperfections of the two bias coils plus a uniform environmental field.
struct NonIdealities {
    double Delta = 0.0; // amplitude mismatch
    double psi1 = 0.0;  // angular deviations, rad
    double psi2 = 0.0;
    double xi1 = 0.0; // phase offsets relative to the quadrupole drive, rad
    double xi2 = 0.0;
    Vec3 BE = Vec3::Zero(); // environmental field, G

    double psi() const { return 0.5 * (psi1 + psi2); }
    double psi_prime() const { return 0.5 * (psi1 - psi2); }
    double xi() const { return 0.5 * (xi1 + xi2); }
    double xi_prime() const { return 0.5 * (xi1 - xi2); }
    /// Environmental field in units of B0.
    Vec3 qE(double B0) const { return BE / B0; }

    bool is_zero() const;
    /// Largest dimensionless non-ideality, counting |B_Ei|/B0.
    double largest(double B0) const;
    /// Emits a log warning when any parameter exceeds kSmallParameterWarning.
    void warn_if_large(double B0) const;
};

struct FieldSample {
    double t = 0.0;
    Vec3 B = Vec3::Zero();
    double magnitude = 0.0;
};

/// Full field at position r (cm) and time t, using the exact trigonometric
/// coil model. `dc_quad` adds the static spherical quadrupole B_Q'(-x, -y, 2z).
FieldSample instantaneous_field(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                double t, std::optional<double> dc_quad = std::nullopt);

/// Same field expressed through the two drive phases (Omega1 t, Omega2 t),
/// treated as independent variables.
Vec3 field_at_phases(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                     double phase1, double phase2, std::optional<double> dc_quad = std::nullopt);

struct QuadratureOptions {
    int n1 = 64; // initial samples of the Omega1 phase
    int n2 = 16; // initial samples of the Omega2 phase
    int max_refinements = 5;
    double rel_tol = 1e-12;
};

/// <|B|> by uniform 2-D phase quadrature with grid doubling until successive
/// levels agree to `rel_tol`. Throws QuadratureNotConverged.
double time_avg_magnitude_numeric(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                  std::optional<double> dc_quad = std::nullopt,
                                  const QuadratureOptions &options = {});

/// How the spherical quadrupole enters the x^2 and z^2 curvatures.
enum class QuadrupoleAveraging {
    // B2'^2 / (4 B0), the conventional coefficient. Used for trap frequencies.
    Conventional,
    // B2'^2 / (8 B0), what independent averaging over both drive phases gives.
    IndependentPhases,
};

struct Curvatures {
    double x = 0.0; // G/cm^2
    double y = 0.0;
    double z = 0.0;
};

/// Quadratic coefficients of <|B|> for the ideal trap.
Curvatures ideal_curvatures(const TrapConfig &cfg,
                            QuadrupoleAveraging mode = QuadrupoleAveraging::Conventional);

/// Radius (cm) inside which the second-order expansion is documented to agree
/// with the numeric average to 1e-3 relative at the nominal operating point.
/// Worst case over all directions is 1e-4 at 0.1 cm and 8.7e-4 at 0.2 cm,
/// growing roughly as |r|^3.
inline constexpr double kTaylorValidityRadius = 0.2;

/// Second-order time average. With ni == 0 the ideal-trap expansion (including
/// B2); otherwise the first-order non-ideal expansion without B2. The linear
/// z term is +B1' z / 2 for the field orientation used here.
double time_avg_magnitude_analytic(const TrapConfig &cfg, const NonIdealities &ni, const Vec3 &r,
                                   QuadrupoleAveraging mode = QuadrupoleAveraging::Conventional);

struct TrapFrequencies {
    double wx = 0.0; // rad/s
    double wy = 0.0;
    double wz = 0.0;
};

TrapFrequencies trap_frequencies(const TrapConfig &cfg,
                                 QuadrupoleAveraging mode = QuadrupoleAveraging::Conventional);

/// B1' (G/cm) at which the linear potential term balances gravity: 2 m g / mu.
double gravity_compensating_gradient(const PhysicalConstants &constants);

/// Horizontal trap centre x0 (cm) from the first-order potential.
double trap_center_x(const NonIdealities &ni, double q);

/// Vertical equilibrium (cm) when gravity acts along +z against the +B1' z/2
/// potential slope; a small change of B1' moves z0 strongly.
double equilibrium_height(const TrapConfig &cfg, const NonIdealities &ni);

enum class CenterFieldMode {
    FirstOrder,     // the first-order harmonic expansion
    Exact,          // |instantaneous_field| at (x0, 0, z0), B2 at phase Omega2 t
    StrobeAveraged, // exact, averaged over the unsynchronised Omega2 phase
};

struct CenterFieldPoint {
    double t = 0.0;
    double magnitude = 0.0; // G
};

std::vector<CenterFieldPoint> center_field_series(const TrapConfig &cfg, const NonIdealities &ni,
                                                  double z0, std::span<const double> times,
                                                  CenterFieldMode mode = CenterFieldMode::FirstOrder);

/// Harmonic amplitudes (G) of the first-order centre field:
/// B = c0 + s1 sin(W t) + c1 cos(W t) + s2 sin(2 W t) + c2 cos(2 W t).
struct CenterFieldHarmonics {
    double c0 = 0.0, s1 = 0.0, c1 = 0.0, s2 = 0.0, c2 = 0.0;
};
CenterFieldHarmonics center_field_harmonics(const TrapConfig &cfg, const NonIdealities &ni,
                                            double z0);

/// m_F = 2 -> 1 transition frequency (Hz) at field B (G), first-order Zeeman.
double zeeman_frequency(double B, const PhysicalConstants &constants);
/// d f / d B in Hz per gauss.
double zeeman_slope(const PhysicalConstants &constants);

} // namespace toptrap::field
