#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/errors.hpp"

namespace toptrap::pol {

using Mat3 = Eigen::Matrix3d;

/// Fully polarized state on the Poincare sphere (S0 == 1).
class StokesVector {
  public:
    StokesVector() : s_(0.0, 0.0, 1.0) {}
    /// Normalizes the input; throws InputError for a zero or non-finite vector.
    StokesVector(double s1, double s2, double s3);
    static StokesVector from_vector(const Eigen::Vector3d &v);
    /// From right/left circular field amplitudes.
    static StokesVector from_circular(std::complex<double> e_right, std::complex<double> e_left);

    double S1() const { return s_.x(); }
    double S2() const { return s_.y(); }
    double S3() const { return s_.z(); }
    const Eigen::Vector3d &vec() const { return s_; }

  private:
    Eigen::Vector3d s_;
};

struct RetarderElement {
    double alpha = 0.0; // axis angle, rad
    double delta = 0.0; // retardance, rad, canonical range (-pi, pi]
    std::string label;

    RetarderElement() = default;
    RetarderElement(double alpha_rad, double delta_rad, std::string name = {});
};

struct BeamGeometry {
    double theta = 0.0; // polar angle between beam and quantization axis, [0, pi]
    double phi = 0.0;

    void validate() const;
};

/// Retarder with axis angle alpha and retardance delta acting on (S1, S2, S3):
/// a rotation by delta about (cos 2alpha, sin 2alpha, 0).
Mat3 mueller_retarder(double alpha, double delta);

/// Elements are applied in propagation order (first element first).
StokesVector apply_chain(std::span<const RetarderElement> elements, const StokesVector &in);

RetarderElement quarter_wave(double alpha, double retardance_error = 0.0);
RetarderElement half_wave(double alpha, double retardance_error = 0.0);
/// Quarter-wave rhomb with its axis at -pi/4, turning horizontal linear light into sigma+.
RetarderElement fresnel_rhomb(double retardance_error = 0.0);

/// Input state of the preparation train: horizontal linear polarization.
StokesVector polarizer_output();

/// Quarter-wave plate, half-wave plate, rhomb, plus any downstream elements.
std::vector<RetarderElement> preparation_chain(double alpha1, double alpha2,
                                               std::span<const RetarderElement> downstream = {},
                                               double rhomb_error = 0.0);

/// F = (1 + S_out . S_ref) / 2.
double fidelity(const StokesVector &out, const StokesVector &ref);

/// Second-order fidelity of S after a weak retarder (alpha, delta).
/// Warns when |delta| > kWeakBirefringenceLimit.
double weak_biref_fidelity(const StokesVector &S, double alpha, double delta);
inline constexpr double kWeakBirefringenceLimit = 0.3;

/// First-order state leaving the rhomb for waveplate angles (alpha1, alpha2),
/// renormalized. Warns when either angle exceeds kSmallAngleLimit.
StokesVector rhomb_output_firstorder(double alpha1, double alpha2);
inline constexpr double kSmallAngleLimit = 0.1;

/// A retarder that moves (0,0,1) to (s1, s2, sqrt(1 - s1^2 - s2^2)); used to
/// model a birefringent window downstream of the rhomb.
RetarderElement disturbance_element(double s1, double s2);

struct WaveplateAngles {
    double alpha1 = 0.0;
    double alpha2 = 0.0;
};

struct CompensationOptions {
    // Exact-chain Newton corrections applied after the linear inversion.
    int newton_steps = 1;
    double rhomb_error = 0.0;
};

/// Waveplate angles cancelling a downstream error (s1_err, s2_err) on S1 and S2.
/// Throws DisturbanceTooLarge when |s_err| > kMaxDisturbance.
WaveplateAngles solve_compensation(double s1_err, double s2_err,
                                   const CompensationOptions &options = {});
inline constexpr double kMaxDisturbance = 0.1;

struct Projections {
    double pi = 0.0;     // |E_pi|^2
    double minus = 0.0;  // |E_-|^2
    double plus = 0.0;   // |E_+|^2
};

Projections projections(const StokesVector &S, const BeamGeometry &geom);

/// <|E* . sigma+|^2> over a square pulse of duration tau centred t_offset
/// after the field passes the beam axis (closed form).
double pulse_avg_fidelity(double Omega1, double tau, double t_offset = 0.0);

/// Leading terms of 1 - pulse_avg_fidelity: Omega^2 tau^2 / 24 + Omega^2 t_offset^2 / 2.
double pulse_avg_infidelity_leading(double Omega1, double tau, double t_offset = 0.0);

/// The same average evaluated by midpoint quadrature of the explicit
/// polarization and quantization vectors.
double pulse_avg_fidelity_numeric(double Omega1, double tau, double t_offset = 0.0,
                                  int samples = 4096);

} // namespace toptrap::pol
