#include "toptrap/polarization.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "toptrap/log.hpp"

namespace toptrap::pol {
namespace {

constexpr double kPi = std::numbers::pi;

double canonical_retardance(double delta) {
    double d = std::remainder(delta, 2.0 * kPi); // [-pi, pi]
    if (d <= -kPi) {
        d += 2.0 * kPi;
    }
    return d;
}

double sinc(double x) { return std::abs(x) < 1e-4 ? 1.0 - x * x / 6.0 : std::sin(x) / x; }

} // namespace

StokesVector::StokesVector(double s1, double s2, double s3) : s_(s1, s2, s3) {
    const double n = s_.norm();
    if (!std::isfinite(n) || n == 0.0) {
        throw InputError("StokesVector: components must be finite and not all zero");
    }
    s_ /= n;
}

StokesVector StokesVector::from_vector(const Eigen::Vector3d &v) {
    return StokesVector(v.x(), v.y(), v.z());
}

StokesVector StokesVector::from_circular(std::complex<double> e_right,
                                         std::complex<double> e_left) {
    const std::complex<double> cross = e_right * std::conj(e_left);
    return StokesVector(2.0 * cross.real(), -2.0 * cross.imag(),
                        std::norm(e_right) - std::norm(e_left));
}

RetarderElement::RetarderElement(double alpha_rad, double delta_rad, std::string name)
    : alpha(alpha_rad), delta(canonical_retardance(delta_rad)), label(std::move(name)) {
    if (!std::isfinite(alpha_rad) || !std::isfinite(delta_rad)) {
        throw InputError("RetarderElement: angles must be finite");
    }
}

void BeamGeometry::validate() const {
    if (!(theta >= 0.0 && theta <= kPi) || !std::isfinite(phi)) {
        throw InputError("BeamGeometry: theta must lie in [0, pi] and phi must be finite");
    }
}

Mat3 mueller_retarder(double alpha, double delta) {
    const double c = std::cos(2.0 * alpha), s = std::sin(2.0 * alpha);
    const double cd = std::cos(delta), sd = std::sin(delta);
    Mat3 m;
    m << c * c + s * s * cd, c * s * (1.0 - cd), s * sd,
         c * s * (1.0 - cd), c * c * cd + s * s, -c * sd,
         -s * sd, c * sd, cd;
    return m;
}

StokesVector apply_chain(std::span<const RetarderElement> elements, const StokesVector &in) {
    Eigen::Vector3d s = in.vec();
    for (const auto &e : elements) {
        s = mueller_retarder(e.alpha, e.delta) * s;
    }
    return StokesVector::from_vector(s);
}

RetarderElement quarter_wave(double alpha, double retardance_error) {
    return {alpha, kPi / 2.0 + retardance_error, "QWP"};
}

RetarderElement half_wave(double alpha, double retardance_error) {
    return {alpha, kPi + retardance_error, "HWP"};
}

RetarderElement fresnel_rhomb(double retardance_error) {
    return {-kPi / 4.0, kPi / 2.0 + retardance_error, "rhomb"};
}

StokesVector polarizer_output() { return {1.0, 0.0, 0.0}; }

std::vector<RetarderElement> preparation_chain(double alpha1, double alpha2,
                                               std::span<const RetarderElement> downstream,
                                               double rhomb_error) {
    std::vector<RetarderElement> chain{quarter_wave(alpha1), half_wave(alpha2),
                                       fresnel_rhomb(rhomb_error)};
    chain.insert(chain.end(), downstream.begin(), downstream.end());
    return chain;
}

double fidelity(const StokesVector &out, const StokesVector &ref) {
    return 0.5 * (1.0 + out.vec().dot(ref.vec()));
}

double weak_biref_fidelity(const StokesVector &S, double alpha, double delta) {
    if (std::abs(delta) > kWeakBirefringenceLimit) {
        std::ostringstream os;
        os << "weak_biref_fidelity: |delta| = " << std::abs(delta)
           << " is outside the weak-birefringence regime";
        log::warn(os.str());
    }
    const double a = S.S1() * std::sin(2.0 * alpha) - S.S2() * std::cos(2.0 * alpha);
    return 1.0 - 0.25 * delta * delta * (a * a + S.S3() * S.S3());
}

StokesVector rhomb_output_firstorder(double alpha1, double alpha2) {
    if (std::abs(alpha1) > kSmallAngleLimit || std::abs(alpha2) > kSmallAngleLimit) {
        log::warn("rhomb_output_firstorder: waveplate angle beyond the small-angle regime");
    }
    return {-2.0 * alpha1, 4.0 * alpha2 - 2.0 * alpha1, 1.0};
}

RetarderElement disturbance_element(double s1, double s2) {
    const double r = std::hypot(s1, s2);
    if (r > 1.0) {
        throw InputError("disturbance_element: |(s1, s2)| must not exceed 1");
    }
    if (r == 0.0) {
        return {0.0, 0.0, "window"};
    }
    // Third column of M(alpha, delta) is (sin2a sind, -cos2a sind, cosd).
    return {0.5 * std::atan2(s1, -s2), std::asin(r), "window"};
}

WaveplateAngles solve_compensation(double s1_err, double s2_err,
                                   const CompensationOptions &options) {
    if (!std::isfinite(s1_err) || !std::isfinite(s2_err)) {
        throw InputError("solve_compensation: disturbance must be finite");
    }
    if (std::hypot(s1_err, s2_err) > kMaxDisturbance) {
        throw DisturbanceTooLarge("solve_compensation: |s_err| exceeds the first-order regime");
    }
    // Linear map (alpha1, alpha2) -> (S1, S2) = (-2 a1, 4 a2 - 2 a1), solved for -s_err.
    WaveplateAngles w{0.5 * s1_err, 0.25 * (s1_err - s2_err)};

    const RetarderElement window = disturbance_element(s1_err, s2_err);
    auto residual = [&](const WaveplateAngles &a) {
        const auto chain = preparation_chain(a.alpha1, a.alpha2, std::span(&window, 1),
                                             options.rhomb_error);
        const StokesVector out = apply_chain(chain, polarizer_output());
        return Eigen::Vector2d(out.S1(), out.S2());
    };
    for (int k = 0; k < options.newton_steps; ++k) {
        const Eigen::Vector2d r0 = residual(w);
        const double h = 1e-7;
        Eigen::Matrix2d J;
        J.col(0) = (residual({w.alpha1 + h, w.alpha2}) - residual({w.alpha1 - h, w.alpha2})) / (2 * h);
        J.col(1) = (residual({w.alpha1, w.alpha2 + h}) - residual({w.alpha1, w.alpha2 - h})) / (2 * h);
        const Eigen::Vector2d step = J.fullPivLu().solve(r0);
        w.alpha1 -= step(0);
        w.alpha2 -= step(1);
    }
    return w;
}

Projections projections(const StokesVector &S, const BeamGeometry &geom) {
    geom.validate();
    const double st2 = std::sin(geom.theta) * std::sin(geom.theta);
    const double lin = 1.0 + S.S1() * std::cos(2.0 * geom.phi) + S.S2() * std::sin(2.0 * geom.phi);
    Projections p;
    p.pi = 0.5 * lin * st2;
    p.minus = 0.5 * (1.0 - S.S3() * std::cos(geom.theta)) - 0.25 * lin * st2;
    p.plus = 1.0 - p.pi - p.minus;
    return p;
}

double pulse_avg_fidelity(double Omega1, double tau, double t_offset) {
    if (!(tau >= 0.0) || !std::isfinite(Omega1) || !std::isfinite(t_offset)) {
        throw InputError("pulse_avg_fidelity: tau must be nonnegative and inputs finite");
    }
    if (Omega1 * tau > 0.5) {
        log::warn("pulse_avg_fidelity: Omega1 tau > 0.5, pulse is not short on the rotation");
    }
    // |E* . sigma+|^2 = cos^4(W t / 2) = 3/8 + cos(W t)/2 + cos(2 W t)/8.
    const double w = Omega1;
    return 0.375 + 0.5 * std::cos(w * t_offset) * sinc(0.5 * w * tau) +
           0.125 * std::cos(2.0 * w * t_offset) * sinc(w * tau);
}

double pulse_avg_infidelity_leading(double Omega1, double tau, double t_offset) {
    const double w2 = Omega1 * Omega1;
    return w2 * tau * tau / 24.0 + 0.5 * w2 * t_offset * t_offset;
}

double pulse_avg_fidelity_numeric(double Omega1, double tau, double t_offset, int samples) {
    using cd = std::complex<double>;
    using V = Eigen::Vector3cd;
    if (samples < 1) {
        throw InputError("pulse_avg_fidelity_numeric: samples must be positive");
    }
    const cd i(0.0, 1.0);
    const V light = (V(1.0, 0.0, 0.0) - i * V(0.0, 1.0, 0.0)) / std::numbers::sqrt2;
    double acc = 0.0;
    for (int k = 0; k < samples; ++k) {
        const double t = t_offset + tau * ((k + 0.5) / samples - 0.5);
        const V x_rot(std::cos(Omega1 * t), 0.0, std::sin(Omega1 * t));
        const V sigma_plus = (x_rot - i * V(0.0, 1.0, 0.0)) / std::numbers::sqrt2;
        acc += std::norm(light.dot(sigma_plus)); // dot() conjugates its left operand
    }
    return acc / samples;
}

} // namespace toptrap::pol
