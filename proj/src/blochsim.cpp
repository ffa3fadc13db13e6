#include "toptrap/blochsim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "toptrap/angular.hpp"
#include "toptrap/log.hpp"

namespace toptrap::bloch {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMatrixReals = 2 * kNumStates * kNumStates;

using RealMatrix = Eigen::Matrix<double, kNumStates, kNumStates>;

// Wigner-Eckart angular factor <F' m'| d_q |F m> / <F'||d||F>.
double we_factor(int Fp, int mp, int F, int m, int q) {
    const double s = ((Fp - mp) % 2 == 0) ? 1.0 : -1.0;
    return s * angular::wigner3j(2 * Fp, 2, 2 * F, -2 * mp, 2 * q, 2 * m);
}

// {J J' 1; F' F I}
double hyperfine_6j(const AtomicConstants &c, int Fp, int F) {
    return angular::wigner6j(c.two_J, c.two_Jp, 2, 2 * Fp, 2 * F, c.two_I);
}

Eigen::Map<const CMatrix> as_matrix(const fit::Vector &y, int offset) {
    return Eigen::Map<const CMatrix>(reinterpret_cast<const Complex *>(y.data() + offset));
}

Eigen::Map<CMatrix> as_matrix(fit::Vector &y, int offset) {
    return Eigen::Map<CMatrix>(reinterpret_cast<Complex *>(y.data() + offset));
}

CMatrix hamiltonian(const LevelSystem &sys, const PulseSpec &pulse) {
    CMatrix H = CMatrix::Zero();
    H.diagonal() = sys.energies.cast<Complex>();
    for (int q = -1; q <= 1; ++q) {
        const double f = pulse.fraction(static_cast<Polarization>(q));
        if (f <= 0.0) {
            continue;
        }
        const double omega = sys.gamma * std::sqrt(0.5 * pulse.intensity * f);
        const RealMatrix &c = sys.couplings[static_cast<std::size_t>(q + 1)];
        // -(1/2) Omega (|e><g| + |g><e|)
        H -= (0.5 * omega * (c + c.transpose())).cast<Complex>();
    }
    return H;
}

void add_jumps(const LevelSystem &sys, const CMatrix &rho, CMatrix &out) {
    for (const auto &jump : sys.jumps) {
        for (const auto &[g1, e1, a1] : jump.elements) {
            for (const auto &[g2, e2, a2] : jump.elements) {
                out(g1, g2) += sys.gamma * a1 * a2 * rho(e1, e2);
            }
        }
    }
}

double min_eigenvalue_of(const CMatrix &m) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

} // namespace

void AtomicConstants::validate() const {
    if (!(gamma > 0.0) || !(saturation_intensity > 0.0) || !(bohr_over_h > 0.0)) {
        throw InputError("AtomicConstants: gamma, saturation intensity and muB/h must be positive");
    }
    if (two_I < 0 || two_J < 0 || two_Jp < 0) {
        throw InputError("AtomicConstants: angular momenta must be nonnegative");
    }
}

std::string Level::label() const {
    std::ostringstream os;
    os << (excited() ? "F'=" : "F=") << F << ",m=" << m;
    return os.str();
}

int LevelSystem::index(Manifold manifold, int m) const {
    switch (manifold) {
    case Manifold::Ground1:
        if (std::abs(m) > 1) break;
        return m + 1;
    case Manifold::Ground2:
        if (std::abs(m) > 2) break;
        return 3 + m + 2;
    case Manifold::Excited2:
        if (std::abs(m) > 2) break;
        return 8 + m + 2;
    }
    throw InputError("LevelSystem::index: magnetic quantum number out of range");
}

LevelSystem build_level_system(double B, double detuning, const AtomicConstants &constants,
                               DipoleNormalization normalization) {
    if (!(B >= 0.0) || !std::isfinite(B)) {
        throw InputError("build_level_system: B must be finite and nonnegative");
    }
    if (!std::isfinite(detuning)) {
        throw InputError("build_level_system: detuning must be finite");
    }
    constants.validate();

    LevelSystem sys;
    sys.B = B;
    sys.detuning = detuning;
    sys.gamma = constants.gamma;
    sys.saturation_intensity = constants.saturation_intensity;
    sys.normalization = normalization;

    const double wB = kTwoPi * constants.bohr_over_h * B;
    for (int m = -1; m <= 1; ++m) {
        const int i = sys.index(Manifold::Ground1, m);
        sys.levels[static_cast<std::size_t>(i)] = {Manifold::Ground1, 1, m};
        sys.energies(i) = constants.gF_ground1 * m * wB;
    }
    for (int m = -2; m <= 2; ++m) {
        const int i = sys.index(Manifold::Ground2, m);
        sys.levels[static_cast<std::size_t>(i)] = {Manifold::Ground2, 2, m};
        sys.energies(i) = constants.gF_ground2 * m * wB;
    }
    // Zero detuning: laser resonant with (2,2) -> (2',2) at this field.
    const double offset = 2.0 * (constants.gF_ground2 - constants.gF_excited) * wB;
    for (int m = -2; m <= 2; ++m) {
        const int i = sys.index(Manifold::Excited2, m);
        sys.levels[static_cast<std::size_t>(i)] = {Manifold::Excited2, 2, m};
        sys.energies(i) = constants.gF_excited * m * wB + offset - detuning;
    }

    // Absorption: only F=2 -> F'=2 is near resonance.
    const int Fp = 2;
    const double w6_22 = hyperfine_6j(constants, Fp, 2);
    const double S22 = (2 * Fp + 1) * (constants.two_J + 1) * w6_22 * w6_22;
    for (auto &c : sys.couplings) {
        c.setZero();
    }
    for (int q = -1; q <= 1; ++q) {
        auto &c = sys.couplings[static_cast<std::size_t>(q + 1)];
        for (int m = -2; m <= 2; ++m) {
            const int mp = m + q;
            if (std::abs(mp) > Fp) {
                continue;
            }
            const double w = we_factor(Fp, mp, 2, m, q);
            const double scale = normalization == DipoleNormalization::Isotropic
                                     ? std::sqrt(3.0 * S22 * 5.0)
                                     : std::sqrt(5.0);
            c(sys.index(Manifold::Excited2, mp), sys.index(Manifold::Ground2, m)) = scale * w;
        }
    }

    // Spontaneous decay into both ground manifolds.
    sys.branching.setZero();
    for (int F : {1, 2}) {
        const double w6 = hyperfine_6j(constants, Fp, F);
        const double wF = (2 * F + 1) * (constants.two_Jp + 1) * w6 * w6;
        const Manifold ground = F == 1 ? Manifold::Ground1 : Manifold::Ground2;
        for (int q = -1; q <= 1; ++q) {
            JumpOperator jump{F, q, {}};
            for (int mp = -Fp; mp <= Fp; ++mp) {
                const int m = mp - q;
                if (std::abs(m) > F) {
                    continue;
                }
                const double a = std::sqrt(wF * (2 * Fp + 1)) * we_factor(Fp, mp, F, m, q);
                if (a == 0.0) {
                    continue;
                }
                const int g = sys.index(ground, m), e = sys.index(Manifold::Excited2, mp);
                jump.elements.emplace_back(g, e, a);
                sys.branching(e, g) += a * a;
            }
            sys.jumps.push_back(std::move(jump));
        }
    }
    return sys;
}

DensityMatrix DensityMatrix::pure(int index) {
    if (index < 0 || index >= kNumStates) {
        throw InputError("DensityMatrix::pure: index out of range");
    }
    CMatrix rho = CMatrix::Zero();
    rho(index, index) = 1.0;
    return DensityMatrix(rho);
}

DensityMatrix DensityMatrix::pure(const CVector &psi) {
    const double n = psi.squaredNorm();
    if (!(n > 0.0)) {
        throw InputError("DensityMatrix::pure: state vector must be nonzero");
    }
    return DensityMatrix(psi * psi.adjoint() / n);
}

double DensityMatrix::hermiticity_error() const {
    return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff();
}

double DensityMatrix::min_eigenvalue() const { return min_eigenvalue_of(rho_); }

void DensityMatrix::validate() const {
    if (!rho_.allFinite()) {
        throw InputError("DensityMatrix: entries must be finite");
    }
    if (hermiticity_error() > 1e-10) {
        throw InputError("DensityMatrix: not Hermitian");
    }
    const double tr = trace();
    if (tr < -1e-10 || tr > 1.0 + 1e-10) {
        throw InputError("DensityMatrix: trace outside [0, 1]");
    }
    if (min_eigenvalue() < -1e-9) {
        throw InputError("DensityMatrix: negative eigenvalue");
    }
}

PulseSpec PulseSpec::with_impurity(Polarization kind, double impurity, double intensity,
                                   double duration) {
    if (kind == Polarization::SigmaPlus) {
        throw InputError("PulseSpec::with_impurity: impurity must be pi or sigma-");
    }
    PulseSpec p;
    p.duration = duration;
    p.intensity = intensity;
    p.sigma_plus = 1.0 - impurity;
    p.pi = kind == Polarization::Pi ? impurity : 0.0;
    p.sigma_minus = kind == Polarization::SigmaMinus ? impurity : 0.0;
    p.validate();
    return p;
}

double PulseSpec::fraction(Polarization q) const {
    switch (q) {
    case Polarization::SigmaMinus:
        return sigma_minus;
    case Polarization::Pi:
        return pi;
    case Polarization::SigmaPlus:
        return sigma_plus;
    }
    return 0.0;
}

void PulseSpec::validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration)) {
        throw InputError("PulseSpec: duration must be positive");
    }
    if (!(intensity >= 0.0) || !std::isfinite(intensity)) {
        throw InputError("PulseSpec: intensity must be nonnegative");
    }
    if (sigma_plus < 0.0 || sigma_minus < 0.0 || pi < 0.0) {
        throw InputError("PulseSpec: polarization fractions must be nonnegative");
    }
    if (std::abs(sigma_plus + sigma_minus + pi - 1.0) > 1e-12) {
        throw InputError("PulseSpec: polarization fractions must sum to 1");
    }
    if (n_pulses < 1) {
        throw InputError("PulseSpec: n_pulses must be at least 1");
    }
}

PulseResult simulate_pulse(const LevelSystem &sys, const PulseSpec &pulse,
                           const DensityMatrix &rho0, const SimulationOptions &options) {
    pulse.validate();
    rho0.validate();

    CMatrix Heff = hamiltonian(sys, pulse);
    for (int i = 0; i < kNumStates; ++i) {
        if (sys.is_excited(i)) {
            Heff(i, i) -= Complex(0.0, 0.5 * sys.gamma);
        }
    }
    const Complex minus_i(0.0, -1.0);
    const bool track = options.track_scattered;
    const int eps_index = track ? 2 * kMatrixReals : kMatrixReals;

    auto derivative = [&](double, const fit::Vector &y, fit::Vector &dy) {
        const auto r0 = as_matrix(y, 0);
        auto d0 = as_matrix(dy, 0);
        const CMatrix a = Heff * r0;
        d0 = minus_i * (a - a.adjoint());
        double excited = 0.0;
        for (int i = 8; i < kNumStates; ++i) {
            excited += r0(i, i).real();
        }
        dy(eps_index) = sys.gamma * excited;
        if (track) {
            const auto r1 = as_matrix(y, kMatrixReals);
            auto d1 = as_matrix(dy, kMatrixReals);
            const CMatrix b = Heff * r1;
            CMatrix feed = minus_i * (b - b.adjoint());
            add_jumps(sys, r0 + r1, feed);
            d1 = feed;
        }
    };

    fit::Vector y = fit::Vector::Zero(eps_index + 1);
    as_matrix(y, 0) = rho0.matrix();

    PulseResult result;
    const double trace0 = rho0.trace();
    auto observer = [&](double, const fit::Vector &state) {
        const double err =
            std::abs(as_matrix(state, 0).trace().real() + state(eps_index) - trace0);
        result.max_conservation_error = std::max(result.max_conservation_error, err);
    };

    std::vector<double> checkpoints;
    for (int k = 1; k <= options.checkpoints; ++k) {
        checkpoints.push_back(pulse.duration * k / options.checkpoints);
    }
    const auto ode = fit::ode_integrate(derivative, y, {0.0, pulse.duration}, options.ode,
                                        checkpoints, observer);

    result.min_eigenvalue = rho0.min_eigenvalue();
    for (const auto &[t, state] : ode.checkpoints) {
        result.min_eigenvalue = std::min(result.min_eigenvalue, min_eigenvalue_of(as_matrix(state, 0)));
        if (track) {
            const CMatrix total = as_matrix(state, 0) + as_matrix(state, kMatrixReals);
            result.min_eigenvalue = std::min(result.min_eigenvalue, min_eigenvalue_of(total));
        }
    }

    const CMatrix r0 = as_matrix(ode.state, 0);
    result.unscattered = DensityMatrix(0.5 * (r0 + r0.adjoint()));
    if (track) {
        const CMatrix tot = r0 + as_matrix(ode.state, kMatrixReals);
        result.total = DensityMatrix(0.5 * (tot + tot.adjoint()));
    }
    result.epsilon = ode.state(eps_index);
    result.steps = ode.n_steps;
    return result;
}

double depletion(const LevelSystem &sys, const PulseResult &result, int initial) {
    if (initial < 0 || initial >= kNumStates || sys.is_excited(initial)) {
        throw InputError("depletion: initial state must be a ground state");
    }
    if (!(result.total.trace() > 0.5)) {
        throw InputError("depletion: the pulse result does not track scattered atoms");
    }
    double stay = result.total.population(initial);
    for (int e = 0; e < kNumStates; ++e) {
        if (sys.is_excited(e)) {
            stay += result.total.population(e) * sys.branching(e, initial);
        }
    }
    return 1.0 - stay;
}

double reference_loss(const LevelSystem &sys, const PulseSpec &pulse,
                      const SimulationOptions &options) {
    PulseSpec ref = pulse;
    const double impurity = pulse.pi + pulse.sigma_minus;
    if (impurity <= 0.0) {
        return 0.0;
    }
    // Keep the impurity intensity; drop the sigma+ light.
    ref.intensity = pulse.intensity * impurity;
    ref.pi = pulse.pi / impurity;
    ref.sigma_minus = pulse.sigma_minus / impurity;
    ref.sigma_plus = 0.0;
    SimulationOptions opts = options;
    opts.track_scattered = false;
    const auto start = DensityMatrix::pure(sys.index(Manifold::Ground2, 2));
    return simulate_pulse(sys, ref, start, opts).epsilon;
}

LossPoint loss_at_intensity(const LevelSystem &sys, Polarization impurity_kind, double impurity,
                            double intensity, int n_pulses, double duration,
                            const SimulationOptions &options) {
    if (impurity < 0.0 || impurity > 1e-2) {
        throw InputError("loss_at_intensity: impurity must lie in [0, 1e-2]");
    }
    PulseSpec pulse = PulseSpec::with_impurity(impurity_kind, impurity, intensity, duration);
    pulse.n_pulses = n_pulses;
    pulse.validate();
    SimulationOptions opts = options;
    opts.track_scattered = false;
    const auto start = DensityMatrix::pure(sys.index(Manifold::Ground2, 2));
    LossPoint p;
    p.intensity = intensity;
    p.epsilon = simulate_pulse(sys, pulse, start, opts).epsilon;
    p.survival = survival(p.epsilon, n_pulses);
    p.epsilon_reference = reference_loss(sys, pulse, opts);
    p.survival_reference = survival(p.epsilon_reference, n_pulses);
    return p;
}

std::vector<LossPoint> loss_vs_intensity(const LevelSystem &sys, Polarization impurity_kind,
                                         double impurity, std::span<const double> intensities,
                                         int n_pulses, double duration,
                                         const SimulationOptions &options) {
    std::vector<LossPoint> out;
    out.reserve(intensities.size());
    for (double I : intensities) {
        out.push_back(loss_at_intensity(sys, impurity_kind, impurity, I, n_pulses, duration, options));
    }
    return out;
}

LossMaximum find_loss_maximum(const LevelSystem &sys, Polarization impurity_kind,
                              double impurity, std::span<const double> intensities,
                              double duration, const SimulationOptions &options) {
    if (intensities.size() < 3) {
        throw InputError("find_loss_maximum: need at least three grid intensities");
    }
    SimulationOptions opts = options;
    opts.track_scattered = false;
    const auto start = DensityMatrix::pure(sys.index(Manifold::Ground2, 2));
    auto eps = [&](double I) {
        const auto pulse = PulseSpec::with_impurity(impurity_kind, impurity, I, duration);
        return simulate_pulse(sys, pulse, start, opts).epsilon;
    };
    std::vector<double> values;
    for (double I : intensities) {
        values.push_back(eps(I));
    }
    const auto best = static_cast<std::size_t>(
        std::max_element(values.begin(), values.end()) - values.begin());
    LossMaximum m{intensities[best], values[best], false};
    if (best == 0 || best + 1 == intensities.size()) {
        return m;
    }
    // Golden-section search on log I, keeping the better of the search and grid values.
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(intensities[best - 1]), b = std::log(intensities[best + 1]);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = eps(std::exp(c)), fd = eps(std::exp(d));
    while (b - a > 2e-3) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eps(std::exp(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eps(std::exp(d));
        }
    }
    const double x = fc > fd ? c : d;
    const double fx = std::max(fc, fd);
    if (fx >= m.epsilon) {
        m.intensity = std::exp(x);
        m.epsilon = fx;
    }
    m.interior = true;
    return m;
}

KappaResult calibrate_kappa(const LevelSystem &sys, double intensity, double duration,
                            const SimulationOptions &options) {
    if (!(intensity > 0.0)) {
        throw InputError("calibrate_kappa: intensity must be positive");
    }
    SimulationOptions opts = options;
    opts.track_scattered = false;
    const auto start = DensityMatrix::pure(sys.index(Manifold::Ground2, 2));
    KappaResult k;
    k.intensity = intensity;
    for (auto kind : {Polarization::Pi, Polarization::SigmaMinus}) {
        auto eps = [&](double impurity) {
            return simulate_pulse(sys, PulseSpec::with_impurity(kind, impurity, intensity, duration),
                                  start, opts)
                .epsilon;
        };
        const double lo = eps(kKappaProbeLow), hi = eps(kKappaProbeHigh);
        const double r_lo = lo / kKappaProbeLow, r_hi = hi / kKappaProbeHigh;
        const double nonlinearity = r_lo > 0.0 ? std::abs(r_hi - r_lo) / r_lo : 0.0;
        const double kappa = (hi - lo) / (kKappaProbeHigh - kKappaProbeLow);
        if (nonlinearity > kKappaLinearityTolerance) {
            std::ostringstream os;
            os << "calibrate_kappa: loss is not linear in the impurity at I = " << intensity
               << " I_S (slope ratios differ by " << nonlinearity * 100 << "%)";
            throw NonlinearRegime(os.str());
        }
        if (kind == Polarization::Pi) {
            k.kappa_pi = kappa;
            k.nonlinearity_pi = nonlinearity;
        } else {
            k.kappa_minus = kappa;
            k.nonlinearity_minus = nonlinearity;
        }
    }
    return k;
}

double survival(double epsilon, int n_pulses) {
    if (!(epsilon >= 0.0 && epsilon < 1.0) || n_pulses < 1) {
        throw InputError("survival: need epsilon in [0, 1) and N >= 1");
    }
    return std::exp(n_pulses * std::log1p(-epsilon));
}

double infer_impurity(double P, int n_pulses, double kappa) {
    if (!(P > 0.0 && P <= 1.0) || n_pulses < 1 || !(kappa > 0.0)) {
        throw InputError("infer_impurity: need P in (0, 1], N >= 1 and kappa > 0");
    }
    // + 0.0 turns the -0 at P == 1 into +0
    return -std::expm1(std::log(P) / n_pulses) / kappa + 0.0;
}

AlignmentScan alignment_scan(const pol::StokesVector &S, std::span<const double> t_offsets,
                             const AlignmentOptions &options) {
    if (t_offsets.size() < 3) {
        throw InputError("alignment_scan: need at least three timing offsets");
    }
    if (options.residual_pi < 0.0 || !(options.kappa_pi > 0.0) || options.kappa_minus < 0.0) {
        throw InputError("alignment_scan: impurity floor and kappas must be nonnegative");
    }
    AlignmentScan scan;
    const double period = kTwoPi / options.omega1;
    fit::Matrix design(static_cast<Eigen::Index>(t_offsets.size()), 2);
    fit::Vector y(design.rows());
    for (std::size_t i = 0; i < t_offsets.size(); ++i) {
        const double t = t_offsets[i];
        if (std::abs(t) > 0.1 * period) {
            log::warn("alignment_scan: offset is not small compared with the rotation period");
        }
        AlignmentPoint p;
        p.t = t;
        p.theta = std::min(std::abs(options.omega1 * t), std::numbers::pi);
        const auto proj = pol::projections(S, {p.theta, 0.0});
        p.pi_fraction = proj.pi + options.residual_pi;
        p.minus_fraction = proj.minus;
        const double eps = options.kappa_pi * p.pi_fraction + options.kappa_minus * p.minus_fraction;
        if (!(eps < 1.0)) {
            throw InputError("alignment_scan: loss per pulse reaches 1; offsets are too large");
        }
        p.survival = survival(eps, options.n_pulses);
        if (!(p.survival > 0.0)) {
            throw InputError("alignment_scan: survival underflows; offsets are too large");
        }
        p.inferred_pi = infer_impurity(p.survival, options.n_pulses, options.kappa_pi);
        const double wt = options.omega1 * t;
        design.row(static_cast<Eigen::Index>(i)) << 1.0, wt * wt;
        y(static_cast<Eigen::Index>(i)) = p.inferred_pi;
        scan.points.push_back(p);
    }
    const auto fit = fit::weighted_linear_least_squares(design, y, fit::Vector::Ones(y.size()));
    scan.floor = fit.params(0);
    scan.curvature = fit.params(1);
    scan.curvature_sigma = fit.dof > 0 ? std::sqrt(fit.covariance(1, 1) * fit.chi2 / fit.dof) : 0.0;
    return scan;
}

AlignmentScan alignment_scan(const LevelSystem &sys, const PulseSpec &pulse,
                             const pol::StokesVector &S, std::span<const double> t_offsets,
                             double omega1, double residual_pi, const SimulationOptions &options) {
    const auto kappa = calibrate_kappa(sys, pulse.intensity, pulse.duration, options);
    AlignmentOptions o;
    o.omega1 = omega1;
    o.residual_pi = residual_pi;
    o.kappa_pi = kappa.kappa_pi;
    o.kappa_minus = kappa.kappa_minus;
    o.n_pulses = pulse.n_pulses;
    return alignment_scan(S, t_offsets, o);
}

} // namespace toptrap::bloch
