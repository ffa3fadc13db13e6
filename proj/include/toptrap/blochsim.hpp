#pragma once

#include <array>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/errors.hpp"
#include "toptrap/fitcore.hpp"
#include "toptrap/polarization.hpp"

/// Optical Bloch equations for the 87Rb D1 line restricted to the F=1 and F=2
/// ground manifolds and the F'=2 excited manifold (13 states), driven by a
/// short, nearly sigma+ polarized pulse.
///
/// Time is in seconds and angular frequencies in rad/s. Intensities are in
/// units of the saturation intensity.
namespace toptrap::bloch {

inline constexpr int kNumStates = 13;

using Complex = std::complex<double>;
using CMatrix = Eigen::Matrix<Complex, kNumStates, kNumStates>;
using CVector = Eigen::Matrix<Complex, kNumStates, 1>;

struct AtomicConstants {
    double gamma = 36.129e6;          // excited-state decay rate, 1/s
    double saturation_intensity = 44.84; // W/m^2
    double bohr_over_h = 1.39962449361e6; // Hz/G
    double gF_ground2 = 0.5;
    double gF_ground1 = -0.5;
    double gF_excited = 1.0 / 6.0;
    int two_I = 3;  // nuclear spin 3/2
    int two_J = 1;  // ground J = 1/2
    int two_Jp = 1; // excited J' = 1/2

    void validate() const;
};

enum class Manifold { Ground1, Ground2, Excited2 };

struct Level {
    Manifold manifold = Manifold::Ground2;
    int F = 2;
    int m = 0;
    bool excited() const { return manifold == Manifold::Excited2; }
    std::string label() const;
};

/// Spherical light components, labelled by the change in m they drive.
enum class Polarization { SigmaMinus = -1, Pi = 0, SigmaPlus = 1 };

/// How transition strengths are scaled relative to the intensity unit.
enum class DipoleNormalization {
    // |d|^2 relative to the isotropic effective dipole used to define the
    // saturation intensity: 3 S_FF' (2F+1) (3j)^2. The (2,2) -> (2',2) pi line has unit strength.
    Isotropic,
    // Bare Clebsch-Gordan coefficients.
    ClebschGordan,
};

/// Jump operator for decay into one ground manifold with one photon polarization,
/// stored sparsely as (ground index, excited index, amplitude) triples.
struct JumpOperator {
    int F = 2;
    int q = 0;
    std::vector<std::tuple<int, int, double>> elements;
};

struct LevelSystem {
    std::array<Level, kNumStates> levels{};
    double B = 0.0;         // G
    double detuning = 0.0;  // laser minus the (2,2) -> (2',2) resonance, rad/s
    double gamma = 0.0;     // 1/s
    double saturation_intensity = 0.0;
    DipoleNormalization normalization = DipoleNormalization::Isotropic;
    Eigen::Matrix<double, kNumStates, 1> energies; // rotating-frame energies, rad/s
    // couplings[q+1](e, g): relative Rabi factor for polarization q.
    std::array<Eigen::Matrix<double, kNumStates, kNumStates>, 3> couplings;
    // branching(e, g): probability that excited state e decays to ground state g.
    Eigen::Matrix<double, kNumStates, kNumStates> branching;
    std::vector<JumpOperator> jumps;

    int index(Manifold manifold, int m) const;
    bool is_excited(int i) const { return levels[static_cast<std::size_t>(i)].excited(); }
};

/// States in the order F=1 (m=-1..1), F=2 (m=-2..2), F'=2 (m'=-2..2).
LevelSystem build_level_system(double B, double detuning, const AtomicConstants &constants = {},
                               DipoleNormalization normalization = DipoleNormalization::Isotropic);

class DensityMatrix {
  public:
    DensityMatrix() : rho_(CMatrix::Zero()) {}
    explicit DensityMatrix(const CMatrix &rho) : rho_(rho) {}
    static DensityMatrix pure(int index);
    static DensityMatrix pure(const CVector &psi);

    const CMatrix &matrix() const { return rho_; }
    double trace() const { return rho_.trace().real(); }
    double population(int i) const { return rho_(i, i).real(); }
    double hermiticity_error() const;
    double min_eigenvalue() const;
    /// Throws InputError unless Hermitian to 1e-10, trace in [0, 1 + 1e-10] and
    /// eigenvalues >= -1e-9.
    void validate() const;

  private:
    CMatrix rho_;
};

struct PulseSpec {
    double duration = 120e-9; // s
    double intensity = 100.0; // total, in units of I_S
    double sigma_plus = 1.0;  // intensity fractions
    double sigma_minus = 0.0;
    double pi = 0.0;
    int n_pulses = 1280;

    /// sigma+ light contaminated by a fraction `impurity` of the given component.
    static PulseSpec with_impurity(Polarization kind, double impurity, double intensity,
                                   double duration = 120e-9);
    double fraction(Polarization q) const;
    void validate() const;
};

struct SimulationOptions {
    fit::OdeOptions ode{};
    // Also propagate the atoms that have scattered (full Lindblad state).
    bool track_scattered = true;
    // Number of evenly spaced checkpoints at which positivity is verified.
    int checkpoints = 8;
};

struct PulseResult {
    DensityMatrix unscattered; // atoms that have not scattered; trace = 1 - epsilon
    DensityMatrix total;       // unscattered + scattered (trace 1); zero if not tracked
    double epsilon = 0.0;
    long steps = 0;
    double max_conservation_error = 0.0; // |trace(unscattered) + epsilon - 1| over all steps
    double min_eigenvalue = 0.0;         // over all checkpoints and both matrices
};

/// Integrates the optical Bloch equations over one square pulse. epsilon is the
/// probability that at least one photon has been scattered.
/// Throws IntegratorStepFailure.
PulseResult simulate_pulse(const LevelSystem &sys, const PulseSpec &pulse,
                           const DensityMatrix &rho0, const SimulationOptions &options = {});

/// Probability of leaving ground state `initial` once the excited population left
/// at the end of the pulse has decayed. Needs a result with the scattered part tracked.
double depletion(const LevelSystem &sys, const PulseResult &result, int initial);

/// Loss for the same impurity with the sigma+ component removed: the scattering
/// expected without dark-state formation.
double reference_loss(const LevelSystem &sys, const PulseSpec &pulse,
                      const SimulationOptions &options = {});

struct LossPoint {
    double intensity = 0.0; // I / I_S
    double epsilon = 0.0;
    double survival = 0.0;
    double epsilon_reference = 0.0;
    double survival_reference = 0.0;
};

LossPoint loss_at_intensity(const LevelSystem &sys, Polarization impurity_kind, double impurity,
                            double intensity, int n_pulses, double duration = 120e-9,
                            const SimulationOptions &options = {});

/// epsilon(I) from the (2,2) state, with survival after `n_pulses` and the reference curve.
std::vector<LossPoint> loss_vs_intensity(const LevelSystem &sys, Polarization impurity_kind,
                                         double impurity, std::span<const double> intensities,
                                         int n_pulses, double duration = 120e-9,
                                         const SimulationOptions &options = {});

/// Interior maximum of epsilon(I), refined by golden-section search in log I
/// between the neighbours of the largest grid value.
struct LossMaximum {
    double intensity = 0.0;
    double epsilon = 0.0;
    bool interior = false;
};
LossMaximum find_loss_maximum(const LevelSystem &sys, Polarization impurity_kind,
                              double impurity, std::span<const double> intensities,
                              double duration = 120e-9, const SimulationOptions &options = {});

struct KappaResult {
    double intensity = 0.0;
    double kappa_pi = 0.0;
    double kappa_minus = 0.0;
    // relative difference of epsilon/impurity between the two probe impurities
    double nonlinearity_pi = 0.0;
    double nonlinearity_minus = 0.0;
};

inline constexpr double kKappaProbeLow = 1e-5;
inline constexpr double kKappaProbeHigh = 1e-4;
inline constexpr double kKappaLinearityTolerance = 0.05;

/// Loss-per-impurity slopes at intensity I (units of I_S) from probe impurities
/// 1e-5 and 1e-4. Throws NonlinearRegime when the two ratios differ by more than 5%.
KappaResult calibrate_kappa(const LevelSystem &sys, double intensity, double duration = 120e-9,
                            const SimulationOptions &options = {});

/// P = (1 - epsilon)^N.
double survival(double epsilon, int n_pulses);
/// |E|^2 = (1 - P^(1/N)) / kappa.
double infer_impurity(double P, int n_pulses, double kappa);

struct AlignmentPoint {
    double t = 0.0;             // pulse-centre offset, s
    double theta = 0.0;         // beam-to-field angle, rad
    double pi_fraction = 0.0;   // |E_pi|^2 at the atoms
    double minus_fraction = 0.0;
    double survival = 0.0;
    double inferred_pi = 0.0;   // |E_pi|^2 recovered from survival with kappa_pi
};

struct AlignmentScan {
    std::vector<AlignmentPoint> points;
    double curvature = 0.0;       // c in inferred = floor + c (Omega1 t)^2
    double curvature_sigma = 0.0;
    double floor = 0.0;
};

struct AlignmentOptions {
    double omega1 = 2.0 * std::numbers::pi * 12.8e3; // field rotation, rad/s
    double residual_pi = 0.0;  // impurity present at perfect alignment
    double kappa_pi = 9.5;
    double kappa_minus = 18.0;
    int n_pulses = 1280;
};

/// Pulse-timing scan: the beam lies along the field at t = 0, so theta = Omega1 |t|.
/// The loss model is epsilon = kappa_pi |E_pi|^2 + kappa_minus |E_-|^2.
AlignmentScan alignment_scan(const pol::StokesVector &S, std::span<const double> t_offsets,
                             const AlignmentOptions &options = {});

/// Same scan with kappa calibrated from `sys` at the pulse intensity and N from the pulse.
AlignmentScan alignment_scan(const LevelSystem &sys, const PulseSpec &pulse,
                             const pol::StokesVector &S, std::span<const double> t_offsets,
                             double omega1, double residual_pi = 0.0,
                             const SimulationOptions &options = {});

} // namespace toptrap::bloch
