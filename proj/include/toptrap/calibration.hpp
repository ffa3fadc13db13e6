#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/errors.hpp"
#include "toptrap/fieldmodel.hpp"
#include "toptrap/fitcore.hpp"

/// Field calibration: stroboscopic RF spectroscopy of |B|(t), the harmonic
/// oscillation fit and the compensation it implies, and the trap-displacement
/// measurement of the out-of-plane stray field.
///
/// Frequencies are in Hz, fields in gauss, gradients in G/cm, positions in cm.
namespace toptrap::cal {

/// FWHM times pulse duration of the single-pulse RF lineshape (60 kHz at 10 us).
inline constexpr double kTransformWidthProduct = 0.6;

struct RfPulseTrain {
    double pulse_duration = 10e-6; // s
    int n_pulses = 250;
    double delay = 0.0;             // s after the zero phase of the rotation
    double period = 1.0 / 12.8e3;   // s

    /// Pulse train synchronised to the rotation of `cfg`.
    static RfPulseTrain for_trap(const field::TrapConfig &cfg, double delay = 0.0);
    double fwhm() const { return kTransformWidthProduct / pulse_duration; }
    void validate() const;
};

struct SpectrumPoint {
    double freq = 0.0;     // Hz
    double survival = 0.0; // fraction remaining
    double sigma = 0.0;    // 0 when unknown
};

struct SpectrumDataset {
    std::vector<SpectrumPoint> points;
    /// Throws InputError unless survivals lie in [0, 1] and frequencies increase strictly.
    void validate() const;
};

/// Shot-to-shot noise of a strobed measurement.
struct SpectrumNoise {
    double field_sigma = 0.0;    // G, jitter of the field seen by one spectrum
    double survival_sigma = 0.0; // per-point readout noise
};

/// Evenly spaced frequencies center +- half_span.
std::vector<double> rf_grid(double center, double half_span = 150e3, double step = 5e3);

/// survival(f) = exp(-n R(f)), R a Lorentzian of peak `rabi` and FWHM
/// train.fwhm() centred at the Zeeman frequency of |B|.
SpectrumDataset synth_strobe_spectrum(double B, const RfPulseTrain &train,
                                      std::span<const double> rf_grid, double rabi,
                                      const field::PhysicalConstants &constants = {});

/// Same with field jitter and survival noise (clipped to [0, 1]).
SpectrumDataset synth_strobe_spectrum(double B, const RfPulseTrain &train,
                                      std::span<const double> rf_grid, double rabi,
                                      const SpectrumNoise &noise, fit::NoiseSource &rng,
                                      const field::PhysicalConstants &constants = {});

struct PeakFit {
    double center = 0.0;      // Hz
    double width = 0.0;       // FWHM, Hz
    double uncertainty = 0.0; // 1 sigma on the centre, Hz
    double depth = 0.0;
    double baseline = 0.0;
    double reduced_chi2 = 0.0;
};

/// Minimum peak-to-peak survival change for a fit to be attempted.
inline constexpr double kMinimumDip = 0.05;

/// Lorentzian dip fit. Without per-point sigmas the covariance is scaled by chi2/dof.
/// Throws InputError (< 5 points), FlatSpectrum, DidNotConverge.
PeakFit fit_spectrum_peak(const SpectrumDataset &ds);

struct OscillationSample {
    double delay = 0.0;  // s
    double center = 0.0; // Hz
    double sigma = 0.0;  // Hz; all zero means unknown
};

/// center(t) = a0 + a_s1 sin W t + a_c1 cos W t + a_s2 sin 2W t + a_c2 cos 2W t.
struct OscillationFit {
    double a0 = 0.0, a_s1 = 0.0, a_c1 = 0.0, a_s2 = 0.0, a_c2 = 0.0; // Hz
    Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();
    double rms_variation_mG = 0.0;
    double chi2 = 0.0;
    int dof = 0;

    /// (a0, a_s1, a_c1, a_s2, a_c2)
    Eigen::Matrix<double, 5, 1> amplitudes() const;
    double sigma(int i) const;
};

/// Condition number of the weighted design above which the delays are rejected.
inline constexpr double kPhaseCoverageConditionLimit = 1e4;

/// Throws InputError (< 6 samples, mixed zero and nonzero sigmas) and
/// InsufficientPhaseCoverage.
OscillationFit fit_field_oscillation(std::span<const OscillationSample> samples, double Omega1,
                                     const field::PhysicalConstants &constants = {});

/// rms of the oscillating part, in mG, for amplitudes given in Hz.
double rms_variation_mG(double a_s1, double a_c1, double a_s2, double a_c2,
                        const field::PhysicalConstants &constants = {});

/// First-order prediction of the fitted amplitudes, in Hz.
Eigen::Matrix<double, 5, 1> predicted_amplitudes(const field::TrapConfig &cfg,
                                                 const field::NonIdealities &ni, double z0);

/// How the trap height responds when B1' is adjusted.
enum class HeightModel {
    Fixed,       // z0 held at the value given
    GravitySag,  // z0 = equilibrium_height(cfg, ni)
};

struct Adjustment {
    double dBEx = 0.0;   // G
    double dBEz = 0.0;   // G
    double dDelta = 0.0;
    double dB1p = 0.0;   // G/cm
};

/// Coefficient inversion of the first-order harmonics. Delta absorbs Delta + xi - psi
/// and q absorbs q z0 - 2 xi' - 2 psi'. `z0` is used only with HeightModel::Fixed.
Adjustment compensation_step(const OscillationFit &fit, const field::TrapConfig &cfg,
                             const field::NonIdealities &current, HeightModel height,
                             double z0 = 0.0);

/// Applies an adjustment to the controllable parameters.
void apply_adjustment(const Adjustment &adj, field::TrapConfig &cfg, field::NonIdealities &ni);

struct MeasurementOptions {
    RfPulseTrain train{};
    double rabi = 0.004;     // single-pulse transfer at line centre
    double half_span = 150e3; // Hz, around the expected line
    double step = 5e3;        // Hz
    // Coarse scan that locates the line before the fine scan.
    double coarse_half_span = 1.5e6; // Hz, around the Zeeman frequency of B0
    double coarse_step = 20e3;       // Hz
    int n_delays = 16;        // evenly spaced over one rotation period
    SpectrumNoise noise{};
    field::CenterFieldMode mode = field::CenterFieldMode::StrobeAveraged;
    HeightModel height = HeightModel::GravitySag;
    double z0 = 0.0; // cm, HeightModel::Fixed only
};

/// Trap height used by a measurement.
double measurement_height(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                          const MeasurementOptions &options);

/// Strobed spectra at `n_delays` delays, each fitted for its centre. Each delay
/// takes a coarse scan around the Zeeman frequency of B0, then a fine scan around
/// the deepest coarse point. The sample sigma combines the fit uncertainty with
/// the field jitter.
std::vector<OscillationSample> measure_field_oscillation(const field::TrapConfig &cfg,
                                                         const field::NonIdealities &ni,
                                                         const MeasurementOptions &options,
                                                         fit::NoiseSource &rng);

/// rms (mG) of |B| at the trap centre about its mean, over one rotation period.
double true_rms_variation_mG(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                             const MeasurementOptions &options, int samples = 256);

struct LoopIteration {
    OscillationFit fit;
    Adjustment adjustment;
    double rms_before_mG = 0.0; // true rms before this adjustment
    double rms_after_mG = 0.0;
};

struct ClosedLoopResult {
    std::vector<LoopIteration> iterations;
    field::TrapConfig cfg;
    field::NonIdealities ni;
    double final_rms_mG = 0.0;
};

/// Measure, fit, adjust, repeated `iterations` times.
ClosedLoopResult closed_loop(const field::TrapConfig &cfg, const field::NonIdealities &ni,
                             const MeasurementOptions &options, int iterations,
                             fit::NoiseSource &rng);

// ---------------------------------------------------------------------------
// Out-of-plane stray field from trap displacement

/// y0 = BEy BQ' / (BQ'^2 + 2 B2'^2). Throws DegenerateConfinement when both gradients vanish.
double ybias_position(double BQp, double B2p, double BEy);

struct PositionPoint {
    double BQp = 0.0;   // G/cm
    double y0 = 0.0;    // cm
    double sigma = 0.0; // cm; 0 when unknown
};

struct PositionDataset {
    std::vector<PositionPoint> points;
    void validate() const;
};

struct YbiasFit {
    double BEy = 0.0;   // G
    double sigma = 0.0; // G
    double offset = 0.0; // cm
    double offset_sigma = 0.0;
    bool with_offset = false;
    double reduced_chi2 = 0.0;
};

/// Least squares in BEy (linear in the model), optionally with a constant position
/// offset. Without per-point sigmas the covariance is scaled by chi2/dof.
/// Throws InputError with fewer than 4 distinct gradients.
YbiasFit fit_ybias(const PositionDataset &ds, double B2p, bool fit_offset = false);

/// Positions from the model plus Gaussian noise of `noise` cm.
PositionDataset synth_positions(std::span<const double> BQp, double B2p, double BEy,
                                double noise, fit::NoiseSource &rng, double offset = 0.0);

} // namespace toptrap::cal
